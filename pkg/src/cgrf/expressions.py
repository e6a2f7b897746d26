"""Small arithmetic expressions used for targets, mean functions and weights.

Expressions are strings over ``+ - * / ^``, parentheses, numbers, ``pi``,
the functions ``sin``, ``cos``, ``exp``, ``sqrt`` and the coordinate
variables of a domain (``t``, ``x1``, ``x2``, ...).  They are parsed with
sympy after a token whitelist check, so partial derivatives are exact.
"""

from __future__ import annotations

import re
from functools import lru_cache

import numpy as np
import sympy
from sympy.parsing.sympy_parser import (
    convert_xor,
    parse_expr,
    standard_transformations,
)

_FUNCTIONS = {"sin": sympy.sin, "cos": sympy.cos, "exp": sympy.exp, "sqrt": sympy.sqrt}
_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_][A-Za-z_0-9]*)|([-+*/^()]))")


class ExpressionError(ValueError):
    pass


def _check_tokens(text, allowed_names):
    pos = 0
    text = text.strip()
    if not text:
        raise ExpressionError("empty expression")
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"unexpected character {text[pos]!r} at column {pos + 1} in {text!r}")
        name = m.group(2)
        if name is not None and name not in allowed_names:
            raise ExpressionError(f"unknown name {name!r} in {text!r}")
        pos = m.end()


class Expression:
    """A scalar function of the domain coordinates with exact derivatives.

    Parameters
    ----------
    source : str or float
        Expression text, or a constant.
    variables : sequence of str
        Coordinate names in column order, e.g. ``("t", "x1")``.
    aliases : dict, optional
        Extra names mapped onto variables (``{"x": "x1"}``).
    """

    def __init__(self, source, variables, aliases=None):
        self.variables = tuple(variables)
        self.source = str(source)
        aliases = dict(aliases or {})
        symbols = {v: sympy.Symbol(v, real=True) for v in self.variables}
        local = dict(_FUNCTIONS)
        local["pi"] = sympy.pi
        local.update(symbols)
        for alias, target in aliases.items():
            local[alias] = symbols[target]
        if isinstance(source, (int, float, np.floating, np.integer)):
            expr = sympy.Float(float(source))
        else:
            _check_tokens(self.source, set(local))
            try:
                expr = parse_expr(
                    self.source,
                    local_dict=local,
                    global_dict={"Integer": sympy.Integer, "Float": sympy.Float,
                                 "Rational": sympy.Rational, "Symbol": sympy.Symbol},
                    transformations=standard_transformations + (convert_xor,),
                    evaluate=True,
                )
            except Exception as exc:  # sympy raises a zoo of types here
                raise ExpressionError(f"cannot parse {self.source!r}: {exc}") from exc
        self._symbols = tuple(symbols[v] for v in self.variables)
        self.expr = sympy.sympify(expr)
        self._fn = sympy.lambdify(self._symbols, self.expr, modules="numpy")
        self._derivs = {}

    @classmethod
    def _from_sympy(cls, expr, variables, symbols):
        obj = cls.__new__(cls)
        obj.variables = tuple(variables)
        obj.source = str(expr)
        obj._symbols = symbols
        obj.expr = expr
        obj._fn = sympy.lambdify(symbols, expr, modules="numpy")
        obj._derivs = {}
        return obj

    @property
    def is_zero(self):
        return self.expr == 0

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = self._fn(*(X[:, k] for k in range(X.shape[1])))
        return np.broadcast_to(np.asarray(out, dtype=float), (X.shape[0],)).copy()

    def derivative(self, alpha):
        """Partial derivative for the multi-index ``alpha``."""
        alpha = tuple(int(a) for a in alpha)
        if not any(alpha):
            return self
        if alpha not in self._derivs:
            args = []
            for s, a in zip(self._symbols, alpha):
                args.extend([s] * a)
            d = sympy.diff(self.expr, *args)
            self._derivs[alpha] = Expression._from_sympy(d, self.variables, self._symbols)
        return self._derivs[alpha]

    def __repr__(self):
        return f"Expression({self.source!r})"


@lru_cache(maxsize=None)
def _cached(source, variables, aliases):
    return Expression(source, variables, dict(aliases))


def parse(source, variables, aliases=None):
    """Parse ``source`` (cached on its text and variable names)."""
    aliases = tuple(sorted((aliases or {}).items()))
    if isinstance(source, (int, float)):
        return Expression(float(source), variables, dict(aliases))
    return _cached(str(source), tuple(variables), aliases)
