"""Stationary covariance functions with analytic partial derivatives, linear
boundary operators, and mean functions.

Derivatives are requested with one multi-index per argument:
``k.matrix(X1, X2, a1, a2)`` returns
``d^a1/dx^a1 d^a2/dx'^a2 k(x, x')`` for every pair of rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from itertools import product as iproduct

import numpy as np
import sympy
from numpy.polynomial import hermite_e

from .expressions import Expression, parse

UNBOUNDED = math.inf


class SmoothnessError(ValueError):
    """Requested derivative exceeds what the kernel supports."""


def _mi(alpha, d):
    if alpha is None:
        return (0,) * d
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != d or min(alpha, default=0) < 0:
        raise ValueError(f"multi-index {alpha} does not match dimension {d}")
    return alpha


@dataclass(frozen=True)
class Hyperparams:
    precision: float = 1.0
    lengthscales: tuple = (1.0,)
    nu: float | None = None
    period: float | None = None

    def __post_init__(self):
        vals = [self.precision, *self.lengthscales]
        vals += [v for v in (self.nu, self.period) if v is not None]
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValueError("hyperparameters must be finite and strictly positive")


class Kernel:
    """Base class for stationary kernels ``k(x, x') = kappa(x - x')``."""

    dim: int

    @property
    def differentiability(self):
        """Sample-path differentiability order per dimension."""
        raise NotImplementedError

    @property
    def variance(self):
        return float(self.deriv_tau(np.zeros((1, self.dim)), (0,) * self.dim)[0])

    def deriv_tau(self, tau, gamma):
        """Derivative ``d^gamma kappa`` at lags ``tau`` of shape ``(..., dim)``."""
        raise NotImplementedError

    def check_orders(self, a1, a2):
        for d, (o1, o2, lim) in enumerate(zip(a1, a2, self.differentiability)):
            if max(o1, o2) > lim:
                raise SmoothnessError(
                    f"{type(self).__name__} supports derivative order {lim} per argument in dimension {d}, "
                    f"requested ({o1}, {o2})")

    def _prep(self, a1, a2):
        a1, a2 = _mi(a1, self.dim), _mi(a2, self.dim)
        self.check_orders(a1, a2)
        gamma = tuple(x + y for x, y in zip(a1, a2))
        return gamma, (-1.0) ** sum(a2)

    def matrix(self, X1, X2=None, a1=None, a2=None):
        X1 = np.asarray(X1, dtype=float).reshape(-1, self.dim)
        X2 = X1 if X2 is None else np.asarray(X2, dtype=float).reshape(-1, self.dim)
        gamma, sign = self._prep(a1, a2)
        tau = X1[:, None, :] - X2[None, :, :]
        return sign * self.deriv_tau(tau, gamma)

    def pairwise(self, X1, X2, a1=None, a2=None):
        """Row-by-row values ``k(X1[i], X2[i])``."""
        X1 = np.asarray(X1, dtype=float).reshape(-1, self.dim)
        X2 = np.asarray(X2, dtype=float).reshape(-1, self.dim)
        gamma, sign = self._prep(a1, a2)
        return sign * self.deriv_tau(X1 - X2, gamma)

    def __call__(self, X1, X2=None):
        return self.matrix(X1, X2)

    def with_params(self, precision=None, lengthscales=None):
        raise NotImplementedError


def _check_pos(name, value):
    if not (np.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be finite and > 0, got {value}")


def _lengthscales(ls):
    ls = tuple(float(v) for v in np.atleast_1d(ls))
    for v in ls:
        _check_pos("lengthscale", v)
    return ls


@dataclass(frozen=True)
class SquaredExponential(Kernel):
    """``alpha^-1 exp(-sum_d (x_d - x'_d)^2 / (2 lambda_d^2))``."""

    precision: float = 1.0
    lengthscales: tuple = (1.0,)

    def __post_init__(self):
        _check_pos("precision", self.precision)
        object.__setattr__(self, "lengthscales", _lengthscales(self.lengthscales))

    @property
    def dim(self):
        return len(self.lengthscales)

    @property
    def differentiability(self):
        return (UNBOUNDED,) * self.dim

    @property
    def hyperparams(self):
        return Hyperparams(self.precision, self.lengthscales)

    def deriv_tau(self, tau, gamma):
        out = np.full(tau.shape[:-1], 1.0 / self.precision)
        for d, (lam, n) in enumerate(zip(self.lengthscales, gamma)):
            s = tau[..., d] / lam
            f = np.exp(-0.5 * s * s)
            if n:
                coef = np.zeros(n + 1)
                coef[n] = 1.0
                f = f * hermite_e.hermeval(s, coef) * (-1.0 / lam) ** n
            out = out * f
        return out

    def with_params(self, precision=None, lengthscales=None):
        return replace(self, precision=self.precision if precision is None else precision,
                       lengthscales=self.lengthscales if lengthscales is None else tuple(lengthscales))


_MATERN_POLY = {
    0.5: lambda r: sympy.Integer(1),
    1.5: lambda r: 1 + sympy.sqrt(3) * r,
    2.5: lambda r: 1 + sympy.sqrt(5) * r + sympy.Rational(5, 3) * r ** 2,
    3.5: lambda r: 1 + sympy.sqrt(7) * r + sympy.Rational(14, 5) * r ** 2 + 7 * sympy.sqrt(7) * r ** 3 / 15,
}


@lru_cache(maxsize=None)
def _matern_radial(nu, m):
    """``D_m(r) = (r^-1 d/dr)^m psi(r)`` for the unit half-integer Matern profile.

    Returns ``(callable, value_at_zero)``; ``value_at_zero`` is ``inf`` where
    ``D_m`` is singular at the origin.
    """
    r = sympy.Symbol("r", positive=True)
    c = sympy.sqrt(2 * sympy.Rational(nu))
    q = _MATERN_POLY[nu](r)  # D_m = q_m(r) exp(-c r)
    for _ in range(m):
        q = sympy.cancel((sympy.diff(q, r) - c * q) / r)
    at0 = sympy.limit(q, r, 0)
    at0 = float(at0) if at0.is_finite else math.inf
    fn = sympy.lambdify(r, q * sympy.exp(-c * r), modules="numpy")
    return fn, at0


@lru_cache(maxsize=None)
def _matchings(gamma):
    """Group partial pairings of the derivative directions in ``gamma``.

    ``d^gamma psi(|z|) = sum count * z^sigma * D_m(|z|)`` over the returned
    ``(sigma, m, count)`` triples.
    """
    dirs = [d for d, n in enumerate(gamma) for _ in range(n)]
    out = {}

    def rec(rest, singles, pairs):
        if not rest:
            sigma = [0] * len(gamma)
            for d in singles:
                sigma[d] += 1
            key = (tuple(sigma), len(dirs) - pairs)
            out[key] = out.get(key, 0) + 1
            return
        first, tail = rest[0], rest[1:]
        rec(tail, singles + [first], pairs)
        for i, other in enumerate(tail):
            if other == first:
                rec(tail[:i] + tail[i + 1:], singles, pairs + 1)

    rec(dirs, [], 0)
    return tuple((s, m, c) for (s, m), c in out.items())


@dataclass(frozen=True)
class Matern(Kernel):
    """Half-integer Matern kernel on the lengthscale-scaled Euclidean distance."""

    nu: float = 2.5
    precision: float = 1.0
    lengthscales: tuple = (1.0,)

    def __post_init__(self):
        if float(self.nu) not in _MATERN_POLY:
            raise ValueError(f"Matern smoothness must be one of {sorted(_MATERN_POLY)}, got {self.nu}")
        object.__setattr__(self, "nu", float(self.nu))
        _check_pos("precision", self.precision)
        object.__setattr__(self, "lengthscales", _lengthscales(self.lengthscales))

    @property
    def dim(self):
        return len(self.lengthscales)

    @property
    def differentiability(self):
        return (int(math.ceil(self.nu)) - 1,) * self.dim

    @property
    def hyperparams(self):
        return Hyperparams(self.precision, self.lengthscales, nu=self.nu)

    def deriv_tau(self, tau, gamma):
        lam = np.asarray(self.lengthscales)
        z = tau / lam
        r = np.sqrt(np.sum(z * z, axis=-1))
        zero = r == 0.0
        r_safe = np.where(zero, 1.0, r)
        total = np.zeros(tau.shape[:-1])
        for sigma, m, count in _matchings(tuple(gamma)):
            fn, at0 = _matern_radial(self.nu, m)
            term = np.asarray(fn(r_safe), dtype=float) * count
            for d, s in enumerate(sigma):
                if s:
                    term = term * z[..., d] ** s
            if any(sigma):
                term = np.where(zero, 0.0, term)
            else:
                term = np.where(zero, at0 * count, term)
            total = total + term
        scale = np.prod(lam ** -np.asarray(gamma, dtype=float)) / self.precision
        return total * scale

    def with_params(self, precision=None, lengthscales=None):
        return replace(self, precision=self.precision if precision is None else precision,
                       lengthscales=self.lengthscales if lengthscales is None else tuple(lengthscales))


@lru_cache(maxsize=None)
def _periodic_deriv(n):
    tau, p, lam = sympy.symbols("tau p lam", positive=True)
    k = sympy.exp(-2 * sympy.sin(sympy.pi * tau / p) ** 2 / lam ** 2)
    return sympy.lambdify((tau, p, lam), sympy.diff(k, tau, n), modules="numpy")


@dataclass(frozen=True)
class Periodic(Kernel):
    """One-dimensional ``alpha^-1 exp(-2 sin^2(pi tau / period) / lambda^2)``."""

    period: float = 1.0
    precision: float = 1.0
    lengthscales: tuple = (1.0,)

    def __post_init__(self):
        _check_pos("period", self.period)
        _check_pos("precision", self.precision)
        object.__setattr__(self, "lengthscales", _lengthscales(self.lengthscales))
        if len(self.lengthscales) != 1:
            raise ValueError("Periodic kernel is one-dimensional")

    dim = 1

    @property
    def differentiability(self):
        return (UNBOUNDED,)

    @property
    def hyperparams(self):
        return Hyperparams(self.precision, self.lengthscales, period=self.period)

    def deriv_tau(self, tau, gamma):
        fn = _periodic_deriv(int(gamma[0]))
        val = fn(tau[..., 0], self.period, self.lengthscales[0])
        return np.broadcast_to(np.asarray(val, dtype=float), tau.shape[:-1]) / self.precision

    def with_params(self, precision=None, lengthscales=None):
        return replace(self, precision=self.precision if precision is None else precision,
                       lengthscales=self.lengthscales if lengthscales is None else tuple(lengthscales))


@dataclass(frozen=True)
class Product(Kernel):
    """Product of kernels acting on disjoint groups of dimensions.

    ``factors`` is a tuple of ``(dims, kernel)`` pairs whose ``dims`` partition
    ``range(dim)``.
    """

    factors: tuple = ()

    def __post_init__(self):
        factors = tuple((tuple(int(d) for d in dims), k) for dims, k in self.factors)
        seen = sorted(d for dims, _ in factors for d in dims)
        if not factors or seen != list(range(len(seen))):
            raise ValueError("product factors must cover disjoint dimensions whose union is all dimensions")
        for dims, k in factors:
            if len(dims) != k.dim:
                raise ValueError("factor dimension does not match its dims")
        object.__setattr__(self, "factors", factors)

    @property
    def dim(self):
        return sum(len(d) for d, _ in self.factors)

    @property
    def differentiability(self):
        out = [0] * self.dim
        for dims, k in self.factors:
            for d, o in zip(dims, k.differentiability):
                out[d] = o
        return tuple(out)

    def deriv_tau(self, tau, gamma):
        out = np.ones(tau.shape[:-1])
        for dims, k in self.factors:
            out = out * k.deriv_tau(tau[..., list(dims)], tuple(gamma[d] for d in dims))
        return out

    @property
    def precision(self):
        return float(np.prod([getattr(k, "precision", 1.0) for _, k in self.factors]))

    @property
    def lengthscales(self):
        out = [1.0] * self.dim
        for dims, k in self.factors:
            for d, v in zip(dims, getattr(k, "lengthscales", (1.0,) * len(dims))):
                out[d] = v
        return tuple(out)

    def with_params(self, precision=None, lengthscales=None):
        new = []
        for i, (dims, k) in enumerate(self.factors):
            ls = None if lengthscales is None else tuple(lengthscales[d] for d in dims)
            # the product's precision lives on the first factor
            prec = None if precision is None else (precision if i == 0 else 1.0)
            new.append((dims, k.with_params(prec, ls)))
        return Product(tuple(new))


@dataclass(frozen=True)
class Sum(Kernel):
    terms: tuple = ()

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms or len({k.dim for k in terms}) != 1:
            raise ValueError("sum terms must share one dimension")
        object.__setattr__(self, "terms", terms)

    @property
    def dim(self):
        return self.terms[0].dim

    @property
    def differentiability(self):
        return tuple(min(v) for v in zip(*(k.differentiability for k in self.terms)))

    def deriv_tau(self, tau, gamma):
        return sum(k.deriv_tau(tau, gamma) for k in self.terms)


def eval(k, x, xp):  # noqa: A001 - mirrors the kernel-evaluation verb
    """Scalar ``k(x, x')``."""
    return float(k.matrix(np.atleast_1d(x), np.atleast_1d(xp))[0, 0])


def eval_deriv(k, order1, order2, x, xp):
    """Scalar partial derivative of ``k`` with multi-indices on each argument."""
    return float(k.matrix(np.atleast_1d(x), np.atleast_1d(xp), order1, order2)[0, 0])


# ---------------------------------------------------------------- operators

@dataclass(frozen=True)
class LinearOp:
    """Linear differential functional ``sum coef * d^alpha``."""

    terms: tuple

    def __post_init__(self):
        merged = {}
        for alpha, coef in self.terms:
            alpha = tuple(int(a) for a in alpha)
            merged[alpha] = merged.get(alpha, 0.0) + float(coef)
        object.__setattr__(self, "terms", tuple(sorted((a, c) for a, c in merged.items() if c != 0.0)))
        if not self.terms:
            raise ValueError("a linear operator needs at least one nonzero term")

    @classmethod
    def identity(cls, dim):
        return cls((((0,) * dim, 1.0),))

    @classmethod
    def partial(cls, dim, axis, order=1):
        alpha = [0] * dim
        alpha[axis] = order
        return cls(((tuple(alpha), 1.0),))

    @property
    def dim(self):
        return len(self.terms[0][0])

    @property
    def max_order(self):
        return tuple(max(a[d] for a, _ in self.terms) for d in range(self.dim))

    def __add__(self, other):
        return LinearOp(self.terms + as_linear_op(other, self.dim).terms)

    def __rmul__(self, scalar):
        return LinearOp(tuple((a, scalar * c) for a, c in self.terms))

    def is_identity(self):
        return len(self.terms) == 1 and not any(self.terms[0][0]) and self.terms[0][1] == 1.0


@dataclass(frozen=True)
class BoundaryOperator:
    """``L = a * d/dx_axis + b * I``."""

    a: float = 0.0
    b: float = 1.0
    axis: int = 0

    def __post_init__(self):
        if self.a == 0 and self.b == 0:
            raise ValueError("boundary operator needs a != 0 or b != 0")
        if self.axis < 0:
            raise ValueError("axis must be non-negative")

    def to_linear_op(self, dim):
        if self.axis >= dim:
            raise ValueError(f"axis {self.axis} out of range for dimension {dim}")
        terms = []
        if self.b:
            terms.append(((0,) * dim, self.b))
        if self.a:
            alpha = [0] * dim
            alpha[self.axis] = 1
            terms.append((tuple(alpha), self.a))
        return LinearOp(tuple(terms))


IDENTITY = BoundaryOperator(0.0, 1.0, 0)


def as_linear_op(op, dim):
    if op is None:
        return LinearOp.identity(dim)
    if isinstance(op, LinearOp):
        if op.dim != dim:
            raise ValueError("operator dimension mismatch")
        return op
    if isinstance(op, BoundaryOperator):
        return op.to_linear_op(dim)
    if isinstance(op, str):
        return parse_op_name(op, dim)
    raise TypeError(f"not an operator: {op!r}")


def parse_op_name(name, dim, variables=None):
    """``"u"``, ``"u_t"``, ``"u_xx"``, ``"u_x1x2"`` style names."""
    if variables:
        index = {v: k for k, v in enumerate(variables)}
    else:
        index = {f"x{k + 1}": k for k in range(dim)}
        if dim == 2:
            index.update(t=0, x=1)
    if dim == 1:
        index.setdefault("x", 0)
    if name in ("u", "", "I"):
        return LinearOp.identity(dim)
    if not name.startswith("u_"):
        raise ValueError(f"bad operator name {name!r}")
    rest = name[2:]
    alpha = [0] * dim
    names = sorted(index, key=len, reverse=True)
    while rest:
        for v in names:
            if rest.startswith(v):
                alpha[index[v]] += 1
                rest = rest[len(v):]
                break
        else:
            raise ValueError(f"bad operator name {name!r}")
    return LinearOp(((tuple(alpha), 1.0),))


@dataclass(frozen=True)
class OperatorKernel:
    """Evaluator for ``L_left k L_right*``."""

    kernel: Kernel
    left: LinearOp
    right: LinearOp

    def matrix(self, X1, X2=None, a1=None, a2=None):
        d = self.kernel.dim
        a1, a2 = _mi(a1, d), _mi(a2, d)
        out = 0.0
        for (al, cl), (ar, cr) in iproduct(self.left.terms, self.right.terms):
            b1 = tuple(x + y for x, y in zip(al, a1))
            b2 = tuple(x + y for x, y in zip(ar, a2))
            out = out + cl * cr * self.kernel.matrix(X1, X2, b1, b2)
        return out

    def pairwise(self, X1, X2, a1=None, a2=None):
        d = self.kernel.dim
        a1, a2 = _mi(a1, d), _mi(a2, d)
        out = 0.0
        for (al, cl), (ar, cr) in iproduct(self.left.terms, self.right.terms):
            b1 = tuple(x + y for x, y in zip(al, a1))
            b2 = tuple(x + y for x, y in zip(ar, a2))
            out = out + cl * cr * self.kernel.pairwise(X1, X2, b1, b2)
        return out

    __call__ = matrix


def apply_operator(k, left=None, right=None):
    return OperatorKernel(k, as_linear_op(left, k.dim), as_linear_op(right, k.dim))


# ------------------------------------------------------------------- means

@dataclass(frozen=True)
class MeanFunction:
    """Zero mean (``expr is None``) or a closed-form expression."""

    expr: Expression | None = field(default=None)

    @classmethod
    def from_string(cls, source, variables, aliases=None):
        return cls(parse(source, variables, aliases))

    @property
    def is_zero(self):
        return self.expr is None or self.expr.is_zero

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.is_zero:
            return np.zeros(X.shape[0])
        return self.expr(X)

    def derivative(self, X, alpha):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.is_zero:
            return np.zeros(X.shape[0])
        return self.expr.derivative(alpha)(X)


ZERO_MEAN = MeanFunction()


def eval_mean(m, x):
    return m(x)


def apply_operator_mean(m, op, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lin = as_linear_op(op, X.shape[1])
    return sum(c * m.derivative(X, a) for a, c in lin.terms)


# -------------------------------------------------------------------- json

def kernel_from_json(spec):
    spec = dict(spec)
    form = spec.pop("form", None)
    if form in ("se", "squared_exponential"):
        return SquaredExponential(float(spec.get("precision", 1.0)), tuple(spec.get("lengthscales", (1.0,))))
    if form == "matern":
        return Matern(float(spec["nu"]), float(spec.get("precision", 1.0)), tuple(spec.get("lengthscales", (1.0,))))
    if form == "periodic":
        return Periodic(float(spec.get("period", 1.0)), float(spec.get("precision", 1.0)),
                        tuple(spec.get("lengthscales", (1.0,))))
    if form == "product":
        return Product(tuple((tuple(f["dims"]), kernel_from_json(f)) for f in spec["factors"]))
    if form == "sum":
        return Sum(tuple(kernel_from_json(f) for f in spec["terms"]))
    raise ValueError(f"unknown kernel form {form!r}")
