"""Ready-made constraint sets and JSON configuration loading."""

from __future__ import annotations

import numpy as np

from .constrained import (
    Constraint,
    ConstrainedField,
    ConstraintSet,
    GaussianField,
    WeightSpec,
    make_constraint,
)
from .expressions import parse
from .geometry import Box, DogBone, Interval, UnitDisk, UnitTriangle, domain_from_json, _disk_root
from .kernels import BoundaryOperator, MeanFunction, SquaredExponential, ZERO_MEAN, kernel_from_json

DISK_EPS = 1e-8

_KINDS = {
    "state": BoundaryOperator(0.0, 1.0, 0),
    "derivative": BoundaryOperator(1.0, 0.0, 0),
    "robin": BoundaryOperator(1.0, 2.0, 0),
}


def _op(kind, axis=0):
    try:
        base = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown constraint kind {kind!r}; expected one of {sorted(_KINDS)}") from None
    return BoundaryOperator(base.a, base.b, axis)


def disk_weight(X):
    """Weight of the right half-circle for disk state constraints."""
    X = np.atleast_2d(X)
    root = np.maximum(_disk_root(X[:, 1]), DISK_EPS)
    return (X[:, 0] + root) / (2.0 * root)


def disk_weight_left(X):
    return 1.0 - disk_weight(X)


NAMED_WEIGHTS = {"disk_right": disk_weight, "disk_left": disk_weight_left}


def interval_endpoints(kind="state", kernel=None, targets=(0.5, -0.25)):
    """Constraints at both ends of ``[0, 1]`` with recipe weights."""
    dom = Interval(0.0, 1.0)
    kernel = kernel or SquaredExponential(1.0, (0.3,))
    cons = tuple(make_constraint(dom, s, g, _op(kind)) for s, g in zip((0, 1), targets))
    return ConstraintSet(dom, cons, kernel)


def single_endpoint(kind="state", kernel=None, target=0.0):
    """Single constraint at ``x = 0`` with the textbook closed-form weight:
    ``w = 1`` for the state, ``w = x`` for the derivative."""
    dom = Interval(0.0, 1.0)
    kernel = kernel or SquaredExponential(1.0, (0.3,))
    weight = {"state": "1", "derivative": "x1"}[kind]
    return ConstraintSet(dom, (make_constraint(dom, 0, target, _op(kind), weight=weight),), kernel)


def square_parallel(kind="state", kernel=None, targets=("x2", "sin(x2)"), closed_form=False):
    """Constraints on the sides ``x1 = 0`` and ``x1 = 1`` of the unit square."""
    dom = Box((0.0, 0.0), (1.0, 1.0))
    kernel = kernel or SquaredExponential(1.0, (0.4, 0.5))
    weights = ("1 - x1", "x1") if closed_form else ("recipe", "recipe")
    if closed_form and kind != "state":
        raise ValueError("closed-form parallel-side weights are defined for state constraints")
    cons = tuple(make_constraint(dom, s, g, _op(kind), weight=w) for s, g, w in zip((0, 1), targets, weights))
    return ConstraintSet(dom, cons, kernel)


def disk_circle(kernel=None, target="(x1 + x2)^2", closed_form=True):
    """State constraint on the whole unit circle, split into two halves."""
    dom = UnitDisk()
    kernel = kernel or SquaredExponential(1.0, (0.5, 0.5))
    if closed_form:
        w = (WeightSpec.closed_form(disk_weight_left), WeightSpec.closed_form(disk_weight))
    else:
        w = ("recipe", "recipe")
    cons = tuple(make_constraint(dom, s, target, None, weight=wi) for s, wi in zip((0, 1), w))
    return ConstraintSet(dom, cons, kernel)


def triangle_two_segment(kernel=None, targets=("x2", "x2^2")):
    """State constraints on the leg ``x1 = 0`` and the hypotenuse, both
    projected horizontally."""
    dom = UnitTriangle()
    kernel = kernel or SquaredExponential(1.0, (0.3, 0.3))
    cons = (make_constraint(dom, 0, targets[0]), make_constraint(dom, 2, targets[1], direction=(1, 0)))
    return ConstraintSet(dom, cons, kernel)


def dog_bone_parallel(kernel=None, targets=(0.0, 1.0)):
    """State constraints on the clamped ends ``x2 = -10`` and ``x2 = 10``."""
    dom = DogBone()
    kernel = kernel or SquaredExponential(1.0, (2.0, 5.0))
    cons = tuple(make_constraint(dom, s, g, BoundaryOperator(0.0, 1.0, 1)) for s, g in zip((0, 1), targets))
    return ConstraintSet(dom, cons, kernel)


def boundary_fixtures():
    """The nine fixtures used for boundary-enforcement checks, as
    ``(name, ConstraintSet, closed_form)`` triples."""
    out = []
    for kind in ("state", "derivative", "robin"):
        out.append((f"interval-{kind}", interval_endpoints(kind), False))
    for kind in ("state", "derivative", "robin"):
        out.append((f"square-{kind}", square_parallel(kind), False))
    out.append(("disk-circle-state", disk_circle(), True))
    out.append(("triangle-two-segment-state", triangle_two_segment(), False))
    out.append(("dog-bone-parallel-state", dog_bone_parallel(), False))
    return out


PRESETS = {
    "interval_state": lambda: interval_endpoints("state"),
    "interval_derivative": lambda: interval_endpoints("derivative"),
    "interval_robin": lambda: interval_endpoints("robin"),
    "endpoint_state": lambda: single_endpoint("state"),
    "endpoint_derivative": lambda: single_endpoint("derivative"),
    "square_state": lambda: square_parallel("state"),
    "square_derivative": lambda: square_parallel("derivative"),
    "square_robin": lambda: square_parallel("robin"),
    "square_state_closed": lambda: square_parallel("state", closed_form=True),
    "disk_circle": lambda: disk_circle(),
    "disk_circle_recipe": lambda: disk_circle(closed_form=False),
    "triangle_two_segment": lambda: triangle_two_segment(),
    "dog_bone_parallel": lambda: dog_bone_parallel(),
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _operator_from_json(spec, dom):
    if spec is None:
        return None
    if isinstance(spec, str):
        if spec in _KINDS:
            return _op(spec)
        from .kernels import parse_op_name
        return parse_op_name(spec, dom.dim, dom.variables)
    return BoundaryOperator(float(spec.get("a", 0.0)), float(spec.get("b", 1.0)), int(spec.get("axis", 0)))


def _weight_from_json(spec, dom):
    if spec is None or spec == "recipe":
        return "recipe"
    if isinstance(spec, dict) and "preset" in spec:
        try:
            return WeightSpec.closed_form(NAMED_WEIGHTS[spec["preset"]])
        except KeyError:
            raise ConfigError(f"unknown weight preset {spec['preset']!r}") from None
    if isinstance(spec, dict) and "expr" in spec:
        return WeightSpec.closed_form(parse(str(spec["expr"]), dom.variables, dom.aliases))
    raise ConfigError(f"bad weight specification {spec!r}")


def constraint_set_from_json(cfg):
    """Build a :class:`ConstraintSet` from a configuration dictionary.

    Either ``{"preset": name, "kernel": {...}?}`` or an explicit
    ``{"domain", "kernel", "mean"?, "constraints": [...]}`` description.
    """
    try:
        if "preset" in cfg:
            try:
                cs = PRESETS[cfg["preset"]]()
            except KeyError:
                raise ConfigError(f"unknown preset {cfg['preset']!r}; known: {sorted(PRESETS)}") from None
            if "kernel" in cfg:
                cs = cs.with_kernel(kernel_from_json(cfg["kernel"]))
            return cs
        dom = domain_from_json(cfg["domain"])
        kernel = kernel_from_json(cfg["kernel"])
        mean = MeanFunction.from_string(cfg["mean"], dom.variables, dom.aliases) if cfg.get("mean") else ZERO_MEAN
        cons = []
        for c in cfg.get("constraints", []):
            target = c.get("target", 0.0)
            cons.append(make_constraint(dom, int(c["segment"]), target if isinstance(target, str) else float(target),
                                        _operator_from_json(c.get("operator"), dom),
                                        c.get("direction"), _weight_from_json(c.get("weight"), dom)))
        return ConstraintSet(dom, tuple(cons), kernel, mean)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid constraint configuration: {exc}") from exc


def field_from_json(cfg):
    cs = constraint_set_from_json(cfg)
    if not cs.constraints:
        return GaussianField(cs.domain, cs.base_kernel, cs.base_mean)
    return ConstrainedField(cs)


__all__ = [
    "ConfigError", "Constraint", "PRESETS", "boundary_fixtures", "constraint_set_from_json", "disk_circle",
    "disk_weight", "dog_bone_parallel", "field_from_json", "interval_endpoints", "single_endpoint",
    "square_parallel", "triangle_two_segment",
]
