"""Domains, boundary segments and projections onto segments.

All objects are immutable.  Points are handled as arrays of shape ``(n, d)``;
most functions also accept a single point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

TOL = 1e-12


class GeometryError(ValueError):
    pass


def as_points(X, dim=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(1, -1) if dim is None or X.shape[0] == dim else X.reshape(-1, 1)
    if dim is not None and X.shape[1] != dim:
        raise GeometryError(f"expected points of dimension {dim}, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise GeometryError("point coordinates must be finite")
    return X


def _unit_params(n, k, seed):
    """``n`` parameters in [0, 1]^k: a uniform grid for k == 1, else Halton
    points led by the two extreme corners."""
    if k == 0:
        return np.zeros((n, 0))
    if k == 1:
        if n == 1:
            return np.array([[0.5]])
        return np.linspace(0.0, 1.0, n)[:, None]
    pts = [np.zeros(k), np.ones(k)][: min(n, 2)]
    if n > 2:
        pts.extend(qmc.Halton(k, scramble=True, seed=seed).random(n - 2))
    return np.array(pts)


@dataclass(frozen=True, eq=False)
class BoundarySegment:
    """A piece ``A`` of the boundary with a membership test and a
    parametrization from ``[0, 1]^param_dim``."""

    id: int
    name: str
    dim: int
    param_dim: int
    _member: Callable = field(repr=False)
    _param: Callable = field(repr=False)
    _sampler: Optional[Callable] = field(default=None, repr=False)

    def contains(self, X, tol=TOL):
        return self._member(as_points(X, self.dim), tol)

    def parametrize(self, s):
        s = np.asarray(s, dtype=float).reshape(-1, self.param_dim) if self.param_dim else np.zeros((np.size(s) or 1, 0))
        return self._param(s)

    def sample(self, n, seed=0):
        if n < 1:
            raise GeometryError("n must be >= 1")
        if self._sampler is not None:
            return self._sampler(n, seed)
        return self._param(_unit_params(n, self.param_dim, seed))


@dataclass(frozen=True, eq=False)
class Projection:
    """Continuous map ``f`` from the domain onto ``target`` with ``f(x) = x`` on
    the target.  Affine projections carry ``matrix``/``offset`` so that
    ``f(x) = matrix @ x + offset``; derivatives of composed fields use them."""

    target: BoundarySegment
    direction: tuple
    domain: "Domain" = field(repr=False)
    matrix: Optional[np.ndarray] = field(default=None, repr=False)
    offset: Optional[np.ndarray] = field(default=None, repr=False)
    fn: Optional[Callable] = field(default=None, repr=False)

    @property
    def is_affine(self):
        return self.matrix is not None

    def __call__(self, X):
        X = as_points(X, self.domain.dim)
        if self.matrix is not None:
            out = X.copy()
            moved = np.flatnonzero(np.any(self.matrix != np.eye(X.shape[1]), axis=1) | (self.offset != 0))
            for k in moved:
                out[:, k] = X @ self.matrix[k] + self.offset[k]
            return out
        return self.fn(X)


def project(p, x):
    """Project points that lie in ``p.domain`` onto ``p.target``."""
    X = as_points(x, p.domain.dim)
    if not np.all(p.domain.contains(X)):
        raise GeometryError("cannot project a point outside the domain")
    return p(X)


def _axis_projection(domain, segment, direction, axis, value):
    d = domain.dim
    P = np.eye(d)
    P[axis, axis] = 0.0
    c = np.zeros(d)
    c[axis] = value
    return Projection(segment, tuple(direction), domain, P, c)


def _check_direction(direction, dim):
    direction = tuple(int(round(v)) for v in direction)
    if len(direction) != dim or sorted(map(abs, direction)) != [0] * (dim - 1) + [1]:
        raise GeometryError(f"direction must be a signed coordinate axis of length {dim}, got {direction}")
    axis = next(k for k, v in enumerate(direction) if v)
    return direction, axis, direction[axis]


class Domain:
    dim: int
    variables: tuple
    aliases: dict = {}

    def contains(self, X, tol=TOL):
        raise NotImplementedError

    def bounds(self):
        raise NotImplementedError

    def segment(self, seg_id):
        segs = self.segments()
        if seg_id not in segs:
            raise GeometryError(f"{type(self).__name__} has no boundary segment {seg_id}")
        return segs[seg_id]

    def segments(self):
        raise NotImplementedError

    def projection(self, seg_id, direction=None):
        raise NotImplementedError

    def is_convex(self):
        return True

    def sample_interior(self, n, scheme="grid", seed=0):
        return sample_interior(self, n, scheme, seed)


@dataclass(frozen=True, eq=False)
class Interval(Domain):
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not self.a < self.b:
            raise GeometryError("Interval requires a < b")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))

    dim = 1
    variables = ("x1",)
    aliases = {"x": "x1"}

    def contains(self, X, tol=TOL):
        X = as_points(X, 1)
        return (X[:, 0] >= self.a - tol) & (X[:, 0] <= self.b + tol)

    def bounds(self):
        return np.array([self.a]), np.array([self.b])

    def segments(self):
        def point_seg(i, v):
            return BoundarySegment(i, f"x1={v:g}", 1, 0,
                                   lambda X, tol: np.abs(X[:, 0] - v) <= tol,
                                   lambda s: np.full((len(s), 1), v))
        return {0: point_seg(0, self.a), 1: point_seg(1, self.b)}

    def projection(self, seg_id, direction=None):
        seg = self.segment(seg_id)
        sign = -1 if seg_id == 0 else 1
        direction, axis, s = _check_direction(direction or (sign,), 1)
        if s != sign:
            raise GeometryError("projection direction must point towards the segment")
        return _axis_projection(self, seg, direction, 0, self.a if seg_id == 0 else self.b)


@dataclass(frozen=True, eq=False)
class Box(Domain):
    lo: tuple = (0.0, 0.0)
    hi: tuple = (1.0, 1.0)

    def __post_init__(self):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        if lo.shape != hi.shape or lo.ndim != 1 or not np.all(lo < hi):
            raise GeometryError("Box requires lo < hi componentwise")
        object.__setattr__(self, "lo", tuple(lo))
        object.__setattr__(self, "hi", tuple(hi))

    @property
    def dim(self):
        return len(self.lo)

    @property
    def variables(self):
        return tuple(f"x{k + 1}" for k in range(self.dim))

    def contains(self, X, tol=TOL):
        X = as_points(X, self.dim)
        return np.all((X >= np.array(self.lo) - tol) & (X <= np.array(self.hi) + tol), axis=1)

    def bounds(self):
        return np.array(self.lo), np.array(self.hi)

    def segments(self):
        lo, hi, d = np.array(self.lo), np.array(self.hi), self.dim
        segs = {}
        for k in range(d):
            others = [j for j in range(d) if j != k]
            for side, v in ((0, lo[k]), (1, hi[k])):
                def member(X, tol, k=k, v=v):
                    return (np.abs(X[:, k] - v) <= tol) & self.contains(X, tol)

                def param(s, k=k, v=v, others=others):
                    out = np.empty((len(s), d))
                    out[:, k] = v
                    out[:, others] = lo[others] + s * (hi[others] - lo[others])
                    return out
                sid = 2 * k + side
                segs[sid] = BoundarySegment(sid, f"x{k + 1}={v:g}", d, d - 1, member, param)
        return segs

    def projection(self, seg_id, direction=None):
        seg = self.segment(seg_id)
        axis, side = divmod(seg_id, 2)
        default = tuple((-1 if side == 0 else 1) if k == axis else 0 for k in range(self.dim))
        direction, ax, s = _check_direction(direction or default, self.dim)
        if ax != axis or s != (-1 if side == 0 else 1):
            raise GeometryError("projection direction must be the face's outward axis")
        return _axis_projection(self, seg, direction, axis, (self.lo if side == 0 else self.hi)[axis])


def _disk_root(x2):
    return np.sqrt(np.clip(1.0 - x2 * x2, 0.0, None))


@dataclass(frozen=True, eq=False)
class UnitDisk(Domain):
    dim = 2
    variables = ("x1", "x2")

    def contains(self, X, tol=TOL):
        X = as_points(X, 2)
        return X[:, 0] ** 2 + X[:, 1] ** 2 <= 1.0 + tol

    def bounds(self):
        return np.array([-1.0, -1.0]), np.array([1.0, 1.0])

    def segments(self):
        def half(sid, sign):
            def member(X, tol):
                return (np.abs(X[:, 0] ** 2 + X[:, 1] ** 2 - 1.0) <= tol) & (sign * X[:, 0] >= -tol)

            def param(s):
                x2 = -1.0 + 2.0 * s[:, 0]
                return np.column_stack([sign * _disk_root(x2), x2])
            return BoundarySegment(sid, "left half circle" if sign < 0 else "right half circle", 2, 1, member, param)

        def circle_param(s):
            th = 2.0 * np.pi * s[:, 0]
            return np.column_stack([np.cos(th), np.sin(th)])

        def circle_sample(n, seed):
            th = 2.0 * np.pi * np.arange(n) / n
            return np.column_stack([np.cos(th), np.sin(th)])

        full = BoundarySegment(2, "circle", 2, 1,
                               lambda X, tol: np.abs(X[:, 0] ** 2 + X[:, 1] ** 2 - 1.0) <= tol,
                               circle_param, circle_sample)
        return {0: half(0, -1.0), 1: half(1, 1.0), 2: full}

    def projection(self, seg_id, direction=None):
        if seg_id == 2:
            raise GeometryError("the full circle has no continuous projection; split it into halves 0 and 1")
        seg = self.segment(seg_id)
        sign = -1.0 if seg_id == 0 else 1.0
        direction, axis, s = _check_direction(direction or (int(sign), 0), 2)
        if axis != 0 or s != sign:
            raise GeometryError("half-circle projections run along -x1 (segment 0) or +x1 (segment 1)")

        def fn(X):
            return np.column_stack([sign * _disk_root(X[:, 1]), X[:, 1]])
        return Projection(seg, direction, self, fn=fn)


@dataclass(frozen=True, eq=False)
class UnitTriangle(Domain):
    dim = 2
    variables = ("x1", "x2")

    def contains(self, X, tol=TOL):
        X = as_points(X, 2)
        return (X[:, 0] >= -tol) & (X[:, 1] >= -tol) & (X[:, 0] + X[:, 1] <= 1.0 + tol)

    def bounds(self):
        return np.zeros(2), np.ones(2)

    def segments(self):
        def seg(sid, name, member, param):
            return BoundarySegment(sid, name, 2, 1, lambda X, tol: member(X, tol) & self.contains(X, tol), param)
        return {
            0: seg(0, "x1=0", lambda X, tol: np.abs(X[:, 0]) <= tol,
                   lambda s: np.column_stack([np.zeros(len(s)), s[:, 0]])),
            1: seg(1, "x2=0", lambda X, tol: np.abs(X[:, 1]) <= tol,
                   lambda s: np.column_stack([s[:, 0], np.zeros(len(s))])),
            2: seg(2, "x1+x2=1", lambda X, tol: np.abs(X[:, 0] + X[:, 1] - 1.0) <= tol,
                   lambda s: np.column_stack([1.0 - s[:, 0], s[:, 0]])),
        }

    def projection(self, seg_id, direction=None):
        seg = self.segment(seg_id)
        defaults = {0: (-1, 0), 1: (0, -1), 2: (1, 0)}
        direction, axis, s = _check_direction(direction or defaults[seg_id], 2)
        if seg_id in (0, 1):
            if direction != defaults[seg_id]:
                raise GeometryError("leg projections run along the leg's outward axis")
            return _axis_projection(self, seg, direction, seg_id, 0.0)
        if s != 1:
            raise GeometryError("hypotenuse projections run along +x1 or +x2")
        P = np.eye(2)
        c = np.zeros(2)
        P[axis] = 0.0
        P[axis, 1 - axis] = -1.0
        c[axis] = 1.0
        return Projection(seg, direction, self, P, c)


@dataclass(frozen=True, eq=False)
class DogBone(Domain):
    """Tensile specimen: symmetric about ``x1 = 0``, ``x2`` in
    ``[-half_length, half_length]``.  The half-width is ``grip_half_width`` for
    ``|x2| >= grip_start``, ``gauge_half_width`` for ``|x2| <= gauge_end`` and
    linear in between."""

    grip_half_width: float = 4.0
    gauge_half_width: float = 2.0
    gauge_end: float = 5.0
    grip_start: float = 7.0
    half_length: float = 10.0

    dim = 2
    variables = ("x1", "x2")

    def __post_init__(self):
        if not self.grip_half_width > self.gauge_half_width > 0:
            raise GeometryError("DogBone requires grip half-width > gauge half-width > 0")
        if not 0 < self.gauge_end < self.grip_start <= self.half_length:
            raise GeometryError("DogBone requires 0 < gauge_end < grip_start <= half_length")

    def half_width(self, x2):
        a = np.abs(np.asarray(x2, dtype=float))
        frac = np.clip((a - self.gauge_end) / (self.grip_start - self.gauge_end), 0.0, 1.0)
        return self.gauge_half_width + frac * (self.grip_half_width - self.gauge_half_width)

    def contains(self, X, tol=TOL):
        X = as_points(X, 2)
        return (np.abs(X[:, 1]) <= self.half_length + tol) & (np.abs(X[:, 0]) <= self.half_width(X[:, 1]) + tol)

    def bounds(self):
        return (np.array([-self.grip_half_width, -self.half_length]),
                np.array([self.grip_half_width, self.half_length]))

    def is_convex(self):
        return False

    def segments(self):
        g, L = self.grip_half_width, self.half_length

        def seg(sid, v):
            return BoundarySegment(
                sid, f"x2={v:g}", 2, 1,
                lambda X, tol: (np.abs(X[:, 1] - v) <= tol) & (np.abs(X[:, 0]) <= g + tol),
                lambda s: np.column_stack([-g + 2 * g * s[:, 0], np.full(len(s), v)]))
        return {0: seg(0, -L), 1: seg(1, L)}

    def projection(self, seg_id, direction=None):
        seg = self.segment(seg_id)
        want = (0, -1) if seg_id == 0 else (0, 1)
        direction, _, _ = _check_direction(direction or want, 2)
        if direction != want:
            raise GeometryError("dog-bone projections run along -x2 (bottom) or +x2 (top)")
        return _axis_projection(self, seg, direction, 1, -self.half_length if seg_id == 0 else self.half_length)


@dataclass(frozen=True, eq=False)
class SpaceTime(Domain):
    """``[t0, t1] x spatial``.  Segment 0 is the initial slice ``t = t0``;
    spatial segment ``k`` is lifted to id ``k + 1``."""

    t0: float
    t1: float
    spatial: Domain

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise GeometryError("SpaceTime requires t0 < t1")
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "t1", float(self.t1))

    @property
    def dim(self):
        return 1 + self.spatial.dim

    @property
    def variables(self):
        return ("t",) + tuple(self.spatial.variables)

    @property
    def aliases(self):
        return dict(self.spatial.aliases)

    def contains(self, X, tol=TOL):
        X = as_points(X, self.dim)
        return (X[:, 0] >= self.t0 - tol) & (X[:, 0] <= self.t1 + tol) & self.spatial.contains(X[:, 1:], tol)

    def bounds(self):
        lo, hi = self.spatial.bounds()
        return np.concatenate([[self.t0], lo]), np.concatenate([[self.t1], hi])

    def is_convex(self):
        return self.spatial.is_convex()

    def segments(self):
        d = self.dim
        t0, t1 = self.t0, self.t1
        sp = self.spatial

        def init_param(s):
            lo, hi = sp.bounds()
            return np.column_stack([np.full(len(s), t0), lo + s * (hi - lo)])

        def init_sample(n, seed):
            pts = sample_interior(sp, n, "grid" if isinstance(sp, (Interval, Box)) else "low-discrepancy", seed)
            return np.column_stack([np.full(len(pts), t0), pts])

        segs = {0: BoundarySegment(0, f"t={t0:g}", d, sp.dim,
                                   lambda X, tol: (np.abs(X[:, 0] - t0) <= tol) & sp.contains(X[:, 1:], tol),
                                   init_param, init_sample)}
        for sid, seg in sp.segments().items():
            def member(X, tol, seg=seg):
                return (X[:, 0] >= t0 - tol) & (X[:, 0] <= t1 + tol) & seg.contains(X[:, 1:], tol)

            def param(s, seg=seg):
                t = t0 + s[:, 0] * (t1 - t0)
                return np.column_stack([t, seg.parametrize(s[:, 1:]).reshape(len(s), -1)])

            def sample(n, seed, seg=seg):
                if seg.param_dim == 0:
                    t = np.linspace(t0, t1, n) if n > 1 else np.array([0.5 * (t0 + t1)])
                    return np.column_stack([t, np.repeat(seg.parametrize(np.zeros((1, 0))), n, axis=0)])
                return param(_unit_params(n, 1 + seg.param_dim, seed))
            segs[sid + 1] = BoundarySegment(sid + 1, f"{seg.name} (all t)", d, 1 + seg.param_dim,
                                            member, param, sample)
        return segs

    def projection(self, seg_id, direction=None):
        seg = self.segment(seg_id)
        d = self.dim
        if seg_id == 0:
            want = (-1,) + (0,) * (d - 1)
            direction, _, _ = _check_direction(direction or want, d)
            if direction != want:
                raise GeometryError("the initial slice is reached along -t")
            return _axis_projection(self, seg, direction, 0, self.t0)
        sdir = None if direction is None else tuple(direction)[1:]
        if direction is not None and int(round(direction[0])) != 0:
            raise GeometryError("spatial segments are reached along spatial axes")
        inner = self.spatial.projection(seg_id - 1, sdir)
        full_dir = (0,) + tuple(inner.direction)
        if inner.is_affine:
            P = np.eye(d)
            P[1:, 1:] = inner.matrix
            c = np.concatenate([[0.0], inner.offset])
            return Projection(seg, full_dir, self, P, c)

        def fn(X):
            return np.column_stack([X[:, 0], inner.fn(X[:, 1:])])
        return Projection(seg, full_dir, self, fn=fn)


def contains(domain, x):
    """True iff every point of ``x`` lies in the closed domain."""
    return bool(np.all(domain.contains(x)))


def sample_boundary(segment, n, seed=0):
    return segment.sample(n, seed)


def sample_interior(domain, n, scheme="grid", seed=0):
    """``n`` points inside ``domain``.

    ``grid`` gives a tensor grid (``round(n ** (1/d))`` nodes per axis) on
    intervals and boxes; elsewhere it refines a bounding-box grid until at
    least ``n`` points fall inside and keeps the first ``n``.
    ``low-discrepancy`` rejects scrambled Halton points from the bounding box.
    """
    if n < 1:
        raise GeometryError("n must be >= 1")
    lo, hi = domain.bounds()
    d = len(lo)
    if scheme == "grid":
        if isinstance(domain, (Interval, Box)):
            m = max(1, int(round(n ** (1.0 / d))))
            if m ** d != n:
                raise GeometryError(f"grid scheme on a {d}-d box needs a perfect power, got n={n}")
            axes = [np.linspace(lo[k], hi[k], m) if m > 1 else np.array([0.5 * (lo[k] + hi[k])]) for k in range(d)]
            return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        m = max(2, int(math.ceil(n ** (1.0 / d))))
        while True:
            axes = [np.linspace(lo[k], hi[k], m) for k in range(d)]
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
            pts = pts[domain.contains(pts)]
            if len(pts) >= n:
                idx = np.round(np.linspace(0, len(pts) - 1, n)).astype(int)
                return pts[idx]
            m += 1
    if scheme == "low-discrepancy":
        sampler = qmc.Halton(d, scramble=True, seed=seed)
        out = []
        count = 0
        while count < n:
            cand = lo + sampler.random(max(2 * n, 16)) * (hi - lo)
            cand = cand[domain.contains(cand)]
            out.append(cand)
            count += len(cand)
        return np.concatenate(out)[:n]
    raise GeometryError(f"unknown sampling scheme {scheme!r}")


def domain_from_json(spec):
    """Build a domain from its JSON description."""
    spec = dict(spec)
    shape = spec.pop("shape", None)
    try:
        if shape == "interval":
            return Interval(float(spec.get("a", 0.0)), float(spec.get("b", 1.0)))
        if shape == "box":
            return Box(tuple(spec["lo"]), tuple(spec["hi"]))
        if shape == "unit_square":
            return Box((0.0, 0.0), (1.0, 1.0))
        if shape == "unit_disk":
            return UnitDisk()
        if shape == "unit_triangle":
            return UnitTriangle()
        if shape == "dog_bone":
            return DogBone(**{k: float(v) for k, v in spec.items()})
        if shape == "space_time":
            t = spec["t"]
            return SpaceTime(float(t[0]), float(t[1]), domain_from_json(spec["space"]))
    except (KeyError, TypeError) as exc:
        raise GeometryError(f"bad {shape} domain description: {exc}") from exc
    raise GeometryError(f"unknown domain shape {shape!r}")
