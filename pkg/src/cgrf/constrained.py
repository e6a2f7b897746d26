"""Boundary-constrained Gaussian random fields.

A constrained field is built from a base field ``u ~ GRF(m0, k0)`` as

    u_A(x) = u(x) + sum_j w_j(x) * (g_j(f_j(x)) - (L_j u)(f_j(x)))

with boundary operators ``L_j``, targets ``g_j``, projections ``f_j`` onto
boundary segments and weights ``w_j``.  Any linear functional of ``u_A`` is
expanded into functionals of the base field (``_expand``), which gives means
and covariances in closed form.  Derivatives of ``u_A`` use the chain rule
through affine projections and the derivatives of the weights; when that is
not available the covariance falls back to central finite differences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product as iproduct
from math import comb
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from .expressions import Expression, parse
from .geometry import BoundarySegment, Domain, GeometryError, Projection, as_points
from .kernels import (
    ZERO_MEAN,
    BoundaryOperator,
    Kernel,
    LinearOp,
    MeanFunction,
    Product,
    as_linear_op,
)

log = logging.getLogger(__name__)

COND_LIMIT = 1e12
RIDGE = 1e-10


class DegenerateGeometryError(np.linalg.LinAlgError):
    """The recipe matrix M(x) is singular even after the ridge fallback."""


class NotDifferentiableError(ValueError):
    """Exact derivative expansion unavailable (non-affine projection or an
    opaque closed-form weight)."""


# ----------------------------------------------------------------- specs

@dataclass(frozen=True)
class WeightSpec:
    """``"recipe"`` weights ``w = v^T M^-1``, or a closed-form weight.

    A closed form is either an :class:`Expression` (exact derivatives) or a
    plain callable on ``(n, d)`` arrays (values only).
    """

    kind: str = "recipe"
    expr: Optional[Expression] = None
    fn: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("recipe", "closed"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind == "closed" and (self.expr is None) == (self.fn is None):
            raise ValueError("closed-form weights need exactly one of expr or fn")

    @classmethod
    def recipe(cls):
        return cls("recipe")

    @classmethod
    def closed_form(cls, expr_or_fn, variables=None, aliases=None):
        if callable(expr_or_fn) and not isinstance(expr_or_fn, Expression):
            return cls("closed", fn=expr_or_fn)
        if not isinstance(expr_or_fn, Expression):
            expr_or_fn = parse(expr_or_fn, variables, aliases)
        return cls("closed", expr=expr_or_fn)

    @property
    def is_recipe(self):
        return self.kind == "recipe"

    def value(self, X):
        if self.expr is not None:
            return self.expr(X)
        return np.asarray(self.fn(X), dtype=float).reshape(-1)

    def derivative(self, X, alpha):
        if not any(alpha):
            return self.value(X)
        if self.expr is None:
            raise NotDifferentiableError("callable closed-form weights have no derivatives")
        return self.expr.derivative(alpha)(X)


def closed_form_weights(spec, x):
    """Evaluate a closed-form weight at points ``x``."""
    if spec.is_recipe:
        raise ValueError("recipe weights depend on the whole constraint set; use recipe_weights")
    return spec.value(np.atleast_2d(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class Constraint:
    """One boundary constraint ``L u = g`` on ``segment``."""

    operator: BoundaryOperator | LinearOp
    target: Expression | float
    segment: BoundarySegment
    projection: Projection
    weight: WeightSpec = WeightSpec()

    def __post_init__(self):
        if self.projection.target.id != self.segment.id:
            raise ValueError("projection must target the constraint's segment")

    def op(self, dim):
        return as_linear_op(self.operator, dim)

    def target_derivative(self, Y, alpha):
        if isinstance(self.target, Expression):
            return self.target.derivative(alpha)(Y)
        if any(alpha):
            return np.zeros(len(Y))
        return np.full(len(Y), float(self.target))


def make_constraint(domain, segment_id, target=0.0, operator=None, direction=None, weight="recipe"):
    """Convenience constructor resolving segment/projection from ``domain``."""
    seg = domain.segment(segment_id)
    proj = domain.projection(segment_id, direction)
    if isinstance(target, str):
        target = parse(target, domain.variables, domain.aliases)
    if isinstance(weight, str) and weight == "recipe":
        weight = WeightSpec.recipe()
    elif not isinstance(weight, WeightSpec):
        weight = WeightSpec.closed_form(weight, domain.variables, domain.aliases)
    if operator is None:
        operator = BoundaryOperator(0.0, 1.0, 0)
    return Constraint(operator, target, seg, proj, weight)


def reformulate_derivative_constraint(domain, segment_id, value, direction=None):
    """Turn "tangential derivative vanishes along the segment, state known to
    be ``value``" into an identity constraint with constant target."""
    return make_constraint(domain, segment_id, float(value), None, direction, "recipe")


@dataclass(frozen=True)
class ConstraintSet:
    domain: Domain
    constraints: tuple
    base_kernel: Kernel
    base_mean: MeanFunction = ZERO_MEAN

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.base_kernel.dim != self.domain.dim:
            raise ValueError("kernel dimension does not match the domain")
        for c in self.constraints:
            c.op(self.domain.dim)

    @property
    def n(self):
        return len(self.constraints)

    def with_kernel(self, kernel):
        return ConstraintSet(self.domain, self.constraints, kernel, self.base_mean)


# --------------------------------------------------------- multi-indices

def _leq(beta):
    """All multi-indices ``gamma <= beta`` in graded order."""
    out = list(iproduct(*(range(b + 1) for b in beta)))
    out.sort(key=lambda g: (sum(g), g))
    return out


def _binom(beta, gamma):
    c = 1
    for b, g in zip(beta, gamma):
        c *= comb(b, g)
    return c


def _sub(a, b):
    return tuple(x - y for x, y in zip(a, b))


def _add(a, b):
    return tuple(x + y for x, y in zip(a, b))


@lru_cache(maxsize=4096)
def _chain_cached(gamma, pbytes, d):
    P = np.frombuffer(pbytes).reshape(d, d)
    dirs = [k for k, n in enumerate(gamma) for _ in range(n)]
    out = {(0,) * d: 1.0}
    for k in dirs:
        new = {}
        for alpha, c in out.items():
            for m in range(d):
                if P[m, k] != 0.0:
                    a = list(alpha)
                    a[m] += 1
                    a = tuple(a)
                    new[a] = new.get(a, 0.0) + c * P[m, k]
        out = new
    return tuple((a, c) for a, c in out.items() if c != 0.0)


def _chain(gamma, P):
    """``d^gamma [h(P x + c)] = sum coef * (d^alpha h)(P x + c)``."""
    return _chain_cached(tuple(gamma), np.ascontiguousarray(P, dtype=float).tobytes(), P.shape[0])


# ------------------------------------------------------------ the field

@dataclass
class _Expansion:
    """Functional of u_A as ``sum coef * d^alpha u(points[src]) + offset``."""

    terms: dict  # (src, alpha) -> coef array; src is -1 for x, j for f_j(x)
    offset: np.ndarray


class ConstrainedField:
    """Mean/covariance evaluators for ``cGRF(L, g, A, m0, k0)``."""

    def __init__(self, cs: ConstraintSet):
        self.source = cs
        self.domain = cs.domain
        self.kernel = cs.base_kernel
        self.mean_fn = cs.base_mean
        self.dim = cs.domain.dim
        self.constraints = cs.constraints
        self.ops = [c.op(self.dim) for c in cs.constraints]
        self._recipe = [j for j, c in enumerate(cs.constraints) if c.weight.is_recipe]
        self.ridge_points = 0

    # ---------------------------------------------------------- helpers
    @property
    def n_constraints(self):
        return len(self.constraints)

    def _points(self, X):
        return as_points(X, self.dim)

    def projected(self, X):
        return [c.projection(X) for c in self.constraints]

    def _affine(self, j):
        p = self.constraints[j].projection
        if not p.is_affine:
            raise NotDifferentiableError(f"projection of constraint {j} is not affine")
        return p.matrix

    def min_lengthscale(self):
        ls = []

        def collect(k):
            if hasattr(k, "lengthscales"):
                ls.extend(k.lengthscales)
            for _, f in getattr(k, "factors", ()):
                collect(f)
            for t in getattr(k, "terms", ()):
                collect(t)
        collect(self.kernel)
        return min(ls) if ls else 1.0

    # ---------------------------------------------------------- weights
    def weight_jet(self, X, beta_max=None):
        """Weights and their partial derivatives.

        Returns a dict mapping every multi-index ``beta <= beta_max`` to an
        array of shape ``(n, J)``.
        """
        X = self._points(X)
        n, d, J = len(X), self.dim, self.n_constraints
        beta_max = tuple(beta_max or (0,) * d)
        betas = _leq(beta_max)
        jet = {b: np.zeros((n, J)) for b in betas}
        for j, c in enumerate(self.constraints):
            if not c.weight.is_recipe:
                for b in betas:
                    jet[b][:, j] = c.weight.derivative(X, b)
        if self._recipe:
            rjet = self._recipe_jet(X, betas)
            for b in betas:
                jet[b][:, self._recipe] = rjet[b]
        return jet

    def _recipe_jet(self, X, betas):
        R = self._recipe
        k = self.kernel
        ops = [self.ops[j] for j in R]
        F = [self.constraints[j].projection(X) for j in R]
        need_derivs = any(any(b) for b in betas)
        Ps = [self._affine(j) if need_derivs else None for j in R]
        n, r = len(X), len(R)

        v = {}
        M = {}
        for beta in betas:
            vb = np.zeros((n, r))
            for i in range(r):
                for gamma in _leq(beta):
                    cg = _binom(beta, gamma)
                    rest = _sub(beta, gamma)
                    chain = _chain(rest, Ps[i]) if any(rest) else (((0,) * self.dim, 1.0),)
                    for alpha, ca in chain:
                        for rho, l in ops[i].terms:
                            vb[:, i] += cg * ca * l * k.pairwise(X, F[i], gamma, _add(alpha, rho))
            v[beta] = vb
            Mb = np.zeros((n, r, r))
            for i in range(r):
                for jj in range(i, r):
                    acc = np.zeros(n)
                    for gamma in _leq(beta):
                        cg = _binom(beta, gamma)
                        ch1 = _chain(gamma, Ps[i]) if any(gamma) else (((0,) * self.dim, 1.0),)
                        rest = _sub(beta, gamma)
                        ch2 = _chain(rest, Ps[jj]) if any(rest) else (((0,) * self.dim, 1.0),)
                        for (a1, c1), (a2, c2) in iproduct(ch1, ch2):
                            for (r1, l1), (r2, l2) in iproduct(ops[i].terms, ops[jj].terms):
                                acc += cg * c1 * c2 * l1 * l2 * k.pairwise(F[i], F[jj], _add(a1, r1), _add(a2, r2))
                    Mb[:, i, jj] = acc
                    Mb[:, jj, i] = acc
            M[beta] = Mb

        M0 = self._stabilize(M[betas[0]], X)
        lu_solve = np.linalg.solve
        w = {}
        for beta in betas:
            rhs = v[beta].copy()
            for gamma in _leq(beta):
                if gamma == beta:
                    continue
                rhs -= _binom(beta, gamma) * np.einsum("nij,nj->ni", M[_sub(beta, gamma)], w[gamma])
            w[beta] = lu_solve(M0, rhs[..., None])[..., 0]
        return w

    def _stabilize(self, M, X):
        if M.shape[1] == 0:
            return M
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.linalg.cond(M)
        bad = ~(cond <= COND_LIMIT)
        if not np.any(bad):
            return M
        M = M.copy()
        r = M.shape[1]
        tr = np.trace(M[bad], axis1=1, axis2=2)
        M[bad] += (RIDGE * tr / r)[:, None, None] * np.eye(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            cond2 = np.linalg.cond(M[bad])
        if np.any(~np.isfinite(cond2)) or np.any(~(cond2 <= COND_LIMIT)):
            i = np.flatnonzero(bad)[np.argmax(~(cond2 <= COND_LIMIT))]
            raise DegenerateGeometryError(f"recipe matrix singular at point {X[i].tolist()}")
        self.ridge_points += int(bad.sum())
        log.debug("ridge applied to %d recipe matrices", int(bad.sum()))
        return M

    def weights(self, X):
        return self.weight_jet(X)[(0,) * self.dim]

    # ------------------------------------------------------- expansions
    def _expand(self, X, op):
        """Expand ``op u_A`` at ``X`` into base-field functionals."""
        lin = as_linear_op(op, self.dim)
        n, d = len(X), self.dim
        beta_max = lin.max_order
        jet = self.weight_jet(X, beta_max) if self.n_constraints else None
        F = self.projected(X) if self.n_constraints else []
        terms = {}
        offset = np.zeros(n)

        def add(key, coef):
            if key in terms:
                terms[key] = terms[key] + coef
            else:
                terms[key] = np.array(coef, dtype=float) * np.ones(n)

        for beta, cb in lin.terms:
            add((-1, beta), cb)
            for j, c in enumerate(self.constraints):
                P = self._affine(j) if any(beta) else None
                for gamma in _leq(beta):
                    wd = jet[_sub(beta, gamma)][:, j] * (cb * _binom(beta, gamma))
                    if not np.any(wd):
                        continue
                    chain = _chain(gamma, P) if any(gamma) else (((0,) * d, 1.0),)
                    for alpha, ca in chain:
                        offset += wd * ca * c.target_derivative(F[j], alpha)
                        for rho, l in self.ops[j].terms:
                            add((j, _add(alpha, rho)), -wd * ca * l)
        return _Expansion(terms, offset), F

    def _src_points(self, X, F, src):
        return X if src < 0 else F[src]

    def mean(self, X, op=None):
        X = self._points(X)
        E, F = self._expand(X, op)
        out = E.offset.copy()
        if not self.mean_fn.is_zero:
            for (src, alpha), coef in E.terms.items():
                out += coef * self.mean_fn.derivative(self._src_points(X, F, src), alpha)
        return out

    def _terms(self, X, op):
        """Expansion terms as ``(unique points, alpha, selector)`` where the
        sparse ``selector`` maps base-field values at the unique points to
        rows of ``op u_A(X)`` (coefficients included)."""
        E, F = self._expand(X, op)
        out = []
        n = len(X)
        rows = np.arange(n)
        for (src, alpha), coef in E.terms.items():
            if not np.any(coef):
                continue
            P = self._src_points(X, F, src)
            if src < 0:
                U, inv = P, rows
            else:
                U, inv = np.unique(P, axis=0, return_inverse=True)
                inv = inv.reshape(-1)
            S = sparse.csr_matrix((coef, (rows, inv)), shape=(n, len(U)))
            out.append((U, alpha, S))
        return out

    def _assemble(self, X1, op1, X2, op2, diag):
        k = self.kernel
        if diag:
            E1, F1 = self._expand(X1, op1)
            E2, F2 = self._expand(X2, op2)
            out = np.zeros(len(X1))
            for (s1, a1), c1 in E1.terms.items():
                P1 = self._src_points(X1, F1, s1)
                for (s2, a2), c2 in E2.terms.items():
                    out += c1 * c2 * k.pairwise(P1, self._src_points(X2, F2, s2), a1, a2)
            return out
        T1 = self._terms(X1, op1)
        T2 = T1 if (X2 is X1 and op1 == op2) else self._terms(X2, op2)
        out = np.zeros((len(X1), len(X2)))
        for U1, a1, S1 in T1:
            R = np.zeros((len(U1), len(X2)))
            for U2, a2, S2 in T2:
                R += (S2 @ k.matrix(U1, U2, a1, a2).T).T
            out += S1 @ R
        return out

    def cov(self, X1, X2=None, op1=None, op2=None, method="auto"):
        """Covariance matrix of ``op1 u_A(X1)`` and ``op2 u_A(X2)``."""
        X1 = self._points(X1)
        X2 = X1 if X2 is None else self._points(X2)
        if method == "fd":
            return self._cov_fd(X1, X2, op1, op2, diag=False)
        try:
            return self._assemble(X1, op1, X2, op2, diag=False)
        except NotDifferentiableError:
            if method == "analytic":
                raise
            return self._cov_fd(X1, X2, op1, op2, diag=False)

    def var(self, X, op=None, method="auto"):
        """Pointwise variance of ``op u_A(X)``."""
        X = self._points(X)
        if method == "fd":
            return self._cov_fd(X, X, op, op, diag=True)
        try:
            return self._assemble(X, op, X, op, diag=True)
        except NotDifferentiableError:
            if method == "analytic":
                raise
            return self._cov_fd(X, X, op, op, diag=True)

    def mean_op(self, X, op=None, method="auto"):
        X = self._points(X)
        if method == "fd":
            return self._mean_fd(X, op)
        try:
            return self.mean(X, op)
        except NotDifferentiableError:
            if method == "analytic":
                raise
            return self._mean_fd(X, op)

    # ------------------------------------------------ finite differences
    def _stencil(self, alpha, h):
        per_axis = []
        for d, n in enumerate(alpha):
            pts = [((n / 2.0 - i) * h, (-1) ** i * comb(n, i) / h ** n) for i in range(n + 1)]
            per_axis.append([(d, s, w) for s, w in pts])
        out = []
        for combo in iproduct(*per_axis):
            shift = np.zeros(self.dim)
            weight = 1.0
            for d, s, w in combo:
                shift[d] += s
                weight *= w
            out.append((shift, weight))
        return out

    def _fd_step(self, order):
        # balances truncation (h^2) against round-off (eps / h^order)
        return self.min_lengthscale() * max(1e-5, np.finfo(float).eps ** (1.0 / (order + 2)))

    def _cov_fd(self, X1, X2, op1, op2, diag):
        l1, l2 = as_linear_op(op1, self.dim), as_linear_op(op2, self.dim)
        h = self._fd_step(sum(l1.max_order) + sum(l2.max_order))
        out = 0.0
        for a1, c1 in l1.terms:
            for a2, c2 in l2.terms:
                for s1, w1 in self._stencil(a1, h):
                    for s2, w2 in self._stencil(a2, h):
                        out = out + c1 * c2 * w1 * w2 * self._assemble(X1 + s1, None, X2 + s2, None, diag)
        return out

    def _mean_fd(self, X, op):
        lin = as_linear_op(op, self.dim)
        h = self._fd_step(sum(lin.max_order))
        out = 0.0
        for a, c in lin.terms:
            for s, w in self._stencil(a, h):
                out = out + c * w * self.mean(X + s)
        return out


class GaussianField(ConstrainedField):
    """Unconstrained base field ``GRF(m0, k0)``."""

    def __init__(self, domain, kernel, mean=ZERO_MEAN):
        super().__init__(ConstraintSet(domain, (), kernel, mean))


# ------------------------------------------------------------ operations

def recipe_weights(cs, x):
    """Recipe weights ``v(x)^T M(x)^-1`` for every constraint of ``cs``."""
    cf = cs if isinstance(cs, ConstrainedField) else ConstrainedField(cs)
    if len(cf._recipe) != cf.n_constraints:
        cf = ConstrainedField(ConstraintSet(
            cf.domain, tuple(Constraint(c.operator, c.target, c.segment, c.projection, WeightSpec.recipe())
                             for c in cf.constraints), cf.kernel, cf.mean_fn))
    return cf.weights(x)


def constrained_mean(cf, x, op=None):
    return cf.mean_op(x, op)


def constrained_cov(cf, x, xp, left=None, right=None, method="auto"):
    return cf.cov(x, xp, left, right, method=method)


def base_functionals(cf, X):
    """Points and operators of the base-field values a sample transform needs:
    ``u(X)`` and ``(L_j u)(f_j(X))`` for each constraint."""
    X = cf._points(X)
    items = [(X, None)]
    for j, c in enumerate(cf.constraints):
        items.append((c.projection(X), cf.ops[j]))
    return items


def transform_sample(cf, X, base_draw):
    """Map base-field draws to constrained-field draws.

    ``base_draw`` is ``{"u": (n, s) array, "Lu": [ (n, s) array per constraint ]}``
    holding ``u(X)`` and ``(L_j u)(f_j(X))`` from one joint base draw.
    """
    X = cf._points(X)
    u = np.asarray(base_draw["u"], dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    Lu = base_draw.get("Lu")
    if Lu is None or len(Lu) != cf.n_constraints:
        raise ValueError("base draw lacks the projected boundary functionals (L_j u)(f_j(x))")
    out = u.copy()
    if cf.n_constraints == 0:
        return out
    W = cf.weights(X)
    for j, c in enumerate(cf.constraints):
        Y = c.projection(X)
        g = c.target_derivative(Y, (0,) * cf.dim)
        lj = np.asarray(Lu[j], dtype=float).reshape(len(X), -1)
        out += W[:, j:j + 1] * (g[:, None] - lj)
    return out


def sample_base_functionals(cf, X, n_draws, seed=0):
    """Joint draw of ``u(X)`` and ``(L_j u)(f_j(X))`` from the base field."""
    from .gp import draw_gaussian  # local import: gp depends on this module

    items = base_functionals(cf, X)
    base = GaussianField(cf.domain, cf.kernel, cf.mean_fn)
    pts = np.concatenate([p for p, _ in items])
    ops = [op for p, op in items for _ in range(len(p))]
    mean = np.concatenate([base.mean_op(p, op) for p, op in items])
    draws = draw_gaussian(base, pts, ops, mean, n_draws, seed)
    n = len(items[0][0])
    blocks = [draws[i * n:(i + 1) * n] for i in range(len(items))]
    return {"u": blocks[0], "Lu": blocks[1:]}


# -------------------------------------------------------- verification

@dataclass
class ConstraintCheck:
    index: int
    max_mean_violation: float
    max_variance: float
    passed: bool


@dataclass
class VerificationReport:
    checks: list
    tol: float
    mean_tol: float

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def to_dict(self):
        return {
            "passed": self.passed,
            "tol": self.tol,
            "mean_tol": self.mean_tol,
            "constraints": [
                {"index": c.index, "max_mean_violation": c.max_mean_violation,
                 "max_variance": c.max_variance, "passed": c.passed}
                for c in self.checks
            ],
        }


def verify_conditions(cf, n_boundary_samples=50, tol=1e-6, mean_tol=None, seed=0, method="auto"):
    """Check ``L_i m_A = g_i`` and ``L_i k_A L_i* = 0`` on sampled points of
    each constrained segment."""
    mean_tol = tol if mean_tol is None else mean_tol
    checks = []
    for i, c in enumerate(cf.constraints):
        X = c.segment.sample(n_boundary_samples, seed)
        op = cf.ops[i]
        m = cf.mean_op(X, op, method=method)
        g = c.target_derivative(X, (0,) * cf.dim)
        var = cf.var(X, op, method=method)
        dm = float(np.max(np.abs(m - g)))
        dv = float(np.max(np.abs(var)))
        ok = bool(np.isfinite(dm) and np.isfinite(dv) and dm < mean_tol and dv < tol)
        checks.append(ConstraintCheck(i, dm, dv, ok))
    return VerificationReport(checks, tol, mean_tol)


def product_structure_check(cf, axis, n_pairs=100, seed=0):
    """Max deviation of ``k_A`` from ``k_rest * k_axis^A`` over random pairs.

    Targets do not enter covariances, so the one-dimensional field is built
    with homogeneous constraints.
    """
    k = cf.kernel
    if not isinstance(k, Product):
        raise ValueError("product_structure_check needs a Product base kernel")
    own = [f for f in k.factors if f[0] == (axis,)]
    if not own:
        raise ValueError(f"no product factor acts on dimension {axis} alone")
    rest = [f for f in k.factors if f[0] != (axis,)]
    for c in cf.constraints:
        if not c.projection.is_affine or np.any(np.delete(c.projection.matrix, axis, axis=0)
                                               != np.delete(np.eye(cf.dim), axis, axis=0)):
            raise ValueError("constraints must project along the separated axis")
        if any(a[d] for a, _ in cf.ops[cf.constraints.index(c)].terms for d in range(cf.dim) if d != axis):
            raise ValueError("constraint operators must act along the separated axis only")
    lo, hi = cf.domain.bounds()
    from .geometry import Interval

    line = Interval(float(lo[axis]), float(hi[axis]))
    sub = []
    for j, c in enumerate(cf.constraints):
        value = float(c.projection.offset[axis])
        sid = 0 if abs(value - line.a) < 1e-12 else 1
        terms = tuple(((a[axis],), cc) for a, cc in cf.ops[j].terms)
        if c.weight.is_recipe:
            w = WeightSpec.recipe()
        elif c.weight.expr is not None:
            name = cf.domain.variables[axis]
            src = str(c.weight.expr.expr)
            w = WeightSpec.closed_form(parse(src, (name,)))
        else:
            fn = c.weight.fn

            def w1(Z, fn=fn):
                full = np.zeros((len(Z), cf.dim))
                full[:, axis] = Z[:, 0]
                return fn(full)
            w = WeightSpec.closed_form(w1)
        sub.append(Constraint(LinearOp(terms), 0.0, line.segment(sid), line.projection(sid), w))
    line_field = ConstrainedField(ConstraintSet(line, tuple(sub), own[0][1]))
    rng = np.random.default_rng(seed)
    X1 = lo + rng.random((n_pairs, cf.dim)) * (hi - lo)
    X2 = lo + rng.random((n_pairs, cf.dim)) * (hi - lo)
    # one cross-covariance block is cheaper than n_pairs single-entry calls
    full = np.diag(cf.cov(X1, X2))
    rest_val = np.ones(n_pairs)
    for dims, kr in rest:
        rest_val *= kr.pairwise(X1[:, list(dims)], X2[:, list(dims)])
    line_val = np.diag(line_field.cov(X1[:, [axis]], X2[:, [axis]]))
    return float(np.max(np.abs(full - rest_val * line_val)))
