"""Probabilistic solution of the heat equation ``u_t = u_xx`` with a
boundary-constrained prior.

The prior is a cGRF on ``[0, T] x [0, 1]`` that fixes the initial state and
both side conditions.  Marching forward over time knots, each knot draws
``u_xx`` on the spatial grid from the current posterior and feeds it back as
a noisy observation of ``u_t``, with the draw's own predictive covariance as
the noise covariance.  Every ensemble member repeats this with its own
draws; because covariances do not depend on the drawn values, one
factorization is shared by all members.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..constrained import ConstrainedField, ConstraintSet, make_constraint
from ..geometry import Interval, SpaceTime
from ..gp import psd_factor
from ..kernels import BoundaryOperator, LinearOp, SquaredExponential
from .reference import EndCondition, reference_pde_solve

log = logging.getLogger(__name__)

CASES = {
    # initial condition, (L2, g2) at x=0, (L3, g3) at x=1
    "dirichlet": ("sin(pi*x)", (BoundaryOperator(0.0, 1.0, 1), 0.0), (BoundaryOperator(0.0, 1.0, 1), 0.0)),
    "robin_neumann": ("cos(pi*x) + 2", (BoundaryOperator(1.0, 1.0, 1), 3.0), (BoundaryOperator(1.0, 0.0, 1), 0.0)),
}


@dataclass(frozen=True)
class HeatProblemConfig:
    case: str = "dirichlet"
    n_t: int = 100
    n_x: int = 16
    t_end: float = 0.25
    lengthscales: tuple = (0.0175, 0.4573)
    precision: float = 1.0
    ensemble_size: int = 50
    # added to the interrogation noise, relative to the prior variance of u_t
    nugget: float = 1e-6
    # members come in (+z, -z) pairs so the ensemble mean has no sampling error
    antithetic: bool = True

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown heat case {self.case!r}; expected one of {sorted(CASES)}")
        if self.n_t < 2 or self.n_x < 2:
            raise ValueError("grid sizes must be >= 2")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if len(self.lengthscales) != 2 or min(self.lengthscales) <= 0:
            raise ValueError("need two positive lengthscales (t, x)")
        if not self.nugget >= 0:
            raise ValueError("nugget must be >= 0")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lengthscales" in d:
            d["lengthscales"] = tuple(float(v) for v in d["lengthscales"])
        return cls(**d)


@dataclass
class HeatResult:
    t: np.ndarray
    x: np.ndarray
    ensemble: np.ndarray  # (n_t, n_x, members)
    posterior_rank: float
    dropped_directions: int = 0
    config: HeatProblemConfig = field(repr=False, default=None)

    @property
    def mean(self):
        return self.ensemble.mean(axis=2)

    @property
    def variance(self):
        return self.ensemble.var(axis=2)

    def quantiles(self, q=(0.025, 0.975)):
        return np.quantile(self.ensemble, q, axis=2)

    def summary_rows(self):
        """Rows ``(t, x, mean, q025, q975)`` in time-major order."""
        lo, hi = self.quantiles()
        T, X = np.meshgrid(self.t, self.x, indexing="ij")
        return np.column_stack([T.ravel(), X.ravel(), self.mean.ravel(), lo.ravel(), hi.ravel()])


def heat_prior(cfg):
    dom = SpaceTime(0.0, cfg.t_end, Interval(0.0, 1.0))
    ic, (l2, g2), (l3, g3) = CASES[cfg.case]
    kernel = SquaredExponential(cfg.precision, tuple(cfg.lengthscales))
    cons = (make_constraint(dom, 0, ic), make_constraint(dom, 1, g2, l2), make_constraint(dom, 2, g3, l3))
    return ConstrainedField(ConstraintSet(dom, cons, kernel))


# innovation directions with variance below this fraction of the largest
# innovation variance carry nothing but round-off and are dropped
RANK_TOL = 1e-12


def _psd_sqrt(C):
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


class _MemberNormals:
    """Per-member standard normal streams keyed by ``(seed, stream)``."""

    def __init__(self, seed, m, antithetic):
        self.m = m
        self.antithetic = antithetic
        k = (m + 1) // 2 if antithetic else m
        self.gens = [np.random.Generator(np.random.Philox(key=[seed, j])) for j in range(k)]

    def __call__(self, n):
        z = np.column_stack([g.standard_normal(n) for g in self.gens])
        if not self.antithetic:
            return z
        return np.column_stack([z, -z]).reshape(n, 2, -1).transpose(0, 2, 1).reshape(n, -1)[:, :self.m]


class _Innovations:
    """Whitened innovations ``e_j = W_j (y_j - E[y_j | y_<j])``.

    ``W_j`` keeps only the well-determined directions of the innovation
    covariance, so ``e`` is a standard normal vector of possibly reduced
    length even when some observations are deterministic.
    """

    def __init__(self, nugget=0.0):
        self.nugget = nugget
        self.W = []      # (r_j, n_j)
        self.R = []      # Cov(e_<j, y_j), (R_<j, n_j)
        self.size = 0
        self.dropped = 0

    def project(self, K):
        """``Cov(e, z)`` from ``K = Cov(y, z)`` stacked over all blocks."""
        H = np.empty((self.size, K.shape[1]))
        row = col = 0
        for W, R in zip(self.W, self.R):
            n = W.shape[1]
            r = W.shape[0]
            H[row:row + r] = W @ (K[col:col + n] - R.T @ H[:row])
            row += r
            col += n
        return H

    def add(self, S, R, resid):
        """Append a block with innovation covariance ``S``; ``resid`` is
        ``y - prior mean - R^T e_prev`` and the new ``e`` block is returned."""
        S = 0.5 * (S + S.T)
        S[np.diag_indices_from(S)] += self.nugget
        w, Q = np.linalg.eigh(S)
        scale = max(float(np.max(np.abs(np.diag(S)))), 1e-300)
        keep = w > RANK_TOL * scale
        W = (Q[:, keep] / np.sqrt(w[keep])).T
        self.W.append(W)
        self.R.append(R)
        self.size += W.shape[0]
        self.dropped += int((~keep).sum())
        return W @ resid


def solve_heat(cfg, seed=0, deterministic=False):
    """Run the ensemble solver and return a :class:`HeatResult`.

    With ``deterministic=True`` every interrogation uses the posterior mean
    of ``u_xx`` and members report the posterior mean, which removes all
    sampling noise (a single member is then enough).
    """
    cf = heat_prior(cfg)
    t = np.linspace(0.0, cfg.t_end, cfg.n_t)
    x = np.linspace(0.0, 1.0, cfg.n_x)
    nx, nt, m = cfg.n_x, cfg.n_t, cfg.ensemble_size
    grid = np.column_stack([np.repeat(t, nx), np.tile(x, nt)])
    op_t = LinearOp.partial(2, 0, 1)
    op_xx = LinearOp.partial(2, 1, 2)
    normals = _MemberNormals(seed, m, cfg.antithetic)

    inn = _Innovations(cfg.nugget * float(np.max(cf.var(grid[-nx:], op_t))))
    E = np.zeros((0, m))
    mean_t = cf.mean(grid, op_t)
    for n in range(nt):
        sl, pv = slice(n * nx, (n + 1) * nx), slice(0, n * nx)
        Xn = grid[sl]
        C = cf.cov(Xn, Xn, op_xx, op_xx)
        mu = np.repeat(cf.mean(Xn, op_xx)[:, None], m, axis=1)
        if n:
            A = inn.project(cf.cov(grid[pv], Xn, op_t, op_xx))
            C = C - A.T @ A
            mu = mu + A.T @ E
            R = inn.project(cf.cov(grid[pv], Xn, op_t, op_t))
        else:
            R = np.zeros((0, nx))
        C = 0.5 * (C + C.T)
        z = normals(nx)
        y = mu if deterministic else mu + _psd_sqrt(C) @ z
        S = cf.cov(Xn, Xn, op_t, op_t) + C - R.T @ R
        e = inn.add(S, R, y - mean_t[sl, None] - R.T @ E)
        E = np.vstack([E, e])
    log.debug("heat solver dropped %d degenerate interrogation directions", inn.dropped)

    # posterior of u on the grid given every member's interrogations
    A = inn.project(cf.cov(grid, grid, op_t, None))
    out = cf.mean(grid)[:, None] + A.T @ E
    C = cf.cov(grid, grid)
    C -= A.T @ A
    del A
    C = 0.5 * (C + C.T)
    F = psd_factor(C)
    del C
    if not deterministic:
        z = normals(F.shape[1])
        out += F @ z
    return HeatResult(t, x, out.reshape(nt, nx, m), float(F.shape[1]), inn.dropped, cfg)


def heat_reference(cfg, t, x):
    """Crank-Nicolson reference on the requested points."""
    ic_src, (l2, g2), (l3, g3) = CASES[cfg.case]
    ics = {"dirichlet": lambda s: np.sin(np.pi * s), "robin_neumann": lambda s: np.cos(np.pi * s) + 2.0}
    left = EndCondition(l2.a, l2.b, lambda tt, g=g2: g)
    right = EndCondition(l3.a, l3.b, lambda tt, g=g3: g)
    return reference_pde_solve("heat", ics[cfg.case], left, right, t, x).u


def heat_exact_dirichlet(t, x):
    T, X = np.meshgrid(t, x, indexing="ij")
    return np.exp(-np.pi ** 2 * T) * np.sin(np.pi * X)
