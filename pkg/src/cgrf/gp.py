"""Gaussian-process engine: Gram matrices, stabilized Cholesky, sampling,
conditioning on (noisy) linear observations, likelihood and tuning."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular

from .kernels import LinearOp, as_linear_op

log = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky failed at every rung of the jitter ladder."""


class AllCandidatesFailedError(RuntimeError):
    pass


# ------------------------------------------------------------- datasets

def _op_key(op):
    return op if isinstance(op, (str, type(None))) else repr(op)


@dataclass(frozen=True)
class Dataset:
    """Observations ``y_i = (L_i u)(x_i) + eps_i`` with ``eps_i ~ N(0, noise_sd^2)``.

    ``ops`` holds one operator tag per observation (``None`` means identity).
    Tags may be operator names such as ``"u_xx"`` or :class:`LinearOp` objects.
    """

    inputs: np.ndarray
    y: np.ndarray
    noise_sd: float = 0.0
    ops: tuple | None = None

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if len(X) != len(y):
            raise ValueError(f"{len(X)} inputs but {len(y)} targets")
        if not np.isfinite(self.noise_sd) or self.noise_sd < 0:
            raise ValueError("noise_sd must be finite and >= 0")
        ops = None if self.ops is None else tuple(self.ops)
        if ops is not None and len(ops) != len(y):
            raise ValueError("need one operator tag per observation")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "ops", ops)

    def __len__(self):
        return len(self.y)

    def blocks(self):
        """``[(index array, op)]`` grouping observations by operator tag."""
        if self.ops is None:
            return [(np.arange(len(self)), None)]
        groups = {}
        first = {}
        for i, op in enumerate(self.ops):
            key = _op_key(op)
            groups.setdefault(key, []).append(i)
            first.setdefault(key, op)
        return [(np.array(idx), first[key]) for key, idx in groups.items()]

    def subset(self, idx):
        ops = None if self.ops is None else tuple(self.ops[i] for i in idx)
        return Dataset(self.inputs[idx], self.y[idx], self.noise_sd, ops)

    def to_csv(self, path, columns=None):
        """Write ``columns..., y`` with a JSON sidecar holding σ and tags."""
        path = Path(path)
        d = self.inputs.shape[1]
        columns = list(columns or [f"x{k + 1}" for k in range(d)])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns + ["y"])
            for x, y in zip(self.inputs, self.y):
                w.writerow([repr(float(v)) for v in x] + [repr(float(y))])
        tags = None if self.ops is None else [op if isinstance(op, (str, type(None))) else
                                              [[list(a), c] for a, c in op.terms] for op in self.ops]
        sidecar = {"noise_sd": self.noise_sd, "ops": tags, "columns": columns}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(rows[0]))
        side = path.with_suffix(path.suffix + ".json")
        meta = json.loads(side.read_text()) if side.exists() else {}
        ops = meta.get("ops")
        if ops is not None:
            ops = tuple(op if isinstance(op, (str, type(None))) else
                        LinearOp(tuple((tuple(a), c) for a, c in op)) for op in ops)
        return cls(data[:, :-1], data[:, -1], float(meta.get("noise_sd", 0.0)), ops)


# ---------------------------------------------------------------- gram

def _blocks(points, ops):
    points = np.asarray(points, dtype=float)
    if ops is None or isinstance(ops, (str, LinearOp)) or not isinstance(ops, (list, tuple)):
        return [(np.arange(len(points)), ops)]
    return Dataset(points, np.zeros(len(points)), 0.0, ops).blocks()


def cross_cov(fld, X1, ops1, X2, ops2):
    """``L_i k L_j*(x_i, x_j)`` for two point lists with per-point operators."""
    X1 = np.asarray(X1, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    X1 = X1[:, None] if X1.ndim == 1 else X1
    X2 = X2[:, None] if X2.ndim == 1 else X2
    K = np.empty((len(X1), len(X2)))
    for i1, o1 in _blocks(X1, ops1):
        for i2, o2 in _blocks(X2, ops2):
            K[np.ix_(i1, i2)] = fld.cov(X1[i1], X2[i2], o1, o2)
    return K


def field_mean(fld, X, ops=None):
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    out = np.empty(len(X))
    for idx, op in _blocks(X, ops):
        out[idx] = fld.mean_op(X[idx], op)
    return out


def gram(fld, points, ops=None):
    """Symmetric Gram matrix ``K_ij = L_i k L_j*(x_i, x_j)``."""
    K = cross_cov(fld, points, ops, points, ops)
    return 0.5 * (K + K.T)


@dataclass(frozen=True)
class Factor:
    """Lower Cholesky factor of ``K + jitter * I``."""

    L: np.ndarray
    jitter: float

    @property
    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))

    def solve(self, b):
        return cho_solve((self.L, True), b, check_finite=False)

    def half_solve(self, b):
        return solve_triangular(self.L, b, lower=True, check_finite=False)


def factorize(K, ladder=JITTER_LADDER):
    """Cholesky with escalating diagonal jitter ``eta * mean(diag K)``."""
    K = np.asarray(K, dtype=float)
    if K.shape[0] == 0:
        return Factor(np.zeros((0, 0)), 0.0)
    scale = float(np.mean(np.diag(K)))
    if not np.isfinite(scale):
        raise NotPositiveDefiniteError("Gram matrix has non-finite diagonal")
    scale = scale if scale > 0 else 1.0
    n = K.shape[0]
    for eta in ladder:
        jit = eta * scale
        try:
            L = np.linalg.cholesky(K + jit * np.eye(n))
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            if jit:
                log.debug("cholesky needed jitter %.3g", jit)
            return Factor(L, jit)
    w = np.linalg.eigvalsh(0.5 * (K + K.T))
    raise NotPositiveDefiniteError(
        f"not positive definite at max jitter {ladder[-1]:.0e}*mean(diag); "
        f"eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}], n={n}")


def psd_factor(C, rel_tol=1e-10):
    """Rank-revealing factor ``F`` with ``C ~= F F^T`` for a PSD matrix
    that may carry round-off negatives.

    Pivoted Cholesky stops once the largest remaining pivot drops below
    ``rel_tol * max(diag C)``; the discarded part is below that level.
    """
    C = 0.5 * (np.asarray(C, dtype=float) + np.asarray(C, dtype=float).T)
    n = C.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    top = float(np.max(np.diag(C)))
    if not top > 0:
        return np.zeros((n, 0))
    c, piv, rank, info = lapack.dpstrf(C, lower=1, tol=rel_tol * top)
    if info < 0:
        raise NotPositiveDefiniteError(f"pivoted Cholesky failed (info={info})")
    F = np.zeros((n, rank))
    F[piv - 1] = np.tril(c)[:, :rank]
    return F


# ------------------------------------------------------------- sampling

def standard_normals(seed, n_points, n_draws):
    """Standard normals ``z[i, d]`` fixed by ``(seed, d, i)``: draw ``d`` uses
    its own Philox stream keyed by ``(seed, d)`` and ``i`` is the position
    within that stream."""
    z = np.empty((n_points, n_draws))
    for d in range(n_draws):
        gen = np.random.Generator(np.random.Philox(key=[int(seed) & (2 ** 64 - 1), d]))
        z[:, d] = gen.standard_normal(n_points)
    return z


def draw_mvn(mean, K, n_draws, seed, ladder=JITTER_LADDER):
    """``mean + chol(K) z`` with counter-based normals.

    Rows with (numerically) zero variance are exactly deterministic for a
    PSD matrix, so they are left at the mean instead of being jittered.
    """
    K = 0.5 * (K + K.T)
    mean = np.asarray(mean, dtype=float)
    z = standard_normals(seed, len(mean), n_draws)
    diag = np.diag(K)
    scale = float(np.mean(np.abs(diag))) if len(diag) else 0.0
    live = np.flatnonzero(diag > 1e-12 * scale)
    out = np.repeat(mean[:, None], n_draws, axis=1)
    if live.size:
        f = factorize(K[np.ix_(live, live)], ladder)
        out[live] += f.L @ z[live]
    return out


def sample(fld, points, n_draws, seed=0, ops=None):
    """Joint draws of the field (or its operator images) at ``points``.

    Returns an array of shape ``(n_points, n_draws)``.
    """
    K = gram(fld, points, ops)
    return draw_mvn(field_mean(fld, points, ops), K, n_draws, seed)


def draw_gaussian(fld, pts, ops, mean, n_draws, seed=0):
    K = gram(fld, pts, list(ops))
    return draw_mvn(mean, K, n_draws, seed)


# --------------------------------------------------------- conditioning

class Posterior:
    """GRF conditioned on a :class:`Dataset`.

    Exposes the same ``mean_op``/``cov``/``var`` interface as the prior so it
    can be conditioned again.
    """

    def __init__(self, prior, data, factor, resid):
        self.prior = prior
        self.data = data
        self.factor = factor
        self._alpha = factor.solve(resid)
        self.dim = getattr(prior, "dim", data.inputs.shape[1])

    @property
    def jitter(self):
        return self.factor.jitter

    def _kxd(self, X, op):
        return cross_cov(self.prior, X, op, self.data.inputs, self.data.ops)

    def mean_op(self, X, op=None, method="auto"):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.prior.mean_op(X, op) + self._kxd(X, op) @ self._alpha

    mean = mean_op

    def cov(self, X1, X2=None, op1=None, op2=None, method="auto"):
        X1 = np.atleast_2d(np.asarray(X1, dtype=float))
        X2 = X1 if X2 is None else np.atleast_2d(np.asarray(X2, dtype=float))
        A1 = self.factor.half_solve(self._kxd(X1, op1).T)
        A2 = A1 if (X2 is X1 and op1 == op2) else self.factor.half_solve(self._kxd(X2, op2).T)
        return self.prior.cov(X1, X2, op1, op2) - A1.T @ A2

    def var(self, X, op=None, method="auto"):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        A = self.factor.half_solve(self._kxd(X, op).T)
        return self.prior.var(X, op) - np.sum(A * A, axis=0)

    def predict(self, X, op=None, return_std=False):
        m = self.mean_op(X, op)
        if not return_std:
            return m
        return m, np.sqrt(np.maximum(self.var(X, op), 0.0))

    def sample(self, X, n_draws, seed=0, op=None):
        return sample(self, X, n_draws, seed, op)


def _data_system(fld, data):
    K = gram(fld, data.inputs, data.ops)
    K[np.diag_indices_from(K)] += data.noise_sd ** 2
    resid = data.y - field_mean(fld, data.inputs, data.ops)
    return K, resid


def condition(fld, data):
    """Posterior of ``fld`` given ``data``; noise enters as ``sigma^2 I``."""
    if len(data) == 0:
        raise ValueError("dataset is empty")
    K, resid = _data_system(fld, data)
    return Posterior(fld, data, factorize(K), resid)


def log_marginal_likelihood(fld, data):
    K, resid = _data_system(fld, data)
    f = factorize(K)
    a = f.solve(resid)
    n = len(resid)
    return float(-0.5 * resid @ a - 0.5 * f.logdet - 0.5 * n * math.log(2 * math.pi))


def mspe(predictor, test):
    """Mean squared difference between predicted means and ``test.y``."""
    if hasattr(predictor, "mean_op"):
        pred = field_mean(predictor, test.inputs, test.ops)
    else:
        pred = np.asarray(predictor(test.inputs), dtype=float)
    return float(np.mean((pred - test.y) ** 2))


# ---------------------------------------------------------------- tuning

@dataclass
class TuneResult:
    params: dict
    objective: float
    trace: list = field(default_factory=list)

    @property
    def n_failed(self):
        return sum(1 for _, v in self.trace if not np.isfinite(v))


def default_grid(train, lengthscale_dims=None, n=7):
    """Log-spaced grids spanning ``[1e-2, 1e2]`` times a data-scale value.

    Lengthscales centre on the median pairwise distance per dimension, the
    precision on ``1 / var(y)`` and the noise sd on ``0.1 * std(y)``.
    """
    X = train.inputs
    dims = range(X.shape[1]) if lengthscale_dims is None else lengthscale_dims
    factors = np.logspace(-2, 2, n)
    grid = {}
    for d in dims:
        col = X[:, d]
        diffs = np.abs(col[:, None] - col[None, :])[np.triu_indices(len(col), 1)]
        diffs = diffs[diffs > 0]
        med = float(np.median(diffs)) if diffs.size else 1.0
        grid[f"lengthscale_{d}"] = list(med * factors)
    var = float(np.var(train.y)) or 1.0
    grid["precision"] = list(factors / var)
    grid["noise_sd"] = list(0.1 * math.sqrt(var) * factors)
    return grid


def _interp(values, pos):
    """Value at fractional grid index ``pos`` (log-linear when positive)."""
    values = np.asarray(values, dtype=float)
    pos = float(np.clip(pos, 0, len(values) - 1))
    if len(values) == 1:
        return float(values[0])
    i = min(int(math.floor(pos)), len(values) - 2)
    t = pos - i
    a, b = values[i], values[i + 1]
    if np.all(values > 0):
        return float(math.exp((1 - t) * math.log(a) + t * math.log(b)))
    return float((1 - t) * a + t * b)


def tune_hyperparams(family, train, val, objective="mspe", budget=50, grid=None, restarts=0):
    """Grid search followed by compass refinement.

    ``family(**params)`` returns ``(field, noise_sd)``; ``grid`` maps
    parameter names to candidate values.  ``budget`` caps the number of
    objective evaluations.  Grid cells are visited from the centre outwards,
    so ``budget=1`` evaluates only the centre.  The remaining budget runs a
    compass search over fractional grid indices (log-interpolated) started
    from the best cell and, when ``restarts > 0``, from the next-best cells.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if objective not in ("mspe", "lml"):
        raise ValueError("objective must be 'mspe' or 'lml'")
    if not grid:
        raise ValueError("empty hyperparameter grid")
    names = list(grid)
    sizes = [len(grid[k]) for k in names]
    centre = [(s - 1) / 2 for s in sizes]
    trace = []
    cache = {}

    def params_at(pos):
        return {k: _interp(grid[k], p) for k, p in zip(names, pos)}

    def evaluate(pos):
        key = tuple(round(p, 12) for p in pos)
        if key in cache:
            return cache[key]
        if len(trace) >= budget:
            return None
        params = params_at(pos)
        try:
            fld, noise = family(**params)
            tr = Dataset(train.inputs, train.y, noise, train.ops)
            if objective == "mspe":
                value = mspe(condition(fld, tr), val)
            else:
                value = -log_marginal_likelihood(fld, tr)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            log.debug("candidate %s failed: %s", params, exc)
            value = math.inf
        if not np.isfinite(value):
            value = math.inf
        trace.append((params, value))
        cache[key] = value
        return value

    cells = sorted(itertools.product(*(range(s) for s in sizes)),
                   key=lambda c: (sum((a - b) ** 2 for a, b in zip(c, centre)), c))
    for c in cells:
        if evaluate(tuple(float(v) for v in c)) is None:
            break

    def best_positions():
        ranked = sorted(cache.items(), key=lambda kv: kv[1])
        return [list(k) for k, v in ranked if np.isfinite(v)]

    starts = best_positions()[: 1 + restarts]
    for start in starts:
        pos, best = list(start), cache[tuple(round(p, 12) for p in start)]
        step = 1.0
        while step >= 1.0 / 64 and len(trace) < budget:
            improved = False
            for k in range(len(names)):
                for sgn in (1, -1):
                    cand = list(pos)
                    cand[k] = float(np.clip(cand[k] + sgn * step, 0, sizes[k] - 1))
                    if cand[k] == pos[k]:
                        continue
                    v = evaluate(tuple(cand))
                    if v is None:
                        break
                    if v < best:
                        pos, best, improved = cand, v, True
            if not improved:
                step /= 2
    finite = [(p, v) for p, v in trace if np.isfinite(v)]
    if not finite:
        raise AllCandidatesFailedError(f"all {len(trace)} hyperparameter candidates failed")
    params, value = min(finite, key=lambda pv: pv[1])
    return TuneResult(params, value, trace)
