"""Closed-form identities the constrained construction must reproduce.

Both checks compare :func:`constrained_cov` against covariances written out
directly from the base kernel, so they exercise weights, projections and the
covariance assembly together.
"""

from __future__ import annotations

import numpy as np

from .constrained import ConstrainedField, GaussianField
from .gp import Dataset, condition
from .kernels import SquaredExponential
from .presets import interval_endpoints, single_endpoint


def _pairs(n_pairs, seed, lo=0.0, hi=1.0):
    gen = np.random.Generator(np.random.Philox(key=[seed, 0]))
    return gen.uniform(lo, hi, size=(n_pairs, 2))


def bridge_covariance(kernel, x, xp, T=1.0):
    """Brownian-bridge style pinning of ``kernel`` at ``0`` and then ``T``.

    Implements the two-step formula: first pin at ``0``,
    ``k0(x, x') = k(x, x') - k(x, 0) k(0, x') / k(0, 0)``, then pin ``k0`` at ``T``.
    """
    def k(a, b):
        return kernel.pairwise(np.atleast_1d(a)[:, None], np.atleast_1d(b)[:, None])

    zero = np.zeros_like(x)
    end = np.full_like(x, T)

    def k_pinned(a, b):
        return k(a, b) - k(a, zero) * k(zero, b) / k(zero, zero)

    return k_pinned(x, xp) - k_pinned(end, x) * k_pinned(end, xp) / k_pinned(end, end)


def bridge_check(kernel=None, n_pairs=50, seed=0):
    """Max deviations of the two-endpoint recipe cGRF from the pinned kernel.

    Returns a dict with ``formula`` (against :func:`bridge_covariance`) and
    ``conditioning`` (against the base field conditioned on noiseless
    endpoint values).
    """
    kernel = kernel or SquaredExponential(1.0, (0.3,))
    cs = interval_endpoints("state", kernel)
    cf = ConstrainedField(cs)
    P = _pairs(n_pairs, seed)
    x, xp = P[:, 0], P[:, 1]
    kA = np.array([cf.cov(x[i:i + 1, None], xp[i:i + 1, None])[0, 0] for i in range(n_pairs)])
    formula = bridge_covariance(kernel, x, xp)

    ends = Dataset(np.array([[0.0], [1.0]]), np.array([0.5, -0.25]))
    post = condition(GaussianField(cs.domain, kernel), ends)
    cond = np.array([post.cov(x[i:i + 1, None], xp[i:i + 1, None])[0, 0] for i in range(n_pairs)])
    mean_dev = np.max(np.abs(post.mean(x[:, None]) - cf.mean(x[:, None])))
    return {
        "formula": float(np.max(np.abs(kA - formula))),
        "conditioning": float(np.max(np.abs(kA - cond))),
        "conditioning_mean": float(mean_dev),
    }


def endpoint_check(kernel=None, n_pairs=50, seed=0):
    """Max deviation of the ``w = 1`` endpoint-state cGRF from
    ``k(x, x') - k(x, 0) - k(0, x') + k(0, 0)``."""
    kernel = kernel or SquaredExponential(1.0, (0.3,))
    cf = ConstrainedField(single_endpoint("state", kernel))
    P = _pairs(n_pairs, seed)
    x, xp = P[:, :1], P[:, 1:]
    z = np.zeros_like(x)
    expected = kernel.pairwise(x, xp) - kernel.pairwise(x, z) - kernel.pairwise(z, xp) + kernel.pairwise(z, z)
    got = np.array([cf.cov(x[i:i + 1], xp[i:i + 1])[0, 0] for i in range(n_pairs)])
    return {"covariance": float(np.max(np.abs(got - expected)))}
