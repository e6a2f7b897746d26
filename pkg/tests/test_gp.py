import math

import numpy as np
import pytest

from cgrf.constrained import ConstrainedField, GaussianField
from cgrf.geometry import Interval
from cgrf.gp import (
    AllCandidatesFailedError,
    Dataset,
    NotPositiveDefiniteError,
    condition,
    default_grid,
    factorize,
    gram,
    log_marginal_likelihood,
    mspe,
    sample,
    standard_normals,
    tune_hyperparams,
)
from cgrf.kernels import SquaredExponential
from cgrf.presets import interval_endpoints, square_parallel

LINE = Interval(0.0, 1.0)


def se_field(lam=0.3, precision=1.0):
    return GaussianField(LINE, SquaredExponential(precision, (lam,)))


def test_gram_examples():
    assert gram(se_field(1.0), [[0.3]]).tolist() == [[1.0]]
    K = gram(se_field(), [[0.4], [0.4]])
    assert abs(np.linalg.det(K)) < 1e-12
    cf = ConstrainedField(square_parallel("state"))
    B = cf.constraints[0].segment.sample(10)
    assert np.max(np.abs(gram(cf, B))) < 1e-10


def test_gram_operator_tags():
    f = se_field(1.0)
    K = gram(f, [[0.2], [0.2]], [None, "u_x"])
    # cov(u, u_x) at zero lag vanishes, var(u_x) = 1 / lambda^2
    np.testing.assert_allclose(K, [[1.0, 0.0], [0.0, 1.0]], atol=1e-15)
    assert np.array_equal(K, K.T)


def test_factorize_examples():
    f = factorize(np.eye(4))
    assert f.jitter == 0.0
    K = gram(se_field(), [[0.4], [0.4], [0.7]])
    f = factorize(K)
    assert f.jitter > 0
    X = np.linspace(0, 1, 100)[:, None]
    K = gram(se_field(1.0), X)
    f = factorize(K)
    w = np.linalg.eigvalsh(K + f.jitter * np.eye(100))
    assert np.isfinite(f.logdet)
    assert math.isclose(f.logdet, float(np.sum(np.log(w))), rel_tol=1e-3)


def test_factorize_failure_reports_eigenvalues():
    with pytest.raises(NotPositiveDefiniteError, match="eigenvalues"):
        factorize(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_sample_mean_and_determinism():
    cf = ConstrainedField(interval_endpoints("state"))
    X = np.array([[0.2], [0.5], [0.8]])
    D = sample(cf, X, 10_000, seed=1)
    se = np.sqrt(cf.var(X) / 10_000)
    assert np.all(np.abs(D.mean(axis=1) - cf.mean(X)) < 4 * se)
    assert np.array_equal(D, sample(cf, X, 10_000, seed=1))
    assert not np.array_equal(D, sample(cf, X, 10_000, seed=2))


def test_sample_constrained_endpoint():
    cf = ConstrainedField(interval_endpoints("state", targets=(0.0, 0.0)))
    D = sample(cf, np.array([[0.0], [0.5], [1.0]]), 200, seed=0)
    assert np.max(np.abs(D[[0, 2]])) < 1e-6


def test_standard_normals_are_counter_based():
    a = standard_normals(3, 5, 4)
    b = standard_normals(3, 5, 6)
    np.testing.assert_array_equal(a, b[:, :4])


def test_condition_interpolates():
    post = condition(se_field(), Dataset([[0.4]], [1.7]))
    m, s = post.predict([[0.4]], return_std=True)
    assert abs(m[0] - 1.7) < 1e-10 and s[0] < 1e-5
    assert abs(post.var([[0.4]])[0]) < 1e-10


def test_condition_keeps_constraints():
    cf = ConstrainedField(interval_endpoints("state", targets=(0.0, 0.0)))
    post = condition(cf, Dataset([[0.3], [0.6]], [2.0, -1.0], noise_sd=0.1))
    assert abs(post.mean([[0.0]])[0]) < 1e-8
    assert abs(post.var([[1.0]])[0]) < 1e-10


def test_condition_matches_direct_regression():
    X = np.array([[0.1], [0.3], [0.5], [0.7], [0.9]])
    y = 2.0 * X[:, 0] + 0.5
    f = GaussianField(LINE, SquaredExponential(1e-2, (5.0,)))
    post = condition(f, Dataset(X, y))
    x6 = np.array([[0.42]])
    # oracle: the same GP regression written out with numpy
    k = f.kernel
    K = k.matrix(X) + post.jitter * np.eye(5)
    direct = k.matrix(x6, X) @ np.linalg.solve(K, y)
    assert abs(post.mean(x6)[0] - direct[0]) < 1e-8
    assert abs(post.mean(x6)[0] - (2 * 0.42 + 0.5)) < 1e-3


def test_posterior_variance_below_prior():
    f = se_field()
    post = condition(f, Dataset([[0.1], [0.5], [0.55]], [0.3, -0.2, 0.1], noise_sd=0.05))
    X = np.linspace(0, 1, 50)[:, None]
    assert np.all(post.var(X) <= f.var(X) + 1e-10)
    assert np.all(post.var(X) >= -1e-10)


def test_sequential_conditioning_equals_joint():
    f = se_field()
    X = np.array([[0.1], [0.35], [0.6], [0.85]])
    y = np.array([0.2, -0.4, 0.9, 0.1])
    joint = condition(f, Dataset(X, y))
    seq = condition(condition(f, Dataset(X[:2], y[:2])), Dataset(X[2:], y[2:]))
    P = np.linspace(0, 1, 20)[:, None]
    assert np.max(np.abs(joint.mean(P) - seq.mean(P))) < 1e-8


def test_bridge_by_conditioning():
    k = SquaredExponential(1.0, (0.3,))
    cf = ConstrainedField(interval_endpoints("state", k))
    post = condition(GaussianField(LINE, k), Dataset([[0.0], [1.0]], [0.5, -0.25]))
    X = np.linspace(0.03, 0.97, 15)[:, None]
    assert np.max(np.abs(post.cov(X) - cf.cov(X))) < 1e-12


def test_lml_and_mspe_examples():
    assert math.isclose(log_marginal_likelihood(se_field(1.0), Dataset([[0.2]], [0.0])), -0.5 * math.log(2 * math.pi))
    X = np.linspace(0, 1, 6)[:, None]
    train = Dataset(X, np.sin(3 * X[:, 0]))
    assert mspe(condition(se_field(), train), train) < 1e-16
    assert math.isclose(mspe(se_field(), Dataset(X, np.full(6, 0.7))), 0.49)


def test_lml_matches_scipy_density():
    from scipy.stats import multivariate_normal

    f = se_field(0.4)
    X = np.array([[0.1], [0.5], [0.9]])
    y = np.array([0.3, -0.1, 0.4])
    K = f.kernel.matrix(X) + 0.2 ** 2 * np.eye(3)
    ref = multivariate_normal(np.zeros(3), K).logpdf(y)
    assert math.isclose(log_marginal_likelihood(f, Dataset(X, y, 0.2)), ref, rel_tol=1e-12)


def _se_family(**p):
    return GaussianField(LINE, SquaredExponential(1.0, (p["lengthscale_0"],))), p.get("noise_sd", 0.0)


def test_tune_recovers_lengthscale():
    X = np.linspace(0, 1, 40)[:, None]
    y = sample(se_field(0.5), X, 1, seed=21)[:, 0]
    grid = {"lengthscale_0": [0.125, 0.25, 0.5, 1.0, 2.0]}
    train, val = Dataset(X[::2], y[::2]), Dataset(X[1::2], y[1::2])
    res = tune_hyperparams(_se_family, train, val, "lml", budget=25, grid=grid)
    assert 0.25 <= res.params["lengthscale_0"] <= 1.0
    assert len(res.trace) <= 25


def test_tune_interpolation_regime_picks_zero_noise():
    X = np.linspace(0, 1, 12)[:, None]
    d = Dataset(X, np.cos(4 * X[:, 0]))
    grid = {"lengthscale_0": [0.3], "noise_sd": [0.0, 0.01, 0.1]}
    res = tune_hyperparams(_se_family, d, d, "mspe", budget=10, grid=grid)
    assert res.params["noise_sd"] == 0.0


def test_tune_budget_one():
    X = np.linspace(0, 1, 8)[:, None]
    d = Dataset(X, X[:, 0])
    res = tune_hyperparams(_se_family, d, d, "mspe", budget=1, grid={"lengthscale_0": [0.1, 0.3, 0.9]})
    assert len(res.trace) == 1
    assert res.params == {"lengthscale_0": 0.3}


def test_tune_reports_total_failure():
    def broken(**p):
        raise ValueError("no")

    d = Dataset([[0.1]], [0.0])
    with pytest.raises(AllCandidatesFailedError):
        tune_hyperparams(broken, d, d, budget=3, grid={"lengthscale_0": [1.0]})
    with pytest.raises(ValueError):
        tune_hyperparams(_se_family, d, d, budget=0, grid={"lengthscale_0": [1.0]})


def test_default_grid_shape():
    X = np.linspace(0, 2, 9)[:, None]
    g = default_grid(Dataset(X, X[:, 0]))
    assert set(g) == {"lengthscale_0", "precision", "noise_sd"}
    assert all(len(v) == 7 for v in g.values())
    assert math.isclose(g["lengthscale_0"][-1] / g["lengthscale_0"][0], 1e4)


def test_dataset_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        Dataset([[0.1], [0.2]], [1.0])
    with pytest.raises(ValueError):
        Dataset([[0.1]], [1.0], noise_sd=-1.0)
    d = Dataset(np.array([[0.1, 0.2], [0.3, 0.4]]), [1.0, 2.0], 0.01, ("u", "u_x"))
    d.to_csv(tmp_path / "d.csv", ["t", "x1"])
    back = Dataset.from_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.inputs, d.inputs)
    np.testing.assert_array_equal(back.y, d.y)
    assert back.noise_sd == 0.01 and back.ops == d.ops
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "t,x1,y"
