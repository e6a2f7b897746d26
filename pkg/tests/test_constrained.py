import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgrf.constrained import (
    ConstrainedField,
    ConstraintSet,
    DegenerateGeometryError,
    WeightSpec,
    base_functionals,
    closed_form_weights,
    constrained_cov,
    constrained_mean,
    make_constraint,
    product_structure_check,
    recipe_weights,
    reformulate_derivative_constraint,
    sample_base_functionals,
    transform_sample,
    verify_conditions,
)
from cgrf.geometry import Box, Interval, UnitDisk, UnitTriangle
from cgrf.kernels import BoundaryOperator, Matern, Periodic, Product, SquaredExponential
from cgrf.presets import (
    boundary_fixtures,
    disk_circle,
    dog_bone_parallel,
    interval_endpoints,
    single_endpoint,
    square_parallel,
    triangle_two_segment,
)

from .oracles import mc_moment_z, random_pairs

SE = SquaredExponential(1.0, (0.3,))


def test_recipe_single_endpoint():
    dom = Interval(0.0, 1.0)
    cs = ConstraintSet(dom, (make_constraint(dom, 0, 0.0),), SE)
    x = np.linspace(0.05, 1.0, 12)[:, None]
    expect = SE.matrix(x, [[0.0]])[:, 0] / SE.variance
    np.testing.assert_allclose(recipe_weights(cs, x)[:, 0], expect, rtol=1e-13)


def test_recipe_parallel_sides_on_left_side():
    cs = square_parallel("state")
    x = np.column_stack([np.zeros(7), np.linspace(0, 1, 7)])
    np.testing.assert_allclose(recipe_weights(cs, x), np.tile([1.0, 0.0], (7, 1)), atol=1e-12)


def test_recipe_triangle_matches_cramer_formulas():
    cs = triangle_two_segment()
    k = cs.base_kernel
    x = UnitTriangle().sample_interior(20, "low-discrepancy", seed=9)
    a = np.column_stack([np.zeros(20), x[:, 1]])
    b = np.column_stack([1 - x[:, 1], x[:, 1]])
    kxa, kxb = k.pairwise(x, a), k.pairwise(x, b)
    kaa, kbb, kab = k.pairwise(a, a), k.pairwise(b, b), k.pairwise(a, b)
    det = kaa * kbb - kab ** 2
    w1 = (kxa * kbb - kxb * kab) / det
    w2 = (kxb * kaa - kxa * kab) / det
    np.testing.assert_allclose(recipe_weights(cs, x), np.column_stack([w1, w2]), atol=1e-10)


def test_recipe_duplicate_constraint_is_ridged():
    # both constraints on the same segment: M is exactly singular, the ridge
    # retry splits the single-constraint weight between them
    dom = Interval(0.0, 1.0)
    cs = ConstraintSet(dom, (make_constraint(dom, 0, 0.0), make_constraint(dom, 0, 0.0)), SE)
    cf = ConstrainedField(cs)
    x = np.array([[0.2], [0.5]])
    w = cf.weights(x)
    assert cf.ridge_points == 2
    np.testing.assert_allclose(w.sum(axis=1), SE.matrix(x, [[0.0]])[:, 0], rtol=1e-8)


def test_recipe_degenerate_geometry_is_reported():
    cf = ConstrainedField(interval_endpoints("state"))
    with pytest.raises(DegenerateGeometryError, match=r"\[0.5\]"):
        cf._stabilize(np.zeros((1, 2, 2)), np.array([[0.5]]))


def test_closed_form_weight_examples():
    cs = single_endpoint("derivative")
    assert closed_form_weights(cs.constraints[0].weight, [[0.4]])[0] == 0.4
    sq = square_parallel("state", closed_form=True)
    got = [closed_form_weights(c.weight, [[0.25, 0.9]])[0] for c in sq.constraints]
    assert got == [0.75, 0.25]
    disk = disk_circle()
    got = [closed_form_weights(c.weight, [[0.0, 0.0]])[0] for c in disk.constraints]
    np.testing.assert_allclose(got, [0.5, 0.5], rtol=1e-15)
    with pytest.raises(ValueError):
        closed_form_weights(WeightSpec.recipe(), [[0.1]])


def test_constrained_mean_examples():
    cf = ConstrainedField(interval_endpoints("state", targets=(0.0, 0.0)))
    assert np.all(constrained_mean(cf, np.linspace(0, 1, 9)[:, None]) == 0.0)
    disk = ConstrainedField(disk_circle())
    assert math.isclose(constrained_mean(disk, [[1.0, 0.0]])[0], 1.0, rel_tol=1e-12)
    from cgrf.apps.tensile import tensile_constraints
    tcf = ConstrainedField(tensile_constraints())
    assert math.isclose(constrained_mean(tcf, [[1.0, 0.3, 10.0]])[0], 0.005, rel_tol=1e-12)


def test_single_endpoint_covariance():
    cf = ConstrainedField(single_endpoint("state", SE))
    X1, X2 = random_pairs([0], [1], 30, 1)
    z = np.zeros_like(X1)
    expect = SE.pairwise(X1, X2) - SE.pairwise(X1, z) - SE.pairwise(z, X2) + SE.variance
    got = np.array([constrained_cov(cf, X1[i:i + 1], X2[i:i + 1])[0, 0] for i in range(30)])
    assert np.max(np.abs(got - expect)) < 1e-14


@pytest.mark.parametrize("name,cs,closed", boundary_fixtures(), ids=[f[0] for f in boundary_fixtures()])
def test_state_points_have_zero_variance(name, cs, closed):
    cf = ConstrainedField(cs)
    for c, op in zip(cf.constraints, cf.ops):
        if op.is_identity():
            X = c.segment.sample(15, seed=2)
            assert np.max(np.abs(cf.var(X))) < 1e-10 * cs.base_kernel.variance


@pytest.mark.parametrize("name,cs,closed", boundary_fixtures(), ids=[f[0] for f in boundary_fixtures()])
def test_covariance_symmetric_and_nonnegative(name, cs, closed):
    cf = ConstrainedField(cs)
    X = cs.domain.sample_interior(25, "low-discrepancy", seed=3)
    K = cf.cov(X)
    assert np.max(np.abs(K - K.T)) < 1e-12
    assert np.diag(K).min() >= -1e-10 * cs.base_kernel.variance


@pytest.mark.parametrize("kind", ["state", "derivative", "robin"])
def test_operator_covariance_analytic_vs_fd(kind):
    # two routes to L k_A L*: exact expansion and finite differences of k_A
    cf = ConstrainedField(interval_endpoints(kind))
    X = np.linspace(0.0, 1.0, 7)[:, None]
    op = BoundaryOperator(1.0, 1.0)
    exact = cf.cov(X, X, op, op, method="analytic")
    fd = cf.cov(X, X, op, op, method="fd")
    assert np.max(np.abs(exact - fd)) < 1e-6 * np.max(np.abs(exact))


def test_verify_single_endpoint_passes_tight():
    rep = verify_conditions(ConstrainedField(single_endpoint("state")), 50, tol=1e-8)
    assert rep.passed
    assert max(max(c.max_mean_violation, c.max_variance) for c in rep.checks) <= 1e-10


def test_verify_flags_wrong_weights():
    dom = Box((0.0, 0.0), (1.0, 1.0))
    cons = tuple(make_constraint(dom, s, 0.0, weight="0.5") for s in (0, 1))
    rep = verify_conditions(ConstrainedField(ConstraintSet(dom, cons, SquaredExponential(1.0, (0.4, 0.5)))), 20)
    assert not rep.passed
    assert all(c.max_variance > 1e-3 for c in rep.checks)


def test_verify_robin_both_sides():
    rep = verify_conditions(ConstrainedField(interval_endpoints("robin")), 50, tol=1e-6)
    assert rep.passed
    assert rep.to_dict()["constraints"][1]["passed"]


def test_corner_conflict_is_flagged():
    dom = Box((0.0, 0.0), (1.0, 1.0))
    k = SquaredExponential(1.0, (0.4, 0.4))
    ok = ConstraintSet(dom, (make_constraint(dom, 0, 0.0), make_constraint(dom, 2, 0.0)), k)
    assert verify_conditions(ConstrainedField(ok), 11).passed
    bad = ConstraintSet(dom, (make_constraint(dom, 0, 0.0), make_constraint(dom, 2, 1.0)), k)
    assert not verify_conditions(ConstrainedField(bad), 11).passed


def test_transform_single_endpoint_is_difference():
    cf = ConstrainedField(single_endpoint("state", SE))
    X = np.linspace(0, 1, 6)[:, None]
    gen = np.random.default_rng(0)
    u, u0 = gen.standard_normal((6, 3)), gen.standard_normal((1, 3))
    out = transform_sample(cf, X, {"u": u, "Lu": [np.repeat(u0, 6, axis=0)]})
    np.testing.assert_allclose(out, u - u0, rtol=0, atol=1e-15)


def test_transform_with_realized_targets_is_identity():
    cs = triangle_two_segment()
    X = UnitTriangle().sample_interior(8, "low-discrepancy", seed=1)
    base = sample_base_functionals(ConstrainedField(cs), X, 1, seed=4)
    # constant boundary values c_j with targets g_j = c_j: every correction
    # term g_j - L_j u vanishes
    cons = tuple(make_constraint(cs.domain, c.segment.id, float(base["Lu"][j][0, 0]),
                                 direction=c.projection.direction) for j, c in enumerate(cs.constraints))
    cf = ConstrainedField(ConstraintSet(cs.domain, cons, cs.base_kernel))
    Lu = [np.full((8, 1), float(base["Lu"][j][0, 0])) for j in range(2)]
    out = transform_sample(cf, X, {"u": base["u"], "Lu": Lu})
    np.testing.assert_array_equal(out, base["u"])


def test_transform_needs_boundary_values():
    cf = ConstrainedField(single_endpoint("state"))
    with pytest.raises(ValueError):
        transform_sample(cf, [[0.5]], {"u": np.zeros((1, 1))})


def test_base_functionals_layout():
    cf = ConstrainedField(square_parallel("robin"))
    X = np.array([[0.3, 0.2], [0.6, 0.9]])
    items = base_functionals(cf, X)
    assert len(items) == 3
    np.testing.assert_array_equal(items[1][0][:, 0], 0.0)
    np.testing.assert_array_equal(items[2][0][:, 0], 1.0)


def test_transform_moments_small_mc():
    cf = ConstrainedField(interval_endpoints("robin"))
    X = np.array([[0.05], [0.3], [0.6], [0.95]])
    base = sample_base_functionals(cf, X, 8000, seed=3)
    draws = transform_sample(cf, X, base)
    z_mean, z_cov = mc_moment_z(draws, cf.mean(X), cf.cov(X))
    assert z_mean < 5 and z_cov < 5


def test_product_structure():
    k = Product((((0,), Matern(2.5, 1.0, (0.3,))), ((1,), Periodic(1.0, 1.0, (0.7,)))))
    cf = ConstrainedField(square_parallel("state", k))
    assert product_structure_check(cf, 0) < 1e-12
    line = Interval(0.0, 1.0)
    one = Product((((0,), Matern(2.5, 1.0, (0.3,))),))
    cs1 = ConstraintSet(line, (make_constraint(line, 0, 0.0), make_constraint(line, 1, 0.0)), one)
    assert product_structure_check(ConstrainedField(cs1), 0) == 0.0
    with pytest.raises(ValueError):
        product_structure_check(ConstrainedField(square_parallel("state")), 0)


def test_interior_reversion():
    dom = Interval(0.0, 20.0)
    k = SquaredExponential(1.0, (0.5,))
    cf = ConstrainedField(ConstraintSet(dom, (make_constraint(dom, 0, 0.0), make_constraint(dom, 1, 0.0)), k))
    X = np.array([[5.5], [10.0], [14.5]])
    assert np.max(np.abs(cf.var(X) - k.variance)) < 1e-6 / k.precision


def test_smoothness_inheritance():
    cf = ConstrainedField(interval_endpoints("state", SquaredExponential(1.0, (0.3,))))
    from cgrf.gp import sample
    maxima = []
    for n in (41, 161):
        X = np.linspace(0, 1, n)[:, None]
        U = sample(cf, X, 5, seed=12)
        h = 1.0 / (n - 1)
        d2 = (U[2:] - 2 * U[1:-1] + U[:-2]) / h ** 2
        maxima.append(np.max(np.abs(d2)))
    # a kink would make the second difference grow like 1/h
    assert maxima[1] < 1.5 * maxima[0]
    assert maxima[1] < 8 * math.sqrt(3) / 0.3 ** 2


def test_reformulated_derivative_constraint():
    dom = Box((0.0, 0.0), (1.0, 1.0))
    c = reformulate_derivative_constraint(dom, 0, 2.5)
    assert c.operator == BoundaryOperator(0.0, 1.0, 0)
    cf = ConstrainedField(ConstraintSet(dom, (c,), SquaredExponential(1.0, (0.4, 0.4))))
    Y = c.segment.sample(10)
    np.testing.assert_allclose(cf.mean(Y), 2.5, atol=1e-12)
    # the tangential derivative along the side then vanishes
    np.testing.assert_allclose(cf.mean_op(Y, "u_x2"), 0.0, atol=1e-10)


def test_disk_recipe_and_closed_form_agree_on_boundary():
    for closed in (True, False):
        rep = verify_conditions(ConstrainedField(disk_circle(closed_form=closed)), 30, tol=1e-6)
        assert rep.passed, closed


def test_dog_bone_constraint_holds():
    rep = verify_conditions(ConstrainedField(dog_bone_parallel()), 25, tol=1e-8)
    assert rep.passed


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_recipe_weights_interpolate_on_segments(x2, frac):
    cs = square_parallel("state")
    w = recipe_weights(cs, [[0.0, x2], [1.0, x2], [frac, x2]])
    np.testing.assert_allclose(w[0], [1.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(w[1], [0.0, 1.0], atol=1e-10)
    assert np.all(np.isfinite(w[2]))


def test_weight_jet_matches_fd():
    cf = ConstrainedField(triangle_two_segment())
    X = UnitTriangle().sample_interior(10, "low-discrepancy", seed=5) * 0.8 + 0.05
    jet = cf.weight_jet(X, (1, 1))
    h = 1e-6
    for axis, beta in ((0, (1, 0)), (1, (0, 1))):
        e = np.zeros(2)
        e[axis] = h
        fd = (cf.weights(X + e) - cf.weights(X - e)) / (2 * h)
        np.testing.assert_allclose(jet[beta], fd, atol=1e-7)


def test_disk_domain_projection_weights_finite_near_poles():
    cf = ConstrainedField(disk_circle())
    X = np.array([[0.0, 0.999999], [0.0, -0.999999]])
    assert np.all(np.isfinite(cf.weights(X)))
    assert UnitDisk().contains(X).all()
