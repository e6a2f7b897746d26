"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL`` line; the lines are collected and
repeated in the terminal summary by ``conftest.py``.
"""

import itertools
import json
import time
from pathlib import Path

import numpy as np

from cgrf.apps.discovery import DiscoveryConfig, compare_priors, discover_pde
from cgrf.apps.heat import HeatProblemConfig, heat_exact_dirichlet, heat_reference, solve_heat
from cgrf.apps.tensile import TensileConfig, summarize, tensile_experiment
from cgrf.cli import main
from cgrf.constrained import (
    ConstrainedField,
    product_structure_check,
    sample_base_functionals,
    transform_sample,
    verify_conditions,
)
from cgrf.kernels import Matern, Periodic, Product
from cgrf.presets import boundary_fixtures, interval_endpoints, single_endpoint, square_parallel, triangle_two_segment

from .oracles import kernel_fd, mc_moment_z, random_pairs, relative_error
from .test_kernels import FAMILIES

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RESULTS = []


def report(n, title, ok, detail):
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def se(x, xp, lam, precision=1.0):
    # written out independently of the kernel classes
    return np.exp(-0.5 * ((x - xp) / lam) ** 2) / precision


def pairwise_cov(cf, X1, X2):
    return np.diag(cf.cov(X1, X2))


# 1 -----------------------------------------------------------------------

def test_c01_boundary_enforcement():
    t0 = time.perf_counter()
    worst, failed = {}, []
    for name, cs, closed in boundary_fixtures():
        tol = 1e-8 if closed else 1e-6
        rep = verify_conditions(ConstrainedField(cs), n_boundary_samples=50, tol=tol, mean_tol=1e-8, seed=0)
        worst[name] = (max(c.max_mean_violation for c in rep.checks), max(c.max_variance for c in rep.checks))
        if not rep.passed:
            failed.append(name)
    dt = time.perf_counter() - t0
    m = max(v[0] for v in worst.values())
    v = max(v[1] for v in worst.values())
    ok = not failed and len(worst) == 9 and dt < 30
    report(1, "boundary enforcement", ok,
           f"9 fixtures, worst mean {m:.1e}, worst variance {v:.1e}, failed {failed or 'none'}, {dt:.1f}s")
    assert ok


# 2 -----------------------------------------------------------------------

def test_c02_gaussian_bridge():
    t0 = time.perf_counter()
    lam = 0.3
    cf = ConstrainedField(interval_endpoints("state"))
    X1, X2 = random_pairs([0], [1], 50, 20)
    x, xp = X1[:, 0], X2[:, 0]

    def pinned0(a, b):
        return se(a, b, lam) - se(a, 0.0, lam) * se(0.0, b, lam) / se(0.0, 0.0, lam)

    bridge = pinned0(x, xp) - pinned0(1.0, x) * pinned0(1.0, xp) / pinned0(1.0, 1.0)
    err = float(np.max(np.abs(pairwise_cov(cf, X1, X2) - bridge)))
    dt = time.perf_counter() - t0
    ok = err < 1e-12 and dt < 1
    report(2, "Gaussian bridge", ok, f"max |k_A - bridge| {err:.1e} at 50 pairs, {dt:.2f}s")
    assert ok


# 3 -----------------------------------------------------------------------

def test_c03_single_endpoint_identity():
    t0 = time.perf_counter()
    lam = 0.3
    cf = ConstrainedField(single_endpoint("state"))
    X1, X2 = random_pairs([0], [1], 50, 30)
    x, xp = X1[:, 0], X2[:, 0]
    expect = se(x, xp, lam) - se(x, 0.0, lam) - se(0.0, xp, lam) + se(0.0, 0.0, lam)
    err = float(np.max(np.abs(pairwise_cov(cf, X1, X2) - expect)))
    dt = time.perf_counter() - t0
    ok = err < 1e-14 and dt < 1
    report(3, "single-endpoint identity", ok, f"max deviation {err:.1e}, {dt:.2f}s")
    assert ok


# 4 -----------------------------------------------------------------------

def test_c04_product_structure():
    t0 = time.perf_counter()
    kx, ky = Matern(2.5, 1.0, (0.3,)), Periodic(1.0, 1.0, (0.7,))
    cf = ConstrainedField(square_parallel("state", Product((((0,), kx), ((1,), ky)))))
    X1, X2 = random_pairs([0, 0], [1, 1], 100, 40)
    # oracle: periodic factor times the Matern factor conditioned on both ends
    E = np.array([[0.0], [1.0]])
    K = kx.matrix(E)
    a, b = X1[:, :1], X2[:, :1]
    bridge = kx.pairwise(a, b) - np.einsum("ni,ij,nj->n", kx.matrix(a, E), np.linalg.inv(K), kx.matrix(b, E))
    oracle = ky.pairwise(X1[:, 1:], X2[:, 1:]) * bridge
    direct = float(np.max(np.abs(pairwise_cov(cf, X1, X2) - oracle)))
    library = product_structure_check(cf, 0, n_pairs=100, seed=4)
    dt = time.perf_counter() - t0
    ok = direct < 1e-12 and library < 1e-12 and dt < 1
    report(4, "product structure", ok, f"residual {direct:.1e} (oracle), {library:.1e} (1-d rebuild), {dt:.2f}s")
    assert ok


# 5 -----------------------------------------------------------------------

def test_c05_representation_moments():
    t0 = time.perf_counter()
    cases = {
        "interval-robin": (interval_endpoints("robin"), np.array([[0.0], [0.2], [0.5], [0.8], [1.0]])),
        "triangle-state": (triangle_two_segment(),
                           np.array([[0.1, 0.1], [0.3, 0.2], [0.2, 0.6], [0.5, 0.3], [0.6, 0.1]])),
    }
    zs, ok = {}, True
    for i, (name, (cs, X)) in enumerate(cases.items()):
        cf = ConstrainedField(cs)
        draws = transform_sample(cf, X, sample_base_functionals(cf, X, 50_000, seed=50 + i))
        zs[name] = mc_moment_z(draws, cf.mean(X), cf.cov(X))
        ok &= max(zs[name]) < 5
    dt = time.perf_counter() - t0
    ok = ok and dt < 120
    detail = ", ".join(f"{k} z(mean) {v[0]:.2f} z(cov) {v[1]:.2f}" for k, v in zs.items())
    report(5, "representation moments", ok, f"{detail}, {dt:.1f}s")
    assert ok


# 6 -----------------------------------------------------------------------

def test_c06_kernel_derivatives():
    t0 = time.perf_counter()
    worst = {}
    for name, k in FAMILIES.items():
        X1, X2 = random_pairs([-1] * k.dim, [1] * k.dim, 100, 60)
        lim = [min(o, 2) for o in k.differentiability]
        e = 0.0
        for a1 in itertools.product(*[range(v + 1) for v in lim]):
            for a2 in itertools.product(*[range(v + 1) for v in lim]):
                if sum(a1) + sum(a2):
                    e = max(e, float(relative_error(k.pairwise(X1, X2, a1, a2), kernel_fd(k, X1, X2, a1, a2)).max()))
        worst[name] = e
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-5 and dt < 5
    report(6, "kernel derivatives", ok,
           ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {dt:.1f}s")
    assert ok


# 7 -----------------------------------------------------------------------

def test_c07_heat():
    t0 = time.perf_counter()
    errors, bvar = [], 0.0
    for n_x in (16, 32, 64):
        r = solve_heat(HeatProblemConfig("dirichlet", n_x=n_x), seed=0)
        errors.append(float(np.max(np.abs(r.mean - heat_exact_dirichlet(r.t, r.x)))))
        bvar = max(bvar, float(r.variance[:, [0, -1]].max()))
    monotone = errors[0] > errors[1] > errors[2]
    cfg = HeatProblemConfig("robin_neumann")
    r = solve_heat(cfg, seed=0)
    idx = [len(r.t) // 4, len(r.t) // 2, len(r.t) - 1]
    ref = heat_reference(cfg, r.t[idx], r.x)
    robin = float(np.max(np.abs(r.mean[idx] - ref)))
    dt = time.perf_counter() - t0
    ok = bvar < 1e-10 and monotone and robin < 0.05 and dt < 600
    report(7, "heat solver", ok,
           f"boundary variance {bvar:.1e}, errors {', '.join(f'{e:.2e}' for e in errors)} (n_x 16/32/64), "
           f"Robin/Neumann error {robin:.1e} at t={', '.join(f'{t:.3f}' for t in r.t[idx])}, {dt:.0f}s")
    assert ok


# 8 -----------------------------------------------------------------------

def test_c08_discovery():
    t0 = time.perf_counter()
    cfg = DiscoveryConfig.from_dict(json.loads((CONFIGS / "discover_noiseless.json").read_text()))
    r = discover_pde(cfg, 0)
    c = r.coefficients
    exact = (sorted(r.selected) == ["u*u_x", "u_xx"] and abs(c["u_xx"] - 1) < 0.05 and abs(c["u*u_x"] + 1) < 0.05)

    noisy = dict(json.loads((CONFIGS / "discover.json").read_text()))
    n_rep = noisy.pop("replicates")
    out = compare_priors(DiscoveryConfig.from_dict(noisy), n_rep, seed=0)
    fdp = {p: float(np.median([x.false_discovery_proportion for x in v])) for p, v in out.items()}
    mse = {p: float(np.median([x.coefficient_mse for x in v])) for p, v in out.items()}
    dt = time.perf_counter() - t0
    ok = exact and n_rep == 20 and fdp["cgrf"] <= fdp["grf"] and mse["cgrf"] <= mse["grf"] and dt < 600
    report(8, "discovery", ok,
           f"noiseless selected {r.selected} u_xx {c.get('u_xx', 0):.4f} u*u_x {c.get('u*u_x', 0):.4f}; "
           f"sigma 0.2 median FDP cGRF {fdp['cgrf']:.3f} GRF {fdp['grf']:.3f}, "
           f"median MSE cGRF {mse['cgrf']:.3g} GRF {mse['grf']:.3g}, {dt:.0f}s")
    assert ok


# 9 -----------------------------------------------------------------------

def test_c09_tensile():
    t0 = time.perf_counter()
    parts, ok = [], True
    for name in ("tensile_dense", "tensile_sparse"):
        cfg = TensileConfig.from_dict(json.loads((CONFIGS / f"{name}.json").read_text()))
        reps = tensile_experiment(cfg, 20, seed=0)
        s = summarize(reps)
        bnd = [r.boundary_error for r in reps]
        ok &= s["cgrf"] < s["grf"] and all(b <= 1e-6 for b in bnd)
        parts.append(f"{cfg.design}/{cfg.noise_sd:g} median log MSPE cGRF {s['cgrf']:.2f} GRF {s['grf']:.2f}, "
                     f"boundary {max(bnd):.1e}")
    dt = time.perf_counter() - t0
    ok = ok and dt < 600
    report(9, "tensile", ok, "; ".join(parts) + f", {dt:.0f}s")
    assert ok


# 10 ----------------------------------------------------------------------

COMMANDS = [
    ["sample", str(CONFIGS / "disk_state.json")],
    ["verify", str(CONFIGS / "triangle_state.json")],
    ["solve-heat", str(CONFIGS / "heat_dirichlet.json")],
    ["discover", str(CONFIGS / "discover_noiseless.json")],
    ["tensile", str(CONFIGS / "tensile_sparse.json"), "--replicates", "2"],
    ["bridge-check"],
]


def _bodies(folder):
    out = {}
    for p in sorted(folder.iterdir()):
        if p.name.endswith("_manifest.json"):
            m = json.loads(p.read_text())
            # wall-clock stamps are the only fields allowed to differ
            m.pop("started")
            m.pop("finished")
            out[p.name] = json.dumps(m, sort_keys=True).encode()
        else:
            out[p.name] = p.read_bytes()
    return out


def test_c10_cli_determinism(tmp_path, capsys):
    differing = []
    for argv in COMMANDS:
        runs = []
        for k in range(2):
            d = tmp_path / f"{argv[0]}_{k}"
            assert main([*argv, "--seed", "7", "--out-dir", str(d)]) == 0
            runs.append((_bodies(d), capsys.readouterr().out))
        (a, out_a), (b, out_b) = runs
        if a != b or out_a != out_b or not a:
            differing.append(argv[0])
    ok = not differing
    report(10, "CLI determinism", ok,
           f"{len(COMMANDS)} commands run twice at seed 7, differing: {differing or 'none'}")
    assert ok

