"""Command-line entry point: ``cgrf <command> [options]``.

Every command reads a JSON config, writes CSV/JSON outputs under ``--out-dir``
(or the single file given by ``--out``) and a run manifest next to them.
Exit codes: 0 success, 2 configuration error, 3 verification failure,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .constrained import DegenerateGeometryError, NotDifferentiableError, verify_conditions
from .gp import AllCandidatesFailedError, NotPositiveDefiniteError, sample
from .kernels import SmoothnessError
from .presets import ConfigError, field_from_json

log = logging.getLogger("cgrf")

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_NUMERIC = 0, 2, 3, 4


class VerificationFailed(RuntimeError):
    pass


# ------------------------------------------------------------------ io

def load_config(path):
    """Parse a JSON config; returns ``(dict, sha256 of the file bytes)``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = json.loads(raw.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 ({exc.reason})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return cfg, hashlib.sha256(raw).hexdigest()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


class Run:
    """Output bookkeeping for one invocation; writes the manifest once."""

    def __init__(self, args, command, config_hash):
        self.args = args
        self.command = command
        self.config_hash = config_hash
        self.stem = f"{command}_{config_hash[:12]}_s{args.seed}"
        self.outputs = []
        self.started = time.time()
        if args.out:
            self.out_dir = Path(args.out).resolve().parent
        else:
            self.out_dir = Path(args.out_dir or ".").resolve()
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, suffix, primary=False):
        if primary and self.args.out:
            p = Path(self.args.out).resolve()
        else:
            p = self.out_dir / f"{self.stem}{suffix}"
        self.outputs.append(p.name)
        return p

    def manifest(self, extra=None):
        p = self.out_dir / f"{self.stem}_manifest.json"
        write_json(p, {
            "command": self.command,
            "config": str(self.args.config) if getattr(self.args, "config", None) else None,
            "config_hash": self.config_hash,
            "seed": self.args.seed,
            "version": __version__,
            "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(self.started)),
            "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "outputs": self.outputs,
            **(extra or {}),
        })
        return p


# ------------------------------------------------------------------ commands

def _points_for(fld, cfg, seed):
    """Evaluation points: explicit ``points``, else an interior grid plus
    ``n_boundary`` samples on every constrained segment."""
    if "points" in cfg:
        P = np.asarray(cfg["points"], dtype=float)
        if P.ndim == 1:
            P = P[:, None]
        if P.shape[1] != fld.dim or not fld.domain.contains(P).all():
            raise ConfigError("points must lie in the domain and match its dimension")
        return P
    n = int(cfg.get("grid", 21 if fld.dim == 1 else 11))
    lo, hi = fld.domain.bounds()
    axes = np.meshgrid(*[np.linspace(a, b, n) for a, b in zip(lo, hi)], indexing="ij")
    G = np.column_stack([a.ravel() for a in axes])
    G = G[fld.domain.contains(G)]
    nb = int(cfg.get("n_boundary", 10))
    parts = [G] + [c.segment.sample(nb, seed) for c in getattr(fld, "constraints", ())]
    return np.vstack(parts)


def cmd_sample(args):
    cfg, h = load_config(args.config)
    fld = field_from_json(cfg.get("field", cfg))
    if getattr(fld, "constraints", ()):
        report = verify_conditions(fld, tol=1e-6, seed=args.seed)
        if not report.passed:
            print(json.dumps(report.to_dict(), indent=2), file=sys.stderr)
            raise VerificationFailed("constraint set failed verification; refusing to sample")
    P = _points_for(fld, cfg, args.seed)
    draws = sample(fld, P, args.n_draws, args.seed)
    run = Run(args, "sample", h)
    names = list(fld.domain.variables)
    write_csv(run.path(".csv", primary=True), names + [f"draw_{j + 1}" for j in range(args.n_draws)],
              np.column_stack([P, draws]).tolist())
    run.manifest({"n_points": len(P), "n_draws": args.n_draws})
    return EXIT_OK


def cmd_verify(args):
    cfg, h = load_config(args.config)
    fld = field_from_json(cfg.get("field", cfg))
    report = verify_conditions(fld, n_boundary_samples=args.n_boundary, tol=args.tol, seed=args.seed)
    out = report.to_dict()
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out or args.out_dir:
        run = Run(args, "verify", h)
        write_json(run.path(".json", primary=True), out)
        run.manifest({"passed": report.passed})
    print(text)
    if not report.passed:
        raise VerificationFailed("constraint verification failed")
    return EXIT_OK


def cmd_solve_heat(args):
    from .apps.heat import HeatProblemConfig, heat_exact_dirichlet, heat_reference, solve_heat

    cfg_d, h = load_config(args.config)
    try:
        cfg = HeatProblemConfig.from_dict(cfg_d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"heat config: {exc}") from None
    res = solve_heat(cfg, seed=args.seed)
    run = Run(args, "solve_heat", h)
    write_csv(run.path("_summary.csv", primary=True), ["t", "x", "mean", "q025", "q975"], res.summary_rows())
    mean, var = res.mean, res.variance
    if cfg.case == "dirichlet":
        ref = heat_exact_dirichlet(res.t, res.x)
    else:
        ref = heat_reference(cfg, res.t, res.x)
    lo, hi = res.quantiles()
    metrics = {
        "case": cfg.case,
        "max_abs_error": float(np.max(np.abs(mean - ref))),
        "boundary_variance": float(max(var[:, 0].max(), var[:, -1].max())),
        "interval_width_t0": float((hi - lo)[0].max()),
        "interval_width_tend": float((hi - lo)[-1].max()),
        "posterior_rank": int(res.posterior_rank),
        "dropped_directions": res.dropped_directions,
    }
    write_json(run.path("_metrics.json"), metrics)
    run.manifest()
    print(json.dumps(metrics, indent=2))
    return EXIT_OK


def cmd_discover(args):
    from .apps.discovery import DiscoveryConfig, compare_priors, discover_pde

    cfg_d, h = load_config(args.config)
    cfg_d = dict(cfg_d)
    replicates = int(cfg_d.pop("replicates", 0))
    try:
        cfg = DiscoveryConfig.from_dict(cfg_d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"discovery config: {exc}") from None
    run = Run(args, "discover", h)
    rows = []
    if replicates:
        out = compare_priors(cfg, replicates, args.seed)
        metrics = {"boundary": cfg.boundary, "noise_sd": cfg.noise_sd, "replicates": replicates}
        for prior, results in out.items():
            metrics[prior] = {
                "median_false_discovery_proportion": float(np.median([r.false_discovery_proportion for r in results])),
                "median_coefficient_mse": float(np.median([r.coefficient_mse for r in results])),
                "lengthscales": results[0].extra.get("lengthscales"),
                "runs": [r.to_dict() for r in results],
            }
            for i, r in enumerate(results):
                rows.extend((prior, i, n, r.coefficients.get(n, 0.0)) for n in cfg.library)
    else:
        r = discover_pde(cfg, args.seed)
        metrics = {"prior": cfg.prior, "boundary": cfg.boundary, "noise_sd": cfg.noise_sd,
                   "lengthscales": r.extra.get("lengthscales"), **r.to_dict()}
        rows = [(cfg.prior, 0, n, r.coefficients.get(n, 0.0)) for n in cfg.library]
    write_csv(run.path("_coefficients.csv"), ["prior", "replicate", "term", "coefficient"], rows)
    write_json(run.path("_metrics.json", primary=True), metrics)
    run.manifest()
    summary = {k: v for k, v in metrics.items() if not isinstance(v, dict)}
    for prior in ("cgrf", "grf"):
        if prior in metrics:
            summary[prior] = {k: v for k, v in metrics[prior].items() if k != "runs"}
    print(json.dumps(summary, indent=2, default=_json_default))
    return EXIT_OK


def cmd_tensile(args):
    from .apps.tensile import TensileConfig, summarize, tensile_experiment

    cfg_d, h = load_config(args.config)
    cfg_d = dict(cfg_d)
    replicates = args.replicates or int(cfg_d.pop("replicates", 20))
    cfg_d.pop("replicates", None)
    try:
        cfg = TensileConfig.from_dict(cfg_d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"tensile config: {exc}") from None
    reps = tensile_experiment(cfg, replicates, args.seed)
    run = Run(args, "tensile", h)
    rows = [(i, p, r.log_mspe[p]) for i, r in enumerate(reps) for p in ("cgrf", "grf")]
    write_csv(run.path("_log_mspe.csv", primary=True), ["replicate", "prior", "log_mspe"], rows)
    summary = {"design": cfg.design, "noise_sd": cfg.noise_sd, "replicates": replicates, **summarize(reps)}
    write_json(run.path("_metrics.json"), {**summary, "runs": [r.to_dict() for r in reps]})
    run.manifest()
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_bridge_check(args):
    from .checks import bridge_check, endpoint_check

    res = {"gaussian_bridge": bridge_check(seed=args.seed), "single_endpoint": endpoint_check(seed=args.seed)}
    print(json.dumps(res, indent=2))
    if args.out or args.out_dir:
        run = Run(args, "bridge_check", hashlib.sha256(b"bridge-check").hexdigest())
        write_json(run.path(".json", primary=True), res)
        run.manifest()
    worst = max(v for d in res.values() for v in d.values())
    if worst > args.tol:
        raise VerificationFailed(f"max deviation {worst:.3g} exceeds {args.tol:g}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="BLAS thread limit")
    common.add_argument("--out", default=argparse.SUPPRESS, help="primary output file")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="cgrf", parents=[common],
                                description="Boundary-constrained Gaussian random fields.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", parents=[common], help="draw constrained sample paths")
    s.add_argument("config")
    s.add_argument("--n-draws", type=int, default=3)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("verify", parents=[common], help="check boundary conditions of a field")
    s.add_argument("config")
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--n-boundary", type=int, default=50)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("solve-heat", parents=[common], help="probabilistic heat-equation solve")
    s.add_argument("config")
    s.set_defaults(func=cmd_solve_heat)

    s = sub.add_parser("discover", parents=[common], help="Burgers equation discovery")
    s.add_argument("config")
    s.set_defaults(func=cmd_discover)

    s = sub.add_parser("tensile", parents=[common], help="tensile displacement estimation")
    s.add_argument("config")
    s.add_argument("--replicates", type=int, default=None)
    s.set_defaults(func=cmd_tensile)

    s = sub.add_parser("bridge-check", parents=[common], help="Gaussian-bridge and single-endpoint identities")
    s.add_argument("--tol", type=float, default=1e-12)
    s.set_defaults(func=cmd_bridge_check)
    return p


def _finish_args(args):
    for name, default in (("seed", 0), ("threads", None), ("out", None), ("out_dir", None), ("verbose", 0)):
        if not hasattr(args, name):
            setattr(args, name, default)
    return args


def main(argv=None):
    parser = build_parser()
    args = _finish_args(parser.parse_args(argv))
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        from threadpoolctl import threadpool_limits
        limit = threadpool_limits(limits=args.threads)
    else:
        limit = nullcontext()
    try:
        with limit:
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (NotPositiveDefiniteError, AllCandidatesFailedError, DegenerateGeometryError,
            NotDifferentiableError, SmoothnessError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
