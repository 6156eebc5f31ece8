"""Command line front end.

Subcommands: eval, centroid, optimize, verify, sweep. Every command needs an
explicit seed (flag or config file). A JSON config file given with
``--config`` supplies defaults; flags override it.

Exit codes: 0 ok, 2 usage or malformed input, 3 degenerate geometry,
4 optimizer abort, 5 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from typing import Optional

import numpy as np

from .centroid import contraction_certificate, centroid_fixed_point
from .errors import (
    AffinelyDependent,
    DegenerateFacet,
    InvalidPair,
    NonConvergence,
    SimplexCodeError,
    StartOutsideCone,
)
from .gaussian import METHODS, EstimatorConfig, GaussianChannel, derive_seed
from .geometry import (
    Codebook,
    SimplicialCone,
    bisector_residual,
    optimal_vertices,
    perturb_codebook,
    random_codebook,
    random_cone,
    regular_simplex,
    regularity,
    shared_column_disagreement,
    validate_pair,
)
from .optimizer import evaluate_Q, evaluate_Q_relaxed, optimize, q_difference
from .proofchecks import check_instance, random_instance
from .serialization import SchemaError, codebook_to_dict, load_codebook, save_codebook

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DEGENERATE = 3
EXIT_OPTIMIZER = 4
EXIT_VERIFY = 5

GEOMETRY_TOL = 1e-10

DEFAULTS = {
    "samples": 200_000,
    "method": "conditional_mc",
    "workers": 1,
    "sigma": [1.0],
    "format": "json",
    "max_iter": 200,
    "tol": None,
    "dims": [2, 3],
    "trials": 10,
    "competitors": 100,
    "perturb": None,
    "cert_trials": 10,
    "region_samples": 1_000_000,
}


class UsageError(Exception):
    pass


def _float_list(text):
    try:
        vals = [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    return vals


def _int_list(text):
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of defaults; flags override its entries")
    common.add_argument("--seed", type=int, help="master seed (required here or in the config)")
    common.add_argument("--samples", type=int, help="normal draws per estimate (default 200000)")
    common.add_argument("--method", choices=METHODS, help="estimator (default conditional_mc)")
    common.add_argument("--workers", type=int, help="threads for sample generation and cell solves")
    common.add_argument("--sigma", type=_float_list, help="noise level(s), comma separated")
    common.add_argument("--format", choices=("json", "csv"), help="report format on stdout")
    common.add_argument("--output", help="also write the report to this file")

    source = argparse.ArgumentParser(add_help=False)
    g = source.add_mutually_exclusive_group()
    g.add_argument("--input", help="codebook JSON {dim, words, vertices?}")
    g.add_argument("--regular", type=int, nargs="?", const=0, metavar="N", help="regular simplex in R^N")
    g.add_argument("--random", type=int, nargs="?", const=0, metavar="N", help="random valid codebook in R^N (uses --seed)")
    source.add_argument("--dim", type=int, help="dimension for --regular/--random given without N")

    p = argparse.ArgumentParser(
        prog="simplexcode",
        description="Spherical simplex codes under Gaussian noise.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "exit codes: 0 ok, 2 usage, 3 degenerate input, 4 optimizer abort, 5 verification failure\n"
            "trace CSV columns: iter, Q, Q_stderr, regularity, max_step\n"
            "sweep CSV columns: sigma, Q_regular, Q_best_random, gap, gap_stderr"
        ),
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("eval", parents=[common, source], help="probability of correct decoding Q(W)")
    sp.add_argument("--vertices-from-input", action="store_true", help="use the vertices stored in --input")

    sp = sub.add_parser("centroid", parents=[common], help="Gaussian centroid of one cone")
    sp.add_argument("--generators", help="JSON {\"generators\": [[...], ...]}")
    sp.add_argument("--regular-cell", type=int, metavar="N", help="cell 0 of the regular simplex in R^N")
    sp.add_argument("--start", type=_float_list, help="start vector (default: cone centre)")
    sp.add_argument("--max-iter", type=int)
    sp.add_argument("--tol", type=float)

    sp = sub.add_parser("optimize", parents=[common, source], help="alternating optimisation")
    sp.add_argument("--perturb", type=float, help="rotate each start word by up to this many degrees")
    sp.add_argument("--max-iter", type=int)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--trace", help="trace CSV path")
    sp.add_argument("--out", help="final codebook JSON path")

    sp = sub.add_parser("verify", parents=[common], help="run the property suite")
    sp.add_argument("--dims", type=_int_list, help="dimensions, comma separated (default 2,3)")
    sp.add_argument("--trials", type=int, help="random instances per dimension and sigma")
    sp.add_argument("--cert-trials", type=int, help="interior pairs per contraction certificate")
    sp.add_argument("--region-samples", type=int, help="draws for region moments (default 1e6)")
    sp.add_argument("--codebook", help="also check this codebook JSON (pair validity)")
    sp.add_argument("--report", help="verification JSON report path")

    sp = sub.add_parser("sweep", parents=[common], help="regular simplex against random codebooks")
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--competitors", type=int, help="random codebooks per sigma (default 100)")
    return p


def resolve(args) -> dict:
    """Merge built-in defaults, config file and flags (flags win)."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
        for k, v in doc.items():
            cfg[k.replace("-", "_")] = v
    for k, v in vars(args).items():
        if v is not None and k != "config":
            cfg[k] = v
    if isinstance(cfg.get("sigma"), (int, float)):
        cfg["sigma"] = [float(cfg["sigma"])]
    if isinstance(cfg.get("dims"), int):
        cfg["dims"] = [cfg["dims"]]
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.get("seed") is None:
        raise UsageError("a seed is required (--seed or config 'seed')")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise UsageError("seed must be a nonnegative integer")
    if not isinstance(cfg["samples"], int) or cfg["samples"] < 1:
        raise UsageError("samples must be a positive integer")
    if cfg["method"] not in METHODS:
        raise UsageError(f"unknown method {cfg['method']!r}")
    if not cfg["sigma"]:
        raise UsageError("sigma list is empty")
    if any(not (isinstance(s, (int, float)) and s > 0 and math.isfinite(s)) for s in cfg["sigma"]):
        raise UsageError("sigma values must be positive")
    if cfg["workers"] < 1:
        raise UsageError("workers must be >= 1")
    if cfg["max_iter"] < 1:
        raise UsageError("max_iter must be >= 1")
    if cfg.get("tol") is not None and not cfg["tol"] > 0:
        raise UsageError("tol must be positive")
    for key in ("trials", "competitors", "cert_trials", "region_samples"):
        if cfg[key] < 1:
            raise UsageError(f"{key} must be >= 1")


def _estimator(cfg) -> EstimatorConfig:
    return EstimatorConfig(samples=cfg["samples"], seed=cfg["seed"], method=cfg["method"], workers=cfg["workers"])


def _source_codebook(cfg):
    if cfg.get("input"):
        try:
            return load_codebook(cfg["input"])
        except OSError as exc:
            raise UsageError(f"cannot read {cfg['input']}: {exc}") from exc
    for key in ("regular", "random"):
        if cfg.get(key) is None:
            continue
        n = cfg[key] or cfg.get("dim")
        if not n or n < 1:
            raise UsageError(f"--{key} needs a positive dimension (N or --dim)")
        if key == "regular":
            return regular_simplex(n), None
        rng = np.random.default_rng(derive_seed(cfg["seed"], 0xC0DEB00C))
        return random_codebook(rng, n), None
    raise UsageError("give one of --input, --regular N or --random N")


def _emit(report, cfg, out, table=None):
    """Write the report as JSON, or ``table`` (list of dicts) as CSV."""
    if cfg["format"] == "csv" and table is not None:
        buf = io.StringIO()
        wr = csv.DictWriter(buf, fieldnames=list(table[0].keys()), lineterminator="\n")
        wr.writeheader()
        for row in table:
            wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        text = buf.getvalue()
    else:
        text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    out.write(text)
    if cfg.get("output"):
        with open(cfg["output"], "w") as fh:
            fh.write(text)


def cmd_eval(cfg, out=sys.stdout) -> int:
    w, v = _source_codebook(cfg)
    est = _estimator(cfg)
    rows, results = [], []
    for s in cfg["sigma"]:
        chan = GaussianChannel(float(s), w.dim)
        if cfg.get("vertices_from_input"):
            if v is None:
                raise UsageError("--vertices-from-input needs 'vertices' in the input")
            q = evaluate_Q_relaxed(w, v, chan, est)
        else:
            q = evaluate_Q(w, chan, est)
        results.append(
            {
                "sigma": float(s),
                "Q": q.value,
                "Q_stderr": q.std_error,
                "per_cell": q.per_cell.tolist(),
                "per_cell_stderr": q.per_cell_stderr.tolist(),
            }
        )
        for i, (p, se) in enumerate(zip(q.per_cell, q.per_cell_stderr)):
            rows.append({"sigma": float(s), "cell": i, "probability": float(p), "stderr": float(se)})
        rows.append({"sigma": float(s), "cell": "all", "probability": q.value, "stderr": q.std_error})
    report = {
        "command": "eval",
        "dim": w.dim,
        "seed": cfg["seed"],
        "samples": cfg["samples"],
        "method": cfg["method"],
        "results": results,
    }
    _emit(report, cfg, out, rows)
    return EXIT_OK


def cmd_centroid(cfg, out=sys.stdout) -> int:
    if cfg.get("generators"):
        try:
            with open(cfg["generators"]) as fh:
                G = np.array(json.load(fh)["generators"], dtype=np.float64)
        except (OSError, KeyError, ValueError, TypeError) as exc:
            raise UsageError(f"cannot read generators: {exc}") from exc
        cone = SimplicialCone(G)
    elif cfg.get("regular_cell"):
        cone = optimal_vertices(regular_simplex(cfg["regular_cell"])).cell(0)
    else:
        raise UsageError("give --generators FILE or --regular-cell N")
    start = None if cfg.get("start") is None else np.asarray(cfg["start"], dtype=np.float64)
    if start is not None:
        if start.shape != (cone.dim,):
            raise UsageError("start has the wrong length")
        start = start / np.linalg.norm(start)
    results = []
    for s in cfg["sigma"]:
        r = centroid_fixed_point(
            cone, GaussianChannel(float(s), cone.dim), _estimator(cfg), start=start,
            max_iter=cfg["max_iter"], tol=cfg.get("tol"),
        )
        results.append(
            {
                "sigma": float(s),
                "centroid": r.centroid.tolist(),
                "iterations": r.iterations,
                "residual": r.residual,
                "uncertainty": r.uncertainty,
                "contraction": r.contraction,
            }
        )
    _emit({"command": "centroid", "seed": cfg["seed"], "results": results}, cfg, out, results)
    return EXIT_OK


def cmd_optimize(cfg, out=sys.stdout) -> int:
    w, _ = _source_codebook(cfg)
    if cfg.get("perturb"):
        rng = np.random.default_rng(derive_seed(cfg["seed"], 0x9E27))
        w = perturb_codebook(rng, w, cfg["perturb"])
    val = validate_pair(w, optimal_vertices(w))
    if not val.valid:
        raise InvalidPair("start codebook invalid: " + ", ".join(val.failures()), validity=val)
    s = float(cfg["sigma"][0])
    trace = optimize(
        w, GaussianChannel(s, w.dim), _estimator(cfg), max_iter=cfg["max_iter"],
        tol=1e-5 if cfg.get("tol") is None else cfg["tol"],
    )
    if cfg.get("trace"):
        trace.write_csv(cfg["trace"])
    if cfg.get("out"):
        final_w, final_v, _ = trace.iterates[-1]
        save_codebook(cfg["out"], final_w, final_v)
    report = {
        "command": "optimize",
        "sigma": s,
        "seed": cfg["seed"],
        "iterations": len(trace.iterates) - 1,
        "terminated_by": trace.terminated_by,
        "final_regularity": trace.regularity[-1],
        "final_Q": float(trace.objective[-1]),
        "monotone": trace.monotone(),
        "final": codebook_to_dict(trace.final),
    }
    if trace.error:
        report["error"] = trace.error
    _emit(report, cfg, out, list(trace.rows()))
    if trace.terminated_by == "invalid_pair":
        print(f"optimizer aborted: {trace.error}", file=sys.stderr)
        return EXIT_OPTIMIZER
    return EXIT_OK


def _geometry_checks(rng, n, trials):
    worst_shared = worst_reflect = 0.0
    for _ in range(trials):
        w = random_codebook(rng, n)
        v = optimal_vertices(w)
        worst_shared = max(worst_shared, shared_column_disagreement(w))
        worst_reflect = max(worst_reflect, bisector_residual(w, v))
    return {
        "shared_columns": {"passed": worst_shared < GEOMETRY_TOL, "worst": worst_shared},
        "bisector_reflection": {"passed": worst_reflect < GEOMETRY_TOL, "worst": worst_reflect},
    }


def run_verification(cfg, progress=None) -> dict:
    """The property suite behind ``verify``; returns the JSON report."""
    est = _estimator(cfg)
    report = {"command": "verify", "seed": cfg["seed"], "checks": [], "passed": True, "first_failure": None}

    def record(name, passed, **detail):
        report["checks"].append({"name": name, "passed": bool(passed), **detail})
        if not passed and report["first_failure"] is None:
            report["first_failure"] = name
            report["passed"] = False

    if cfg.get("codebook"):
        w, v = load_codebook(cfg["codebook"])
        v = optimal_vertices(w) if v is None else v
        val = validate_pair(w, v)
        record("containment", val.valid, failures=val.failures())

    for n in cfg["dims"]:
        rng = np.random.default_rng(derive_seed(cfg["seed"], 100 + n))
        for name, res in _geometry_checks(rng, n, cfg["trials"]).items():
            record(f"{name}[n={n}]", res["passed"], worst=res["worst"])
        for s in cfg["sigma"]:
            chan = GaussianChannel(float(s), n)
            worst = {"lipschitz": 0.0, "mean_norm": math.inf, "bound": 0.0}
            ok = True
            for k in range(cfg["trials"]):
                cone = random_cone(rng, n)
                c = contraction_certificate(cone, chan, est.with_(seed=derive_seed(cfg["seed"], k)), trials=cfg["cert_trials"])
                ok &= c.passed
                worst["lipschitz"] = max(worst["lipschitz"], c.lipschitz_estimate)
                worst["mean_norm"] = min(worst["mean_norm"], c.mean_norm)
                worst["bound"] = max(worst["bound"], c.jacobian_spectral_bound)
            record(f"contraction[n={n},sigma={s}]", ok, **worst)
            if n < 2:
                continue
            fails = []
            for k in range(cfg["trials"]):
                inst = random_instance(rng, n)
                r = check_instance(
                    *inst, chan, est.with_(seed=derive_seed(cfg["seed"], 7919 + k)),
                    region_samples=cfg["region_samples"],
                )
                if not r.passed:
                    fails.append({"trial": k, "check": r.failing_check(), "instance": r.to_dict()})
            label = f"[n={n},sigma={s}]"
            first = fails[0]["check"].split(":")[0] if fails else "proof_checks"
            record(f"{first}{label}", not fails, failures=len(fails), counterexamples=fails[:3])
            if progress:
                progress(n, s)
    return report


def cmd_verify(cfg, out=sys.stdout) -> int:
    report = run_verification(cfg)
    if cfg.get("report"):
        with open(cfg["report"], "w") as fh:
            json.dump(report, fh, indent=2, default=_json_default)
            fh.write("\n")
    summary = {
        "command": "verify",
        "passed": report["passed"],
        "first_failure": report["first_failure"],
        "checks": [{"name": c["name"], "passed": c["passed"]} for c in report["checks"]],
    }
    _emit(summary, cfg, out, summary["checks"])
    if not report["passed"]:
        print(f"verification failed: {report['first_failure']}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(type(x))


def cmd_sweep(cfg, out=sys.stdout) -> int:
    n = cfg["dim"]
    if n < 1:
        raise UsageError("dim must be >= 1")
    est = _estimator(cfg)
    reg = regular_simplex(n)
    rows = []
    for s in cfg["sigma"]:
        chan = GaussianChannel(float(s), n)
        q_reg = evaluate_Q(reg, chan, est)
        rng = np.random.default_rng(derive_seed(cfg["seed"], 0x5EE9))
        best = None
        for _ in range(cfg["competitors"]):
            q = evaluate_Q(random_codebook(rng, n), chan, est)
            if best is None or q.value > best.value:
                best = q
        gap, gap_se = q_difference(q_reg, best)
        rows.append(
            {"sigma": float(s), "Q_regular": q_reg.value, "Q_best_random": best.value, "gap": gap, "gap_stderr": gap_se}
        )
    _emit({"command": "sweep", "dim": n, "seed": cfg["seed"], "rows": rows}, cfg, out, rows)
    return EXIT_OK


COMMANDS = {
    "eval": cmd_eval,
    "centroid": cmd_centroid,
    "optimize": cmd_optimize,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
}


def main(argv: Optional[list] = None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg, out)
    except (UsageError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AffinelyDependent, DegenerateFacet, StartOutsideCone) as exc:
        print(f"degenerate input: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except InvalidPair as exc:
        code = EXIT_OPTIMIZER if args.command == "optimize" else EXIT_DEGENERATE
        print(f"invalid pair: {exc}", file=sys.stderr)
        return code
    except NonConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_OPTIMIZER
    except (ValueError, SimplexCodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
