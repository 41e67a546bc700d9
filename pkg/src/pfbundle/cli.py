"""Command line front end: assess a case, generate instances, run benchmarks.

Exit codes for `assess`: 0 when the run converged and certified a feasible
operating point, 2 when it converged without a feasibility certificate, 1 on
errors or non-convergence.  Reports are JSON documents that embed a run
manifest (argv, resolved configuration, library versions, peak memory) so a
run can be reproduced from its own output via --from-report.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import platform
import resource
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import scipy

from .bundle import SolverConfig, solve
from .instances import plant_feasible, plant_infeasible
from .network import (
    NetworkFormatError,
    RadialParams,
    load_injection,
    load_network,
    replicate_feeder,
    save_network,
    synth_radial,
)
from .operators import DualPoint, build_problem

EXIT_FEASIBLE = 0
EXIT_ERROR = 1
EXIT_NOT_FEASIBLE = 2

_VERSION = "0.1.0"

_CONFIG_FLAGS = (
    "rho",
    "eta",
    "eps",
    "beta",
    "alpha",
    "max_iters",
    "eig_tol",
    "max_krylov",
    "max_restarts",
    "dense_threshold",
    "feas_tol",
    "comp_scale",
    "gap_tol",
    "seed",
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("solver overrides")
    g.add_argument("--rho", type=float, help="prox weight")
    g.add_argument("--eta", type=float, help="descent-test fraction in (0, 1)")
    g.add_argument("--eps", type=float, help="model-gap stopping tolerance")
    g.add_argument("--beta", type=float, help="multiplier box upper bound")
    g.add_argument("--alpha", type=float, help="penalty weight (default: limit rule)")
    g.add_argument("--max-iters", type=int, dest="max_iters")
    g.add_argument("--eig-tol", type=float, dest="eig_tol")
    g.add_argument("--max-krylov", type=int, dest="max_krylov")
    g.add_argument("--max-restarts", type=int, dest="max_restarts")
    g.add_argument("--dense-threshold", type=int, dest="dense_threshold")
    g.add_argument("--feas-tol", type=float, dest="feas_tol")
    g.add_argument("--comp-scale", type=float, dest="comp_scale")
    g.add_argument("--gap-tol", type=float, dest="gap_tol")
    g.add_argument("--seed", type=int)


def resolve_config(args: argparse.Namespace) -> SolverConfig:
    """Defaults, then config file, then --from-report, then explicit flags."""
    values = SolverConfig().to_dict()
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        with open(cfg_path) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise NetworkFormatError(f"{cfg_path}: config must be a JSON object")
        unknown = set(doc) - set(values)
        if unknown:
            raise NetworkFormatError(
                f"{cfg_path}: unknown config keys {sorted(unknown)}"
            )
        values.update(doc)
    report_path = getattr(args, "from_report", None)
    if report_path:
        with open(report_path) as fh:
            doc = json.load(fh)
        values.update(doc.get("config", {}))
    for key in _CONFIG_FLAGS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    config = SolverConfig(**values)
    config.validate()
    return config


def run_manifest(argv, config: SolverConfig, wall_seconds: float) -> dict:
    usage = resource.getrusage(resource.RUSAGE_SELF)
    return {
        "argv": list(argv),
        "version": _VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
        "finished_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "wall_seconds": wall_seconds,
        "peak_rss_kb": usage.ru_maxrss,
        "config": config.to_dict(),
    }


def _parse_injection(args: argparse.Namespace, n_buses: int) -> np.ndarray:
    if getattr(args, "injection", None):
        return load_injection(args.injection, n_buses)
    if getattr(args, "u", None):
        u = np.asarray([float(tok) for tok in args.u.split(",")], dtype=float)
        if u.shape != (3 * n_buses,):
            raise NetworkFormatError(
                f"--u has {u.size} entries, expected {3 * n_buses}"
            )
        return u
    return np.zeros(3 * n_buses)


def _oracle_check(problem, report) -> dict:
    """Dense recomputation of the final value and bottom eigenvalue."""
    from .oracle import dense_penalty_value

    x = DualPoint(flat=np.asarray(report.center, dtype=float), n_buses=problem.n_buses)
    f_dense, _, lam = dense_penalty_value(problem, x)
    f_err = abs(f_dense - report.f_best) / (1.0 + abs(f_dense))
    lam_err = abs(-lam - report.certificate.lambda_min) / (1.0 + abs(lam))
    return {
        "f_dense": f_dense,
        "f_error": f_err,
        "lambda_error": lam_err,
        "passed": bool(f_err <= 1e-8 and lam_err <= 1e-7),
    }


def cmd_assess(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    network, limits = load_network(args.network)
    u = _parse_injection(args, network.n_buses)
    config = resolve_config(args)
    problem = build_problem(
        network, limits, u, alpha=config.alpha, beta=config.beta
    )
    report = solve(problem, config)

    doc = report.to_dict()
    doc["network_file"] = args.network
    doc["injection"] = [float(v) for v in u]
    if args.oracle_check:
        if problem.dim > config.dense_threshold:
            print(
                f"error: --oracle-check needs dimension <= {config.dense_threshold},"
                f" got {problem.dim}",
                file=sys.stderr,
            )
            return EXIT_ERROR
        check = _oracle_check(problem, report)
        doc["oracle_check"] = check
        if not check["passed"]:
            print(
                f"error: dense cross-check failed: value error {check['f_error']:.3e},"
                f" eigenvalue error {check['lambda_error']:.3e}",
                file=sys.stderr,
            )
            return EXIT_ERROR
    doc["manifest"] = run_manifest(args.argv, config, time.perf_counter() - t0)
    if args.from_report:
        doc["manifest"]["reproduced_from"] = args.from_report

    if args.out == "-":
        json.dump(doc, sys.stdout, indent=1)
        sys.stdout.write("\n")
    else:
        if args.out:
            with open(args.out, "w") as fh:
                json.dump(doc, fh, indent=1)
                fh.write("\n")
        cert = report.certificate
        print(f"verdict      {report.verdict}")
        print(f"converged    {report.converged} ({report.iterations} iterations,"
              f" {report.serious_steps} serious)")
        print(f"f_best       {report.f_best:.12g}")
        print(f"model gap    {report.final_delta:.3e}")
        print(f"slack        {cert.slack_total:.3e}")
        print(f"comp         {cert.comp_res:.3e} (tol {cert.comp_tol:.3e})")
        print(f"eigen gap    {cert.eigen_gap:.3e}")
        print(f"duality gap  {cert.duality_gap:.3e}")
        for note in report.warnings:
            print(f"warning: {note}", file=sys.stderr)

    if not report.converged:
        return EXIT_ERROR
    if report.verdict == "feasible":
        return EXIT_FEASIBLE
    return EXIT_NOT_FEASIBLE


def _load_tie_block(path) -> np.ndarray:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "y" not in doc:
        raise NetworkFormatError(f"{path}: expected an object with key 'y'")
    pairs = doc["y"]
    if len(pairs) != 9:
        raise NetworkFormatError(f"{path}: 'y' must hold 9 [re, im] pairs")
    flat = np.asarray(
        [complex(float(p[0]), float(p[1])) for p in pairs], dtype=complex
    )
    tie = flat.reshape(3, 3)
    if np.abs(tie - tie.conj().T).max() > 1e-12 * max(1.0, np.abs(tie).max()):
        raise NetworkFormatError(f"{path}: tie admittance must be Hermitian")
    return tie


def cmd_generate(args: argparse.Namespace) -> int:
    if args.kind == "radial":
        params = RadialParams(
            series_min=args.series_min,
            series_max=args.series_max,
            coupling=args.coupling,
            shunt=args.shunt,
        )
        network, limits = synth_radial(args.buses, seed=args.seed, params=params)
        u = np.zeros(3 * network.n_buses)
        note = ""
        if args.planted == "feasible":
            inst = plant_feasible(network)
            limits, u = inst.limits, inst.u
            note = f" (planted optimum value {inst.f_star:.12g})"
        elif args.planted == "infeasible":
            inst = plant_infeasible(network)
            limits, u = inst.limits, inst.u
            note = " (planted limit conflict at the slack bus)"
        save_network(args.out, network, limits)
        injection_out = args.injection_out
        if injection_out is None and args.planted != "none":
            stem = args.out[:-5] if args.out.endswith(".json") else args.out
            injection_out = stem + ".u.json"
        if injection_out:
            with open(injection_out, "w") as fh:
                json.dump({"u": [float(v) for v in u]}, fh, indent=1)
                fh.write("\n")
            print(f"wrote {args.out} and {injection_out}{note}")
        else:
            print(f"wrote {args.out}{note}")
        return EXIT_FEASIBLE
    if args.kind == "replicate":
        network, limits = load_network(args.base)
        tie = _load_tie_block(args.tie_json) if args.tie_json else None
        out_net, out_lim = replicate_feeder(network, limits, args.copies, tie_block=tie)
        save_network(args.out, out_net, out_lim)
        print(f"wrote {args.out} ({out_net.n_buses} buses)")
        return EXIT_FEASIBLE
    raise NetworkFormatError(f"unknown generate kind {args.kind!r}")


def _bench_task(payload: dict) -> dict:
    """One benchmark cell: replicate the base, plant a case, solve it."""
    network, limits = load_network(payload["base"])
    k = payload["k"]
    if k > 1:
        network, limits = replicate_feeder(network, limits, k)
    inst = plant_feasible(network)
    values = dict(payload["config"])
    values["seed"] = payload["seed"]
    config = SolverConfig(**values)
    problem = build_problem(
        network, inst.limits, inst.u, alpha=config.alpha, beta=config.beta
    )
    report = solve(problem, config)
    prox_times = [r.prox_seconds for r in report.history]
    matvecs = sum(r.eig_matvecs for r in report.history)
    return {
        "k": k,
        "repeat": payload["repeat"],
        "n_buses": network.n_buses,
        "dim": 3 * network.n_buses,
        "seed": payload["seed"],
        "converged": report.converged,
        "verdict": report.verdict,
        "iterations": report.iterations,
        "serious_steps": report.serious_steps,
        "f_best": report.f_best,
        "wall_seconds": report.wall_seconds,
        "prox_seconds_total": float(np.sum(prox_times)) if prox_times else 0.0,
        "prox_seconds_mean": float(np.mean(prox_times)) if prox_times else 0.0,
        "eig_matvecs_total": matvecs,
    }


def run_bench(base_path, sizes, repeats, config: SolverConfig, workers: int = 1):
    """Per-(size, repeat) solve rows on replicated copies of a base feeder."""
    tasks = [
        {
            "base": base_path,
            "k": k,
            "repeat": r,
            "seed": config.seed + 1000 * k + r,
            "config": config.to_dict(),
        }
        for k in sizes
        for r in range(repeats)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_bench_task, tasks))
    else:
        rows = [_bench_task(t) for t in tasks]
    return rows


_BENCH_COLUMNS = (
    "k",
    "repeat",
    "n_buses",
    "dim",
    "seed",
    "converged",
    "verdict",
    "iterations",
    "serious_steps",
    "f_best",
    "wall_seconds",
    "prox_seconds_total",
    "prox_seconds_mean",
    "eig_matvecs_total",
)


def cmd_bench(args: argparse.Namespace) -> int:
    sizes = [int(tok) for tok in args.sizes.split(",") if tok]
    if not sizes or min(sizes) < 1:
        raise NetworkFormatError("--sizes must be a comma list of positive integers")
    config = resolve_config(args)
    base = args.base
    temp_doc = None
    if base is None:
        network, limits = synth_radial(args.buses, seed=config.seed)
        base = args.out + ".base.json"
        save_network(base, network, limits)
        temp_doc = base
    rows = run_bench(base, sizes, args.repeats, config, workers=args.workers)
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_BENCH_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    for k in sizes:
        cell = [r for r in rows if r["k"] == k]
        mean_prox = float(np.mean([r["prox_seconds_mean"] for r in cell]))
        print(
            f"k={k:<3d} buses={cell[0]['n_buses']:<5d}"
            f" prox_mean={mean_prox:.3e}s"
            f" iters={float(np.mean([r['iterations'] for r in cell])):.1f}"
        )
    if len(sizes) >= 2:
        lo, hi = min(sizes), max(sizes)
        lo_mean = float(
            np.mean([r["prox_seconds_mean"] for r in rows if r["k"] == lo])
        )
        hi_mean = float(
            np.mean([r["prox_seconds_mean"] for r in rows if r["k"] == hi])
        )
        if lo_mean > 0.0:
            print(f"prox time factor k={lo} -> k={hi}: {hi_mean / lo_mean:.2f}")
    print(f"wrote {args.out}" + (f" (base: {temp_doc})" if temp_doc else ""))
    return EXIT_FEASIBLE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pfbundle",
        description="Feasibility screening for unbalanced three-phase networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assess", help="solve one case and certify the verdict")
    p.add_argument("network", help="network JSON document")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--injection", help="injection JSON file {\"u\": [...]}")
    src.add_argument("--u", help="comma-separated injection entries")
    p.add_argument("--config", help="JSON file with solver settings")
    p.add_argument("--from-report", dest="from_report",
                   help="reuse the configuration stored in a previous report")
    p.add_argument("--out", help="write the JSON report here ('-' for stdout)")
    p.add_argument("--oracle-check", dest="oracle_check", action="store_true",
                   help="recompute the final value densely and fail on mismatch")
    _add_config_flags(p)
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("generate", help="write synthetic network documents")
    kinds = p.add_subparsers(dest="kind", required=True)
    pr = kinds.add_parser("radial", help="random radial feeder")
    pr.add_argument("out", help="output network JSON path")
    pr.add_argument("--buses", type=int, default=10)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--planted", choices=("feasible", "infeasible", "none"),
                    default="none",
                    help="center the limits on a known operating point")
    pr.add_argument("--injection-out", dest="injection_out",
                    help="write the matching injection JSON here")
    pr.add_argument("--series-min", dest="series_min", type=float, default=2.0)
    pr.add_argument("--series-max", dest="series_max", type=float, default=5.0)
    pr.add_argument("--coupling", type=float, default=0.15)
    pr.add_argument("--shunt", type=float, default=0.4)
    pr.set_defaults(func=cmd_generate)
    pp = kinds.add_parser("replicate", help="tile copies of a feeder on one slack")
    pp.add_argument("base", help="base network JSON path")
    pp.add_argument("out", help="output network JSON path")
    pp.add_argument("--copies", type=int, required=True)
    pp.add_argument("--tie-json", dest="tie_json",
                    help="JSON {\"y\": [[re, im] x 9]} Hermitian tie admittance")
    pp.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="time solves on replicated feeders")
    p.add_argument("--sizes", default="1,2,5,10",
                   help="comma list of replication counts")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--base", help="base network JSON (default: synthesize one)")
    p.add_argument("--buses", type=int, default=10,
                   help="bus count of the synthesized base")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--config", help="JSON file with solver settings")
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    try:
        return args.func(args)
    except (NetworkFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
