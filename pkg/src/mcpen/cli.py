"""Command-line entry point.

Every subcommand reads problem/point/direction JSON files, runs the library,
and emits a JSON report embedding a run manifest (command, input hashes,
seed, tool version).  Identical manifests produce identical reports; wall
time is reported next to, not inside, the manifest.

Exit codes: 0 success, 2 validation error (bad files, bad dimensions,
unknown names), 3 when --expect stationary is given and the verdict is
not-stationary.  Scenario regressions exit 1 when a golden check fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, repro, serialize
from .cones import radial_membership, tangent_membership
from .dcalc import DDValue, dd_F, dd_Psi, dd_Theta
from .model import (
    DimensionError,
    EvaluationError,
    InfeasiblePointError,
    Point,
    check_point,
    eval_F,
    eval_g,
    eval_Psi_plus_reg,
    eval_Theta,
    residuals,
)
from .penalty import build_config
from .rnn import (
    RnnSpec,
    build_problem,
    load_sequences,
    rnn_penalty_config,
    rnn_thresholds,
    train_and_certify,
)
from .solver import SolveConfig, minimize_theta
from .stationarity import (
    NOT_STATIONARY,
    check_d_stationary_P0,
    check_d_stationary_P1,
    check_second_order,
)


class CliError(ValueError):
    pass


def _jsonable(obj):
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Point):
        return serialize.point_to_dict(obj)
    if hasattr(obj, "dtheta") and hasattr(obj, "du"):
        return serialize.direction_to_dict(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if obj is None or isinstance(obj, str):
        return obj
    return repr(obj)


def _sha256(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(argv: list[str], inputs: list[str], seed: int | None) -> dict:
    return {
        "schema_version": serialize.SCHEMA_VERSION,
        "command": " ".join(argv),
        "inputs": {p: _sha256(p) for p in inputs if p and Path(p).is_file()},
        "seed": seed,
        "version": __version__,
    }


def _emit(report: dict, out: str | None) -> None:
    text = serialize.dumps(_jsonable(report))
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _parse_beta(args, L: int) -> np.ndarray:
    if getattr(args, "beta_file", None):
        data = serialize.load(args.beta_file)
        if not isinstance(data, list):
            raise CliError(f"{args.beta_file}: expected a JSON array of penalty weights")
        vals = [float(v) for v in data]
    elif getattr(args, "beta", None):
        try:
            vals = [float(v) for v in args.beta.split(",")]
        except ValueError as err:
            raise CliError(f"--beta must be comma-separated numbers: {err}") from err
    else:
        raise CliError("this command needs --beta or --beta-file")
    if len(vals) == 1:
        vals = vals * L
    if len(vals) != L:
        raise CliError(f"beta needs {L} entries (one per layer), got {len(vals)}")
    return np.array(vals)


def _load_problem_point(args):
    problem = serialize.load_problem(args.problem)
    z = serialize.load_point(args.point)
    check_point(problem, z)
    return problem, z


def _cmd_eval(args, argv) -> int:
    problem, z = _load_problem_point(args)
    res = residuals(problem, z)
    report = {
        "kind": "eval-report",
        "g": eval_g(problem, z.u),
        "F": eval_F(problem, z),
        "nested_objective": eval_Psi_plus_reg(problem, z.theta),
        "residuals": {
            "per_layer": [b.tolist() for b in res.per_layer],
            "l1": res.l1,
            "max_abs": res.max_abs,
            "feasible": res.feasible,
        },
    }
    if args.beta or args.beta_file:
        b = _parse_beta(args, problem.L)
        report["theta_value"] = eval_Theta(problem, z, b)
        report["beta"] = b.tolist()
    report["manifest"] = _manifest(argv, [args.problem, args.point], None)
    _emit(report, args.out)
    return 0


def _cmd_dderiv(args, argv) -> int:
    problem, z = _load_problem_point(args)
    d = serialize.load_direction(args.direction)
    if args.target == "nested":
        val: DDValue = dd_Psi(problem, z.theta, d.dtheta, order=args.order)
    elif args.target == "lifted":
        val = dd_F(problem, z, d, order=args.order)
    else:
        b = _parse_beta(args, problem.L)
        val = dd_Theta(problem, z, d, b, order=args.order)
    report = {
        "kind": "dderiv-report",
        "target": args.target,
        "order": args.order,
        "result": val,
        "manifest": _manifest(argv, [args.problem, args.point, args.direction], None),
    }
    _emit(report, args.out)
    return 0


def _cmd_cone(args, argv) -> int:
    problem, z = _load_problem_point(args)
    d = serialize.load_direction(args.direction)
    tangent = tangent_membership(problem, z, d)
    report = {"kind": "cone-report", "tangent": tangent}
    if not args.no_radial:
        report["radial"] = radial_membership(problem, z, d)
    report["manifest"] = _manifest(argv, [args.problem, args.point, args.direction], None)
    _emit(report, args.out)
    return 0


def _cmd_thresholds(args, argv) -> int:
    problem = serialize.load_problem(args.problem)
    beta = None
    if args.beta or args.beta_file:
        beta = _parse_beta(args, problem.L)
    config = build_config(problem, beta=beta, eps=args.eps, budget=args.budget, seed=args.seed)
    report = {
        "kind": "thresholds-report",
        "config": config,
        "manifest": _manifest(argv, [args.problem], args.seed),
    }
    _emit(report, args.out)
    return 0


def _cmd_check(args, argv) -> int:
    problem, z = _load_problem_point(args)
    beta = None
    if args.beta or args.beta_file:
        beta = _parse_beta(args, problem.L)
    if args.target == "p1" and beta is None:
        raise CliError("--target p1 needs --beta or --beta-file")
    if args.order == 1:
        if args.target == "p0":
            rep = check_d_stationary_P0(problem, z, mode=args.mode, seed=args.seed, tol=args.tol)
        else:
            rep = check_d_stationary_P1(
                problem, z, beta, mode=args.mode, seed=args.seed, tol=args.tol
            )
    else:
        target = "lifted" if args.target == "p0" else "penalized"
        rep = check_second_order(problem, z, target, beta=beta, seed=args.seed, tol=args.tol)
    report = {
        "kind": "stationarity-report",
        "report": rep,
        "manifest": _manifest(argv, [args.problem, args.point], args.seed),
    }
    _emit(report, args.out)
    if args.expect == "stationary" and rep.verdict == NOT_STATIONARY:
        return 3
    return 0


def _cmd_solve(args, argv) -> int:
    problem = serialize.load_problem(args.problem)
    b = _parse_beta(args, problem.L)
    z_init = None
    init = args.init
    if init == "file":
        if not args.init_file:
            raise CliError("--init file needs --init-file")
        z_init = serialize.load_point(args.init_file)
        check_point(problem, z_init)
        init = "user"
    cfg = SolveConfig(
        max_iters=args.max_iters,
        step_rule=args.step_rule,
        stop_tol=args.stop_tol,
        seed=args.seed,
        init=init,
        trace_path=args.trace,
    )
    result = minimize_theta(problem, b, cfg, z_init=z_init)
    report = {
        "kind": "solve-report",
        "value": result.value,
        "probe_min": result.probe_min,
        "iterations": result.iterations,
        "converged": result.converged,
        "termination": result.termination,
        "final_point": result.z,
        "manifest": _manifest(
            argv, [args.problem] + ([args.init_file] if args.init_file else []), args.seed
        ),
    }
    _emit(report, args.out)
    return 0


def _rnn_spec_from_args(args) -> RnnSpec:
    if args.data:
        x, y = load_sequences(args.data, args.n0, args.n2)
    else:
        rng = np.random.default_rng(args.seed)
        x = rng.standard_normal((1, args.t, args.n0))
        y = 0.5 * rng.standard_normal((1, args.t, args.n2))
    if x.shape[1] != args.t:
        raise CliError(f"data has {x.shape[1]} steps but --t is {args.t}")
    return RnnSpec(
        n0=args.n0, n1=args.n1, n2=args.n2, t=args.t, x=x, y=y, alpha=args.alpha, lam=args.lam
    )


def _cmd_rnn(args, argv) -> int:
    spec = _rnn_spec_from_args(args)
    inputs = [args.data] if args.data and Path(args.data).is_file() else []
    if args.action == "build":
        problem = build_problem(spec)
        report = serialize.problem_to_dict(problem)
        _emit(report, args.out)
        return 0
    if args.action == "thresholds":
        thr = rnn_thresholds(spec)
        config = rnn_penalty_config(spec)
        report = {
            "kind": "rnn-thresholds-report",
            "thresholds": thr,
            "config": config,
            "manifest": _manifest(argv, inputs, args.seed),
        }
        _emit(report, args.out)
        return 0
    cfg = SolveConfig(max_iters=args.max_iters, stop_tol=args.stop_tol, seed=args.seed, trace_path=args.trace)
    rep = train_and_certify(spec, solve_config=cfg, seed=args.seed)
    report = {
        "kind": "rnn-train-report",
        "value": rep.solve.value,
        "probe_min": rep.solve.probe_min,
        "max_residual": rep.max_residual,
        "converged": rep.solve.converged,
        "certified": rep.config.certified,
        "beta": rep.config.beta.tolist(),
        "thresholds": rep.config.thresholds.tolist(),
        "comparison": rep.comparison,
        "sd_equals_d": rep.sd_equals_d,
        "final_point": rep.z,
        "notes": rep.notes,
        "manifest": _manifest(argv, inputs, args.seed),
    }
    _emit(report, args.out)
    return 0


def _cmd_repro(args, argv) -> int:
    if args.list:
        for name in repro.list_scenarios():
            print(name)
        return 0
    if not args.name:
        raise CliError("repro needs a scenario name or --list")
    report = repro.run(args.name, seed=args.seed)
    for c in report["checks"]:
        mark = "PASS" if c["pass"] else "FAIL"
        print(f"[{mark}] {report['scenario']}: {c['name']} ({c['detail']})")
    if args.out:
        report["manifest"] = _manifest(argv, [], args.seed)
        _emit(report, args.out)
    return 0 if report["ok"] else 1


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mcpen",
        description="Composite optimization with exact penalties and stationarity certificates.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    def add_common(sp, point=True, direction=False, beta=True):
        sp.add_argument("--problem", required=True, help="problem JSON file")
        if point:
            sp.add_argument("--point", required=True, help="point JSON file")
        if direction:
            sp.add_argument("--direction", required=True, help="direction JSON file")
        if beta:
            sp.add_argument("--beta", help="comma-separated penalty weights (or one value for all layers)")
            sp.add_argument("--beta-file", help="JSON array of penalty weights")
        sp.add_argument("--out", help="write the JSON report here instead of stdout")

    sp = sub.add_parser("eval", help="evaluate objectives and residuals at a point")
    add_common(sp)
    sp.set_defaults(fn=_cmd_eval)

    sp = sub.add_parser("dderiv", help="directional derivatives at a point")
    add_common(sp, direction=True)
    sp.add_argument("--order", type=int, choices=(1, 2), default=1)
    sp.add_argument("--target", choices=("nested", "lifted", "penalized"), default="penalized")
    sp.set_defaults(fn=_cmd_dderiv)

    sp = sub.add_parser("cone", help="tangent/radial cone membership of a direction")
    add_common(sp, direction=True, beta=False)
    sp.add_argument("--no-radial", action="store_true", help="skip the radial test")
    sp.set_defaults(fn=_cmd_cone)

    sp = sub.add_parser("thresholds", help="penalty moduli, thresholds, and certification")
    add_common(sp, point=False)
    sp.add_argument("--eps", type=float, default=1e-3)
    sp.add_argument("--budget", type=int, default=10_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=_cmd_thresholds)

    sp = sub.add_parser("check", help="d-stationarity checks")
    add_common(sp)
    sp.add_argument("--target", choices=("p0", "p1"), required=True)
    sp.add_argument("--order", type=int, choices=(1, 2), default=1)
    sp.add_argument("--mode", choices=("auto", "enumerate", "sample"), default="auto")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--expect", choices=("stationary", "not-stationary"))
    sp.set_defaults(fn=_cmd_check)

    sp = sub.add_parser("solve", help="minimize the penalized objective")
    add_common(sp, point=False)
    sp.add_argument("--max-iters", type=int, default=300)
    sp.add_argument("--stop-tol", type=float, default=1e-6)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--init", choices=("zero", "random", "file"), default="zero")
    sp.add_argument("--init-file", help="point JSON for --init file")
    sp.add_argument("--step-rule", choices=("fixed", "diminishing"), default="fixed")
    sp.add_argument("--trace", help="write the iterate trace CSV here")
    sp.set_defaults(fn=_cmd_solve)

    sp = sub.add_parser("rnn", help="recurrent-network workflows")
    sp.add_argument("action", choices=("build", "thresholds", "train"))
    sp.add_argument("--data", help="directory of sequence CSV files (t, x0.., y0..)")
    sp.add_argument("--n0", type=int, default=2)
    sp.add_argument("--n1", type=int, default=3)
    sp.add_argument("--n2", type=int, default=1)
    sp.add_argument("--t", type=int, default=3)
    sp.add_argument("--alpha", type=float, default=0.1)
    sp.add_argument("--lambda", dest="lam", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-iters", type=int, default=400)
    sp.add_argument("--stop-tol", type=float, default=1e-8)
    sp.add_argument("--trace", help="write the training trace CSV here")
    sp.add_argument("--out", help="write the JSON report here instead of stdout")
    sp.set_defaults(fn=_cmd_rnn)

    sp = sub.add_parser("repro", help="run a named regression scenario")
    sp.add_argument("name", nargs="?", help="scenario name")
    sp.add_argument("--list", action="store_true", help="list scenario names")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="write the JSON report here as well")
    sp.set_defaults(fn=_cmd_repro)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    start = time.perf_counter()
    try:
        args = parser.parse_args(argv)
        code = args.fn(args, argv)
        # timing goes to stderr so the report stays byte-deterministic
        print(f"elapsed: {time.perf_counter() - start:.3f}s", file=sys.stderr)
        return code
    except (
        CliError,
        serialize.FormatError,
        DimensionError,
        EvaluationError,
        InfeasiblePointError,
        ValueError,
        OSError,
    ) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
