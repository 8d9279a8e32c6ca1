"""Command-line interface: ``trianglescope <command> ...``.

Every command writes plot-ready CSV or JSON, either to ``--out`` or to
standard output.  Exit codes: 0 success, 1 internal error, 2 invalid input
(with a JSON error object on standard error).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import dist_core, families, flags, inequalities, nnlocal, oracle
from .dist_core import SymCoords, ValidationError, sym_coords, to_fraction

FAMILIES = ("squares", "maxcorr", "general", "anticorr", "n_outcome", "two_party_marginal",
            "latin", "constant", "counterexample3", "witness")


def _frac(text: str) -> Fraction:
    try:
        return to_fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValidationError(f"not a number: {text!r}") from exc


def _num_str(value) -> str:
    return str(value) if isinstance(value, Fraction) else repr(float(value))


def _sym_json(s: SymCoords) -> dict:
    return {k: _num_str(v) for k, v in zip(("s111", "s112", "s123"), s.as_tuple())}


def _emit(text: str, out, name: str | None = None):
    """Write to ``out`` (a file, or a directory when ``name`` is given) or stdout."""
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    if name is not None:
        path.mkdir(parents=True, exist_ok=True)
        path = path / name
    path.write_text(text)


def _emit_json(data, out, name=None):
    _emit(json.dumps(data, indent=1, sort_keys=True) + "\n", out, name)


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("TRIANGLESCOPE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ValidationError("TRIANGLESCOPE_THREADS must be an integer") from exc
    return 1


def _backend(p, args):
    return p.to_float() if args.backend == "float" else p


def _load_distribution(spec: str, n_outcomes: int | None = None):
    if spec == "ejm":
        return dist_core.ejm_distribution()
    if spec == "uniform":
        return dist_core.uniform_distribution(n_outcomes or 4)
    if os.path.exists(spec):
        with open(spec) as fh:
            data = json.load(fh)
        if "probs" in data:
            return dist_core.OutcomeDistribution.from_json(data)
        if "alice" in data:
            return flags.evaluate(flags.FlagModel.from_json(data))
        if "tables" in data:
            return oracle.evaluate_discrete(oracle.DiscreteLocalModel.from_json(data))
        raise ValidationError(f"{spec}: not a distribution, flag or discrete model file")
    parts = spec.split(",")
    if len(parts) == 3:
        return dist_core.from_sym_coords(SymCoords.of(*(_frac(v) for v in parts)), n_outcomes or 4)
    raise ValidationError(f"cannot read distribution {spec!r}: expected ejm, uniform, a file or s111,s112,s123")


def _load_flag_file(path: str) -> flags.FlagModel:
    if not os.path.exists(path):
        raise ValidationError(f"no such file: {path}")
    try:
        return flags.load_flags(path)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed flag JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# flags


def _make_family(args) -> flags.FlagModel:
    name = args.family
    if name == "squares":
        return flags.squares_flags()
    if name == "maxcorr":
        return flags.maxcorr_flags(_frac(args.nu))
    if name == "general":
        return flags.general_flags(_frac(args.r), _frac(args.eta), _frac(args.nu))
    if name == "anticorr":
        return flags.anticorr_flags(_frac(args.r))
    if name == "n_outcome":
        return flags.n_outcome_flags(args.n, _frac(args.nu))
    if name == "two_party_marginal":
        return flags.two_party_marginal_flags()
    if name == "latin":
        weights = [_frac(v) for v in args.p_alpha.split(",")]
        return flags.latin_square_flags(weights)
    if name == "constant":
        return flags.constant_flags(args.n, args.outcome)
    if name == "counterexample3":
        return flags.three_outcome_counterexample_flags()
    if name == "witness":
        return flags.near_symmetric_witness_flags()
    raise ValidationError(f"unknown family {name!r}")


def cmd_flags(args) -> int:
    if args.action == "make":
        model = _make_family(args)
        _emit(model.dumps() + "\n", args.out)
        return 0
    model = _load_flag_file(args.file)
    p = _backend(flags.evaluate(model), args)
    if args.action == "eval":
        finner = dist_core.finner_check(p)
        _emit_json({
            "distribution": p.to_json(),
            "sym_coords": _sym_json(sym_coords(p)),
            "fully_symmetric": dist_core.is_fully_symmetric(p),
            "finner": {"satisfied": finner.satisfied,
                       "worst_gap": finner.worst_violation},
        }, args.out)
        return 0
    covariance = {party: flags.check_outcome_covariance(f)
                  for party, f in zip(flags.PARTY_AXES, model.parties())}
    _emit_json({
        "outcome_covariance": covariance,
        "fully_symmetric": dist_core.is_fully_symmetric(p),
        "max_symmetry_deviation": _num_str(dist_core.max_symmetry_deviation(p)),
    }, args.out)
    return 0


# ---------------------------------------------------------------------------
# region


def _point_rows(points, family):
    rows = []
    for s in points:
        t = dist_core.ternary_point(s)
        vals = [float(v) for v in s.as_tuple()]
        rows.append(f"{vals[0]!r},{vals[1]!r},{vals[2]!r},{t.x!r},{t.y!r},{family}")
    return rows


def cmd_region(args) -> int:
    grid = args.grid
    region = families.inner_region(grid)
    header = "s111,s112,s123,x,y,source_family"
    rows = [header]
    rows += _point_rows(families.general_family_sweep(max(10, grid // 2)), "general")
    rows += _point_rows(families.spike_region(max(2, grid // 6)), "spike")
    ticks = [Fraction(i, grid) for i in range(grid + 1)]
    for line in families.table_lines():
        rows += _point_rows([line.at(t) for t in ticks], f"table:{line.label}")
    rows += _point_rows([families.prior_local_line(t) for t in ticks], "prior_local")
    rows += _point_rows([families.anticorr_line(t) for t in ticks], "anticorr")
    _emit("\n".join(rows) + "\n", args.out, "region_points.csv" if args.out else None)

    poly = ["x,y"] + [f"{v.x!r},{v.y!r}" for v in region.vertices]
    _emit("\n".join(poly) + "\n", args.out, "region_polygon.csv" if args.out else None)

    markers = [header]
    markers += _point_rows([sym_coords(dist_core.ejm_distribution())], "marker:ejm")
    markers += _point_rows([sym_coords(dist_core.uniform_distribution(4))], "marker:uniform")
    half = Fraction(1, 2)
    finner = [SymCoords(half, half - t, t) for t in (Fraction(i, grid) / 2 for i in range(grid + 1))]
    markers += _point_rows(finner, "marker:finner_s111_bound")
    _emit("\n".join(markers) + "\n", args.out, "region_markers.csv" if args.out else None)
    if args.out:
        checks = {"uniform": sym_coords(dist_core.uniform_distribution(4)),
                  "ejm": sym_coords(dist_core.ejm_distribution()),
                  "maxcorr(1/6)": SymCoords.of("1/4", "3/8", "3/8")}
        _emit_json({"method": region.method, "grid": grid,
                    "vertex_provenance": region.provenance,
                    "contains": {k: families.contains(region, s) for k, s in checks.items()}},
                   args.out, "region_meta.json")
    return 0


# ---------------------------------------------------------------------------
# training and scans


def _train_config(args, objective, n_outcomes) -> nnlocal.TrainConfig:
    return nnlocal.TrainConfig(
        objective=objective, n_outcomes=n_outcomes, n_samples=args.samples,
        epochs=args.epochs, sgd_epochs=args.sgd_epochs, restarts=args.restarts,
        seed=args.seed, hidden=tuple(args.hidden), stop_loss=args.stop_loss,
        optimizer=args.optimizer, adam_lr=args.lr, init_scale=args.init_scale,
        eval_samples=args.eval_samples)


def cmd_train(args) -> int:
    target = _load_distribution(args.target, args.n)
    objective = nnlocal.DistanceObjective(target.to_float())
    cfg = _train_config(args, objective, target.n_outcomes)
    result = nnlocal.train(cfg, threads=_threads(args))
    summary = {
        "loss": result.loss,
        "distance": dist_core.distance(result.distribution, target),
        "best_restart": result.best_restart,
        "restart_losses": result.restart_losses,
        "sym_coords": _sym_json(sym_coords(result.distribution)),
        "config": cfg.describe(),
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        nnlocal.save_model(result.model, out / "model.json", {"config": cfg.describe(), "seed": args.seed})
        (out / "history.csv").write_text(nnlocal.history_csv(result.history))
        _emit_json(summary, out, "result.json")
    else:
        _emit_json(summary, None)
    return 0


def simplex_grid(n_outcomes: int, density: int, max_s111: float | None = None) -> list[SymCoords]:
    """Triangular lattice of symmetric targets; classes absent at this N are skipped."""
    if density < 2:
        raise ValidationError("grid density must be at least 2")
    sizes = dist_core.class_sizes(n_outcomes)
    points = []
    for i in range(density, -1, -1):
        for j in range(density - i, -1, -1):
            k = density - i - j
            s = SymCoords(Fraction(i, density), Fraction(j, density), Fraction(k, density))
            if (s.s112 and not sizes["112"]) or (s.s123 and not sizes["123"]):
                continue
            if max_s111 is not None and s.s111 >= max_s111:
                continue
            points.append(s)
    return points


def _scan_one(job):
    s, n_outcomes, cfg_kwargs = job
    target = dist_core.from_sym_coords(s, n_outcomes).to_float()
    cfg = nnlocal.TrainConfig(objective=nnlocal.DistanceObjective(target), **cfg_kwargs)
    result = nnlocal.train(cfg)
    return dist_core.distance(result.distribution, target), result.best_restart


def cmd_scan(args) -> int:
    if args.restarts < 1:
        raise ValidationError("restarts must be at least 1")
    if args.targets:
        targets = [SymCoords.of(*(_frac(v) for v in line.split(",")))
                   for line in Path(args.targets).read_text().split()
                   if line and not line.startswith("s111")]
    else:
        targets = simplex_grid(args.n, args.density, args.max_s111)
    kwargs = dict(n_outcomes=args.n, n_samples=args.samples, epochs=args.epochs,
                  sgd_epochs=args.sgd_epochs, restarts=args.restarts, seed=args.seed,
                  hidden=tuple(args.hidden), stop_loss=args.stop_loss,
                  optimizer=args.optimizer, adam_lr=args.lr, init_scale=args.init_scale,
                  eval_samples=args.eval_samples)
    jobs = [(s, args.n, kwargs) for s in targets]
    threads = _threads(args)
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_scan_one, jobs))
    else:
        outcomes = [_scan_one(j) for j in jobs]
    rows = ["s111,s112,s123,distance,best_restart,seed,distance_clipped"]
    for s, (dist, restart) in zip(targets, outcomes):
        vals = ",".join(repr(float(v)) for v in s.as_tuple())
        rows.append(f"{vals},{dist!r},{restart},{args.seed},{min(dist, 0.1)!r}")
    _emit("\n".join(rows) + "\n", args.out)
    return 0


# ---------------------------------------------------------------------------
# inequalities


BOUND_STRATEGIES = {
    "all1": lambda: dist_core.deterministic(4, 1, 1, 1),
    "maxcorr": lambda: flags.evaluate(flags.maxcorr_flags(Fraction(1, 6))),
    "squares": lambda: flags.evaluate(flags.squares_flags()),
}


def _affine_text(intercept: Fraction, slope: Fraction) -> str:
    parts = []
    if intercept != 0:
        parts.append(str(intercept))
    if slope != 0:
        sign = "-" if slope < 0 else "+"
        term = f"({abs(slope)})w"
        parts.append(f"{sign} {term}" if parts else (f"-{term}" if slope < 0 else term))
    return " ".join(parts) if parts else "0"


def cmd_ineq(args) -> int:
    if args.action == "eval":
        p = _load_distribution(args.dist)
        report = inequalities.evaluate_conjectured(p)
        _emit_json({
            "s111": float(sym_coords(p).s111),
            "delta_1": float(inequalities.delta_penalty(p, 1)),
            "delta_2": float(inequalities.delta_penalty(p, 2)),
            "lhs_l1": report.lhs_l1, "rhs_l1": inequalities.RHS[1], "violates_l1": report.violates_l1,
            "lhs_l2": report.lhs_l2, "rhs_l2": inequalities.RHS[2], "violates_l2": report.violates_l2,
        }, args.out)
        return 0
    if args.action == "bounds":
        names = list(BOUND_STRATEGIES) if args.strategy == "all" else [args.strategy]
        rows = ["strategy,l,intercept,slope,bound"]
        for name in names:
            if name not in BOUND_STRATEGIES:
                raise ValidationError(f"unknown strategy {name!r}")
            a, b = inequalities.delta_w_bound_coefficients(BOUND_STRATEGIES[name](), args.l)
            rows.append(f"{name},{args.l},{a},{b},{_affine_text(a, b)}")
        _emit("\n".join(rows) + "\n", args.out)
        return 0
    ws = [float(_frac(v)) for v in args.w.split(",")]
    cfg = _train_config(args, None, 4)
    estimates = [inequalities.estimate_delta_w(w, args.l, cfg, threads=_threads(args)) for w in ws]
    _emit(inequalities.estimate_csv_rows(estimates), args.out)
    return 0


# ---------------------------------------------------------------------------
# oracle and ejm


def cmd_oracle(args) -> int:
    if args.action == "latin3":
        report = oracle.verify_latin_uniqueness(max_card=args.max_card)
        _emit_json(report.to_json(), args.out)
        return 0 if report.confirmed else 1
    cards = tuple(int(c) for c in args.cards.split(","))
    witnesses = []
    for path in args.witness or []:
        with open(path) as fh:
            data = json.load(fh)
        witnesses.append(oracle.DiscreteLocalModel.from_json(data) if "tables" in data
                         else flags.FlagModel.from_json(data))
    report = oracle.max_s111_search(args.n, cards, args.tol, args.budget, witnesses, seed=args.seed)
    _emit_json(report.to_json(), args.out)
    return 0


def cmd_ejm(args) -> int:
    p = _backend(dist_core.ejm_distribution(), args)
    # the distribution file format plus sym coords, readable by load_distribution
    _emit_json({**p.to_json(), "sym_coords": _sym_json(sym_coords(p))}, args.out)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_training(p, epochs=3000, samples=2048, restarts=10):
    p.add_argument("--samples", type=int, default=samples, help="Monte Carlo samples per step")
    p.add_argument("--epochs", type=int, default=epochs, help="epochs of the main optimizer")
    p.add_argument("--optimizer", choices=("adam", "adadelta"), default="adam")
    p.add_argument("--lr", type=float, default=3e-3, help="initial adam step, decayed linearly to 10%%")
    p.add_argument("--init-scale", type=float, default=3.0, help="multiplier of the 1/sqrt(fan-in) init")
    p.add_argument("--sgd-epochs", type=int, default=0, help="plain gradient epochs afterwards")
    p.add_argument("--restarts", type=int, default=restarts)
    p.add_argument("--eval-samples", type=int, default=50_000,
                   help="Monte Carlo samples for the reported distribution")
    p.add_argument("--hidden", type=int, nargs="+", default=[30, 30, 30, 30])
    p.add_argument("--stop-loss", type=float, default=None,
                   help="stop once a restart reaches this loss")


GLOBAL_DEFAULTS = {"seed": 0, "threads": None, "out": None, "backend": "rational"}


def build_parser() -> argparse.ArgumentParser:
    # Suppressed defaults let the global options appear before or after the
    # subcommand without the subparser resetting them.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int,
                        help="worker count (default: $TRIANGLESCOPE_THREADS or 1)")
    common.add_argument("--out", help="output file or directory (default: stdout)")
    common.add_argument("--backend", choices=("rational", "float"))

    parser = argparse.ArgumentParser(prog="trianglescope", parents=[common],
                                     description="Local models of the triangle network.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_flags = sub.add_parser("flags", parents=[common], help="build, evaluate and check flag models")
    fsub = p_flags.add_subparsers(dest="action", required=True)
    make = fsub.add_parser("make", parents=[common])
    make.add_argument("family", choices=FAMILIES)
    make.add_argument("--r", default="1")
    make.add_argument("--eta", default="1")
    make.add_argument("--nu", default="1/6")
    make.add_argument("--n", type=int, default=4)
    make.add_argument("--outcome", type=int, default=1)
    make.add_argument("--p-alpha", default="1/3,1/3,1/3")
    for action in ("eval", "check"):
        q = fsub.add_parser(action, parents=[common])
        q.add_argument("file")
    p_flags.set_defaults(func=cmd_flags)

    p_region = sub.add_parser("region", parents=[common], help="inner-approximation region as CSV")
    p_region.add_argument("--grid", type=int, default=60)
    p_region.set_defaults(func=cmd_region)

    p_scan = sub.add_parser("scan", parents=[common], help="train towards a grid of symmetric targets")
    p_scan.add_argument("--n", type=int, default=4)
    p_scan.add_argument("--density", type=int, default=21, help="lattice subdivisions (21 gives 253 points)")
    p_scan.add_argument("--max-s111", type=float, default=None)
    p_scan.add_argument("--targets", default=None, help="file with one s111,s112,s123 per line")
    # a full default scan is hundreds of targets, so it trains shorter per target
    _add_training(p_scan, epochs=600, restarts=2)
    p_scan.set_defaults(func=cmd_scan)

    p_train = sub.add_parser("train", parents=[common], help="train the neural model towards one target")
    p_train.add_argument("--target", default="uniform", help="ejm, uniform, a file or s111,s112,s123")
    p_train.add_argument("--n", type=int, default=4)
    _add_training(p_train)
    p_train.set_defaults(func=cmd_train)

    p_ineq = sub.add_parser("ineq", parents=[common], help="conjectured inequalities")
    isub = p_ineq.add_subparsers(dest="action", required=True)
    ev = isub.add_parser("eval", parents=[common])
    ev.add_argument("--dist", default="ejm")
    est = isub.add_parser("estimate", parents=[common])
    est.add_argument("--w", default="0.678", help="comma separated weights")
    est.add_argument("--l", type=int, choices=(1, 2), default=1)
    _add_training(est)
    bd = isub.add_parser("bounds", parents=[common])
    bd.add_argument("--strategy", default="all", choices=("all", *BOUND_STRATEGIES))
    bd.add_argument("--l", type=int, choices=(1, 2), default=1)
    p_ineq.set_defaults(func=cmd_ineq)

    p_oracle = sub.add_parser("oracle", parents=[common], help="finite-alphabet verification")
    osub = p_oracle.add_subparsers(dest="action", required=True)
    lat = osub.add_parser("latin3", parents=[common])
    lat.add_argument("--max-card", type=int, default=3)
    mx = osub.add_parser("maxs111", parents=[common])
    mx.add_argument("--n", type=int, default=3)
    mx.add_argument("--cards", default="2,2,2")
    mx.add_argument("--tol", type=float, default=0.0)
    mx.add_argument("--budget", type=int, default=10**5)
    mx.add_argument("--witness", action="append", help="flag or discrete model JSON")
    p_oracle.set_defaults(func=cmd_oracle)

    p_ejm = sub.add_parser("ejm", parents=[common], help="the four-outcome reference distribution")
    p_ejm.set_defaults(func=cmd_ejm)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    except Exception as exc:  # noqa: BLE001
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
