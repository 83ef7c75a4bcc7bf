"""Command-line front end.

Exit codes: 0 success, 1 other library error, 2 configuration error,
3 invariant violation, 4 iteration guard reached.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .area_records import SessionState
from .dyadic_bm import skeleton_from_lattice
from .errors import ConfigError, EpsStrongError, InvariantViolation
from .formats import (
    certificate_items,
    load_certificate,
    params_from_kv,
    read_kv,
    read_lattice_csv,
    write_kv,
    write_lattice_csv,
    write_path_csv,
)
from .params import Params
from .sde_engine import (
    EpsStrongPath,
    MODELS,
    Session,
    constant_functional,
    estimate_one,
    euler_path,
    get_model,
    refine,
    simulate_eps_strong,
    sup_distance_functional,
    terminal_clip_functional,
)

WORKERS_ENV = "EPSSTRONG_WORKERS"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value file; flags override it")
    p.add_argument("--model", choices=sorted(MODELS))
    p.add_argument("--eps", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--alpha-prime", type=float, dest="alpha_prime")
    p.add_argument("--gamma", type=float)
    p.add_argument("--eps0", type=float)
    p.add_argument("--max-level", type=int, dest="max_level")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="epsstrong", description="Tolerance-enforced SDE path simulation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="simulate one path within --eps")
    _add_run_flags(sim)
    sim.add_argument("--out", type=Path, required=True, help="output directory")

    ref = sub.add_parser("refine", help="refine a simulated path to a smaller tolerance")
    ref.add_argument("path_dir", type=Path)
    ref.add_argument("--eps", type=float, required=True)
    ref.add_argument("--out", type=Path, required=True)

    est = sub.add_parser("estimate", help="unbiased estimator of E f(X)")
    _add_run_flags(est)
    est.add_argument("--functional", choices=["constant", "sup-distance", "terminal-clip"], default="constant")
    est.add_argument("--value", type=float, default=1.0,
                     help="constant value, distance point, or clipping upper bound")
    est.add_argument("--reps", type=int, default=100)
    est.add_argument("--out", type=Path, required=True, help="samples CSV")

    val = sub.add_parser("validate", help="re-validate a certificate or a config file")
    val.add_argument("file", type=Path)
    return parser


def resolve_config(args) -> tuple[dict, Params]:
    """Merge defaults, config file and flags; validate parameter ranges."""
    kv = read_kv(args.config) if getattr(args, "config", None) else {}
    run = {"model": kv.get("model", "trig-bounded"), "eps": float(kv.get("eps", 0.05)),
           "seed": int(kv.get("seed", 1))}
    overrides = params_from_kv(kv)
    for key in ("alpha", "beta", "alpha_prime", "gamma", "eps0", "max_level"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    for key in ("model", "eps", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            run[key] = val
    if run["model"] not in MODELS:
        raise ConfigError(f"unknown model {run['model']!r}")
    if not run["eps"] > 0:
        raise ConfigError(f"eps={run['eps']} must be positive")
    return run, Params(**overrides)


def _write_outputs(out: Path, path: EpsStrongPath, params: Params) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_path_csv(out / "path.csv", path.times(), path.values)
    session = path.session
    write_kv(out / "certificate.txt", certificate_items(
        epsilon=path.epsilon, level=path.level, session_level=session.state.n, seed=path.seed,
        refinements=session.refinements, model=path.model.name, cert=path.certificate,
        consts=path.constants, params=params,
    ))
    write_lattice_csv(out / "lattice.csv", session.state.lattice)


def cmd_simulate(args) -> int:
    run, params = resolve_config(args)
    path = simulate_eps_strong(get_model(run["model"]), run["eps"], params, run["seed"])
    _write_outputs(args.out, path, params)
    print(f"level {path.level}, G = {path.constants.g:.6g}, wrote {args.out}")
    return 0


def load_path(path_dir: Path) -> tuple[EpsStrongPath, Params]:
    kv = read_kv(path_dir / "certificate.txt")
    cert, consts, params = load_certificate(kv)
    lattice = read_lattice_csv(path_dir / "lattice.csv")
    model = get_model(kv["model"])
    level = int(kv["level"])
    state = SessionState(lattice, int(kv["session_level"]), params)
    session = Session(state, int(kv["seed"]), int(kv["refinements"]))
    skel_values = euler_path(model, skeleton_from_lattice(lattice, level))
    path = EpsStrongPath(level, skel_values, float(kv["epsilon"]), consts, cert, int(kv["seed"]), model, session)
    return path, params


def cmd_refine(args) -> int:
    old, params = load_path(args.path_dir)
    if not args.eps < old.epsilon:
        raise ConfigError(f"--eps {args.eps} must be smaller than the path's epsilon {old.epsilon}")
    old_inc = old.skeleton().increments
    new = refine(old, args.eps)
    inc = new.skeleton().increments
    for _ in range(new.level - old.level):
        inc = inc[:, 0::2] + inc[:, 1::2]
    if not np.array_equal(inc, old_inc):
        raise InvariantViolation("refined skeleton does not coarsen to the original")
    _write_outputs(args.out, new, params)
    print(f"level {old.level} -> {new.level}, wrote {args.out}")
    return 0


def _functional(name: str, value: float, dim: int):
    if name == "constant":
        return constant_functional(value)
    if name == "sup-distance":
        return sup_distance_functional(np.full(dim, value))
    return terminal_clip_functional(0, 0.0, value)


def cmd_estimate(args) -> int:
    run, params = resolve_config(args)
    if args.reps < 1:
        raise ConfigError("--reps must be positive")
    model = get_model(run["model"])
    functional = _functional(args.functional, args.value, model.dim_x)
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(run["seed"]).spawn(args.reps)]
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV}={raw!r} is not an integer") from None
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer")

    def one(s):
        return estimate_one(functional, model, run["eps"], params, s)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        samples = list(pool.map(one, seeds))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rep", "z", "mean", "se"])
        total = total_sq = 0.0
        for r, z in enumerate(samples, 1):
            total += z
            total_sq += z * z
            mean = total / r
            var = max(total_sq / r - mean * mean, 0.0) * r / (r - 1) if r > 1 else 0.0
            w.writerow([r, repr(z), repr(mean), repr(math.sqrt(var / r))])
    print(f"mean {total / len(samples):.6g} over {len(samples)} replications")
    return 0


def cmd_validate(args) -> int:
    kv = read_kv(args.file)
    if "G" in kv:
        load_certificate(kv)
        print(f"{args.file}: certificate valid")
    else:
        Params(**params_from_kv(kv))
        print(f"{args.file}: config valid")
    return 0


COMMANDS = {"simulate": cmd_simulate, "refine": cmd_refine, "estimate": cmd_estimate, "validate": cmd_validate}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except EpsStrongError as exc:
        print(f"epsstrong: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"epsstrong: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
