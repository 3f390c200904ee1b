"""Command-line entry point: ``dprsa run | sweep | verify-dp``.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration,
3 dataset error, 4 differential-privacy verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dp
from .config import load_config
from .errors import ConfigError, ConvergenceError, DatasetError, DprsaError, InvalidInputError
from .fedsim import RunMetrics, SimConfig, run_training

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_DATA, EXIT_DP = 0, 1, 2, 3, 4

RUN_HEADER = ["round", "loss", "accuracy", "epsilon_round", "algo", "attack", "seed"]
SWEEP_PARAMS = {"epsilon": "epsilon", "num_byzantine": "num_byzantine", "lambda": "lam"}
VERIFY_HEADER = ["mechanism", "epsilon", "dim", "trial", "parameter", "observed_worst_pl", "pass"]
# Relative slack when checking that the flip mechanism's loss equals its budget.
FLIP_REL_TOL = 1e-12


def fmt(x) -> str:
    """Fixed 17-significant-digit float format; ``None`` becomes an empty cell."""
    if x is None:
        return ""
    return format(float(x), ".17g")


def run_rows(metrics: RunMetrics) -> list[list[str]]:
    cfg = metrics.config
    with_moreau = cfg.moreau_every > 0
    rows = []
    for log in metrics.logs:
        row = [
            str(log.round),
            fmt(log.train_loss),
            fmt(log.test_accuracy),
            fmt(log.epsilon_round),
            cfg.algorithm,
            cfg.attack.kind,
            str(cfg.seed),
        ]
        if with_moreau:
            row.append(fmt(log.moreau_grad_sq))
        rows.append(row)
    return rows


def run_header(cfg: SimConfig) -> list[str]:
    return RUN_HEADER + (["moreau_grad_sq"] if cfg.moreau_every > 0 else [])


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def emit(text: str, output) -> None:
    if output is None:
        sys.stdout.write(text)
        return
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_text(text)


def cmd_run(args) -> int:
    rc = load_config(args.config)
    train, test = rc.data.load()
    metrics = run_training(rc.sim, train, test, threads=args.threads)
    emit(to_csv(run_header(rc.sim), run_rows(metrics)), rc.output)
    return EXIT_OK


def _parse_list(text: str, cast, what: str) -> list:
    items = [t for t in text.replace(",", " ").split() if t]
    if not items:
        raise ConfigError(f"{what} list is empty")
    try:
        return [cast(t) for t in items]
    except ValueError as exc:
        raise ConfigError(f"bad {what} list {text!r}: {exc}") from exc


def sweep_configs(base: SimConfig, param: str, values, seeds) -> list[SimConfig]:
    """Cross product of values and seeds, each validated before anything runs."""
    field = SWEEP_PARAMS[param]
    out = []
    for v in values:
        for s in seeds:
            try:
                out.append(replace(base, **{field: v, "seed": s}))
            except DprsaError as exc:
                raise ConfigError(f"{param}={v}: {exc}") from exc
    return out


def _sweep_job(job):
    rc, cfg = job
    train, test = rc.data.load()
    return cfg, run_rows(run_training(cfg, train, test))


def cmd_sweep(args) -> int:
    rc = load_config(args.config)
    cast = int if args.param == "num_byzantine" else float
    values = _parse_list(args.values, cast, "values")
    seeds = _parse_list(args.seeds, int, "seeds")
    configs = sweep_configs(rc.sim, args.param, values, seeds)
    jobs = [(rc, cfg) for cfg in configs]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]

    field = SWEEP_PARAMS[args.param]
    keyed = []
    for cfg, rows in results:
        value = getattr(cfg, field)
        for row in rows:
            keyed.append(((value, cfg.seed, int(row[0])), [args.param, fmt(value)] + row))
    keyed.sort(key=lambda kr: kr[0])
    header = ["param", "value"] + run_header(rc.sim)
    emit(to_csv(header, [r for _, r in keyed]), rc.output)
    return EXIT_OK


def verify_flip(epsilon: float) -> list[list[str]]:
    mech = dp.calibrate_gamma(dp.PrivacyBudget(epsilon))
    pl = dp.exact_flip_pl(mech)
    ok = abs(pl - epsilon) <= FLIP_REL_TOL * max(1.0, epsilon)
    return [["flip", fmt(epsilon), "", "", fmt(mech.gamma), fmt(pl), str(ok).lower()]]


def verify_gauss(
    epsilon: float,
    dims,
    trials: int,
    alpha: float,
    clip_norm: float,
    sigma_scale: float = 1.0,
    seed: int = 0,
    resolution: int = 64,
) -> list[list[str]]:
    """Worst-case loss at random ``u`` whose entries respect the calibration bound.

    The entry bound is ``6 * delta_u / epsilon``, where both terms of the
    calibration coincide. ``sigma_scale < 1`` deliberately under-noises.
    """
    budget = dp.PrivacyBudget(epsilon)
    sens = dp.Sensitivity.from_clipping(alpha, clip_norm)
    bound = 6.0 * sens.delta_u / epsilon
    sigma = sigma_scale * dp.calibrate_sigma(budget, sens, bound).sigma
    rng = np.random.default_rng(seed)
    rows = []
    for d in dims:
        for trial in range(trials):
            u = rng.uniform(-bound, bound, size=d)
            pl = dp.worst_case_gauss_pl(u, sens, sigma, resolution)
            rows.append(
                ["gauss", fmt(epsilon), str(d), str(trial), fmt(sigma), fmt(pl), str(pl < epsilon).lower()]
            )
    return rows


def cmd_verify_dp(args) -> int:
    if args.mechanism == "flip":
        rows = verify_flip(args.epsilon)
    else:
        dims = _parse_list(args.dims, int, "dims")
        scale = 0.5 if args.halve_sigma else 1.0
        rows = verify_gauss(
            args.epsilon, dims, args.trials, args.alpha, args.clip_norm, scale, args.seed, args.resolution
        )
    sys.stdout.write(to_csv(VERIFY_HEADER, rows))
    failures = sum(r[-1] != "true" for r in rows)
    if failures:
        print(f"verify-dp: {failures} of {len(rows)} checks reached the budget", file=sys.stderr)
        return EXIT_DP
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dprsa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one training configuration")
    p.add_argument("config")
    p.add_argument("--threads", type=int, default=1, help="worker threads per round")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a configuration over parameter values and seeds")
    p.add_argument("config")
    p.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", required=True, help="comma-separated integer seeds")
    p.add_argument("--jobs", type=int, default=1, help="parallel processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-dp", help="check mechanism calibration against exact privacy loss")
    p.add_argument("--mechanism", required=True, choices=["flip", "gauss"])
    p.add_argument("--epsilon", required=True, type=float)
    p.add_argument("--dims", default="1,2,3")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--clip-norm", type=float, default=1.0)
    p.add_argument("--resolution", type=int, default=64, help="sphere grid resolution")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--halve-sigma", action="store_true", help="under-noise on purpose")
    p.set_defaults(func=cmd_verify_dp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except InvalidInputError as exc:
        # Bad command-line arguments, such as an epsilon outside a mechanism's range.
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DprsaError, ArithmeticError, RuntimeError, MemoryError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
