"""Command-line experiment runner.

    ofcdm ber      --config configs/desk_16x4.cfg --out results/ --trials 1
    ofcdm outage   --out results/ --sizes 8,16 --sigmas 0.5,1
    ofcdm trace    --config configs/single_user.cfg --out results/
    ofcdm validate

Exit codes: 0 success, 1 validation failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .config import ConfigError, SystemConfig, config_to_text, load_config, validate_config
from .protocol import BASELINE, MODES, PROBING
from .trace import check_trace, dump_records, simulate_trace
from .validation import run_checks

log = logging.getLogger("ofcdm")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def config_digest(cfg: SystemConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode()).hexdigest()


def header(kind: str, cfg: SystemConfig, **extra) -> str:
    parts = [f"# ofcdm {kind}", f"seed={cfg.master_seed}", f"config_sha256={config_digest(cfg)}"]
    parts += [f"{k}={v}" for k, v in extra.items()]
    return " ".join(parts) + "\n"


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "nan" if math.isnan(x) else repr(x)
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def write_csv(path: Path, head: str, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(head)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def parse_grid(spec: str) -> list[float]:
    """``start:stop:step`` (inclusive stop) or a comma list."""
    spec = spec.strip()
    if ":" in spec:
        start, stop, step = (float(s) for s in spec.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(n)]
    return [float(s) for s in spec.split(",") if s.strip()]


def parse_spreading(spec: str) -> list[tuple[int, int]]:
    out = []
    for item in spec.split(","):
        a, b = item.lower().split("x")
        out.append((int(a), int(b)))
    return out


def _load(args) -> SystemConfig:
    cfg = load_config(args.config) if args.config else SystemConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=args.seed)
    return validate_config(cfg)


def run_ber(args, cfg: SystemConfig) -> int:
    grid = parse_grid(args.grid) if args.grid else list(metrics.DEFAULT_EBN0_GRID)
    out = Path(args.out)
    summary = []
    for M_y, N in parse_spreading(args.spreading):
        sub = validate_config(dataclasses.replace(cfg, group_size=M_y, time_spread=N,
                                                  group_count=None, spacing=None))
        curves = {}
        for mode in MODES:
            curve = metrics.ber_monte_carlo(sub, mode, grid, trials=args.trials, workers=args.workers)
            curves[mode] = curve
            rows = [(p.ebn0_db, p.ber, p.trials, p.ci99, p.bits, p.errors, p.ber_semi_analytic)
                    for p in curve.points]
            write_csv(out / f"ber_{mode}_{M_y}x{N}.csv", header("ber", sub, mode=mode, spreading=f"{M_y}x{N}"),
                      ["ebn0_db", "ber", "trials", "ci99", "bits", "errors", "ber_semi_analytic"], rows)
        gain = metrics.horizontal_gain_db(curves[BASELINE], curves[PROBING], args.target)
        line = f"C_SF={M_y}x{N} gain_db@{args.target:g}={_fmt(gain)}"
        summary.append(line)
        print(line)
    with open(out / "ber_summary.txt", "w") as fh:
        fh.write(header("ber-summary", cfg))
        fh.write("\n".join(summary) + "\n")
    return EXIT_OK


def run_outage(args, cfg: SystemConfig) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    sigmas = [float(s) for s in args.sigmas.split(",")]
    constants = tuple(float(c) for c in args.constants.split(",")) if args.constants else None
    if constants is not None and len(constants) != 3:
        raise ConfigError([("constants", "expected a0,a1,a2")])
    params = {}
    for M_y in sizes:
        for sigma in sigmas:
            try:
                params[M_y, sigma] = metrics.OutageParams.for_group(M_y, sigma, constants)
            except ValueError as exc:
                raise ConfigError([("sizes", str(exc))]) from None
    out = Path(args.out)
    worst = 0.0
    for (M_y, sigma), p in params.items():
        grid = np.asarray(parse_grid(args.grid)) if args.grid else np.linspace(0.0, 4 * M_y * sigma, 401)
        approx = metrics.outage_cdf_approx(grid, p)
        oracle = metrics.outage_cdf_oracle(grid, M_y, sigma, samples=args.samples, seed=cfg.master_seed)
        err = np.abs(approx - oracle)
        worst = max(worst, float(err.max()))
        mean = metrics.rayleigh_sum_mean(M_y, sigma)
        rows = zip(grid.tolist(), approx.tolist(), oracle.tolist(), err.tolist(), (grid / mean).tolist())
        write_csv(out / f"outage_M{M_y}_sigma{sigma:g}.csv",
                  header("outage", cfg, M_y=M_y, sigma=f"{sigma:g}", psi=repr(p.psi), gamma_bar=repr(mean)),
                  ["gamma_th", "approx_cdf", "oracle_cdf", "abs_err", "gamma_th_norm"], rows)
        print(f"M_y={M_y} sigma={sigma:g} max_abs_err={float(err.max()):.4f}")
    return EXIT_OK


def run_trace(args, cfg: SystemConfig) -> int:
    records = simulate_trace(cfg, args.mode, frames=args.frames)
    out = Path(args.out)
    path = out / f"trace_{args.mode}.jsonl"
    with open(path, "w") as fh:
        fh.write(header("trace", cfg, mode=args.mode))
        dump_records(records, fh)
    rep = check_trace(records, cfg, args.mode)
    active = sum(1 for r in records if r["sent"] or r["probes"] or r["grants"] or r["decisions"])
    print(f"{path}: {rep.summary()} active_frames={active}")
    return EXIT_OK if rep.ok else EXIT_FAIL


def run_validate(args, cfg: SystemConfig) -> int:
    checks = run_checks(cfg, fault=args.inject_fault, quick=args.quick)
    lines = [f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}" for c in checks]
    for line in lines:
        print(line)
    if args.out:
        with open(Path(args.out) / "validate.txt", "w") as fh:
            fh.write(header("validate", cfg))
            fh.write("\n".join(lines) + "\n")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--seed", type=int, help="override master_seed")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--trials", type=_positive_int, default=1)
    common.add_argument("--grid", help="start:stop:step or comma list")
    common.add_argument("--workers", type=_positive_int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ofcdm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ber", parents=[common], help="BER vs Eb/N0, probing and baseline")
    p.add_argument("--spreading", default="16x4,8x8", help="comma list of M_yxN")
    p.add_argument("--target", type=float, default=1e-2, help="BER for the horizontal gain summary")
    p.set_defaults(func=run_ber)

    p = sub.add_parser("outage", parents=[common], help="closed-form outage CDF vs Monte Carlo")
    p.add_argument("--sizes", default="8,16")
    p.add_argument("--sigmas", default="0.5,1")
    p.add_argument("--samples", type=int, default=10**6)
    p.add_argument("--constants", help="a0,a1,a2 for group sizes without tabulated constants")
    p.set_defaults(func=run_outage)

    p = sub.add_parser("trace", parents=[common], help="frame-by-frame protocol trace")
    p.add_argument("--mode", choices=MODES, default=PROBING)
    p.add_argument("--frames", type=_positive_int)
    p.set_defaults(func=run_trace)

    p = sub.add_parser("validate", parents=[common], help="run the invariant and oracle checks")
    p.add_argument("--inject-fault", choices=["probe-collision"])
    p.add_argument("--quick", action="store_true", help="smaller sample sizes")
    p.set_defaults(func=run_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
