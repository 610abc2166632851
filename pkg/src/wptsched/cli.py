"""Command-line interface.

Every subcommand accepts ``--config`` (a JSON object with ``SimConfig``
keys), explicit flags that override it, ``--seed``, ``--threads`` and
``--out``. Results are CSV files with a header row. The output directory is
``--out`` if given, else ``$WPTSCHED_OUTPUT_DIR``, else ``wptsched-out``.

Exit codes: 0 success, 2 bad configuration or usage, 3 numerical failure.
"""

import argparse
import csv
import json
import math
import os
from pathlib import Path
import sys

import numpy as np

from . import harness
from .dp_policy import effective_noise_var, solve_bellman
from .errors import ConfigError, NumericalError
from .estimation import LS
from .fixed_length import energy_of_tau, g_table, optimal_tau, optimal_tau_numeric
from .power_alloc import (allocate_cpa, allocate_lcpa, allocate_lpa, fixed_slot_distribution,
                          stopping_distribution)

OUT_ENV = "WPTSCHED_OUTPUT_DIR"
DEFAULT_OUT = "wptsched-out"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# flag name -> SimConfig key
OVERRIDES = {"T": "T", "m": "m", "q": "q", "noise": "noise_var", "xi": "xi",
             "estimator": "estimator", "P1_ratio": "P1_ratio", "P2": "P2",
             "n_frames": "n_frames", "seed": "seed", "threads": "threads", "M": "grid_M",
             "bins": "n_bins", "samples": "tau_samples"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return x


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(x) for x in r])
    return path


def _common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="output directory")


def _frame_flags(p, q=False):
    p.add_argument("--T", type=int)
    p.add_argument("--m", type=int)
    if q:
        p.add_argument("--q", type=int)
    p.add_argument("--noise", type=float, help="normalized noise variance")
    p.add_argument("--xi", type=float, help="exponential correlation coefficient")
    p.add_argument("--estimator", choices=["LS", "LMMSE"])


def build_parser():
    ap = _Parser(prog="wptsched", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gtable", help="partial-feedback gain table")
    _common(p)
    p.add_argument("--mmax", type=int, default=10)

    p = sub.add_parser("fixed-length", help="optimal fixed preamble length")
    _common(p)
    _frame_flags(p, q=True)
    p.add_argument("--multiple-of-m", action="store_true",
                   help="restrict the preamble to whole slots")
    p.add_argument("--samples", type=int, help="Monte Carlo samples for the numeric search")

    p = sub.add_parser("thresholds", help="solve the stopping policy")
    _common(p)
    _frame_flags(p)
    p.add_argument("--M", type=int, help="value-grid size")

    p = sub.add_parser("allocate", help="power allocation plan")
    _common(p)
    _frame_flags(p)
    p.add_argument("--mode", choices=["LCPA", "LPA", "CPA"], default="LCPA")
    p.add_argument("--P1-ratio", dest="P1_ratio", type=float)
    p.add_argument("--P2", type=float)
    p.add_argument("--bins", type=int)
    p.add_argument("--M", type=int)

    for name, help_ in (("simulate", "simulate one scheme"), ("compare", "compare schemes")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        _frame_flags(p, q=True)
        if name == "simulate":
            p.add_argument("--scheme", choices=list(harness.SCHEMES), required=True)
        else:
            p.add_argument("--schemes", help="comma-separated subset")
        p.add_argument("--P1-ratio", dest="P1_ratio", type=float)
        p.add_argument("--P2", type=float)
        p.add_argument("--n-frames", dest="n_frames", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--bins", type=int)
        p.add_argument("--M", type=int)
    return ap


def load_config(args):
    d = {}
    if args.config:
        try:
            with open(args.config) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d.pop("out_dir", None)
    for flag, key in OVERRIDES.items():
        val = getattr(args, flag, None)
        if val is not None:
            d[key] = val
    if getattr(args, "schemes", None):
        d["schemes"] = [s.strip() for s in args.schemes.split(",") if s.strip()]
    try:
        return harness.SimConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def output_dir(args):
    cfg_out = None
    if args.config:
        try:
            with open(args.config) as fh:
                cfg_out = json.load(fh).get("out_dir")
        except (OSError, json.JSONDecodeError, AttributeError):
            cfg_out = None
    out = Path(args.out or os.environ.get(OUT_ENV) or cfg_out or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gtable(args, out):
    tab = g_table(args.mmax)
    header = ["m"] + [f"q={q}" for q in range(1, args.mmax + 1)]
    rows = [[m] + [round(g, 4) for g in vals] + [""] * (args.mmax - m) for m, vals in tab.rows()]
    write_csv(out / "gtable.csv", header, rows)
    return f"wrote {out / 'gtable.csv'}"


def cmd_fixed_length(args, cfg, out):
    model = cfg.model()
    if cfg.estimator == LS and model.is_uncorrelated:
        nv = effective_noise_var(model)
        tau, e = optimal_tau(cfg.T, cfg.m, cfg.q, nv, multiple_of_m=args.multiple_of_m)
        step = cfg.m if args.multiple_of_m else 1
        taus = np.arange(0, cfg.T + 1, step)
        curve = energy_of_tau(taus, cfg.T, cfg.m, cfg.q, nv) * model.pathloss * model.R[0, 0].real
        e *= model.pathloss * model.R[0, 0].real
        write_csv(out / "fixed_length_curve.csv", ["tau", "energy"], zip(taus, curve))
    else:
        sweep = optimal_tau_numeric(model, cfg.estimator, cfg.q, cfg.T,
                                    n_samples=max(cfg.tau_samples, 10_000), seed=cfg.seed)
        tau = sweep.tau_star
        e = float(sweep.realized.max())
        write_csv(out / "fixed_length_curve.csv",
                  ["tau", "energy", "se", "expected_energy", "expected_se"],
                  zip(sweep.taus, sweep.realized, sweep.realized_se,
                      sweep.analytic, sweep.analytic_se))
    write_csv(out / "fixed_length.csv", ["tau_star", "energy"], [[int(tau), float(e)]])
    return f"tau*={int(tau)} E_max={float(e):.6g}"


def cmd_thresholds(args, cfg, out):
    grid, policy = solve_bellman(cfg.frame, cfg.model(), M=cfg.grid_M)
    rows = []
    for k, t in enumerate(policy.thresholds):
        rows.append([k, len(t), t[0] if t else math.inf, ";".join(repr(x) for x in t)])
    write_csv(out / "thresholds.csv", ["k", "n_thresholds", "lambda", "all_thresholds"], rows)
    policy.save(out / "policy.json")
    write_csv(out / "value_function.csv", ["v"] + [f"J_{k}" for k in range(cfg.N)],
              np.column_stack([grid.v, grid.J.T]).tolist())
    return f"wrote thresholds for {cfg.N} slots"


def cmd_allocate(args, cfg, out):
    model = cfg.model()
    art = harness.build_artifacts(cfg, [])
    P2 = art.P2
    if args.mode == "CPA":
        nv = effective_noise_var(model)
        dist = fixed_slot_distribution(art.tau_star // cfg.m, cfg.m, cfg.N, nv, n_bins=cfg.n_bins)
        plan = allocate_cpa(dist, cfg.P1, P2)
    else:
        _, policy = solve_bellman(cfg.frame, model, M=cfg.grid_M)
        dist = stopping_distribution(policy, model, cfg.frame, n_bins=cfg.n_bins)
        plan = (allocate_lcpa if args.mode == "LCPA" else allocate_lpa)(dist, cfg.P1, P2)
    plan.write_csv(out / "allocation.csv", support=dist.mass > 0)
    write_csv(out / "allocation_summary.csv", ["mode", "P1", "P2", "objective", "spend"],
              [[plan.mode, plan.P1, plan.P2, plan.objective, plan.spend]])
    return f"{plan.mode}: objective={plan.objective:.6g} spend={plan.spend:.6g}"


def _write_reports(out, name, reports, cfg):
    rows = [list(r.row().values()) for r in reports.values()]
    header = list(next(iter(reports.values())).row())
    write_csv(out / f"{name}.csv", header, rows)
    for s, r in reports.items():
        if r.kappa_hist is not None:
            write_csv(out / f"{name}_{s}_kappa.csv", ["kappa", "frames"],
                      enumerate(r.kappa_hist.tolist()))
        if r.tau_curve is not None:
            c = r.tau_curve
            write_csv(out / f"{name}_{s}_tau_curve.csv", ["x", "y", "se"],
                      zip(c.taus, c.realized, c.realized_se))


def cmd_simulate(args, cfg, out):
    rep = harness.run_scheme(args.scheme, cfg)
    _write_reports(out, "simulate", {args.scheme: rep}, cfg)
    return f"{args.scheme}: {rep.mean:.6g} +/- {rep.se:.2g}"


def cmd_compare(args, cfg, out):
    reports = harness.compare_schemes(cfg)
    _write_reports(out, "compare", reports, cfg)
    return "\n".join(f"{s}: {r.mean:.6g} +/- {r.se:.2g}" for s, r in reports.items())


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        out = output_dir(args)
        if args.command == "gtable":
            if args.mmax < 1:
                raise ConfigError("--mmax must be >= 1")
            msg = cmd_gtable(args, out)
        else:
            cfg = load_config(args)
            handler = {"fixed-length": cmd_fixed_length, "thresholds": cmd_thresholds,
                       "allocate": cmd_allocate, "simulate": cmd_simulate,
                       "compare": cmd_compare}[args.command]
            msg = handler(args, cfg, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(msg)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
