"""Command line front end: ``mamp {run,se,sweep,diagnose,plot}``."""
from __future__ import annotations

import argparse
import dataclasses
import itertools
import logging
import os
import sys

import numpy as np

from . import harness

log = logging.getLogger("mamp")

_CONFIG_FLAGS = (
    ("--algo", "algo", str),
    ("--M", "M", int),
    ("--N", "N", int),
    ("--kappa", "kappa", str),
    ("--mu", "mu", float),
    ("--snr-db", "snr_db", str),
    ("--iters", "iters", int),
    ("--trials", "trials", int),
    ("--seed", "seed", int),
    ("--damping-length", "damping_length", str),
    ("--variance-mode", "variance_mode", str),
    ("--mode", "mode", str),
    ("--out", "out", str),
)
_SWEEP_KEYS = ("kappa", "snr_db", "damping_length")


def _add_config_flags(p):
    p.add_argument("--config", help="flat key=value file; flags override its values")
    for flag, dest, typ in _CONFIG_FLAGS:
        p.add_argument(flag, dest=dest, type=typ, default=None)
    p.add_argument("--workers", type=int, default=None, help="trial worker processes")


def _overrides(ns, sweep=False):
    out = {}
    for _, dest, _ in _CONFIG_FLAGS:
        v = getattr(ns, dest, None)
        if v is None:
            continue
        if dest in _SWEEP_KEYS and not sweep:
            v = _single(dest, v)
        out[dest] = v
    if getattr(ns, "workers", None) is not None:
        out["workers"] = ns.workers
    return out


def _single(dest, v):
    if "," in str(v):
        raise harness.ConfigError(dest, "comma-separated values are only accepted by 'sweep'")
    return v


def _load(ns, sweep=False):
    return harness.load_config(ns.config, _overrides(ns, sweep))


def _emit(text, path):
    if path is None:
        sys.stdout.write(text)


def cmd_run(ns):
    cfg = _load(ns)
    res = harness.run_experiment(cfg)
    _emit(harness.write_csv(res, cfg.output_path), cfg.output_path)
    div = sum(tr.status == "diverged" for tr in res.trials)
    log.info("%s: %d trials, %d diverged", cfg.algo, len(res.trials), div)
    return 0


def cmd_se(ns):
    cfg = dataclasses.replace(_load(ns), mode="se")
    res = harness.run_experiment(cfg)
    out = cfg.output_path
    _emit(harness.write_se_csv(res.se, out), out)
    if out is not None:
        stem, _ = os.path.splitext(out)
        harness.write_spectrum_csv(cfg, stem + "_spectrum.csv")
    return 0


def _grid(value, cast):
    return [cast(v) for v in str(value).split(",")]


def cmd_sweep(ns):
    base_over = _overrides(ns, sweep=True)
    grid = {k: base_over.pop(k) for k in _SWEEP_KEYS if k in base_over}
    out_dir = base_over.pop("out", None) or "."
    base = harness.load_config(ns.config, {**base_over, **{k: _grid(v, str)[0] for k, v in grid.items()}})
    values = {
        "kappa": _grid(grid.get("kappa", base.kappa), float),
        "snr_db": _grid(grid.get("snr_db", base.snr_db), float),
        "damping_length": _grid(grid.get("damping_length", base.damping_length), int),
    }
    os.makedirs(out_dir, exist_ok=True)
    summary = [("kappa", "snr_db", "L", "final_mse_sim_median_db", "final_mse_se_db", "diverged_trials", "csv")]
    for kappa, snr, L in itertools.product(values["kappa"], values["snr_db"], values["damping_length"]):
        cfg = dataclasses.replace(base, kappa=kappa, snr_db=snr, damping_length=L)
        harness.validate(cfg)
        res = harness.run_experiment(cfg)
        name = f"{cfg.algo}_kappa{kappa:g}_snr{snr:g}_L{L}.csv"
        path = os.path.join(out_dir, name)
        harness.write_csv(res, path)
        med = res.sim_quantiles()[0][-1] if res.trials else np.nan
        se = 10 * np.log10(res.se.mse[-1]) if res.se is not None else np.nan
        div = sum(tr.status == "diverged" for tr in res.trials)
        summary.append((f"{kappa:g}", f"{snr:g}", str(L), harness._fmt(med), harness._fmt(se), str(div), name))
    with open(os.path.join(out_dir, "sweep_summary.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(",".join(r) for r in summary) + "\n")
    return 0


def cmd_diagnose(ns):
    cfg = _load(ns)
    rep = harness.diagnose_orthogonality(cfg)
    _emit(harness.write_orthogonality_csv(rep, cfg.output_path), cfg.output_path)
    bound = 5.0 / np.sqrt(cfg.n)
    tri = np.tril_indices(rep.t_max)
    worst = np.nanmax(rep.corr_abs[tri]) if rep.seeds_used else float("nan")
    print(
        f"seeds={rep.seeds_used} diverged={rep.diverged} max|corr|={worst:.4g} "
        f"max|corr_self|={np.nanmax(rep.corr_self_abs[tri]):.4g} (5/sqrt(N)={bound:.4g}) "
        f"max|excess kurtosis|={np.nanmax(np.abs(rep.kurtosis)):.4g}",
        file=sys.stderr,
    )
    return 0


def cmd_plot(ns):
    out = ns.out or "mse.svg"
    harness.plot_csv(ns.csv, out, labels=ns.label)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="mamp", description="MAMP / OAMP / AMP experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("run", cmd_run, "Monte-Carlo trials, per-iteration CSV"),
        ("se", cmd_se, "state evolution only (SE CSV and spectrum CSV)"),
        ("sweep", cmd_sweep, "grid over comma-separated --kappa, --snr-db, --damping-length"),
        ("diagnose", cmd_diagnose, "orthogonality and Gaussianity of MAMP errors"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_config_flags(p)
        p.set_defaults(func=fn)
    p = sub.add_parser("plot", help="render summary CSVs to a vector figure (svg/pdf)")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", default=None)
    p.add_argument("--label", action="append", default=None)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(message)s")
    try:
        return ns.func(ns)
    except harness.ConfigError as exc:
        parser.error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
