"""Command-line interface: ``cmgipd {fit,simulate,report,prior-curves}``.

Every run first writes ``manifest.json`` holding the fully resolved
configuration; passing that manifest back through ``--config`` reproduces the
run.  Outputs are written under a staging name and renamed when complete.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import re
import sys

import numpy as np
import yaml

from . import __version__
from .data import DataError, center_covariates, ingest_csv
from .diagnostics import DiagnosticError, dic, gelman_rubin
from .posterior import (DegeneratePosteriorError, density_export, flag_moderators,
                        prior_density_export, summarize, tuning_curves)
from .priors import ROSTER, DegeneratePriorError, PriorMethod
from .sampler import ChainConfig, ModelSpec, SamplerError, run_mcmc
from .simulation import (ScenarioSpec, aggregate, full_grid, grid_from_levels, read_raw_csv,
                         run_study, scenario_from_label)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "chain.n_chains": 2, "chain.n_iter": 20000, "chain.burn_in": 10000, "chain.thin": 10,
    "seed": 0, "workers": 1, "out": "out", "threshold": 0.5, "metric_variant": "literal",
    "centering": "pooled", "compare_random_effects": False,
    "moderator_random_effects": True, "replicates": 50, "N": 600,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# config ----------------------------------------------------------------------

def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and k != "grid":
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config(path: str | None) -> dict:
    """Read a flat (dotted-key) YAML config; a manifest's ``config`` section also works."""
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: config must be a mapping")
    if "config" in raw and isinstance(raw["config"], dict):
        raw = raw["config"]
    return _flatten(raw)


def _methods(value) -> list[PriorMethod]:
    if value is None:
        raise UsageError("no methods given; choose from: " + ", ".join(ROSTER))
    names = value if isinstance(value, list) else _split_methods(str(value))
    out = []
    for nm in names:
        try:
            out.append(PriorMethod.parse(str(nm)))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return out


def _split_methods(s: str) -> list[str]:
    # commas inside "HG(a=3)" style names are not expected, so a plain split works
    return [p.strip() for p in s.split(",") if p.strip()]


def _prior_from_keys(cfg: dict) -> list[PriorMethod] | None:
    if "prior.tag" not in cfg:
        return None
    kw = {k: cfg[f"prior.{k}"] for k in ("a", "shrink_level", "tuning", "ssvs_c", "ssvs_h")
          if f"prior.{k}" in cfg}
    try:
        return [PriorMethod(str(cfg["prior.tag"]), **kw)]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "", name.replace("=", ""))


# output helpers ----------------------------------------------------------------

@contextlib.contextmanager
def staged(path: str, mode: str = "w"):
    """Write to ``path + '.partial'`` and rename into place on success."""
    tmp = path + ".partial"
    fh = open(tmp, mode, newline="" if "b" not in mode else None,
              encoding="utf-8" if "b" not in mode else None)
    try:
        yield fh
    except BaseException:
        fh.close()
        os.remove(tmp)
        raise
    fh.close()
    os.replace(tmp, path)


def write_manifest(out: str, command: str, cfg: dict) -> None:
    os.makedirs(out, exist_ok=True)
    doc = {"command": command, "software": f"cmgipd {__version__}",
           "config": {k: cfg[k] for k in sorted(cfg)}}
    with staged(os.path.join(out, "manifest.json")) as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _chain_config(cfg: dict) -> ChainConfig:
    try:
        return ChainConfig(int(cfg["chain.n_chains"]), int(cfg["chain.n_iter"]),
                           int(cfg["chain.burn_in"]), int(cfg["chain.thin"]), int(cfg["seed"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# subcommands -------------------------------------------------------------------

def cmd_fit(cfg: dict) -> int:
    path = cfg.get("data.path")
    if not path:
        raise UsageError("fit needs a data file (--data or data.path)")
    methods = _prior_from_keys(cfg) or _methods(cfg.get("methods"))
    chain = _chain_config(cfg)
    out = cfg["out"]
    write_manifest(out, "fit", cfg)
    columns = {k[len("data.columns."):]: v for k, v in cfg.items()
               if k.startswith("data.columns.")}
    mods = cfg.get("moderators")
    if isinstance(mods, str):
        mods = [m.strip() for m in mods.split(",") if m.strip()]
    data = ingest_csv(path, columns or None, mods,
                      drop_incomplete=bool(cfg.get("data.drop_incomplete", False)))
    data = center_covariates(data, cfg["centering"])
    workers = int(cfg["workers"])
    thr = float(cfg["threshold"])
    variants = [bool(cfg["moderator_random_effects"])]
    if cfg["compare_random_effects"]:
        variants = [True, False]
    summaries, dic_rows = {}, []
    for m in methods:
        for with_re in variants:
            spec = ModelSpec(m, include_moderator_random_effects=with_re)
            draws = run_mcmc(data, spec, chain, workers=workers)
            d = dic(draws, data, spec, return_parts=True)
            dic_rows.append([m.name, "with" if with_re else "without", d["dic"], d["p_d"]])
            if with_re != variants[0]:
                continue
            tag = slug(m.name)
            with staged(os.path.join(out, f"draws_{tag}.csv")) as fh:
                draws.to_csv(fh)
            summ = summarize(draws, dic=d["dic"])
            flags = flag_moderators(summ, thr)
            summ.extra["flagged"] = sorted(flags.neighborhood)
            summ.extra["ci_excludes_zero"] = sorted(flags.ci_excludes_zero)
            if chain.n_chains > 1:
                summ.extra["rhat"] = {nm: _safe_rhat(draws, nm) for nm in
                                      ["mu", "alpha", *(f"gamma[{g}]" for g in
                                                        draws.labels["gamma"])]}
            with staged(os.path.join(out, f"summary_{tag}.json")) as fh:
                fh.write(summ.to_json() + "\n")
            for lab in draws.labels["gamma"]:
                try:
                    x, y = density_export(draws.pooled(f"gamma[{lab}]"))
                except (ValueError, DegeneratePosteriorError):
                    continue
                with staged(os.path.join(out, f"density_{tag}_gamma_{slug(lab)}.csv")) as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["x", "density"])
                    w.writerows([repr(float(a)), repr(float(b))] for a, b in zip(x, y))
            summaries[m.name] = summ
    _write_tables(out, data, summaries, dic_rows)
    return EXIT_OK


def _safe_rhat(draws, name):
    try:
        return gelman_rubin(draws, name)
    except DiagnosticError:
        return None


def _write_tables(out, data, summaries, dic_rows):
    names = list(summaries)
    with staged(os.path.join(out, "p_gamma.csv")) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["moderator", *names])
        for lab in data.moderator_names:
            w.writerow([lab, *(f"{summaries[n].p_gamma[lab]:.4f}" for n in names)])
    params = ["alpha", *(f"gamma[{g}]" for g in data.moderator_names), "tau_alpha2"]
    with staged(os.path.join(out, "comparison.csv")) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", *names])
        for p in params:
            cells = []
            for n in names:
                st = summaries[n].stats.get(p)
                cells.append("" if st is None else
                             f"{st['mean']:.3f} ({st['sd']:.3f}) [{st['ci_low']:.3f}, "
                             f"{st['ci_high']:.3f}]")
            w.writerow([p, *cells])
    with staged(os.path.join(out, "dic.csv")) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "moderator_random_effects", "dic", "p_d"])
        w.writerows([a, b, repr(c), repr(d)] for a, b, c, d in dic_rows)


def _grid(cfg: dict) -> list[ScenarioSpec]:
    reps = int(cfg["replicates"])
    if reps < 1:
        raise UsageError("replicate count must be >= 1")
    if cfg.get("full_grid"):
        return full_grid(reps)
    levels = cfg.get("grid")
    gfile = cfg.get("grid_file")
    if gfile:
        with open(gfile, encoding="utf-8") as fh:
            levels = yaml.safe_load(fh) or {}
    levels = levels or {k[5:]: v for k, v in cfg.items() if k.startswith("grid.")}
    try:
        return grid_from_levels(levels or {}, reps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(cfg: dict) -> int:
    grid = _grid(cfg)
    methods = _methods(cfg.get("methods"))
    chain = _chain_config(cfg)
    variant = cfg["metric_variant"]
    out = cfg["out"]
    write_manifest(out, "simulate", cfg)
    n_fits = sum(sc.replicates for sc in grid) * len(methods) * chain.n_chains
    est = n_fits * chain.n_iter * 5e-4 / max(int(cfg["workers"]), 1)
    print(f"{len(grid)} scenario(s), {len(methods)} method(s), {n_fits} chain runs; "
          f"estimated wall clock {est / 3600:.2f} h", file=sys.stderr)
    report = run_study(grid, methods, chain, int(cfg["seed"]), variant,
                       workers=int(cfg["workers"]))
    with staged(os.path.join(out, "raw_estimates.csv")) as fh:
        report.write_raw_csv(fh)
    _write_report(out, report)
    failed = sum(r["n_failed"] for r in report.rows)
    if failed:
        print(f"{failed} replicate fit(s) failed and were excluded", file=sys.stderr)
    return EXIT_NUMERIC if failed and all(r["n_ok"] == 0 for r in report.rows) else EXIT_OK


def _write_report(out, report):
    with staged(os.path.join(out, "metrics.csv")) as fh:
        report.write_metrics_csv(fh)
    with staged(os.path.join(out, "ranking.csv")) as fh:
        report.write_ranking_csv(fh)


def cmd_report(cfg: dict) -> int:
    raw_path = cfg.get("raw")
    if not raw_path:
        raise UsageError("report needs --raw pointing at raw_estimates.csv")
    out = cfg["out"]
    write_manifest(out, "report", cfg)
    raw = read_raw_csv(raw_path)
    order = list(dict.fromkeys((r["scenario"], r["method"]) for r in raw))
    truths = {s: scenario_from_label(s).gamma for s, _ in order}
    _write_report(out, aggregate(raw, truths, cfg["metric_variant"], order))
    return EXIT_OK


def cmd_prior_curves(cfg: dict) -> int:
    methods = _methods(cfg.get("methods") or list(ROSTER))
    out = cfg["out"]
    N = float(cfg["N"])
    write_manifest(out, "prior-curves", cfg)
    g_grid = np.linspace(0.05, 10.0, 200)
    s_grid = np.linspace(0.005, 0.995, 199)
    for m in methods:
        if not m.proper_g:
            print(f"skipping {m.name}: no proper prior on g", file=sys.stderr)
            continue
        tag = slug(m.name)
        curves = [("g", g_grid, None), ("shrinkage", s_grid, None)]
        if m.has_b:
            curves.append(("shrinkage", s_grid, 1.2))
        for what, grid, b in curves:
            x, y = prior_density_export(m, what, grid, b=b, N=N)
            suffix = f"{what}_b1.2" if b is not None else what
            with staged(os.path.join(out, f"prior_{tag}_{suffix}.csv")) as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["x", "density"])
                w.writerows([repr(float(a)), repr(float(c))] for a, c in zip(x, y))
    ns = np.unique(np.round(np.geomspace(10, 1000, 41)).astype(int))
    tc = tuning_curves(ns, 0.5)
    with staged(os.path.join(out, "tuning_curves.csv")) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "f_n", "f_log", "f_pow"])
        for j, n in enumerate(ns):
            w.writerow([int(n), repr(float(tc["n"][j])), repr(float(tc["log"][j])),
                        repr(float(tc["pow"][j]))])
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "report": cmd_report,
            "prior-curves": cmd_prior_curves}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cmgipd", description="Shrinkage-prior IPD meta-analysis of effect moderation")
    p.add_argument("--version", action="version", version=f"cmgipd {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config")
        s.add_argument("--seed", type=int)
        s.add_argument("--methods")
        s.add_argument("--out")
        s.add_argument("--workers", type=int)
        if name == "fit":
            s.add_argument("--data", dest="data.path")
            s.add_argument("--moderators")
            s.add_argument("--threshold", type=float)
            s.add_argument("--centering", choices=["pooled", "within"])
            s.add_argument("--compare-random-effects", dest="compare_random_effects",
                           action="store_const", const=True)
        if name in ("fit", "simulate"):
            s.add_argument("--chains", dest="chain.n_chains", type=int)
            s.add_argument("--n-iter", dest="chain.n_iter", type=int)
            s.add_argument("--burn-in", dest="chain.burn_in", type=int)
            s.add_argument("--thin", dest="chain.thin", type=int)
        if name in ("simulate", "report"):
            s.add_argument("--metric-variant", dest="metric_variant",
                           choices=["literal", "conventional"])
        if name == "simulate":
            s.add_argument("--grid", dest="grid_file")
            s.add_argument("--replicates", type=int)
            s.add_argument("--full-grid", dest="full_grid", action="store_const", const=True)
        if name == "report":
            s.add_argument("--raw")
        if name == "prior-curves":
            s.add_argument("--N", dest="N", type=float)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("choose a subcommand: " + ", ".join(COMMANDS))
        cfg = dict(DEFAULTS)
        cfg.update(load_config(args.config))
        cli = {k: v for k, v in vars(args).items()
               if v is not None and k not in ("command", "config")}
        cfg.update(cli)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, DegeneratePriorError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SamplerError, DiagnosticError, DegeneratePosteriorError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
