"""Factorial simulation study: data generation, replicate fitting and risk reports."""
from __future__ import annotations

import csv
import itertools
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
from statsmodels.stats.correlation_tools import corr_nearest
from statsmodels.tools.sm_exceptions import IterationLimitWarning

from . import metrics
from .data import IpdDataset, TrialBlock, center_covariates
from .priors import PriorMethod
from .sampler import ChainConfig, ModelSpec, SamplerError, run_mcmc

VARIABILITY = {"High": (1.5, 2.5), "Medium": (0.5, 1.5), "None": (0.0, 0.0)}
SPARSITY = {"High": 2, "Medium": 4, "Low": 6}
MAGNITUDE = {"Strong": 1.5, "Weak": 0.75}
CORRELATION = {"High": (0.5, 0.9), "None": None}

MU, ALPHA = 2.0, 3.0
BETA = (1.8, 2.7, 2.3, 1.5, 1.7, 2.2, 1.3, 2.6)
SIGMA = (3.5, 2.5, 2.1, 2.8, 3.0)
TAU_MU = TAU_ALPHA = 1.5
N_RANGE = (100, 150)


@dataclass(frozen=True)
class ScenarioSpec:
    variability: str = "High"
    sparsity: str = "High"
    magnitude: str = "Weak"
    correlation: str = "High"
    replicates: int = 500

    def __post_init__(self):
        for name, table in (("variability", VARIABILITY), ("sparsity", SPARSITY),
                            ("magnitude", MAGNITUDE), ("correlation", CORRELATION)):
            if getattr(self, name) not in table:
                raise ValueError(f"{name} must be one of {sorted(table)}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")

    @property
    def label(self) -> str:
        return (f"var={self.variability}/spa={self.sparsity}/"
                f"mag={self.magnitude}/cor={self.correlation}")

    @property
    def gamma(self) -> np.ndarray:
        g = np.zeros(len(BETA))
        g[:SPARSITY[self.sparsity]] = MAGNITUDE[self.magnitude]
        return g


def full_grid(replicates: int = 500) -> list[ScenarioSpec]:
    return [ScenarioSpec(v, s, m, c, replicates) for v, s, m, c in
            itertools.product(VARIABILITY, SPARSITY, MAGNITUDE, CORRELATION)]


def grid_from_levels(levels: dict, replicates: int) -> list[ScenarioSpec]:
    """Cartesian product of the listed factor levels (missing factors use defaults)."""
    default = ScenarioSpec(replicates=replicates)
    keys = ("variability", "sparsity", "magnitude", "correlation")
    pools = []
    for k in keys:
        v = levels.get(k, getattr(default, k))
        pools.append([str(x) for x in (v if isinstance(v, (list, tuple)) else [v])])
    return [ScenarioSpec(*combo, replicates=replicates) for combo in itertools.product(*pools)]


@dataclass
class TruthRecord:
    mu: float
    alpha: float
    beta: np.ndarray
    gamma: np.ndarray
    sigma: np.ndarray
    tau_mu: float
    tau_alpha: float
    tau_k: np.ndarray
    n: np.ndarray
    u_mu: np.ndarray
    u_alpha: np.ndarray
    u: np.ndarray


def _random_correlation(rng, p: int, lo: float, hi: float) -> np.ndarray:
    R = np.eye(p)
    iu = np.triu_indices(p, 1)
    R[iu] = rng.uniform(lo, hi, size=len(iu[0]))
    R.T[iu] = R[iu]
    # the projection hits the eigenvalue floor well before the iteration cap,
    # but statsmodels still reports the cap
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IterationLimitWarning)
        R = corr_nearest(R, threshold=1e-6, n_fact=100)
    return (R + R.T) / 2


def generate_dataset(scenario: ScenarioSpec, seed) -> tuple[IpdDataset, TruthRecord]:
    """Simulate one uncentered IPD-MA dataset with 5 trials and 8 covariates."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.PCG64(ss))
    I, p = len(SIGMA), len(BETA)
    beta = np.array(BETA)
    gamma = scenario.gamma
    n = rng.integers(N_RANGE[0], N_RANGE[1] + 1, size=I)
    lo, hi = VARIABILITY[scenario.variability]
    tau_k = rng.uniform(lo, hi, size=p) if hi > 0 else np.zeros(p)
    u_mu = rng.normal(0.0, TAU_MU, size=I)
    u_alpha = rng.normal(0.0, TAU_ALPHA, size=I)
    u = rng.standard_normal((I, p)) * tau_k
    corr = CORRELATION[scenario.correlation]
    blocks = []
    for i in range(I):
        Z = rng.standard_normal((n[i], p))
        if corr is not None:
            Z = Z @ np.linalg.cholesky(_random_correlation(rng, p, *corr)).T
        t = rng.permutation(np.arange(n[i]) % 2).astype(float)
        y = (MU + u_mu[i] + t * (ALPHA + u_alpha[i]) + Z @ beta
             + t * (Z @ (gamma + u[i])) + SIGMA[i] * rng.standard_normal(n[i]))
        blocks.append(TrialBlock(f"T{i + 1}", y, t, Z))
    data = IpdDataset(tuple(blocks), tuple(f"x{j + 1}" for j in range(p)), tuple(range(p)))
    truth = TruthRecord(MU, ALPHA, beta, gamma, np.array(SIGMA), TAU_MU, TAU_ALPHA, tau_k, n,
                        u_mu, u_alpha, u)
    return data, truth


def replicate_seed(master_seed: int, scenario_index: int, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(scenario_index), int(replicate)])


def fit_seed(master_seed: int, scenario_index: int, replicate: int) -> int:
    ss = np.random.SeedSequence([int(master_seed), int(scenario_index), int(replicate), 1])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# replicate fitting ---------------------------------------------------------

RAW_FIELDS = ("scenario", "replicate", "method", "status", "alpha_hat", "sq_norm", "sq_norm_em", "N")


def _fit_replicate(args):
    scenario, s_idx, r, methods, cfg, master_seed = args
    data_raw, truth = generate_dataset(scenario, replicate_seed(master_seed, s_idx, r))
    data = center_covariates(data_raw, "pooled")
    xbar = data.offsets[0, list(data.moderators)]
    Xem_raw = data_raw.Xem
    t = data_raw.t
    run_cfg = replace(cfg, seed=fit_seed(master_seed, s_idx, r))
    out = []
    for m in methods:
        rec = {"scenario": scenario.label, "replicate": r, "method": m.name}
        try:
            dr = run_mcmc(data, ModelSpec(m), run_cfg)
        except (SamplerError, np.linalg.LinAlgError, FloatingPointError) as exc:
            rec.update(status=f"failed: {exc}", gamma_hat=None)
            out.append(rec)
            continue
        g_hat = dr.blocks["gamma"].mean(axis=(0, 1))
        a_hat = float(dr.blocks["alpha"].mean()) - float(xbar @ g_hat)
        r_ps = metrics.participant_residual(t, Xem_raw, truth.alpha, truth.gamma, a_hat, g_hat)
        r_em = metrics.participant_residual(t, Xem_raw, truth.alpha, truth.gamma, a_hat, g_hat,
                                            em_only=True)
        rec.update(status="ok", gamma_hat=g_hat, alpha_hat=a_hat,
                   sq_norm=float(r_ps @ r_ps), sq_norm_em=float(r_em @ r_em), N=len(t))
        out.append(rec)
    return out


@dataclass
class MetricsReport:
    rows: list[dict]
    raw: list[dict]
    variant: str = "literal"

    METRICS = ("arrmse", "aarbias", "arsd", "psrmse", "psrmse_em")

    def value(self, scenario: str, method: str, metric: str) -> float:
        for row in self.rows:
            if row["scenario"] == scenario and row["method"] == method:
                return row[metric]
        raise KeyError((scenario, method))

    def ranking(self, scenario: str | None = None) -> dict[str, list[str]]:
        """Methods per scenario ordered by ARRMSE, best first."""
        out: dict[str, list] = {}
        for row in self.rows:
            if scenario is None or row["scenario"] == scenario:
                out.setdefault(row["scenario"], []).append(row)
        return {s: [r["method"] for r in sorted(rs, key=lambda r: (r["arrmse"], r["method"]))]
                for s, rs in out.items()}

    def write_metrics_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "method", "metric", "value"])
        for row in self.rows:
            for m in (*self.METRICS, "n_ok", "n_failed"):
                w.writerow([row["scenario"], row["method"], m, repr(row[m])])

    def write_ranking_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "rank", "method", "arrmse"])
        for s, methods in self.ranking().items():
            for k, m in enumerate(methods, start=1):
                w.writerow([s, k, m, repr(self.value(s, m, "arrmse"))])

    def write_raw_csv(self, fh) -> None:
        d = max((len(r["gamma_hat"]) for r in self.raw if r.get("gamma_hat") is not None),
                default=0)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*RAW_FIELDS, *(f"gamma_hat{k + 1}" for k in range(d))])
        for r in self.raw:
            g = r.get("gamma_hat")
            base = [r["scenario"], r["replicate"], r["method"], r["status"]]
            if g is None:
                w.writerow(base + [""] * (len(RAW_FIELDS) - 4 + d))
            else:
                w.writerow(base + [repr(r["alpha_hat"]), repr(r["sq_norm"]),
                                   repr(r["sq_norm_em"]), r["N"], *map(repr, map(float, g))])


def aggregate(raw: list[dict], truths: dict[str, np.ndarray], variant: str = "literal",
              order: Sequence[tuple[str, str]] | None = None) -> MetricsReport:
    """Reduce per-replicate records to one row per (scenario, method)."""
    groups: dict[tuple[str, str], list] = {}
    for rec in raw:
        groups.setdefault((rec["scenario"], rec["method"]), []).append(rec)
    keys = list(order) if order is not None else list(groups)
    rows = []
    for key in keys:
        recs = sorted(groups.get(key, []), key=lambda r: r["replicate"])
        ok = [r for r in recs if r["status"] == "ok"]
        row = {"scenario": key[0], "method": key[1], "n_ok": len(ok),
               "n_failed": len(recs) - len(ok)}
        if ok:
            est = np.array([r["gamma_hat"] for r in ok])
            gam = truths[key[0]]
            row["arrmse"] = metrics.arrmse(est, gam, variant)
            row["aarbias"] = metrics.aarbias(est, gam, variant)
            row["arsd"] = metrics.arsd(est, gam, variant)
            row["psrmse"] = float(np.mean([metrics.psrmse_from_norm(r["sq_norm"], r["N"], variant)
                                           for r in ok]))
            row["psrmse_em"] = float(np.mean([
                metrics.psrmse_from_norm(r["sq_norm_em"], r["N"], variant) for r in ok]))
        else:
            row.update({m: math.nan for m in MetricsReport.METRICS})
        rows.append(row)
    return MetricsReport(rows, list(raw), variant)


def run_study(grid: Sequence[ScenarioSpec], methods: Sequence[PriorMethod], cfg: ChainConfig,
              master_seed: int, variant: str = "literal", workers: int = 1,
              progress=None) -> MetricsReport:
    """Fit every method to every replicate of every scenario and aggregate the metrics.

    Replicate ``r`` of scenario ``s`` is generated from (master_seed, s, r); all
    methods fit the same dataset with the same chain seed.
    """
    if not grid or not methods:
        raise ValueError("grid and methods must be nonempty")
    jobs = [(sc, s, r, list(methods), cfg, master_seed)
            for s, sc in enumerate(grid) for r in range(sc.replicates)]
    raw: list[dict] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for k, recs in enumerate(ex.map(_fit_replicate, jobs)):
                raw.extend(recs)
                if progress:
                    progress(k + 1, len(jobs))
    else:
        for k, job in enumerate(jobs):
            raw.extend(_fit_replicate(job))
            if progress:
                progress(k + 1, len(jobs))
    truths = {sc.label: sc.gamma for sc in grid}
    order = [(sc.label, m.name) for sc in grid for m in methods]
    return aggregate(raw, truths, variant, order)


def read_raw_csv(path) -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rec = {"scenario": row["scenario"], "replicate": int(row["replicate"]),
                   "method": row["method"], "status": row["status"]}
            if row["status"] == "ok":
                ks = sorted((k for k in row if k.startswith("gamma_hat")),
                            key=lambda k: int(k[9:]))
                rec.update(gamma_hat=np.array([float(row[k]) for k in ks]),
                           alpha_hat=float(row["alpha_hat"]), sq_norm=float(row["sq_norm"]),
                           sq_norm_em=float(row["sq_norm_em"]), N=int(row["N"]))
            else:
                rec["gamma_hat"] = None
            out.append(rec)
    return out


def scenario_from_label(label: str, replicates: int = 1) -> ScenarioSpec:
    parts = dict(p.split("=", 1) for p in label.split("/"))
    return ScenarioSpec(parts["var"], parts["spa"], parts["mag"], parts["cor"], replicates)


def scenario_dict(sc: ScenarioSpec) -> dict:
    return asdict(sc)
