"""Posterior summaries and moderator assessment.

The scaled neighborhood probability of a moderator is
P(|gamma_k| < sd(gamma_k | y) | y), estimated by the fraction of pooled draws
inside one posterior SD of zero.  Small values mean the posterior sits away
from zero relative to its own spread.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy.stats import gaussian_kde

from .priors import (DomainError, PriorMethod, UnsupportedMethodError, g_density,
                     shrinkage_density, tuning_f_vec)
from .sampler import PosteriorDraws


class DegeneratePosteriorError(ValueError):
    pass


@dataclass
class PosteriorSummary:
    method: str
    stats: dict[str, dict[str, float]]
    p_gamma: dict[str, float]
    dic: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"method": self.method, "parameters": self.stats, "p_gamma": self.p_gamma}
        if self.dic is not None:
            out["dic"] = self.dic
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _stats(x: np.ndarray) -> dict[str, float]:
    lo, hi = np.quantile(x, [0.025, 0.975])
    return {"mean": float(x.mean()), "sd": float(x.std(ddof=1)),
            "ci_low": float(lo), "ci_high": float(hi)}


def summarize(draws: PosteriorDraws, dic: float | None = None,
              parameters: Sequence[str] | None = None, min_draws: int = 100) -> PosteriorSummary:
    """Pooled-chain mean, SD (divisor m-1) and equal-tailed 95% interval per parameter."""
    if draws.n_draws == 0:
        raise ValueError("no draws to summarize")
    m = draws.n_chains * draws.n_draws
    if m < min_draws:
        raise ValueError(f"need at least {min_draws} pooled draws, got {m}")
    names = list(parameters) if parameters is not None else draws.parameter_names()
    stats = {nm: _stats(draws.pooled(nm)) for nm in names}
    p_gamma = {}
    for lab in draws.labels.get("gamma", []):
        x = draws.pooled(f"gamma[{lab}]")
        try:
            p_gamma[lab] = scaled_neighborhood_prob(x)
        except DegeneratePosteriorError:
            p_gamma[lab] = float("nan")
    return PosteriorSummary(draws.method, stats, p_gamma, dic)


def scaled_neighborhood_prob(gamma_draws) -> float:
    x = np.asarray(gamma_draws, dtype=float).reshape(-1)
    if x.size < 2:
        raise DegeneratePosteriorError("need at least 2 draws")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise DegeneratePosteriorError("draws have zero variance")
    return float(np.mean(np.abs(x) < sd))


class ModeratorFlags(NamedTuple):
    neighborhood: set
    ci_excludes_zero: set


def flag_moderators(summary, threshold: float = 0.5) -> ModeratorFlags:
    """Moderators with p_gamma strictly below ``threshold``.

    ``summary`` may be a :class:`PosteriorSummary`, a mapping name -> p, or a
    plain sequence of probabilities (keys are then 1-based positions k, as in
    gamma_k).  The second set holds moderators whose 95% interval excludes 0,
    available only from a full summary.
    """
    ci = set()
    if isinstance(summary, PosteriorSummary):
        probs = summary.p_gamma
        for lab in probs:
            st = summary.stats.get(f"gamma[{lab}]")
            if st and (st["ci_low"] > 0 or st["ci_high"] < 0):
                ci.add(lab)
    elif isinstance(summary, Mapping):
        probs = dict(summary)
    else:
        probs = {k + 1: float(v) for k, v in enumerate(summary)}
    for k, v in probs.items():
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"p_gamma for {k!r} outside [0, 1]: {v}")
    return ModeratorFlags({k for k, v in probs.items() if v < threshold}, ci)


# densities -------------------------------------------------------------------

def density_export(draws, grid: Sequence[float] | None = None, n_points: int = 512,
                   min_draws: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian KDE (Silverman bandwidth) of posterior draws on a grid.

    The default grid spans the draws' range padded by 3 bandwidths.
    """
    x = np.asarray(draws, dtype=float).reshape(-1)
    if x.size < min_draws:
        raise ValueError(f"need at least {min_draws} draws for a density estimate")
    if not x.std() > 0:
        raise DegeneratePosteriorError("draws have zero variance")
    kde = gaussian_kde(x, bw_method="silverman")
    if grid is None:
        bw = math.sqrt(float(kde.covariance[0, 0]))
        grid = np.linspace(x.min() - 3 * bw, x.max() + 3 * bw, n_points)
    grid = np.asarray(grid, dtype=float)
    return grid, kde(grid)


def prior_density_export(method: PriorMethod, what: str = "shrinkage",
                         grid: Sequence[float] | None = None, n_points: int = 199,
                         b: float | None = None, N: float | None = None):
    """Exact prior curve: ``what`` is ``"g"`` or ``"shrinkage"`` (g / (1 + g)).

    For S1/S3 a given ``b`` conditions on that value; otherwise b is integrated out.
    """
    if not method.proper_g:
        raise UnsupportedMethodError(f"{method.name} has no proper prior on g")
    if b is not None and not method.has_b:
        raise DomainError(f"{method.name} has no b parameter")
    if what == "shrinkage":
        x = np.linspace(0, 1, n_points + 2)[1:-1] if grid is None else np.asarray(grid, float)
        return x, np.asarray(shrinkage_density(method, x, b, N))
    if what == "g":
        x = np.linspace(0.01, 10, n_points) if grid is None else np.asarray(grid, float)
        return x, np.asarray(g_density(method, x, b, N))
    raise ValueError(f"unknown curve {what!r}")


def tuning_curves(ns: Sequence[int], p: float = 0.5) -> dict[str, np.ndarray]:
    """f(n | p) for each tuning kind over ``ns``."""
    ns = np.asarray(ns, dtype=float)
    return {kind: tuning_f_vec(kind, ns, p) for kind in ("n", "log", "pow")}


def write_density_csv(path, x, y, names=("x", "density")) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for a, b in zip(x, y):
            w.writerow([repr(float(a)), repr(float(b))])
