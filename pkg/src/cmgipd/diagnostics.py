"""Convergence and model-fit diagnostics: split-R-hat, log-likelihood, DIC."""
from __future__ import annotations

import math

import numpy as np

from .data import IpdDataset
from .sampler import ModelSpec, ParameterState, PosteriorDraws


class DiagnosticError(ValueError):
    pass


def gelman_rubin(draws, param: str | None = None) -> float:
    """Split-chain potential scale reduction factor.

    ``draws`` is a :class:`PosteriorDraws` (with ``param``) or a
    ``(chains, draws)`` array.  Each chain is cut in half, so the statistic
    also reacts to drift within a chain.
    """
    x = draws.get(param) if isinstance(draws, PosteriorDraws) else np.asarray(draws, float)
    if x.ndim != 2:
        raise DiagnosticError("expected a (chains, draws) array")
    m, n = x.shape
    if m < 2:
        raise DiagnosticError("split R-hat needs at least 2 chains")
    if n < 10:
        raise DiagnosticError("split R-hat needs at least 10 draws per chain")
    half = n // 2
    x = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    W = x.var(axis=1, ddof=1).mean()
    B = half * x.mean(axis=1).var(ddof=1)
    if W == 0.0:
        if B == 0.0:
            raise DiagnosticError("constant chains: R-hat undefined")
        return math.inf
    var_plus = (half - 1) / half * W + B / half
    return float(math.sqrt(var_plus / W))


def _linear_predictor(state: ParameterState, data: IpdDataset, spec: ModelSpec) -> list:
    mods = list(data.moderators)
    out = []
    for i, tr in enumerate(data.trials):
        xem = tr.t[:, None] * tr.X[:, mods]
        eta = (state.mu + state.u_mu[i] + tr.t * (state.alpha + state.u_alpha[i])
               + tr.X @ state.beta + xem @ state.gamma)
        if spec.include_moderator_random_effects:
            eta = eta + xem @ np.asarray(state.u)[i]
        out.append(eta)
    return out


def log_likelihood(state: ParameterState, data: IpdDataset, spec: ModelSpec) -> float:
    """Sum over participants of the normal log density, conditional on random effects."""
    data = spec.apply(data)
    total = 0.0
    for i, (tr, eta) in enumerate(zip(data.trials, _linear_predictor(state, data, spec))):
        s2 = float(state.sigma2[i])
        r = tr.y - eta
        total += float(np.sum(-0.5 * math.log(2 * math.pi * s2) - 0.5 * r * r / s2))
    return total


def _cross_products(data: IpdDataset):
    mods = list(data.moderators)
    C, c, yy = [], [], []
    for tr in data.trials:
        F = np.column_stack([np.ones(tr.n), tr.t, tr.X, tr.t[:, None] * tr.X[:, mods]])
        C.append(F.T @ F)
        c.append(F.T @ tr.y)
        yy.append(tr.y @ tr.y)
    return np.array(C), np.array(c), np.array(yy)


def _trial_coefs(mu, alpha, beta, gamma, u_mu, u_alpha, u) -> np.ndarray:
    """Effective per-trial coefficients, shape ``(..., I, F)``."""
    I = u_mu.shape[-1]
    lead = u_mu.shape[:-1]
    fixed = np.concatenate([np.asarray(mu)[..., None], np.asarray(alpha)[..., None],
                            beta, gamma], axis=-1)
    B = np.broadcast_to(fixed[..., None, :], (*lead, I, fixed.shape[-1])).copy()
    B[..., 0] += u_mu
    B[..., 1] += u_alpha
    d = gamma.shape[-1]
    if d:
        B[..., B.shape[-1] - d:] += u
    return B


def deviance_draws(draws: PosteriorDraws, data: IpdDataset, spec: ModelSpec) -> np.ndarray:
    """Deviance -2 log p(y | theta) for every retained draw, shape ``(chains, draws)``."""
    data = spec.apply(data)
    C, c, yy = _cross_products(data)
    b = draws.blocks
    B = _trial_coefs(b["mu"], b["alpha"], b["beta"], b["gamma"], b["u_mu"], b["u_alpha"], b["u"])
    ssr = yy - 2 * np.einsum("...if,if->...i", B, c) + np.einsum("...if,ifg,...ig->...i", B, C, B)
    s2 = b["sigma2"]
    n = data.n
    return np.sum(n * np.log(2 * math.pi * s2) + ssr / s2, axis=-1)


def dic(draws: PosteriorDraws, data: IpdDataset, spec: ModelSpec,
        return_parts: bool = False):
    """DIC = mean deviance + p_D, with p_D = mean deviance - deviance at the posterior mean."""
    if draws.n_draws == 0:
        raise DiagnosticError("no draws")
    D = deviance_draws(draws, data, spec)
    if not np.all(np.isfinite(D)):
        raise DiagnosticError("non-finite deviance in draws")
    d_bar = float(D.mean())
    d_hat = -2.0 * log_likelihood(draws.mean_state(), data, spec)
    if not math.isfinite(d_hat):
        raise DiagnosticError("non-finite deviance at the posterior mean")
    p_d = d_bar - d_hat
    val = d_bar + p_d
    if return_parts:
        return {"dic": val, "d_bar": d_bar, "d_hat": d_hat, "p_d": p_d}
    return val
