"""Replicate-aggregated risk metrics for moderator-effect estimates.

``estimates`` is always an ``R x d`` array (replicates by moderators) and
``truth`` the length-``d`` generating gamma.  Two normalizations exist:

literal
    sqrt(sum over r, k of the loss) / (R * d * sum_k |gamma_k|), with the
    square root also applied to the absolute-error sum for AARBias.
conventional
    the usual per-entry averages divided by mean_k |gamma_k|.

For fixed R, d and truth both are monotone in the same sums, so method
rankings agree.
"""
from __future__ import annotations

import math

import numpy as np

VARIANTS = ("literal", "conventional")


class UndefinedMetricError(ValueError):
    pass


def _prep(estimates, truth):
    est = np.asarray(estimates, dtype=float)
    gam = np.asarray(truth, dtype=float).reshape(-1)
    if est.ndim == 1:
        est = est.reshape(1, -1)
    if est.ndim != 2 or est.shape[1] != gam.size:
        raise ValueError(f"estimates must be R x {gam.size}, got {est.shape}")
    if est.shape[0] < 1:
        raise ValueError("need at least one replicate")
    scale = float(np.sum(np.abs(gam)))
    if scale == 0.0:
        raise UndefinedMetricError("relative metric undefined for all-zero truth")
    return est, gam, scale


def _check_variant(variant):
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")


def _finish(total: float, R: int, d: int, scale: float, variant: str, root: bool) -> float:
    if variant == "literal":
        return math.sqrt(total) / (R * d * scale)
    mean = total / (R * d)
    return (math.sqrt(mean) if root else mean) / (scale / d)


def arrmse(estimates, truth, variant: str = "literal") -> float:
    _check_variant(variant)
    est, gam, scale = _prep(estimates, truth)
    total = float(np.sum((est - gam) ** 2))
    return _finish(total, *est.shape, scale, variant, root=True)


def aarbias(estimates, truth, variant: str = "literal") -> float:
    _check_variant(variant)
    est, gam, scale = _prep(estimates, truth)
    total = float(np.sum(np.abs(est - gam)))
    return _finish(total, *est.shape, scale, variant, root=False)


def arsd(estimates, truth, variant: str = "literal") -> float:
    _check_variant(variant)
    est, gam, scale = _prep(estimates, truth)
    total = float(np.sum((est - est.mean(axis=0)) ** 2))
    return _finish(total, *est.shape, scale, variant, root=True)


def participant_residual(t, Xem, alpha, gamma, alpha_hat, gamma_hat, em_only=False):
    """(t alpha + Xem gamma) - (t alpha_hat + Xem gamma_hat), one entry per participant."""
    t = np.asarray(t, dtype=float)
    Xem = np.asarray(Xem, dtype=float).reshape(len(t), -1)
    r = Xem @ (np.asarray(gamma, float) - np.asarray(gamma_hat, float))
    if not em_only:
        r = r + t * (float(alpha) - float(alpha_hat))
    return r


def psrmse_from_norm(sq_norm: float, N: int, variant: str = "literal") -> float:
    """PSRMSE from the squared residual norm; literal uses the norm itself, not its square."""
    _check_variant(variant)
    if variant == "literal":
        return math.sqrt(math.sqrt(sq_norm) / N)
    return math.sqrt(sq_norm / N)


def psrmse(t, Xem, alpha, gamma, alpha_hat, gamma_hat, em_only: bool = False,
           variant: str = "literal") -> float:
    r = participant_residual(t, Xem, alpha, gamma, alpha_hat, gamma_hat, em_only)
    return psrmse_from_norm(float(r @ r), len(r), variant)


def mse_decomposition(estimates, truth) -> dict[str, np.ndarray]:
    """Per-moderator MSE, variance and squared bias across replicates (divisor R)."""
    est = np.asarray(estimates, dtype=float)
    gam = np.asarray(truth, dtype=float).reshape(-1)
    mse = np.mean((est - gam) ** 2, axis=0)
    var = np.var(est, axis=0)
    bias2 = (est.mean(axis=0) - gam) ** 2
    return {"mse": mse, "variance": var, "bias2": bias2}
