"""Prior roster for the moderation effects ``gamma``.

Twenty methods are available: a flat prior, the horseshoe and SSVS, the naive
mixtures of g-priors (UIP, ZS, hyper-g, hyper-g/N) and the calibrated
mixtures (CUIP, CZS and nine CMG variants crossing three shrinkage
hyperpriors with three sample-size tuning functions).

Every g-type prior gives ``gamma_k`` a normal prior with precision
``q_k / g_k`` where ``q_k = sum_i S_ik / (sigma_i^2 f(n_i))`` and ``S_ik`` is the
sum of squared treatment-by-moderator products in trial ``i``.  Naive methods
use ``f = 1``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy import integrate

TAGS = ("Flat", "HS", "SSVS", "UIP", "ZS", "HG", "HGN", "CUIP", "CZS", "CMG")
SHRINK_LEVELS = ("S1", "S2", "S3")
TUNING_KINDS = ("n", "log", "pow")


class DomainError(ValueError):
    pass


class UnsupportedMethodError(ValueError):
    pass


class DegeneratePriorError(ValueError):
    pass


@dataclass(frozen=True)
class PriorMethod:
    tag: str
    a: float | None = None
    shrink_level: str | None = None
    tuning: str | None = None
    ssvs_c: float = 5.0
    ssvs_h: float = 100.0

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown prior tag {self.tag!r}")
        if self.tag in ("HG", "HGN"):
            if self.a is None or not self.a > 2:
                raise ValueError(f"{self.tag} needs a > 2")
        elif self.a is not None:
            raise ValueError(f"parameter a only applies to HG/HGN, not {self.tag}")
        if self.tag == "CMG":
            if self.shrink_level not in SHRINK_LEVELS:
                raise ValueError(f"CMG needs shrink_level in {SHRINK_LEVELS}")
            if self.tuning not in TUNING_KINDS:
                raise ValueError(f"CMG needs tuning in {TUNING_KINDS}")
        elif self.tag == "CZS":
            if self.tuning not in (None, "n"):
                raise ValueError("CZS only supports the 'n' tuning function")
            object.__setattr__(self, "tuning", "n")
        elif self.shrink_level is not None or self.tuning is not None:
            raise ValueError(f"shrink_level/tuning do not apply to {self.tag}")
        if not (self.ssvs_c > 0 and self.ssvs_h > 0):
            raise ValueError("ssvs_c and ssvs_h must be positive")

    @property
    def name(self) -> str:
        if self.tag in ("HG", "HGN"):
            a = int(self.a) if float(self.a).is_integer() else self.a
            return f"{self.tag}(a={a})"
        if self.tag == "CMG":
            return f"CMG-{self.shrink_level}-{self.tuning}"
        return self.tag

    def __str__(self):
        return self.name

    @classmethod
    def parse(cls, name: str) -> "PriorMethod":
        s = re.sub(r"\s+", "", name)
        m = re.fullmatch(r"(HGN|HG)(?:\(a=|-a|_a|a)?(\d+(?:\.\d+)?)\)?", s, flags=re.I)
        if m:
            return cls(m.group(1).upper(), a=float(m.group(2)))
        m = re.fullmatch(r"CMG-(S[123])-(n|log|pow)", s, flags=re.I)
        if m:
            return cls("CMG", shrink_level=m.group(1).upper(), tuning=m.group(2).lower())
        for tag in TAGS:
            if s.lower() == tag.lower() and tag not in ("HG", "HGN", "CMG"):
                return cls(tag)
        raise ValueError(f"unknown method {name!r}; choose from: {', '.join(ROSTER)}")

    # structural properties used by the sampler ------------------------------
    @property
    def g_kind(self) -> str:
        """'none', 'fixed', 'ig' (conjugate inverse-gamma) or 'slice'."""
        if self.tag in ("Flat", "HS", "SSVS"):
            return "none"
        if self.tag in ("UIP", "CUIP"):
            return "fixed"
        if self.tag in ("ZS", "CZS"):
            return "ig"
        return "slice"

    @property
    def has_b(self) -> bool:
        return self.tag == "CMG" and self.shrink_level in ("S1", "S3")

    @property
    def tuning_kind(self) -> str | None:
        return self.tuning if self.tag in ("CMG", "CZS") else None

    @property
    def family(self) -> str:
        if self.tag == "Flat":
            return "Flat"
        if self.tag in ("HS", "SSVS"):
            return "HS/SSVS"
        if self.tag in ("UIP", "ZS", "HG", "HGN"):
            return "NMG"
        return "CMG"

    @property
    def proper_g(self) -> bool:
        return self.g_kind in ("ig", "slice")

    def fixed_g(self, N: int) -> float | None:
        if self.tag == "UIP":
            return float(N)
        if self.tag == "CUIP":
            return 1.0
        return None

    def ig_params(self, N: int) -> tuple[float, float] | None:
        """Shape and scale of the inverse-gamma hyperprior for ZS/CZS."""
        if self.tag == "ZS":
            return 0.5, N / 2.0
        if self.tag == "CZS":
            return 0.5, 0.5
        return None


ROSTER = (
    "Flat", "HS", "SSVS",
    "UIP", "ZS", "HG(a=3)", "HG(a=4)", "HGN(a=3)", "HGN(a=4)",
    "CUIP", "CZS",
    *(f"CMG-{s}-{f}" for f in TUNING_KINDS for s in SHRINK_LEVELS),
)


def method_roster() -> list[PriorMethod]:
    return [PriorMethod.parse(n) for n in ROSTER]


# sample-size tuning ---------------------------------------------------------

def tuning_support(kind: str, n_i: int) -> tuple[float, float]:
    """Support of the uniform prior on the tuning parameter ``p_i``.

    For ``log`` the lower end is ``e / n_i`` so that ``f >= 1``.
    """
    if kind == "n":
        return 1.0 / n_i, 1.0
    if kind == "log":
        lo = math.e / n_i
        if lo >= 1.0:
            raise DomainError(f"log tuning needs n_i > e (got {n_i})")
        return lo, 1.0
    if kind == "pow":
        return 0.0, 1.0
    raise ValueError(f"unknown tuning kind {kind!r}")


def tuning_f(kind: str, n_i: float, p_i: float) -> float:
    if not 0.0 <= p_i <= 1.0:
        raise DomainError(f"tuning parameter {p_i} outside [0, 1]")
    if kind == "n":
        return n_i * p_i
    if kind == "log":
        if n_i * p_i <= 1.0 + 1e-12:
            raise DomainError("log tuning requires n_i * p_i > 1")
        return math.log(n_i * p_i)
    if kind == "pow":
        return n_i ** p_i
    raise ValueError(f"unknown tuning kind {kind!r}")


def tuning_f_vec(kind: str, n, p) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    p = np.asarray(p, dtype=float)
    if kind == "n":
        return n * p
    if kind == "log":
        return np.log(n * p)
    if kind == "pow":
        return n ** p
    raise ValueError(f"unknown tuning kind {kind!r}")


def lambda_star(sigma2, f_vals, n) -> np.ndarray:
    """Per-observation weights ``1 / (sigma_i^2 f(n_i))`` stacked over trials."""
    sigma2 = np.asarray(sigma2, dtype=float)
    f_vals = np.asarray(f_vals, dtype=float)
    if np.any(sigma2 <= 0) or np.any(f_vals <= 0):
        raise DomainError("sigma2 and f must be positive")
    return np.repeat(1.0 / (sigma2 * f_vals), np.asarray(n, dtype=int))


def gamma_prior_precision(k: int, g_k: float, weights, data) -> float:
    if not g_k > 0:
        raise DomainError("g_k must be positive")
    col = data.moderator_column(k)
    s = float(np.sum(np.asarray(weights) * col * col))
    if s == 0.0:
        raise DegeneratePriorError(
            f"moderator {data.moderator_names[k]!r} has an all-zero interaction column")
    return s / g_k


# hyperpriors on g -----------------------------------------------------------

def _log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def log_hyperprior_g(method: PriorMethod, g: float, b: float | None = None,
                     N: float | None = None) -> float | None:
    """Log density of ``g_k``; ``None`` for methods without a proper prior on g."""
    kind = method.g_kind
    if kind in ("none", "fixed"):
        return None
    if not g > 0:
        raise DomainError("g must be positive")
    if method.tag == "ZS" or method.tag == "CZS":
        if method.tag == "ZS" and N is None:
            raise DomainError("ZS needs the total sample size N")
        shape, scale = method.ig_params(N or 0)
        return (shape * math.log(scale) - math.lgamma(shape)
                - (shape + 1) * math.log(g) - scale / g)
    if method.tag == "HG":
        a = method.a
        return math.log((a - 2) / 2) - a / 2 * math.log1p(g)
    if method.tag == "HGN":
        if N is None:
            raise DomainError("HGN needs the total sample size N")
        a = method.a
        return math.log((a - 2) / (2 * N)) - a / 2 * math.log1p(g / N)
    level = method.shrink_level
    if level == "S2":
        return -2.0 * math.log1p(g)
    if b is None or not 0 < b <= 2:
        raise DomainError(f"{level} needs 0 < b <= 2 (got {b})")
    if level == "S1":
        return math.log(g) - (b + 2) * math.log1p(g) - _log_beta(2.0, b)
    return (b - 1) * math.log(g) - (b + 2) * math.log1p(g) - _log_beta(b, 2.0)


def g_density(method: PriorMethod, g, b: float | None = None, N: float | None = None):
    """Density of g.  For S1/S3 without ``b`` the uniform(0, 2) prior on b is integrated out."""
    g_arr = np.atleast_1d(np.asarray(g, dtype=float))
    if method.has_b and b is None:
        out = np.array([integrate.quad(lambda bb: 0.5 * math.exp(
            log_hyperprior_g(method, x, bb, N)), 0.0, 2.0, limit=200)[0] for x in g_arr])
    else:
        lp = [log_hyperprior_g(method, x, b, N) for x in g_arr]
        if lp and lp[0] is None:
            raise UnsupportedMethodError(f"{method.name} has no proper prior on g")
        out = np.exp(np.array(lp))
    return out if np.ndim(g) else float(out[0])


def shrinkage_density(method: PriorMethod, s, b: float | None = None, N: float | None = None):
    """Density of the shrinkage factor ``g / (1 + g)`` on (0, 1)."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    g = s_arr / (1.0 - s_arr)
    out = np.asarray(g_density(method, g, b, N)) / (1.0 - s_arr) ** 2
    return out if np.ndim(s) else float(out[0])


def sample_prior_shrinkage(method: PriorMethod, rng: np.random.Generator, size=None,
                           b: float | None = None, N: float | None = None):
    """Draw ``g / (1 + g)`` from the method's hyperprior (b ~ U(0, 2) unless given)."""
    if not method.proper_g:
        raise UnsupportedMethodError(f"{method.name} has no proper prior on g")
    if method.tag in ("ZS", "CZS"):
        if method.tag == "ZS" and N is None:
            raise DomainError("ZS needs N")
        shape, scale = method.ig_params(N or 0)
        g = scale / rng.gamma(shape, size=size)
        return g / (1.0 + g)
    if method.tag == "HG":
        return rng.beta(1.0, method.a / 2 - 1.0, size=size)
    if method.tag == "HGN":
        if N is None:
            raise DomainError("HGN needs N")
        z = rng.beta(1.0, method.a / 2 - 1.0, size=size)  # g / (g + N)
        g = N * z / (1.0 - z)
        return g / (1.0 + g)
    level = method.shrink_level
    if level == "S2":
        return rng.beta(1.0, 1.0, size=size)
    bb = rng.uniform(0.0, 2.0, size=size) if b is None else b
    if level == "S1":
        return rng.beta(2.0, bb, size=size)
    return rng.beta(bb, 2.0, size=size)


# non-g priors ---------------------------------------------------------------

_LOG_2PI = math.log(2 * math.pi)


def _normal_logpdf(x: float, var: float) -> float:
    return -0.5 * (_LOG_2PI + math.log(var) + x * x / var)


def log_prior_gamma_nonG(method: PriorMethod, gamma_k: float, lam: float | None = None,
                         tau: float | None = None, indicator: int | None = None,
                         eta: float | None = None) -> float:
    if method.tag == "Flat":
        return 0.0
    if method.tag == "HS":
        if not (lam and lam > 0 and tau and tau > 0):
            raise DomainError("horseshoe needs lambda > 0 and tau > 0")
        return _normal_logpdf(gamma_k, (lam * tau) ** 2)
    if method.tag == "SSVS":
        if indicator not in (0, 1):
            raise DomainError("SSVS indicator must be 0 or 1")
        if eta is None or not 0 < eta < method.ssvs_c:
            raise DomainError(f"SSVS eta must lie in (0, {method.ssvs_c})")
        var = eta * eta * (method.ssvs_h if indicator else 1.0)
        return _normal_logpdf(gamma_k, var)
    raise UnsupportedMethodError(f"{method.name} is a g-prior")

