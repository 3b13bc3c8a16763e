"""Metropolis-within-Gibbs sampler for the one-stage IPD meta-analysis model

    y_ij = mu + t_ij alpha + x_ij beta + x_ij^em gamma
           + u_mu,i + t_ij u_alpha,i + x_ij^em u_i + eps_ij,   eps_ij ~ N(0, sigma_i^2)

with flat priors on (mu, alpha, beta), p(sigma_i^2) propto 1/sigma_i^2,
half-Cauchy(0, 1) priors on the random-effect standard deviations and any of
the moderation priors in :mod:`cmgipd.priors` on gamma.

One sweep updates, in order:

1. all location parameters (fixed coefficients and every trial's random
   effects) as one Gaussian block;
2. each sigma_i^2 (inverse-gamma, with an independence Metropolis correction
   when the gamma prior is scaled by the noise variances);
3. the random-effect variances through the inverse-gamma auxiliary form of
   the half-Cauchy;
4. the prior-specific latents (g_k, b_k, p_i, horseshoe scales, SSVS
   indicators and slab scale).

All data enter through per-trial cross-product matrices, so the cost of a
sweep does not depend on the number of participants.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import lapack

from . import __version__
from .data import IpdDataset
from .priors import DegeneratePriorError, PriorMethod, tuning_f_vec, tuning_support
from .slice import slice_sample

# |log g| beyond this carries negligible prior mass and risks overflow
LOG_G_BOUND = 300.0


class SamplerError(RuntimeError):
    def __init__(self, message: str, iteration: int | None = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class ChainConfig:
    n_chains: int = 2
    n_iter: int = 20000
    burn_in: int = 10000
    thin: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    @property
    def n_keep(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin


@dataclass(frozen=True)
class ModelSpec:
    """What to fit.

    ``fixed_sigma2``, ``fixed_g`` and ``use_likelihood=False`` switch off
    parts of the sweep; they exist for oracle checks and prior-predictive runs.
    """

    prior: PriorMethod
    include_moderator_random_effects: bool = True
    include_trial_random_effects: bool = True
    moderators: tuple[str, ...] | None = None
    fixed_sigma2: tuple[float, ...] | None = None
    fixed_g: float | None = None
    use_likelihood: bool = True

    def apply(self, data: IpdDataset) -> IpdDataset:
        if self.moderators is None:
            return data
        return data.with_moderators(self.moderators)


@dataclass
class ParameterState:
    mu: float
    alpha: float
    beta: np.ndarray
    gamma: np.ndarray
    sigma2: np.ndarray
    u_mu: np.ndarray
    u_alpha: np.ndarray
    u: np.ndarray
    tau_mu2: float | None = None
    tau_alpha2: float | None = None
    tau2: np.ndarray | None = None
    latents: dict = field(default_factory=dict)


# names of stored blocks and their index labels
_BLOCK_ORDER = ("mu", "alpha", "beta", "gamma", "sigma2", "tau_mu2", "tau_alpha2", "tau2",
                "u_mu", "u_alpha", "u", "g", "b", "p", "lambda", "tau_hs", "I", "eta")


@dataclass
class PosteriorDraws:
    """Retained draws, one array of shape ``(chains, draws, ...)`` per block."""

    blocks: dict[str, np.ndarray]
    labels: dict[str, list]
    method: str
    config: ChainConfig
    provenance: dict = field(default_factory=dict)
    iterations: list | None = None

    @property
    def n_chains(self) -> int:
        return next(iter(self.blocks.values())).shape[0]

    @property
    def n_draws(self) -> int:
        return next(iter(self.blocks.values())).shape[1]

    def parameter_names(self) -> list[str]:
        names = []
        for blk in _BLOCK_ORDER:
            if blk in self.blocks:
                names.extend(_scalar_names(blk, self.labels.get(blk, [])))
        return names

    def get(self, name: str) -> np.ndarray:
        """``(chains, draws)`` array for one scalar parameter, e.g. ``gamma[x1]``."""
        blk, idx = self._locate(name)
        arr = self.blocks[blk]
        return arr if idx is None else arr[(slice(None), slice(None), *idx)]

    def pooled(self, name: str) -> np.ndarray:
        return self.get(name).reshape(-1)

    def _locate(self, name: str):
        if "[" not in name:
            if name not in self.blocks:
                raise KeyError(name)
            return name, None
        blk, inner = name[:-1].split("[", 1)
        if blk not in self.blocks:
            raise KeyError(name)
        labels = self.labels[blk]
        if blk == "u":
            trial, mod = inner.split(",", 1)
            return blk, (labels[0].index(trial), labels[1].index(mod))
        try:
            return blk, (labels.index(inner),)
        except ValueError:
            raise KeyError(name) from None

    def to_csv(self, path_or_buf) -> None:
        """Long format ``chain,iteration,parameter,value`` with a provenance header."""
        own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
        fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
        try:
            for key, val in self.provenance.items():
                fh.write(f"# {key}: {val}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chain", "iteration", "parameter", "value"])
            iters = self.iterations or list(range(self.n_draws))
            names = self.parameter_names()
            cols = {nm: self.get(nm) for nm in names}
            for c in range(self.n_chains):
                for s in range(self.n_draws):
                    it = iters[s]
                    for nm in names:
                        w.writerow([c, it, nm, repr(float(cols[nm][c, s]))])
        finally:
            if own:
                fh.close()

    def state_at(self, chain: int, draw: int) -> ParameterState:
        return _state_from(lambda blk: self.blocks[blk][chain, draw], self.blocks)

    def mean_state(self) -> ParameterState:
        return _state_from(lambda blk: self.blocks[blk].mean(axis=(0, 1)), self.blocks)


def _state_from(get, blocks) -> ParameterState:
    opt = {k: get(k) for k in ("tau_mu2", "tau_alpha2", "tau2") if k in blocks}
    lat = {k: get(k) for k in ("g", "b", "p", "lambda", "tau_hs", "I", "eta") if k in blocks}
    return ParameterState(
        mu=float(get("mu")), alpha=float(get("alpha")),
        beta=np.asarray(get("beta")), gamma=np.asarray(get("gamma")),
        sigma2=np.asarray(get("sigma2")),
        u_mu=np.asarray(get("u_mu")), u_alpha=np.asarray(get("u_alpha")),
        u=np.asarray(get("u")),
        tau_mu2=float(opt["tau_mu2"]) if "tau_mu2" in opt else None,
        tau_alpha2=float(opt["tau_alpha2"]) if "tau_alpha2" in opt else None,
        tau2=np.asarray(opt["tau2"]) if "tau2" in opt else None,
        latents=lat)


def _scalar_names(blk: str, labels) -> list[str]:
    if blk in ("mu", "alpha", "tau_mu2", "tau_alpha2", "tau_hs", "eta"):
        return [blk]
    if blk == "u":
        return [f"u[{t},{m}]" for t in labels[0] for m in labels[1]]
    return [f"{blk}[{lab}]" for lab in labels]


def _ig(rng, shape, rate):
    return rate / rng.gamma(shape)


def _softplus(x: float) -> float:
    return x + math.log1p(math.exp(-x)) if x > 0 else math.log1p(math.exp(x))


class GibbsChain:
    """State and update kernels for one chain."""

    def __init__(self, data: IpdDataset, spec: ModelSpec, rng: np.random.Generator,
                 jitter: bool = False, debug: bool = False):
        data = spec.apply(data)
        self.data = data
        self.spec = spec
        self.method = spec.prior
        self.rng = rng
        self.debug = debug
        self.counts: Counter = Counter()
        I, p, d = data.I, data.p, data.d
        self.I, self.p, self.d = I, p, d
        self.n = data.n.astype(float)
        self.N = data.N
        F = 2 + p + d
        self.F = F
        self.gamma_idx = np.arange(2 + p, F)
        ridx = []
        if spec.include_trial_random_effects:
            ridx += [0, 1]
        if spec.include_moderator_random_effects:
            ridx += list(self.gamma_idx)
        self.ridx = np.array(ridx, dtype=int)
        r = len(ridx)
        self.r = r
        self.K = F + I * r

        C = np.zeros((I, F, F))
        c = np.zeros((I, F))
        yy = np.zeros(I)
        mods = list(data.moderators)
        for i, tr in enumerate(data.trials):
            Fi = np.column_stack([np.ones(tr.n), tr.t, tr.X, tr.t[:, None] * tr.X[:, mods]])
            C[i] = Fi.T @ Fi
            c[i] = Fi.T @ tr.y
            yy[i] = tr.y @ tr.y
        self.C, self.c, self.yy = C, c, yy
        P = np.zeros((I, F, self.K))
        P[:, :, :F] = np.eye(F)
        for i in range(I):
            P[i, self.ridx, F + i * r + np.arange(r)] = 1.0
        self.E = np.einsum("ifk,ifg,igl->ikl", P, C, P)
        self.e = np.einsum("ifk,if->ik", P, c)
        self.S = C[:, self.gamma_idx, self.gamma_idx].reshape(I, d)
        if d and np.any(self.S.sum(axis=0) == 0.0):
            bad = [data.moderator_names[k] for k in np.flatnonzero(self.S.sum(axis=0) == 0)]
            raise DegeneratePriorError(f"all-zero interaction column for moderator(s) {bad}")
        self.diag_idx = np.arange(self.K) * (self.K + 1)
        self.rand_pos = np.arange(F, self.K)
        self._init_state(jitter)

    # initialisation ------------------------------------------------------
    def _init_state(self, jitter: bool):
        m, spec, rng = self.method, self.spec, self.rng
        XtX = self.C.sum(axis=0)
        Xty = self.c.sum(axis=0)
        ridge = 1e-8 * np.trace(XtX) / self.F
        theta = np.linalg.solve(XtX + ridge * np.eye(self.F), Xty)
        coef = np.zeros(self.K)
        coef[:self.F] = theta
        self.coef = coef
        ssr = self._ssr()
        if spec.fixed_sigma2 is not None:
            sigma2 = np.broadcast_to(np.asarray(spec.fixed_sigma2, dtype=float), (self.I,)).copy()
        else:
            floor = 1e-8 * max(float(np.var(self.data.y)), 1e-12)
            sigma2 = np.maximum(ssr / np.maximum(self.n - 1, 1.0), floor)
        self.sigma2 = sigma2
        if jitter:
            prec = np.einsum("i,ifg->fg", 1.0 / sigma2, self.C) + ridge * np.eye(self.F)
            se = np.sqrt(np.diag(np.linalg.inv(prec)))
            self.coef[:self.F] += 2.0 * se * rng.standard_normal(self.F)
        self.tau2 = np.ones(self.r)
        self.tau_aux = np.ones(self.r)
        d = self.d
        g0 = spec.fixed_g if spec.fixed_g is not None else m.fixed_g(self.N)
        self.g = np.full(d, 1.0 if g0 is None else float(g0))
        self.b = np.ones(d)
        kind = m.tuning_kind
        if kind is not None:
            self.p_lo = np.empty(self.I)
            self.p_hi = np.empty(self.I)
            p0 = np.empty(self.I)
            for i, ni in enumerate(self.n):
                lo, hi = tuning_support(kind, ni)
                self.p_lo[i], self.p_hi[i] = lo, hi
                p0[i] = 0.5 if lo < 0.5 < hi else 0.5 * (lo + hi)
            self.p_t = p0
            self.f = tuning_f_vec(kind, self.n, p0)
        else:
            self.p_t = None
            self.f = np.full(self.I, math.sqrt(self.N) if m.tag == "CUIP" else 1.0)
        self.lam2 = np.ones(d)
        self.nu = np.ones(d)
        self.hs_tau2 = 1.0
        self.hs_xi = 1.0
        self.ind = np.ones(d, dtype=int)
        self.eta = min(1.0, 0.5 * m.ssvs_c)

    # helpers ---------------------------------------------------------------
    @property
    def g_prior_scaled(self) -> bool:
        return self.method.g_kind != "none"

    def q(self) -> np.ndarray:
        """Prior precision of gamma_k per unit g: sum_i S_ik / (sigma_i^2 f_i)."""
        return (1.0 / (self.sigma2 * self.f)) @ self.S

    def gamma_precision(self) -> np.ndarray:
        tag = self.method.tag
        if tag == "Flat":
            return np.zeros(self.d)
        if tag == "HS":
            return 1.0 / (self.lam2 * self.hs_tau2)
        if tag == "SSVS":
            return 1.0 / (self.eta ** 2 * np.where(self.ind == 1, self.method.ssvs_h, 1.0))
        return self.q() / self.g

    def trial_coefs(self, coef=None) -> np.ndarray:
        """``I x F`` effective coefficients (fixed + that trial's random effects)."""
        coef = self.coef if coef is None else coef
        B = np.tile(coef[:self.F], (self.I, 1))
        if self.r:
            B[:, self.ridx] += coef[self.F:].reshape(self.I, self.r)
        return B

    def _ssr(self, coef=None) -> np.ndarray:
        B = self.trial_coefs(coef)
        ssr = (self.yy - 2.0 * np.einsum("if,if->i", B, self.c)
               + np.einsum("if,ifg,ig->i", B, self.C, B))
        return np.maximum(ssr, 0.0)

    @property
    def gamma(self) -> np.ndarray:
        return self.coef[self.gamma_idx]

    # kernels -------------------------------------------------------------
    def update_location(self, it: int | None = None):
        rng = self.rng
        prec_g = self.gamma_precision()
        if not self.spec.use_likelihood:
            if np.any(prec_g <= 0):
                raise SamplerError("prior-only sampling needs a proper prior on gamma", it)
            self.coef[self.gamma_idx] = rng.standard_normal(self.d) / np.sqrt(prec_g)
            self._count("location")
            return
        w = 1.0 / self.sigma2
        A = np.tensordot(w, self.E, axes=1)
        pd = np.zeros(self.K)
        pd[self.gamma_idx] = prec_g
        if self.r:
            pd[self.F:] = np.tile(1.0 / self.tau2, self.I)
        A.flat[self.diag_idx] += pd
        rhs = w @ self.e
        L = self._cholesky(A, it)
        v, info = lapack.dtrtrs(L, rhs, lower=1)
        z = rng.standard_normal(self.K)
        x, info2 = lapack.dtrtrs(L, v + z, lower=1, trans=1)
        if info or info2 or not np.all(np.isfinite(x)):
            raise SamplerError("non-finite location draw", it)
        self.coef = x
        self._count("location")

    def _cholesky(self, A, it):
        L, info = lapack.dpotrf(A, lower=1, clean=1)
        if info == 0:
            return L
        scale = float(np.mean(np.abs(np.diag(A)))) or 1.0
        for k in range(3):
            Aj = A.copy()
            Aj.flat[self.diag_idx] += scale * 10.0 ** (-10 + 3 * k)
            L, info = lapack.dpotrf(Aj, lower=1, clean=1)
            if info == 0:
                return L
        raise SamplerError("Cholesky factorisation of the location precision failed", it)

    def update_sigma2(self):
        if self.spec.fixed_sigma2 is not None or not self.spec.use_likelihood:
            return
        rng = self.rng
        shape = 0.5 * self.n
        rate = 0.5 * self._ssr()
        rate = np.maximum(rate, 1e-300)
        if not (self.g_prior_scaled and self.d):
            self.sigma2 = rate / rng.gamma(shape)
            self._count("sigma2")
            return
        gam2g = self.gamma ** 2 / self.g
        rate = rate + (self.S @ gam2g) / (2.0 * self.f)
        # p(gamma | sigma) keeps a factor prod_k q_k^(1/2) that is not conjugate
        inv = 1.0 / (self.sigma2 * self.f)
        q = inv @ self.S
        for i in range(self.I):
            prop = rate[i] / rng.gamma(shape[i])
            inv_new = 1.0 / (prop * self.f[i])
            q_new = q + (inv_new - inv[i]) * self.S[i]
            log_r = 0.5 * float(np.sum(np.log(q_new) - np.log(q)))
            if log_r >= 0 or math.log(rng.random()) < log_r:
                self.sigma2[i] = prop
                inv[i] = inv_new
                q = q_new
        self._count("sigma2")

    def update_tau(self):
        if not self.r or not self.spec.use_likelihood:
            return
        rng = self.rng
        U = self.coef[self.F:].reshape(self.I, self.r)
        ss = np.einsum("ij,ij->j", U, U)
        self.tau2 = (1.0 / self.tau_aux + 0.5 * ss) / rng.gamma(0.5 * (self.I + 1), size=self.r)
        self.tau_aux = (1.0 + 1.0 / self.tau2) / rng.gamma(1.0, size=self.r)
        self._count("tau")

    def update_latents(self):
        tag = self.method.tag
        if tag == "HS":
            self._update_hs()
        elif tag == "SSVS":
            self._update_ssvs()
        elif self.method.g_kind in ("ig", "slice") and self.spec.fixed_g is None:
            self._update_g()
            if self.method.has_b:
                self._update_b()
        if self.p_t is not None:
            self._update_p()

    def _update_g(self):
        m, rng = self.method, self.rng
        gam = self.gamma
        q = self.q()
        if m.g_kind == "ig":
            shape, scale = m.ig_params(self.N)
            self.g = (scale + 0.5 * gam ** 2 * q) / rng.gamma(shape + 0.5, size=self.d)
            self._count("g")
            return
        tag, level = m.tag, m.shrink_level
        a = m.a
        logN = math.log(self.N)
        for k in range(self.d):
            c = 0.5 * float(gam[k]) ** 2 * float(q[k])
            b = float(self.b[k])
            if tag == "HG":
                def lp(L, c=c):
                    return -0.5 * a * _softplus(L) + 0.5 * L - c * math.exp(-L)
            elif tag == "HGN":
                def lp(L, c=c):
                    return -0.5 * a * _softplus(L - logN) + 0.5 * L - c * math.exp(-L)
            elif level == "S1":
                def lp(L, c=c, b=b):
                    return 1.5 * L - (b + 2.0) * _softplus(L) - c * math.exp(-L)
            elif level == "S2":
                def lp(L, c=c):
                    return 0.5 * L - 2.0 * _softplus(L) - c * math.exp(-L)
            else:
                def lp(L, c=c, b=b):
                    return (b - 0.5) * L - (b + 2.0) * _softplus(L) - c * math.exp(-L)
            L0 = math.log(self.g[k])
            L1, _ = slice_sample(L0, lp, rng, width=2.0, lower=-LOG_G_BOUND, upper=LOG_G_BOUND)
            self.g[k] = math.exp(L1)
        self._count("g")

    def _update_b(self):
        rng = self.rng
        s3 = self.method.shrink_level == "S3"
        for k in range(self.d):
            L = math.log(self.g[k])
            sp = _softplus(L)

            def lp(b, L=L, sp=sp):
                if b <= 0.0:
                    return -math.inf
                # 1 / B(2, b) = 1 / B(b, 2) = b (b + 1)
                val = math.log(b) + math.log1p(b) - (b + 2.0) * sp
                return val + (b - 1.0) * L if s3 else val

            self.b[k], _ = slice_sample(float(self.b[k]), lp, rng, width=1.0,
                                        lower=0.0, upper=2.0)
        self._count("b")

    def _update_p(self):
        rng, kind = self.rng, self.method.tuning_kind
        d = self.d
        if d == 0:
            self.p_t = rng.uniform(self.p_lo, self.p_hi)
            self.f = tuning_f_vec(kind, self.n, self.p_t)
            self._count("p")
            return
        gam2g = 0.5 * self.gamma ** 2 / self.g
        inv = 1.0 / (self.sigma2 * self.f)
        q = inv @ self.S
        for i in range(self.I):
            base = q - inv[i] * self.S[i]
            Si = self.S[i] / self.sigma2[i]
            ni = self.n[i]

            def lp(pv):
                if kind == "n":
                    fv = ni * pv
                elif kind == "log":
                    fv = math.log(ni * pv) if ni * pv > 1.0 else 0.0
                else:
                    fv = ni ** pv
                if fv <= 0.0:
                    return -math.inf
                qq = base + Si / fv
                return float(0.5 * np.sum(np.log(qq)) - np.dot(gam2g, qq))

            lo, hi = self.p_lo[i], self.p_hi[i]
            pv, _ = slice_sample(float(self.p_t[i]), lp, rng, width=hi - lo, lower=lo, upper=hi)
            self.p_t[i] = pv
            self.f[i] = tuning_f_vec(kind, ni, pv)
            inv[i] = 1.0 / (self.sigma2[i] * self.f[i])
            q = base + inv[i] * self.S[i]
        self._count("p")

    def _update_hs(self):
        rng = self.rng
        gam2 = self.gamma ** 2
        self.lam2 = (1.0 / self.nu + 0.5 * gam2 / self.hs_tau2) / rng.gamma(1.0, size=self.d)
        self.hs_tau2 = _ig(rng, 0.5 * (self.d + 1),
                           1.0 / self.hs_xi + 0.5 * float(np.sum(gam2 / self.lam2)))
        self.nu = (1.0 + 1.0 / self.lam2) / rng.gamma(1.0, size=self.d)
        self.hs_xi = _ig(rng, 1.0, 1.0 + 1.0 / self.hs_tau2)
        self._count("hs")

    def _update_ssvs(self):
        rng, m = self.rng, self.method
        gam2 = self.gamma ** 2
        h = m.ssvs_h
        eta2 = self.eta ** 2
        log_odds = -0.5 * math.log(h) + 0.5 * gam2 / eta2 * (1.0 - 1.0 / h)
        prob = 1.0 / (1.0 + np.exp(-np.clip(log_odds, -700, 700)))
        self.ind = (rng.random(self.d) < prob).astype(int)
        scale = np.where(self.ind == 1, h, 1.0)
        ssq = float(np.sum(gam2 / scale))
        d = self.d

        def lp(eta):
            if eta <= 0.0:
                return -math.inf
            return -d * math.log(eta) - 0.5 * ssq / (eta * eta)

        self.eta, _ = slice_sample(self.eta, lp, rng, width=0.5 * m.ssvs_c,
                                   lower=0.0, upper=m.ssvs_c)
        self._count("ssvs")

    def sweep(self, it: int | None = None):
        self.update_location(it)
        self.update_sigma2()
        self.update_tau()
        self.update_latents()

    def _count(self, key):
        if self.debug:
            self.counts[key] += 1

    def declared_updates(self) -> set[str]:
        """Kernels the active configuration must run every sweep."""
        m, spec = self.method, self.spec
        out = {"location"}
        if spec.use_likelihood:
            if spec.fixed_sigma2 is None:
                out.add("sigma2")
            if self.r:
                out.add("tau")
        if m.tag == "HS":
            out.add("hs")
        elif m.tag == "SSVS":
            out.add("ssvs")
        elif m.g_kind in ("ig", "slice") and spec.fixed_g is None:
            out.add("g")
            if m.has_b:
                out.add("b")
        if m.tuning_kind is not None:
            out.add("p")
        return out

    # snapshot --------------------------------------------------------------
    def snapshot(self) -> dict[str, np.ndarray | float]:
        F, p, d = self.F, self.p, self.d
        coef = self.coef
        U = coef[F:].reshape(self.I, self.r) if self.r else np.zeros((self.I, 0))
        pos = {int(c): j for j, c in enumerate(self.ridx)}
        snap = {
            "mu": coef[0], "alpha": coef[1], "beta": coef[2:2 + p], "gamma": coef[2 + p:F],
            "sigma2": self.sigma2,
            "u_mu": U[:, pos[0]] if 0 in pos else np.zeros(self.I),
            "u_alpha": U[:, pos[1]] if 1 in pos else np.zeros(self.I),
            "u": (U[:, [pos[int(g)] for g in self.gamma_idx]]
                  if self.spec.include_moderator_random_effects else np.zeros((self.I, d))),
        }
        if self.spec.include_trial_random_effects:
            snap["tau_mu2"] = self.tau2[pos[0]]
            snap["tau_alpha2"] = self.tau2[pos[1]]
        if self.spec.include_moderator_random_effects:
            snap["tau2"] = self.tau2[[pos[int(g)] for g in self.gamma_idx]]
        tag = self.method.tag
        if self.method.g_kind != "none":
            snap["g"] = self.g
        if self.method.has_b:
            snap["b"] = self.b
        if self.p_t is not None:
            snap["p"] = self.p_t
        if tag == "HS":
            snap["lambda"] = np.sqrt(self.lam2)
            snap["tau_hs"] = math.sqrt(self.hs_tau2)
        if tag == "SSVS":
            snap["I"] = self.ind
            snap["eta"] = self.eta
        return snap


def _labels(data: IpdDataset, blocks) -> dict[str, list]:
    covs = list(data.covariates)
    mods = list(data.moderator_names)
    trials = list(data.trial_ids)
    lab = {"beta": covs, "gamma": mods, "sigma2": trials, "tau2": mods, "u_mu": trials,
           "u_alpha": trials, "u": [trials, mods], "g": mods, "b": mods, "p": trials,
           "lambda": mods, "I": mods}
    return {k: v for k, v in lab.items() if k in blocks}


def chain_seed(seed: int, chain: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & (2 ** 64 - 1), int(chain)])


def run_chain(data: IpdDataset, spec: ModelSpec, cfg: ChainConfig, chain: int,
              debug: bool = False) -> dict[str, np.ndarray]:
    rng = np.random.Generator(np.random.PCG64(chain_seed(cfg.seed, chain)))
    ch = GibbsChain(data, spec, rng, jitter=chain > 0, debug=debug)
    store: dict[str, np.ndarray] = {}
    s = 0
    for it in range(1, cfg.n_iter + 1):
        ch.sweep(it)
        if debug:
            missing = ch.declared_updates() - {k for k, v in ch.counts.items() if v >= it}
            if missing:
                raise SamplerError(f"kernels skipped: {sorted(missing)}", it)
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            snap = ch.snapshot()
            if not store:
                for k, v in snap.items():
                    store[k] = np.empty((cfg.n_keep, *np.shape(v)))
            for k, v in snap.items():
                store[k][s] = v
            s += 1
    return store


def _run_chain_args(args):
    return run_chain(*args)


def run_mcmc(data: IpdDataset, spec: ModelSpec, cfg: ChainConfig,
             workers: int = 1) -> PosteriorDraws:
    """Run ``cfg.n_chains`` independent chains and return the retained draws.

    Each chain owns an RNG stream derived from ``(cfg.seed, chain index)`` so
    the output does not depend on ``workers``.
    """
    if data.offsets is None:
        warnings.warn("covariates are not centered; call center_covariates first",
                      stacklevel=2)
    fitted = spec.apply(data)
    jobs = [(data, spec, cfg, c) for c in range(cfg.n_chains)]
    if workers > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(workers, cfg.n_chains)) as ex:
            chains = list(ex.map(_run_chain_args, jobs))
    else:
        chains = [run_chain(*j) for j in jobs]
    blocks = {k: np.stack([ch[k] for ch in chains]) for k in chains[0]}
    blocks = {k: blocks[k] for k in _BLOCK_ORDER if k in blocks}
    iters = [cfg.burn_in + cfg.thin * (s + 1) for s in range(cfg.n_keep)]
    prov = {
        "software": f"cmgipd {__version__}",
        "method": spec.prior.name,
        "seed": cfg.seed,
        "chains": cfg.n_chains, "n_iter": cfg.n_iter, "burn_in": cfg.burn_in,
        "thin": cfg.thin,
        "moderator_random_effects": spec.include_moderator_random_effects,
        "trial_random_effects": spec.include_trial_random_effects,
    }
    return PosteriorDraws(blocks, _labels(fitted, blocks), spec.prior.name, cfg, prov, iters)


def read_draws_csv(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Read a long-format draws file back into ``{parameter: (chains, draws)}``."""
    meta: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body = []
    for ln in lines:
        if ln.startswith("#"):
            key, _, val = ln[1:].partition(":")
            meta[key.strip()] = val.strip()
        else:
            body.append(ln)
    rows = list(csv.DictReader(io.StringIO("\n".join(body))))
    vals: dict[str, dict[tuple[int, int], float]] = {}
    for row in rows:
        vals.setdefault(row["parameter"], {})[(int(row["chain"]), int(row["iteration"]))] = \
            float(row["value"])
    out = {}
    for name, cells in vals.items():
        chains = sorted({c for c, _ in cells})
        its = sorted({i for _, i in cells})
        out[name] = np.array([[cells[(c, i)] for i in its] for c in chains])
    return out, meta


def with_seed(cfg: ChainConfig, seed: int) -> ChainConfig:
    return replace(cfg, seed=seed)
