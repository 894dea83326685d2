"""MCMC fitting of the hierarchical cumulative-logit model, plus diagnostics.

The sampler is Hamiltonian Monte Carlo with a jittered integration time,
dual-averaging step-size adaptation and a windowed diagonal mass matrix,
run over the unconstrained parameter vector
[c_1, log cutpoint increments, beta, alpha (or its standardized form), log sigma_alpha].
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import stats as sps
from scipy.fft import next_fast_len

from . import config
from .errors import DegenerateData, InsufficientDraws, NonFiniteLinearPredictor
from .ordinal import (
    K,
    OrdinalData,
    OrdinalModel,
    cutpoints_from_unconstrained,
    log_likelihood_and_grad,
    sample_ratings,
)

logger = logging.getLogger(__name__)

_DIVERGENCE_THRESHOLD = 1000.0
_MIN_DIAGNOSTIC_DRAWS = 4
_MIN_HDI_SAMPLES = 10


class McmcConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    chains: int = Field(default=config.MCMC_CHAINS, ge=2)
    warmup_draws: int = Field(default=config.MCMC_WARMUP, ge=1)
    post_warmup_draws: int = Field(default=config.MCMC_DRAWS, ge=_MIN_DIAGNOSTIC_DRAWS)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    target_accept: float = Field(default=config.MCMC_TARGET_ACCEPT, gt=0.0, lt=1.0)
    prior_scale: float = Field(default=config.PRIOR_SCALE, gt=0.0)
    path_length: float = Field(default=2.0, gt=0.0)
    max_leapfrog: int = Field(default=256, ge=1)
    parameterization: str = "centered"
    workers: int = Field(default=1, ge=1)
    hdi_mass: float = Field(default=config.HDI_MASS, gt=0.0, lt=1.0)

    @field_validator("parameterization")
    @classmethod
    def _known_parameterization(cls, value):
        if value not in ("centered", "noncentered"):
            raise ValueError(f"unknown parameterization {value!r}")
        return value

    @classmethod
    def from_settings(cls, settings: config.Settings, seed: int, **overrides) -> "McmcConfig":
        return cls(**{
            "chains": settings.mcmc_chains,
            "warmup_draws": settings.mcmc_warmup,
            "post_warmup_draws": settings.mcmc_draws,
            "target_accept": settings.mcmc_target_accept,
            "prior_scale": settings.prior_scale,
            "hdi_mass": settings.hdi_mass,
            "seed": seed,
            **overrides,
        })


class ParamSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean: float
    sd: float
    hdi_low: float
    hdi_high: float


# ── Posterior ──

class _Posterior:
    """Log density and gradient of the hierarchical model on the unconstrained scale."""

    def __init__(self, data: OrdinalData, prior_scale: float, parameterization: str):
        self.data = data
        self.prior_var = prior_scale ** 2
        self.cut_var = config.CUTPOINT_PRIOR_SCALE ** 2
        self.centered = parameterization == "centered"
        self.n_cut = K - 1
        self.p = data.n_features
        self.G = data.n_groups
        self.dim = self.n_cut + self.p + (self.G + 1 if self.G else 0)

    def split(self, q: np.ndarray):
        n_cut, p, G = self.n_cut, self.p, self.G
        theta_c = q[:n_cut]
        beta = q[n_cut:n_cut + p]
        if not G:
            return theta_c, beta, np.zeros(0), np.zeros(0), 1.0
        raw = q[n_cut + p:n_cut + p + G]
        sigma = math.exp(q[-1])
        alpha = raw if self.centered else sigma * raw
        return theta_c, beta, raw, alpha, sigma

    def log_density(self, q: np.ndarray) -> tuple[float, np.ndarray]:
        theta_c, beta, raw, alpha, sigma = self.split(q)
        if not np.isfinite(sigma) or sigma <= 0.0:
            return -math.inf, np.zeros_like(q)
        try:
            ll, g = log_likelihood_and_grad(np.concatenate((theta_c, beta, alpha)), self.data)
        except (NonFiniteLinearPredictor, FloatingPointError, OverflowError):
            return -math.inf, np.zeros_like(q)
        if not math.isfinite(ll):
            return -math.inf, np.zeros_like(q)

        n_cut, p, G = self.n_cut, self.p, self.G
        grad = np.zeros_like(q)
        lp = ll
        lp -= 0.5 * float(theta_c @ theta_c) / self.cut_var
        grad[:n_cut] = g[:n_cut] - theta_c / self.cut_var
        lp -= 0.5 * float(beta @ beta) / self.prior_var
        grad[n_cut:n_cut + p] = g[n_cut:n_cut + p] - beta / self.prior_var
        if G:
            g_alpha = g[n_cut + p:]
            log_sigma = q[-1]
            # half-normal(0, 1) on sigma with the log-scale Jacobian
            lp += -0.5 * sigma * sigma + log_sigma
            d_log_sigma = 1.0 - sigma * sigma
            if self.centered:
                lp += -0.5 * float(alpha @ alpha) / (sigma * sigma) - G * log_sigma
                grad[n_cut + p:n_cut + p + G] = g_alpha - alpha / (sigma * sigma)
                d_log_sigma += float(alpha @ alpha) / (sigma * sigma) - G
            else:
                lp += -0.5 * float(raw @ raw)
                grad[n_cut + p:n_cut + p + G] = sigma * g_alpha - raw
                d_log_sigma += float(g_alpha @ alpha)
            grad[-1] = d_log_sigma
        if not (math.isfinite(lp) and np.all(np.isfinite(grad))):
            return -math.inf, np.zeros_like(q)
        return lp, grad

    def constrained(self, q: np.ndarray) -> np.ndarray:
        """[cutpoints, beta, alpha, sigma_alpha] for one draw."""
        theta_c, beta, _, alpha, sigma = self.split(q)
        parts = [cutpoints_from_unconstrained(theta_c), beta, alpha]
        if self.G:
            parts.append([sigma])
        return np.concatenate(parts)


# ── Step size ──

class _DualAveraging:
    gamma = 0.05
    t0 = 10.0
    kappa = 0.75

    def __init__(self, step_size: float, target: float):
        self.mu = math.log(10.0 * step_size)
        self.target = target
        self.h_bar = 0.0
        self.log_step_bar = 0.0
        self.t = 0

    def update(self, accept_prob: float) -> float:
        self.t += 1
        weight = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - weight) * self.h_bar + weight * (self.target - accept_prob)
        log_step = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        decay = self.t ** (-self.kappa)
        self.log_step_bar = decay * log_step + (1.0 - decay) * self.log_step_bar
        return math.exp(log_step)

    def final(self) -> float:
        return math.exp(self.log_step_bar)


def _leapfrog(posterior, q, p, grad, step, inv_metric):
    p = p + 0.5 * step * grad
    q = q + step * inv_metric * p
    lp, grad = posterior.log_density(q)
    p = p + 0.5 * step * grad
    return q, p, lp, grad


def _find_reasonable_step(posterior, q, lp, grad, inv_metric, rng) -> float:
    step = 1.0
    p = rng.standard_normal(q.size) / np.sqrt(inv_metric)
    h0 = -lp + 0.5 * float(p @ (inv_metric * p))

    def log_ratio(eps):
        _, p1, lp1, _ = _leapfrog(posterior, q, p, grad, eps, inv_metric)
        h1 = -lp1 + 0.5 * float(p1 @ (inv_metric * p1))
        delta = h0 - h1
        return delta if math.isfinite(delta) else -math.inf

    direction = 1.0 if log_ratio(step) > math.log(0.5) else -1.0
    for _ in range(100):
        if direction * log_ratio(step) <= -direction * math.log(2.0):
            break
        step *= 2.0 ** direction
        if not 1e-8 <= step <= 1e3:
            break
    return float(min(max(step, 1e-8), 1e3))


def _adaptation_windows(warmup: int) -> list[tuple[int, int]]:
    """Doubling slow windows between a 15% initial and a 15% terminal buffer."""
    if warmup < 20:
        return []
    start = int(0.15 * warmup)
    stop = int(0.85 * warmup)
    size = 25 if stop - start >= 100 else stop - start
    windows = []
    while start < stop:
        end = start + size
        if end + 2 * size > stop:
            end = stop
        windows.append((start, end))
        start = end
        size *= 2
    return windows


@dataclass
class _ChainOutput:
    draws: np.ndarray
    divergences: int
    accept_rate: float
    step_size: float


def _initial_point(posterior, rng) -> tuple[np.ndarray, float, np.ndarray]:
    for _ in range(100):
        q = rng.uniform(-2.0, 2.0, posterior.dim)
        lp, grad = posterior.log_density(q)
        if math.isfinite(lp):
            return q, lp, grad
    raise DegenerateData("could not find a finite starting point")


def _run_chain(posterior: _Posterior, cfg: McmcConfig, chain: int) -> _ChainOutput:
    rng = np.random.default_rng([cfg.seed, chain])
    q, lp, grad = _initial_point(posterior, rng)
    inv_metric = np.ones(posterior.dim)
    step = _find_reasonable_step(posterior, q, lp, grad, inv_metric, rng)
    adapter = _DualAveraging(step, cfg.target_accept)

    windows = _adaptation_windows(cfg.warmup_draws)
    window_ends = {end: start for start, end in windows}
    window_samples: list[np.ndarray] = []
    in_window = set()
    for start, end in windows:
        in_window.update(range(start, end))

    total = cfg.warmup_draws + cfg.post_warmup_draws
    kept = np.empty((cfg.post_warmup_draws, posterior.dim))
    divergences = 0
    accept_sum = 0.0

    for it in range(total):
        warmup = it < cfg.warmup_draws
        p = rng.standard_normal(q.size) / np.sqrt(inv_metric)
        h0 = -lp + 0.5 * float(p @ (inv_metric * p))
        n_steps = int(min(max(math.ceil(rng.uniform(0.5, 1.5) * cfg.path_length / step), 1), cfg.max_leapfrog))

        q_new, p_new, lp_new, grad_new = q, p, lp, grad
        divergent = False
        for _ in range(n_steps):
            q_new, p_new, lp_new, grad_new = _leapfrog(posterior, q_new, p_new, grad_new, step, inv_metric)
            energy_error = -lp_new + 0.5 * float(p_new @ (inv_metric * p_new)) - h0
            if not math.isfinite(energy_error) or energy_error > _DIVERGENCE_THRESHOLD:
                divergent = True
                break

        if divergent:
            accept_prob = 0.0
        else:
            accept_prob = min(1.0, math.exp(-energy_error)) if energy_error > -700.0 else 1.0
        if rng.random() < accept_prob:
            q, lp, grad = q_new, lp_new, grad_new

        if warmup:
            step = adapter.update(accept_prob)
            if it in in_window:
                window_samples.append(q.copy())
            if it + 1 in window_ends:
                samples = np.asarray(window_samples)
                n = samples.shape[0]
                if n > 1:
                    var = samples.var(axis=0, ddof=1)
                    inv_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                window_samples = []
                step = _find_reasonable_step(posterior, q, lp, grad, inv_metric, rng)
                adapter = _DualAveraging(step, cfg.target_accept)
            if it + 1 == cfg.warmup_draws:
                step = adapter.final()
        else:
            kept[it - cfg.warmup_draws] = posterior.constrained(q)
            divergences += int(divergent)
            accept_sum += accept_prob

    return _ChainOutput(
        draws=kept,
        divergences=divergences,
        accept_rate=accept_sum / cfg.post_warmup_draws,
        step_size=step,
    )


# ── Result ──

@dataclass(eq=False)
class FitResult:
    draws: dict[str, np.ndarray]
    summaries: dict[str, ParamSummary]
    rhat: dict[str, float]
    ess_bulk: dict[str, float]
    divergence_count: int
    config: McmcConfig
    feature_names: tuple[str, ...] = ()
    group_labels: tuple[str, ...] = ()
    n_obs: int = 0
    accept_rate: list[float] = field(default_factory=list)
    step_size: list[float] = field(default_factory=list)

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(self.draws)

    @property
    def n_chains(self) -> int:
        return next(iter(self.draws.values())).shape[0]

    @property
    def n_draws(self) -> int:
        return next(iter(self.draws.values())).shape[1]

    @property
    def max_rhat(self) -> float:
        return max(self.rhat.values())

    @property
    def min_ess(self) -> float:
        return min(self.ess_bulk.values())

    def model_at(self, chain: int, draw: int) -> OrdinalModel:
        def pick(name):
            return float(self.draws[name][chain, draw])
        return self._model(pick)

    def posterior_mean_model(self) -> OrdinalModel:
        return self._model(lambda name: float(self.draws[name].mean()))

    def _model(self, pick) -> OrdinalModel:
        cut = np.array([pick(f"cutpoint[{k}]") for k in range(1, K)])
        # means of ordered draws stay ordered; a single draw is ordered by construction
        return OrdinalModel(
            cutpoints=cut,
            beta=np.array([pick(f"beta[{n}]") for n in self.feature_names]),
            alpha=np.array([pick(f"alpha[{g}]") for g in self.group_labels]),
            sigma_alpha=pick("sigma_alpha") if self.group_labels else 1.0,
            feature_names=self.feature_names,
            group_labels=self.group_labels,
        )

    def to_rows(self) -> pd.DataFrame:
        """Long-format draws: parameter, chain, iteration, value."""
        frames = []
        for name, arr in self.draws.items():
            chains, iters = np.meshgrid(np.arange(arr.shape[0]), np.arange(arr.shape[1]), indexing="ij")
            frames.append(pd.DataFrame({
                "parameter": name,
                "chain": chains.ravel(),
                "iteration": iters.ravel(),
                "value": arr.ravel(),
            }))
        return pd.concat(frames, ignore_index=True)


def _param_names(data: OrdinalData) -> list[str]:
    names = [f"cutpoint[{k}]" for k in range(1, K)]
    names += [f"beta[{n}]" for n in data.feature_names]
    if data.n_groups:
        names += [f"alpha[{g}]" for g in data.group_labels]
        names.append("sigma_alpha")
    return names


def fit(data, cfg: McmcConfig | None = None, *, feature_names=(), group_labels=()) -> FitResult:
    """Sample the posterior of the hierarchical cumulative-logit model.

    Priors: beta ~ N(0, prior_scale), alpha_j ~ N(0, sigma_alpha),
    sigma_alpha ~ half-N(0, 1), unconstrained cutpoints ~ N(0, 5).
    Non-convergence is reported through rhat/ess, never raised.
    """
    cfg = cfg or McmcConfig()
    if not isinstance(data, OrdinalData):
        data = OrdinalData.from_pairs(data, feature_names=feature_names, group_labels=group_labels)
    if len(data) == 0:
        raise DegenerateData("no observations to fit")
    observed = np.unique(data.y)
    if observed.size < 2:
        raise DegenerateData(f"only rating category {int(observed[0])} observed")

    posterior = _Posterior(data, cfg.prior_scale, cfg.parameterization)
    logger.info("FIT_START n=%d features=%d groups=%d chains=%d seed=%d",
                len(data), data.n_features, data.n_groups, cfg.chains, cfg.seed)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outputs = list(pool.map(lambda c: _run_chain(posterior, cfg, c), range(cfg.chains)))
    else:
        outputs = [_run_chain(posterior, cfg, c) for c in range(cfg.chains)]

    names = _param_names(data)
    stacked = np.stack([o.draws for o in outputs])
    draws = {name: np.ascontiguousarray(stacked[:, :, i]) for i, name in enumerate(names)}
    summaries, rhats, esses = {}, {}, {}
    for name, arr in draws.items():
        flat = arr.ravel()
        low, high = hdi(flat, cfg.hdi_mass)
        summaries[name] = ParamSummary(mean=float(flat.mean()), sd=float(flat.std(ddof=1)),
                                       hdi_low=low, hdi_high=high)
        rhats[name] = split_rhat(arr)
        esses[name] = ess_bulk(arr)

    result = FitResult(
        draws=draws,
        summaries=summaries,
        rhat=rhats,
        ess_bulk=esses,
        divergence_count=sum(o.divergences for o in outputs),
        config=cfg,
        feature_names=data.feature_names,
        group_labels=data.group_labels if data.n_groups else (),
        n_obs=len(data),
        accept_rate=[o.accept_rate for o in outputs],
        step_size=[o.step_size for o in outputs],
    )
    logger.info("FIT_DONE n=%d rhat_max=%.4f ess_min=%.0f divergences=%d",
                len(data), result.max_rhat, result.min_ess, result.divergence_count)
    return result


# ── Diagnostics ──

def _as_chains(draws) -> np.ndarray:
    arr = np.asarray(draws, dtype=float)
    if arr.ndim != 2:
        raise InsufficientDraws(f"expected a chain x iteration matrix, got shape {arr.shape}")
    if arr.shape[0] < 2 or arr.shape[1] < _MIN_DIAGNOSTIC_DRAWS:
        raise InsufficientDraws(f"need >= 2 chains of >= {_MIN_DIAGNOSTIC_DRAWS} draws, got {arr.shape}")
    return arr


def _split_chains(arr: np.ndarray) -> np.ndarray:
    half = arr.shape[1] // 2
    return np.vstack((arr[:, :half], arr[:, arr.shape[1] - half:]))


def split_rhat(draws) -> float:
    """Split-chain potential scale reduction sqrt((W(n-1)/n + B/n) / W)."""
    chains = _split_chains(_as_chains(draws))
    n = chains.shape[1]
    within = float(np.mean(chains.var(axis=1, ddof=1)))
    between = n * float(np.var(chains.mean(axis=1), ddof=1))
    if within <= 0.0:
        return 1.0 if between <= 0.0 else math.inf
    var_plus = within * (n - 1) / n + between / n
    return math.sqrt(var_plus / within)


def rank_normalize(draws) -> np.ndarray:
    """Normal scores of the pooled fractional ranks, keeping the input shape."""
    arr = np.asarray(draws, dtype=float)
    ranks = sps.rankdata(arr, method="average").reshape(arr.shape)
    return sps.norm.ppf((ranks - 0.375) / (arr.size + 0.25))


def _autocov(arr: np.ndarray) -> np.ndarray:
    n = arr.shape[1]
    m = next_fast_len(2 * n)
    centered = arr - arr.mean(axis=1, keepdims=True)
    spec = np.fft.rfft(centered, n=m, axis=1)
    acov = np.fft.irfft(spec * np.conjugate(spec), n=m, axis=1)[:, :n]
    return acov / n


def _ess(chains: np.ndarray) -> float:
    n_chain, n_draw = chains.shape
    acov = _autocov(chains)
    mean_var = float(np.mean(acov[:, 0])) * n_draw / (n_draw - 1.0)
    var_plus = mean_var * (n_draw - 1.0) / n_draw
    if n_chain > 1:
        var_plus += float(np.var(chains.mean(axis=1), ddof=1))

    rho = np.zeros(n_draw)
    rho_even = 1.0
    rho[0] = rho_even
    rho_odd = 1.0 - (mean_var - float(np.mean(acov[:, 1]))) / var_plus
    rho[1] = rho_odd

    # initial positive sequence
    t = 1
    while t < n_draw - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - float(np.mean(acov[:, t + 1]))) / var_plus
        rho_odd = 1.0 - (mean_var - float(np.mean(acov[:, t + 2]))) / var_plus
        if rho_even + rho_odd >= 0.0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0.0:
        rho[max_t + 1] = rho_even

    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2

    total = n_chain * n_draw
    tau = -1.0 + 2.0 * float(np.sum(rho[:max_t + 1])) + float(np.sum(rho[max_t + 1:max_t + 2]))
    tau = max(tau, 1.0 / math.log10(total))
    return total / tau


def ess_bulk(draws) -> float:
    """Bulk effective sample size of rank-normalized split chains. A constant input gives 0.0."""
    arr = _as_chains(draws)
    if np.ptp(arr) < np.finfo(float).resolution:
        return 0.0
    return _ess(rank_normalize(_split_chains(arr)))


def hdi(samples, mass: float = config.HDI_MASS) -> tuple[float, float]:
    """Narrowest window holding ceil(mass * n) sorted samples; leftmost on ties."""
    if not 0.0 < mass < 1.0:
        raise ValueError(f"mass must lie in (0, 1), got {mass}")
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    n = x.size
    if n < _MIN_HDI_SAMPLES:
        raise InsufficientDraws(f"HDI needs >= {_MIN_HDI_SAMPLES} samples, got {n}")
    k = max(1, math.ceil(mass * n - 1e-9))
    widths = x[k - 1:] - x[:n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


# ── Posterior predictive check ──

class PpcResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    observed: list[float]
    mean: list[float] = Field(default_factory=list)
    low: list[float] = Field(default_factory=list)
    high: list[float] = Field(default_factory=list)
    n_draws: int = 0
    band_mass: float = config.HDI_MASS

    @property
    def inside(self) -> list[bool]:
        if not self.n_draws:
            return []
        return [lo - 1e-12 <= o <= hi + 1e-12 for o, lo, hi in zip(self.observed, self.low, self.high)]

    @property
    def all_inside(self) -> bool:
        return bool(self.n_draws) and all(self.inside)


def _frequencies(ratings: np.ndarray) -> np.ndarray:
    counts = np.bincount(np.asarray(ratings, dtype=int) - 1, minlength=K)[:K]
    return counts / max(int(ratings.size), 1)


def posterior_predictive_check(fit_result: FitResult, data: OrdinalData, rng: np.random.Generator,
                               n_draws: int = config.PPC_DRAWS, band_mass: float = config.HDI_MASS) -> PpcResult:
    """Replicate the dataset under S thinned posterior draws and band the category frequencies."""
    observed = _frequencies(data.y)
    total = fit_result.n_chains * fit_result.n_draws
    n_draws = int(min(max(n_draws, 0), total))
    if n_draws == 0:
        return PpcResult(observed=observed.tolist(), band_mass=band_mass)
    picks = np.linspace(0, total - 1, n_draws).round().astype(int)
    replicated = np.empty((n_draws, K))
    for s, flat in enumerate(picks):
        chain, draw = divmod(int(flat), fit_result.n_draws)
        model = fit_result.model_at(chain, draw)
        replicated[s] = _frequencies(sample_ratings(model, data, rng))
    tail = (1.0 - band_mass) / 2.0
    return PpcResult(
        observed=observed.tolist(),
        mean=replicated.mean(axis=0).tolist(),
        low=np.quantile(replicated, tail, axis=0).tolist(),
        high=np.quantile(replicated, 1.0 - tail, axis=0).tolist(),
        n_draws=n_draws,
        band_mass=band_mass,
    )
