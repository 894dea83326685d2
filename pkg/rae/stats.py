"""Non-parametric test battery, multiplicity corrections and effect sizes."""

import logging
import math
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats as sps

from . import config
from .errors import AllTies, ConstantInput, EmptyGroup

logger = logging.getLogger(__name__)

ALTERNATIVES = ("two-sided", "greater", "less")
R_BASES = ("total", "nonzero")


class TestResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    test: str
    statistic: float
    z: float | None = None
    p_value: float = Field(ge=0.0, le=1.0)
    n_effective: int = Field(ge=0)
    effect_r: float | None = None
    rank_biserial: float | None = None
    cles: float | None = None

    alternative: str = "two-sided"
    df: int | None = None
    p_raw: float | None = None
    p_exact: float | None = None
    p_approx: float | None = None
    exact: bool = False
    n_total: int | None = None
    r_basis: str | None = None
    r_total: float | None = None
    r_nonzero: float | None = None
    mean_ranks: list[float] | None = None
    direction: str | None = None
    extras: dict[str, float] = Field(default_factory=dict)


# ── Helpers ──

def mid_ranks(values) -> np.ndarray:
    return sps.rankdata(np.asarray(values, dtype=float), method="average")


def _tie_sum(values) -> float:
    """Sum of t^3 - t over tie groups."""
    _, counts = np.unique(np.asarray(values, dtype=float), return_counts=True)
    counts = counts.astype(float)
    return float(np.sum(counts ** 3 - counts))


def effect_size_r(z: float, n: int) -> float:
    if n <= 0:
        raise ValueError("effect size needs n > 0")
    return abs(z) / math.sqrt(n)


def bonferroni(p, m: int):
    m = max(int(m), 1)
    adjusted = np.minimum(np.asarray(p, dtype=float) * m, 1.0)
    return float(adjusted) if adjusted.ndim == 0 else adjusted


def chi2_tail(h: float, df: int) -> float:
    return float(sps.chi2.sf(h, df))


def _clip_p(p: float) -> float:
    return float(min(1.0, max(0.0, p)))


# ── Kruskal-Wallis ──

def kruskal_wallis(groups: Sequence[Sequence[float]]) -> TestResult:
    """H with tie correction; mean ranks per group in input order."""
    groups = [np.asarray(g, dtype=float).reshape(-1) for g in groups]
    if len(groups) < 2:
        raise EmptyGroup("Kruskal-Wallis needs at least two groups")
    for i, g in enumerate(groups):
        if g.size == 0:
            raise EmptyGroup(f"group {i} is empty")
    pooled = np.concatenate(groups)
    n = pooled.size
    ranks = mid_ranks(pooled)
    bounds = np.cumsum([0] + [g.size for g in groups])
    rank_sums = np.array([ranks[bounds[i]:bounds[i + 1]].sum() for i in range(len(groups))])
    sizes = np.array([g.size for g in groups], dtype=float)
    mean_ranks = rank_sums / sizes
    df = len(groups) - 1

    correction = 1.0 - _tie_sum(pooled) / (n ** 3 - n) if n > 1 else 0.0
    if correction <= 0.0:
        h, p = 0.0, 1.0
    else:
        h = (12.0 / (n * (n + 1)) * np.sum(rank_sums ** 2 / sizes) - 3.0 * (n + 1)) / correction
        h = max(float(h), 0.0)
        p = chi2_tail(h, df)
    return TestResult(
        test="kruskal_wallis",
        statistic=h,
        p_value=_clip_p(p),
        n_effective=n,
        df=df,
        mean_ranks=[float(r) for r in mean_ranks],
        extras={"epsilon_squared": h / (n - 1) if n > 1 else 0.0},
    )


# ── Mann-Whitney U ──

def mann_whitney_u(a, b, adjust: int = 1) -> TestResult:
    """Two-sided U test. statistic is U for ``a``; p is Bonferroni-multiplied by ``adjust``."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise EmptyGroup("Mann-Whitney needs two non-empty samples")
    na, nb = a.size, b.size
    n = na + nb
    pooled = np.concatenate((a, b))
    ranks = mid_ranks(pooled)
    u_a = float(ranks[:na].sum() - na * (na + 1) / 2.0)
    mean = na * nb / 2.0
    var = na * nb / 12.0 * ((n + 1) - _tie_sum(pooled) / (n * (n - 1))) if n > 1 else 0.0

    if var <= 0.0:
        z, p_raw = 0.0, 1.0
    else:
        diff = u_a - mean
        z = math.copysign(max(abs(diff) - 0.5, 0.0), diff) / math.sqrt(var)
        p_raw = _clip_p(2.0 * sps.norm.sf(abs(z)))
    if z == 0.0:
        z = 0.0
    cles = u_a / (na * nb)
    if cles > 0.5:
        direction = "a>b"
    elif cles < 0.5:
        direction = "a<b"
    else:
        direction = "a=b"
    return TestResult(
        test="mann_whitney_u",
        statistic=u_a,
        z=z,
        p_value=float(bonferroni(p_raw, adjust)),
        p_raw=p_raw,
        n_effective=n,
        n_total=n,
        effect_r=effect_size_r(z, n),
        r_basis="total",
        rank_biserial=2.0 * cles - 1.0,
        cles=cles,
        direction=direction,
        extras={"bonferroni_m": float(max(int(adjust), 1)), "u_b": na * nb - u_a},
    )


# ── Wilcoxon signed-rank ──

def _signed_rank_cdf(z: float, kurtosis: float) -> float:
    """Normal CDF with the Edgeworth kurtosis term for a symmetric rank sum."""
    return float(sps.norm.cdf(z) - sps.norm.pdf(z) * kurtosis / 24.0 * (z ** 3 - 3.0 * z))


def _exact_signed_rank_tail(ranks: np.ndarray, w_plus: float) -> tuple[float, float]:
    """P(W+ <= obs), P(W+ >= obs) under the sign-flip null, enumerating all 2^n' assignments."""
    n = ranks.size
    masks = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
    totals = masks @ ranks
    eps = 1e-9
    lower = float(np.mean(totals <= w_plus + eps))
    upper = float(np.mean(totals >= w_plus - eps))
    return lower, upper


def wilcoxon_signed_rank(x, y_or_mu=None, mode: str = "paired", *, alternative: str = "two-sided",
                         r_basis: str = "total", exact: bool | None = None) -> TestResult:
    """Signed-rank test on paired differences or against a constant.

    Zero differences are dropped (n' = non-zero count). W = min(W+, W-). The
    normal approximation uses tie-corrected variance, a 0.5 continuity
    correction and an Edgeworth kurtosis term; the exact sign-flip distribution is used when n' <= 12 unless
    ``exact`` says otherwise. ``r_basis`` picks the effect-size denominator:
    "total" (all pairs) or "nonzero" (n').
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"unknown alternative {alternative!r}")
    if r_basis not in R_BASES:
        raise ValueError(f"unknown r_basis {r_basis!r}")
    x = np.asarray(x, dtype=float).reshape(-1)
    if mode == "paired":
        y = np.asarray(y_or_mu, dtype=float).reshape(-1)
        if y.size != x.size:
            raise ValueError(f"paired samples differ in length ({x.size} vs {y.size})")
        d = x - y
    elif mode == "one-sample":
        mu = config.LIKERT_MIDPOINT if y_or_mu is None else float(y_or_mu)
        d = x - mu
    else:
        raise ValueError(f"unknown mode {mode!r}")

    n_total = d.size
    d = d[d != 0.0]
    n_prime = d.size
    if n_prime == 0:
        raise AllTies(f"all {n_total} differences are zero")

    ranks = mid_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)

    mean = n_prime * (n_prime + 1) / 4.0
    var = n_prime * (n_prime + 1) * (2 * n_prime + 1) / 24.0 - _tie_sum(np.abs(d)) / 48.0
    sd = math.sqrt(var) if var > 0.0 else 0.0
    if sd == 0.0:
        z = 0.0
        p_approx = 1.0
    else:
        # fourth cumulant of sum(r_i * sign_i) is -sum(r^4) / 8
        kurtosis = -2.0 * float(np.sum(ranks ** 4)) / float(np.sum(ranks ** 2)) ** 2
        z = min((w - mean + 0.5) / sd, 0.0)
        if alternative == "two-sided":
            p_approx = 2.0 * _signed_rank_cdf(z, kurtosis)
        elif alternative == "greater":
            p_approx = _signed_rank_cdf(-(w_plus - mean - 0.5) / sd, kurtosis)
        else:
            p_approx = _signed_rank_cdf((w_plus - mean + 0.5) / sd, kurtosis)
    p_approx = _clip_p(p_approx)

    use_exact = n_prime <= config.EXACT_WILCOXON_MAX_N if exact is None else bool(exact)
    p_exact = None
    if use_exact:
        lower, upper = _exact_signed_rank_tail(ranks, w_plus)
        if alternative == "two-sided":
            p_exact = _clip_p(2.0 * min(lower, upper))
        elif alternative == "greater":
            p_exact = _clip_p(upper)
        else:
            p_exact = _clip_p(lower)

    r_total = effect_size_r(z, n_total)
    r_nonzero = effect_size_r(z, n_prime)
    return TestResult(
        test=f"wilcoxon_{mode.replace('-', '_')}",
        statistic=w,
        z=z,
        p_value=p_exact if p_exact is not None else p_approx,
        p_exact=p_exact,
        p_approx=p_approx,
        exact=p_exact is not None,
        alternative=alternative,
        n_effective=n_prime,
        n_total=n_total,
        effect_r=r_total if r_basis == "total" else r_nonzero,
        r_basis=r_basis,
        r_total=r_total,
        r_nonzero=r_nonzero,
        rank_biserial=(w_plus - w_minus) / (w_plus + w_minus),
        cles=w_plus / (w_plus + w_minus),
        extras={"w_plus": w_plus, "w_minus": w_minus},
    )


# ── Spearman ──

def spearman(x, y) -> TestResult:
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.size != y.size:
        raise ValueError(f"samples differ in length ({x.size} vs {y.size})")
    n = x.size
    if n < 3:
        raise ValueError("Spearman needs at least three pairs")
    rx, ry = mid_ranks(x), mid_ranks(y)
    if np.ptp(rx) == 0.0 or np.ptp(ry) == 0.0:
        raise ConstantInput("an input has zero variance after ranking")
    rho = float(np.clip(np.corrcoef(rx, ry)[0, 1], -1.0, 1.0))
    if abs(rho) >= 1.0 - 1e-12:
        rho = math.copysign(1.0, rho)
        p = 0.0
        t = math.copysign(math.inf, rho)
    else:
        t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
        p = 2.0 * sps.t.sf(abs(t), n - 2)
    return TestResult(
        test="spearman",
        statistic=rho,
        p_value=_clip_p(p),
        n_effective=n,
        df=n - 2,
        extras={"t": t} if math.isfinite(t) else {},
    )


# ── Multiplicity ──

def benjamini_hochberg(p_values, q: float = config.FDR_Q) -> tuple[np.ndarray, np.ndarray]:
    """Step-up adjusted p-values and rejection flags (adjusted <= q), in input order."""
    p = np.asarray(p_values, dtype=float).reshape(-1)
    if p.size == 0:
        return np.zeros(0), np.zeros(0, dtype=bool)
    if np.any(~np.isfinite(p)) or np.any((p < 0.0) | (p > 1.0)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="mergesort")
    scaled = p[order] * m / np.arange(1, m + 1)
    stepped = np.minimum.accumulate(scaled[::-1])[::-1]
    adjusted = np.empty(m)
    adjusted[order] = np.minimum(stepped, 1.0)
    return adjusted, adjusted <= q
