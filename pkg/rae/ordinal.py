"""Cumulative-logit (proportional-odds) ordinal model with group random intercepts.

P(Y <= k | x) = logistic(c_k - eta), eta = alpha[group] + x . beta

Cutpoints are carried internally as (c_1, log increments) so that any real
parameter vector maps to a strictly increasing set.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from . import config
from .core import AgeGroup, Gender
from .errors import InvalidRating, NonFiniteLinearPredictor

logger = logging.getLogger(__name__)

K = config.N_CATEGORIES
_TINY = np.finfo(float).tiny


@dataclass(frozen=True, eq=False)
class OrdinalModel:
    cutpoints: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma_alpha: float = 1.0
    feature_names: tuple[str, ...] = ()
    group_labels: tuple[str, ...] = ()

    def __post_init__(self):
        cut = np.asarray(self.cutpoints, dtype=float).reshape(-1)
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        if cut.size < 1:
            raise ValueError("at least one cutpoint is required")
        if not np.all(np.isfinite(cut)) or np.any(np.diff(cut) <= 0.0):
            raise ValueError(f"cutpoints must be finite and strictly increasing, got {cut.tolist()}")
        if not (np.isfinite(self.sigma_alpha) and self.sigma_alpha > 0.0):
            raise ValueError(f"sigma_alpha must be positive, got {self.sigma_alpha}")
        names = tuple(self.feature_names) or tuple(f"x{i}" for i in range(beta.size))
        if len(names) != beta.size:
            raise ValueError(f"{beta.size} coefficients but {len(names)} feature names")
        labels = tuple(self.group_labels) or tuple(str(j) for j in range(alpha.size))
        if len(labels) != alpha.size:
            raise ValueError(f"{alpha.size} intercepts but {len(labels)} group labels")
        for name, arr in (("cutpoints", cut), ("beta", beta), ("alpha", alpha)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "sigma_alpha", float(self.sigma_alpha))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "group_labels", labels)

    @property
    def n_categories(self) -> int:
        return self.cutpoints.size + 1

    @property
    def n_groups(self) -> int:
        return self.alpha.size

    def coef(self, name: str) -> float:
        return float(self.beta[self.feature_names.index(name)])

    def linear_predictor(self, x: "Covariates") -> float:
        values = np.asarray(x.values, dtype=float)
        if values.size != self.beta.size:
            raise ValueError(f"expected {self.beta.size} covariates, got {values.size}")
        eta = float(values @ self.beta) if values.size else 0.0
        if x.group is not None:
            if not 0 <= x.group < self.alpha.size:
                raise ValueError(f"group index {x.group} outside alpha table of size {self.alpha.size}")
            eta += float(self.alpha[x.group])
        if not np.isfinite(eta):
            raise NonFiniteLinearPredictor(f"eta={eta}")
        return eta

    def to_dict(self) -> dict:
        return {
            "cutpoints": [float(c) for c in self.cutpoints],
            "beta": {n: float(b) for n, b in zip(self.feature_names, self.beta)},
            "alpha": {g: float(a) for g, a in zip(self.group_labels, self.alpha)},
            "sigma_alpha": self.sigma_alpha,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OrdinalModel":
        beta = data.get("beta", {})
        alpha = data.get("alpha", {})
        return cls(
            cutpoints=np.asarray(data["cutpoints"], dtype=float),
            beta=np.asarray(list(beta.values()), dtype=float),
            alpha=np.asarray(list(alpha.values()), dtype=float),
            sigma_alpha=float(data.get("sigma_alpha", 1.0)),
            feature_names=tuple(beta.keys()),
            group_labels=tuple(alpha.keys()),
        )


@dataclass(frozen=True)
class Covariates:
    """One design row; ``group`` indexes the model's intercept table (None = no intercept)."""

    values: tuple[float, ...] = ()
    group: int | None = None


@dataclass(frozen=True, eq=False)
class OrdinalData:
    """Batched design: X (n x p), ratings y in 1..K, group index per row."""

    X: np.ndarray
    y: np.ndarray
    group: np.ndarray
    n_groups: int = 0
    feature_names: tuple[str, ...] = ()
    group_labels: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=int).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            X = X.reshape(y.size, -1) if X.size else np.zeros((y.size, len(self.feature_names)))
        if X.shape[0] != y.size:
            raise ValueError(f"design has {X.shape[0]} rows for {y.size} ratings")
        group = np.asarray(self.group, dtype=int).reshape(-1) if np.size(self.group) else np.zeros(y.size, dtype=int)
        if group.size != y.size:
            raise ValueError("group index length differs from ratings")
        if y.size and (y.min() < 1 or y.max() > K):
            bad = int(np.flatnonzero((y < 1) | (y > K))[0])
            raise InvalidRating(f"rating {int(y[bad])} at row {bad} outside 1..{K}")
        if self.n_groups and y.size and (group.min() < 0 or group.max() >= self.n_groups):
            raise ValueError(f"group index outside 0..{self.n_groups - 1}")
        names = tuple(self.feature_names) or tuple(f"x{i}" for i in range(X.shape[1]))
        labels = tuple(self.group_labels) or tuple(str(j) for j in range(self.n_groups))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "group", group)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "group_labels", labels)

    def __len__(self) -> int:
        return int(self.y.size)

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Covariates, int]], *, n_groups: int | None = None,
                   feature_names: Sequence[str] = (), group_labels: Sequence[str] = ()) -> "OrdinalData":
        pairs = list(pairs)
        rows = [np.asarray(x.values, dtype=float) for x, _ in pairs]
        width = rows[0].size if rows else len(feature_names)
        X = np.vstack(rows) if rows else np.zeros((0, width))
        y = np.asarray([int(r) for _, r in pairs], dtype=int)
        groups = [x.group for x, _ in pairs]
        if n_groups is None:
            n_groups = (max(g for g in groups if g is not None) + 1) if any(g is not None for g in groups) else 0
        group = np.asarray([0 if g is None else g for g in groups], dtype=int)
        return cls(X=X, y=y, group=group, n_groups=n_groups,
                   feature_names=tuple(feature_names), group_labels=tuple(group_labels))


# ── Probabilities ──

def _bounds(cutpoints: np.ndarray, eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    edges = np.concatenate(([-np.inf], cutpoints, [np.inf]))
    lower = edges[None, :-1] - eta[:, None]
    upper = edges[None, 1:] - eta[:, None]
    return lower, upper


def _interval_probs(lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    # Upper-tail form where both bounds sit right of zero, to keep precision.
    with np.errstate(invalid="ignore"):
        p = np.where(lower > 0.0, expit(-lower) - expit(-upper), expit(upper) - expit(lower))
    return np.clip(p, 0.0, 1.0)


def category_probs_matrix(cutpoints: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Row-wise category probabilities for a vector of linear predictors."""
    eta = np.asarray(eta, dtype=float).reshape(-1)
    if not np.all(np.isfinite(eta)):
        raise NonFiniteLinearPredictor("linear predictor is not finite")
    lower, upper = _bounds(np.asarray(cutpoints, dtype=float), eta)
    return _interval_probs(lower, upper)


def category_probs(model: OrdinalModel, x: Covariates) -> np.ndarray:
    return category_probs_matrix(model.cutpoints, np.array([model.linear_predictor(x)]))[0]


def cumulative_probs(model: OrdinalModel, x: Covariates) -> np.ndarray:
    """P(Y <= k) for k = 1..K-1."""
    return expit(model.cutpoints - model.linear_predictor(x))


def linear_predictors(model: OrdinalModel, data: OrdinalData) -> np.ndarray:
    eta = data.X @ model.beta if data.n_features else np.zeros(len(data))
    if model.n_groups:
        eta = eta + model.alpha[data.group]
    if not np.all(np.isfinite(eta)):
        raise NonFiniteLinearPredictor("linear predictor is not finite")
    return eta


def _as_data(model: OrdinalModel, data) -> OrdinalData:
    if isinstance(data, OrdinalData):
        return data
    return OrdinalData.from_pairs(data, n_groups=model.n_groups, feature_names=model.feature_names)


def log_likelihood(model: OrdinalModel, data) -> float:
    """Sum of log P(Y = rating | x) over (Covariates, rating) pairs or an OrdinalData batch."""
    data = _as_data(model, data)
    if len(data) == 0:
        return 0.0
    probs = category_probs_matrix(model.cutpoints, linear_predictors(model, data))
    picked = probs[np.arange(len(data)), data.y - 1]
    return float(np.sum(np.log(np.maximum(picked, _TINY))))


# ── Unconstrained parameter vector ──

def cutpoints_from_unconstrained(theta_c: np.ndarray) -> np.ndarray:
    theta_c = np.asarray(theta_c, dtype=float)
    return np.cumsum(np.concatenate((theta_c[:1], np.exp(theta_c[1:]))))


def cutpoints_to_unconstrained(cutpoints: np.ndarray) -> np.ndarray:
    cutpoints = np.asarray(cutpoints, dtype=float)
    return np.concatenate((cutpoints[:1], np.log(np.diff(cutpoints))))


def pack_params(model: OrdinalModel) -> np.ndarray:
    """[c_1, log increments..., beta..., alpha...]"""
    return np.concatenate((cutpoints_to_unconstrained(model.cutpoints), model.beta, model.alpha))


def unpack_params(theta: np.ndarray, n_features: int, n_groups: int, *, sigma_alpha: float = 1.0,
                  feature_names: Sequence[str] = (), group_labels: Sequence[str] = ()) -> OrdinalModel:
    theta = np.asarray(theta, dtype=float)
    n_cut = K - 1
    if theta.size != n_cut + n_features + n_groups:
        raise ValueError(f"parameter vector has {theta.size} entries, expected {n_cut + n_features + n_groups}")
    return OrdinalModel(
        cutpoints=cutpoints_from_unconstrained(theta[:n_cut]),
        beta=theta[n_cut:n_cut + n_features],
        alpha=theta[n_cut + n_features:],
        sigma_alpha=sigma_alpha,
        feature_names=tuple(feature_names),
        group_labels=tuple(group_labels),
    )


def log_likelihood_and_grad(theta: np.ndarray, data: OrdinalData) -> tuple[float, np.ndarray]:
    """Log-likelihood and its analytic gradient w.r.t. the unconstrained vector.

    Layout matches pack_params with n_groups = data.n_groups.
    """
    theta = np.asarray(theta, dtype=float)
    n_cut = K - 1
    p = data.n_features
    G = data.n_groups
    grad = np.zeros_like(theta)
    if len(data) == 0:
        return 0.0, grad
    theta_c = theta[:n_cut]
    beta = theta[n_cut:n_cut + p]
    alpha = theta[n_cut + p:n_cut + p + G]
    cut = cutpoints_from_unconstrained(theta_c)

    eta = data.X @ beta if p else np.zeros(len(data))
    if G:
        eta = eta + alpha[data.group]
    if not np.all(np.isfinite(eta)) or not np.all(np.isfinite(cut)):
        raise NonFiniteLinearPredictor("linear predictor is not finite")

    edges = np.concatenate(([-np.inf], cut, [np.inf]))
    lower = edges[data.y - 1] - eta
    upper = edges[data.y] - eta
    prob = np.maximum(_interval_probs(lower, upper), _TINY)
    dens_u = expit(upper) * expit(-upper)
    dens_l = expit(lower) * expit(-lower)
    loglik = float(np.sum(np.log(prob)))

    d_upper = dens_u / prob
    d_lower = -dens_l / prob
    d_eta = -(dens_u - dens_l) / prob

    has_upper = data.y < K
    has_lower = data.y > 1
    g_cut = np.bincount(data.y[has_upper] - 1, weights=d_upper[has_upper], minlength=n_cut)
    g_cut += np.bincount(data.y[has_lower] - 2, weights=d_lower[has_lower], minlength=n_cut)

    tail = np.cumsum(g_cut[::-1])[::-1]
    grad[0] = tail[0]
    grad[1:n_cut] = tail[1:] * np.exp(theta_c[1:])
    if p:
        grad[n_cut:n_cut + p] = data.X.T @ d_eta
    if G:
        grad[n_cut + p:n_cut + p + G] = np.bincount(data.group, weights=d_eta, minlength=G)
    return loglik, grad


# ── Generative use ──

def sample_from_probs(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draw of 1..K per row of a probability matrix."""
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])[:, None]
    return np.minimum((u >= cdf[:, :-1]).sum(axis=1) + 1, probs.shape[1])


def sample_rating(model: OrdinalModel, x: Covariates, rng: np.random.Generator) -> int:
    return int(sample_from_probs(category_probs(model, x), rng)[0])


def sample_ratings(model: OrdinalModel, data: OrdinalData, rng: np.random.Generator) -> np.ndarray:
    probs = category_probs_matrix(model.cutpoints, linear_predictors(model, data))
    return sample_from_probs(probs, rng)


def odds_ratio(beta_coef: float, contrast: str = "reference_vs_coded") -> float:
    """Cumulative odds ratio for a dummy/effect coefficient.

    reference_vs_coded: odds of a higher rating for the reference level
    relative to the coded level, exp(-beta). coded_vs_reference: exp(beta).
    """
    if not np.isfinite(beta_coef):
        raise ValueError(f"coefficient must be finite, got {beta_coef}")
    if contrast == "reference_vs_coded":
        return float(np.exp(-beta_coef))
    if contrast == "coded_vs_reference":
        return float(np.exp(beta_coef))
    raise ValueError(f"unknown contrast {contrast!r}")


# ── Covariate coding ──

def encode_experience(crs_experience: int) -> float:
    return float(crs_experience - config.LIKERT_MIDPOINT)


def encode_gender(gender: Gender, coding: str = "effect") -> float | None:
    """effect: Female +1 / Male -1. male_dummy: Male 1 / Female 0. Other and Undisclosed give None."""
    gender = Gender(gender)
    if gender not in (Gender.FEMALE, Gender.MALE):
        return None
    if coding == "effect":
        return 1.0 if gender is Gender.FEMALE else -1.0
    if coding == "male_dummy":
        return 1.0 if gender is Gender.MALE else 0.0
    raise ValueError(f"unknown gender coding {coding!r}")


_AGE_ORDER = tuple(AgeGroup)


def encode_age(age_group: AgeGroup) -> float:
    """Ordinal age code, zero at the modal 25-34 band."""
    return float(_AGE_ORDER.index(AgeGroup(age_group)) - 1)


AGE_DUMMY_NAMES = tuple(f"age_{a.value}" for a in _AGE_ORDER[1:])


def age_dummies(age_group: AgeGroup) -> tuple[float, ...]:
    """Indicators for every band except the 18-24 reference."""
    age_group = AgeGroup(age_group)
    return tuple(1.0 if a is age_group else 0.0 for a in _AGE_ORDER[1:])
