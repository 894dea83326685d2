"""Synthetic users, generative ratings and policy alignment scoring."""

import logging
from typing import Callable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import config
from .core import (
    AIMS,
    DOMAINS,
    AgeGroup,
    Aim,
    AimWeights,
    AutonomyPref,
    Domain,
    DomainProfile,
    Gender,
    Initiative,
    ItemValue,
    RatingRecord,
    StateVector,
    UserTraits,
    default_profiles,
)
from .data_reader import load_json
from .errors import SpecValidationError
from .ordinal import (
    K,
    Covariates,
    OrdinalModel,
    category_probs,
    category_probs_matrix,
    encode_age,
    encode_experience,
    encode_gender,
    sample_from_probs,
)
from .policy import PolicyPriors, RuleTable, decide, flat_policy

logger = logging.getLogger(__name__)

_SUM_TOLERANCE = 1e-9
TRUTH_FEATURES = ("experience", "gender", "age", "value_high")
CONTROL_ITEMS = ("educative_control", "explorative_control")


def _check_distribution(values, label: str):
    values = list(values)
    if any(v < 0.0 for v in values):
        raise ValueError(f"{label} has negative probabilities")
    if abs(sum(values) - 1.0) > _SUM_TOLERANCE:
        raise ValueError(f"{label} sums to {sum(values):.12g}, expected 1")


def _check_cutpoints(cutpoints: list[float]) -> list[float]:
    if len(cutpoints) != K - 1 or any(b <= a for a, b in zip(cutpoints, cutpoints[1:])):
        raise ValueError(f"expected {K - 1} strictly increasing cutpoints, got {cutpoints}")
    return cutpoints


class AimTruth(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    cutpoints: list[float]
    beta_experience: float = 0.0
    beta_gender: float = 0.0
    beta_age: float = 0.0
    value_shift: float = 0.0
    domain_intercepts: dict[Domain, float] = Field(default_factory=dict)
    sigma_alpha: float = Field(default=1.0, gt=0.0)

    @field_validator("cutpoints")
    @classmethod
    def _increasing(cls, value):
        return _check_cutpoints(value)

    def model(self, domains=DOMAINS) -> OrdinalModel:
        return OrdinalModel(
            cutpoints=np.asarray(self.cutpoints),
            beta=np.array([self.beta_experience, self.beta_gender, self.beta_age, self.value_shift]),
            alpha=np.array([self.domain_intercepts.get(d, 0.0) for d in domains]),
            sigma_alpha=self.sigma_alpha,
            feature_names=TRUTH_FEATURES,
            group_labels=tuple(d.value for d in domains),
        )


class ControlTruth(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    cutpoints: list[float]
    beta_male: float = 0.0
    beta_experience: float = 0.0

    @field_validator("cutpoints")
    @classmethod
    def _increasing(cls, value):
        return _check_cutpoints(value)


class PopulationSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_users: int = Field(ge=0)
    experience_probs: list[float]
    gender_probs: dict[Gender, float]
    age_probs: dict[AgeGroup, float]
    aims: dict[Aim, AimTruth]
    controls: dict[str, ControlTruth] = Field(default_factory=dict)
    domains: list[Domain] = Field(default_factory=lambda: list(DOMAINS))
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _valid(self):
        if len(self.experience_probs) != K:
            raise ValueError(f"experience_probs needs {K} entries")
        _check_distribution(self.experience_probs, "experience_probs")
        _check_distribution(self.gender_probs.values(), "gender_probs")
        _check_distribution(self.age_probs.values(), "age_probs")
        missing = [a.value for a in AIMS if a not in self.aims]
        if missing:
            raise ValueError(f"no generating model for {', '.join(missing)}")
        unknown = [k for k in self.controls if k not in CONTROL_ITEMS]
        if unknown:
            raise ValueError(f"unknown control items {', '.join(unknown)}")
        if not self.domains or len(set(self.domains)) != len(self.domains):
            raise ValueError("domains must be a non-empty list without repeats")
        return self

    def models(self) -> dict[Aim, OrdinalModel]:
        return {aim: self.aims[aim].model(self.domains) for aim in AIMS}


def load_population_spec(path) -> PopulationSpec:
    data, err = load_json(path)
    if err is not None:
        raise SpecValidationError(err)
    try:
        return PopulationSpec.model_validate(data)
    except ValidationError as e:
        raise SpecValidationError(f"invalid population spec: {e}") from None


def default_population() -> PopulationSpec:
    return load_population_spec(config.DEFAULT_POPULATION_JSON)


# ── Users ──

def _pick(rng: np.random.Generator, options: list, probs: dict):
    weights = np.array([probs.get(o, 0.0) for o in options])
    return options[int(rng.choice(len(options), p=weights / weights.sum()))]


def _draw_user(spec: PopulationSpec, user: int) -> tuple[UserTraits, AutonomyPref | None, np.random.Generator]:
    rng = np.random.default_rng([spec.seed, user])
    experience = int(rng.choice(K, p=np.asarray(spec.experience_probs))) + 1
    gender = _pick(rng, list(Gender), spec.gender_probs)
    age = _pick(rng, list(AgeGroup), spec.age_probs)
    traits = UserTraits(crs_experience=experience, gender=gender, age_group=age)

    autonomy = None
    if spec.controls:
        male = encode_gender(gender, "male_dummy") or 0.0
        levels = {}
        for item in CONTROL_ITEMS:
            truth = spec.controls.get(item)
            if truth is None:
                levels[item] = config.LIKERT_MIDPOINT
                continue
            eta = truth.beta_male * male + truth.beta_experience * encode_experience(experience)
            probs = category_probs_matrix(np.asarray(truth.cutpoints), np.array([eta]))
            levels[item] = int(sample_from_probs(probs, rng)[0])
        autonomy = AutonomyPref(**levels)
    return traits, autonomy, rng


def _covariates(traits: UserTraits, frame: ItemValue, group: int) -> Covariates:
    return Covariates(
        values=(
            encode_experience(traits.crs_experience),
            encode_gender(traits.gender, "effect") or 0.0,
            encode_age(traits.age_group),
            1.0 if frame is ItemValue.HIGH else 0.0,
        ),
        group=group,
    )


def participant_id(user: int) -> str:
    return f"u{user:04d}"


def generate_population(spec: PopulationSpec) -> list[RatingRecord]:
    """One rating per user x domain x aim x frame; deterministic given spec.seed."""
    models = spec.models()
    records: list[RatingRecord] = []
    cells = [(g, d, aim, frame) for g, d in enumerate(spec.domains) for aim in AIMS for frame in ItemValue]
    for user in range(spec.n_users):
        traits, autonomy, rng = _draw_user(spec, user)
        probs = np.vstack([category_probs(models[aim], _covariates(traits, frame, g)) for g, _, aim, frame in cells])
        ratings = sample_from_probs(probs, rng)
        pid = participant_id(user)
        for (_, domain, aim, frame), rating in zip(cells, ratings):
            records.append(RatingRecord(
                participant_id=pid, domain=domain, aim=aim, value_frame=frame,
                rating=int(rating), traits=traits, autonomy=autonomy,
            ))
    logger.info("POPULATION_GENERATED users=%d records=%d seed=%d", spec.n_users, len(records), spec.seed)
    return records


def expected_importance(model: OrdinalModel, x: Covariates) -> float:
    """(E[Y | x] - 1) / (K - 1)."""
    probs = category_probs(model, x)
    return float((probs @ np.arange(1, K + 1) - 1.0) / (K - 1))


# ── Alignment ──

class AlignmentScore(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    label: str = "policy"
    mean_gap: dict[Aim, float] = Field(default_factory=lambda: {a: 0.0 for a in AIMS})
    overall_gap: float = Field(default=0.0, ge=0.0, le=1.0)
    initiative_mismatch: float = Field(default=0.0, ge=0.0, le=1.0)
    n: int = 0
    empty: bool = True

    @field_validator("mean_gap")
    @classmethod
    def _bounded(cls, value):
        if any(not 0.0 <= v <= 1.0 for v in value.values()):
            raise ValueError("gaps must lie in [0, 1]")
        return value


def expected_initiative(autonomy: AutonomyPref | None) -> Initiative:
    if autonomy is None:
        return Initiative.MIXED
    level = autonomy.mean()
    if level > config.LIKERT_MIDPOINT:
        return Initiative.USER_LED
    if level < config.LIKERT_MIDPOINT:
        return Initiative.SYSTEM_LED
    return Initiative.MIXED


PolicyFn = Callable[[StateVector], AimWeights]


def evaluate_policy(rules: RuleTable, priors: PolicyPriors, population: PopulationSpec, *,
                    variant: str = "rule", policy: PolicyFn | None = None,
                    profiles: dict[Domain, DomainProfile] | None = None, label: str | None = None) -> AlignmentScore:
    """Score a policy against every simulated user x domain x frame state."""
    profiles = profiles or default_profiles()
    models = population.models()
    decide_fn = policy or (lambda state: decide(state, rules, priors, variant))
    gaps = {aim: 0.0 for aim in AIMS}
    mismatches = 0
    n = 0
    for user in range(population.n_users):
        traits, autonomy, _ = _draw_user(population, user)
        pref = autonomy or AutonomyPref(educative_control=config.LIKERT_MIDPOINT,
                                        explorative_control=config.LIKERT_MIDPOINT)
        wanted = expected_initiative(autonomy)
        for g, domain in enumerate(population.domains):
            for frame in ItemValue:
                state = StateVector(domain_profile=profiles[domain], item_value=frame,
                                    user_traits=traits, autonomy_pref=pref)
                weights = decide_fn(state)
                x = _covariates(traits, frame, g)
                for aim in AIMS:
                    gaps[aim] += abs(weights.weight(aim) - expected_importance(models[aim], x))
                mismatches += int(weights.initiative is not wanted)
                n += 1
    label = label or (variant if policy is None else "custom")
    if n == 0:
        return AlignmentScore(label=label)
    mean_gap = {aim: gaps[aim] / n for aim in AIMS}
    score = AlignmentScore(
        label=label,
        mean_gap=mean_gap,
        overall_gap=sum(mean_gap.values()) / len(AIMS),
        initiative_mismatch=mismatches / n,
        n=n,
        empty=False,
    )
    logger.info("ALIGNMENT label=%s n=%d gap=%.4f mismatch=%.4f", label, n, score.overall_gap,
                score.initiative_mismatch)
    return score


def compare_with_flat(rules: RuleTable, priors: PolicyPriors, population: PopulationSpec, *,
                      variant: str = "prior", profiles=None) -> tuple[AlignmentScore, AlignmentScore]:
    """(calibrated, flat 0.5 baseline) scores on the same population."""
    calibrated = evaluate_policy(rules, priors, population, variant=variant, profiles=profiles, label=variant)
    flat = evaluate_policy(rules, priors, population, policy=lambda state: flat_policy(), profiles=profiles,
                           label="flat")
    return calibrated, flat
