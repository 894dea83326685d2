"""State -> aim-weight policy: domain priors, value modulation, trait modulation, initiative."""

import logging
from enum import Enum
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import config
from .core import (
    AIM_FIELDS,
    AIMS,
    Aim,
    AimWeights,
    AutonomyPref,
    Cluster,
    Domain,
    DomainProfile,
    Initiative,
    ItemValue,
    StateVector,
    UserTraits,
    validate_state,
)
from .data_reader import load_json
from .errors import MissingCluster, SchemaMismatch
from .ordinal import K, category_probs_matrix, encode_age, encode_experience, encode_gender

logger = logging.getLogger(__name__)


class Emphasis(str, Enum):
    PRIMARY = "Primary"
    SECONDARY = "Secondary"
    DEEMPHASIZED = "Deemphasized"


class PreferredMode(str, Enum):
    SYSTEM_TO_USER = "SystemToUser"
    MIXED_INITIATIVE = "MixedInitiative"
    USER_LED_OR_MIXED = "UserLedOrMixed"
    GENTLE_SYSTEM_INIT = "GentleSystemInit"
    USER_LED_NUDGES = "UserLedNudges"


_MODE_TO_INITIATIVE = {
    PreferredMode.SYSTEM_TO_USER: Initiative.SYSTEM_LED,
    PreferredMode.MIXED_INITIATIVE: Initiative.MIXED,
}


# ── Rule table ──

class RuleRow(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    cluster: Cluster
    emphasis: dict[Aim, Emphasis]
    preferred_mode: PreferredMode
    triggers: str = ""

    @model_validator(mode="after")
    def _all_aims(self):
        missing = [a.value for a in AIMS if a not in self.emphasis]
        if missing:
            raise ValueError(f"{self.cluster.value}: no emphasis for {', '.join(missing)}")
        return self

    @property
    def initiative(self) -> Initiative:
        return _MODE_TO_INITIATIVE.get(self.preferred_mode, Initiative.USER_LED)

    def primary_aims(self) -> list[Aim]:
        return [a for a in AIMS if self.emphasis[a] is Emphasis.PRIMARY]


class RuleTable(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    rows: dict[Cluster, RuleRow]

    def row(self, cluster: Cluster) -> RuleRow:
        row = self.rows.get(Cluster(cluster))
        if row is None:
            raise MissingCluster(f"rule table has no row for {Cluster(cluster).value}")
        return row

    def is_complete(self) -> bool:
        return all(c in self.rows for c in Cluster)


def load_rules(path: Path) -> RuleTable:
    """Load a rule table; exactly one row per cluster."""
    data, err = load_json(path)
    if err is not None:
        raise SchemaMismatch(err)
    rows = data.get("rows") if isinstance(data, dict) else None
    if not isinstance(rows, list):
        raise SchemaMismatch(f"{Path(path).name}: expected a 'rows' list")
    parsed: dict[Cluster, RuleRow] = {}
    for raw in rows:
        try:
            row = RuleRow.model_validate(raw)
        except ValidationError as e:
            raise SchemaMismatch(f"{Path(path).name}: invalid rule row: {e}") from None
        if row.cluster in parsed:
            raise SchemaMismatch(f"{Path(path).name}: duplicate row for {row.cluster.value}")
        parsed[row.cluster] = row
    missing = [c.value for c in Cluster if c not in parsed]
    if missing:
        raise MissingCluster(f"{Path(path).name}: no row for {', '.join(missing)}")
    logger.info("RULES_LOADED path=%s rows=%d", path, len(parsed))
    return RuleTable(rows={c: parsed[c] for c in Cluster})


def default_rules() -> RuleTable:
    return load_rules(config.RULE_TABLE_JSON)


# ── Priors ──

class Coefficient(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mean: float
    hdi_low: float
    hdi_high: float
    admitted: bool = False

    @model_validator(mode="after")
    def _ordered(self):
        if not self.hdi_low <= self.mean <= self.hdi_high:
            raise ValueError(f"expected hdi_low <= mean <= hdi_high, got {self.hdi_low}, {self.mean}, {self.hdi_high}")
        return self

    @property
    def credible(self) -> bool:
        return self.hdi_low > 0.0 or self.hdi_high < 0.0


class Override(BaseModel):
    """A (domain, aim) cell where a demographic coefficient is allowed to act."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    domain: Domain
    aim: Aim
    coef: float


class AimModel(BaseModel):
    """Calibrated cumulative-logit summary used by the prior-driven variant."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    cutpoints: list[float]
    value_shift: float = 0.0

    @model_validator(mode="after")
    def _increasing(self):
        if len(self.cutpoints) != K - 1 or any(b <= a for a, b in zip(self.cutpoints, self.cutpoints[1:])):
            raise ValueError(f"expected {K - 1} strictly increasing cutpoints")
        return self


class PolicyPriors(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    emphasis_weights: dict[Emphasis, float] = Field(
        default_factory=lambda: {Emphasis(k): v for k, v in config.EMPHASIS_WEIGHTS.items()})
    trait_gain: float = Field(default=config.TRAIT_GAIN, ge=0.0)
    value_floors: dict[Aim, float] = Field(
        default_factory=lambda: {Aim(k): v for k, v in config.VALUE_FLOORS.items()})
    experience: dict[Aim, Coefficient] = Field(default_factory=dict)
    gender: dict[Aim, Coefficient] = Field(default_factory=dict)
    age: dict[Aim, Coefficient] = Field(default_factory=dict)
    intercepts: dict[Domain, dict[Aim, Coefficient]] = Field(default_factory=dict)
    gender_overrides: list[Override] = Field(default_factory=list)
    age_overrides: list[Override] = Field(default_factory=list)
    aim_models: dict[Aim, AimModel] = Field(default_factory=dict)
    affective_system_init: bool = True

    @model_validator(mode="after")
    def _weights_ordered(self):
        w = self.emphasis_weights
        missing = [e.value for e in Emphasis if e not in w]
        if missing:
            raise ValueError(f"emphasis map lacks {', '.join(missing)}")
        if not all(0.0 <= v <= 1.0 for v in w.values()):
            raise ValueError("emphasis weights must lie in [0, 1]")
        if not w[Emphasis.PRIMARY] > w[Emphasis.SECONDARY] > w[Emphasis.DEEMPHASIZED]:
            raise ValueError("emphasis weights must satisfy Primary > Secondary > Deemphasized")
        if not all(0.0 <= v <= 1.0 for v in self.value_floors.values()):
            raise ValueError("value floors must lie in [0, 1]")
        return self

    def admitted_experience(self, aim: Aim) -> Coefficient | None:
        coef = self.experience.get(aim)
        return coef if coef is not None and coef.admitted else None


def _override_coef(overrides: list[Override], domain: Domain, aim: Aim) -> float | None:
    for o in overrides:
        if o.domain is domain and o.aim is aim:
            return o.coef
    return None


def _clamp(w: float) -> float:
    return float(min(1.0, max(0.0, w)))


# ── Layers ──

def base_weights(profile: DomainProfile, rules: RuleTable, priors: PolicyPriors) -> AimWeights:
    row = rules.row(profile.cluster)
    w = {AIM_FIELDS[a]: priors.emphasis_weights[row.emphasis[a]] for a in AIMS}
    return AimWeights(**w, initiative=row.initiative, affective_system_init=priors.affective_system_init)


def expected_importance_at(cutpoints, eta: float) -> float:
    """(E[Y] - 1) / (K - 1) under a cumulative-logit model at linear predictor eta."""
    probs = category_probs_matrix(np.asarray(cutpoints, dtype=float), np.array([eta]))[0]
    return float((probs @ np.arange(1, K + 1) - 1.0) / (K - 1))


def calibrated_importance(domain: Domain, aim: Aim, priors: PolicyPriors, item_value: ItemValue) -> float | None:
    """Expected importance of an aim in a domain under the calibrated model, or None without one.

    The High-frame shift only acts for aims whose value floor survived calibration.
    """
    model = priors.aim_models.get(aim)
    if model is None:
        return None
    intercept = priors.intercepts.get(domain, {}).get(aim)
    eta = intercept.mean if intercept is not None else 0.0
    if ItemValue(item_value) is ItemValue.HIGH and priors.value_floors.get(aim, 0.0) > 0.0:
        eta += max(model.value_shift, 0.0)
    return expected_importance_at(model.cutpoints, eta)


def prior_weights(profile: DomainProfile, item_value: ItemValue, rules: RuleTable,
                  priors: PolicyPriors) -> AimWeights:
    """Base weights from calibrated aim models: normalized expected importance at the domain intercept.

    Aims without a calibrated model keep their rule-table weight.
    """
    weights = base_weights(profile, rules, priors)
    updates = {}
    for aim in AIMS:
        importance = calibrated_importance(profile.domain, aim, priors, item_value)
        if importance is not None:
            updates[AIM_FIELDS[aim]] = importance
    return weights.replace(**updates) if updates else weights


def prior_floors(domain: Domain, priors: PolicyPriors) -> dict[Aim, float]:
    """High-value floors for the prior-driven variant: calibrated importance under the High frame.

    A zeroed value floor stays zero; aims without a calibrated model use the configured floor.
    """
    floors = {}
    for aim in AIMS:
        floor = priors.value_floors.get(aim, 0.0)
        importance = calibrated_importance(domain, aim, priors, ItemValue.HIGH) if floor > 0.0 else None
        floors[aim] = importance if importance is not None else floor
    return floors


def apply_value_modulation(weights: AimWeights, item_value: ItemValue,
                           floors: dict[Aim, float] | None = None) -> AimWeights:
    """High value raises each weight to at least its floor; Low leaves weights alone."""
    if ItemValue(item_value) is not ItemValue.HIGH:
        return weights
    floors = floors if floors is not None else {Aim(k): v for k, v in config.VALUE_FLOORS.items()}
    return weights.replace(**{
        AIM_FIELDS[a]: max(weights.weight(a), floors.get(a, 0.0)) for a in AIMS
    })


def apply_trait_modulation(weights: AimWeights, traits: UserTraits, priors: PolicyPriors,
                           domain: Domain | None = None) -> AimWeights:
    """Shift each weight by gain * beta * centered trait, clamped to [0, 1].

    Experience acts globally when admitted. Gender and age act only in the
    (domain, aim) cells the priors flag.
    """
    gain = priors.trait_gain
    experience = encode_experience(traits.crs_experience)
    gender = encode_gender(traits.gender, "effect")
    age = encode_age(traits.age_group)
    updates = {}
    for aim in AIMS:
        w = weights.weight(aim)
        coef = priors.admitted_experience(aim)
        if coef is not None:
            w += gain * coef.mean * experience
        if domain is not None:
            g = _override_coef(priors.gender_overrides, domain, aim)
            if g is not None and gender is not None:
                w += gain * g * gender
            a = _override_coef(priors.age_overrides, domain, aim)
            if a is not None:
                w += gain * a * age
        updates[AIM_FIELDS[aim]] = _clamp(w)
    return weights.replace(**updates)


def allocate_initiative(weights: AimWeights, autonomy: AutonomyPref, item_value: ItemValue,
                        cluster: Cluster | None = None) -> AimWeights:
    """Initiative from the mean control preference (> 3 user-led, < 3 system-led, 3 mixed).

    A high-value state whose rule row starts system-led in the high-stakes
    cluster never drops below Mixed.
    """
    level = autonomy.mean()
    if level > config.LIKERT_MIDPOINT:
        initiative = Initiative.USER_LED
    elif level < config.LIKERT_MIDPOINT:
        initiative = Initiative.SYSTEM_LED
    else:
        initiative = Initiative.MIXED
    if (initiative is Initiative.USER_LED
            and ItemValue(item_value) is ItemValue.HIGH
            and cluster is not None and Cluster(cluster) is Cluster.HIGH_STAKES_COMPLEX
            and weights.initiative is Initiative.SYSTEM_LED):
        initiative = Initiative.MIXED
    return weights.replace(initiative=initiative)


def _keep_primary_dominant(weights: AimWeights, row: RuleRow) -> AimWeights:
    """Lift a single primary aim back to the top weight after trait modulation."""
    primary = row.primary_aims()
    if len(primary) != 1:
        return weights
    aim = primary[0]
    top = max(weights.as_tuple())
    if weights.weight(aim) >= top:
        return weights
    return weights.replace(**{AIM_FIELDS[aim]: top})


VARIANTS = ("rule", "prior")


def decide(state: StateVector, rules: RuleTable, priors: PolicyPriors, variant: str = "rule") -> AimWeights:
    """pi(s_t) -> a_t. Pure: identical inputs give identical outputs."""
    validate_state(state)
    profile = state.domain_profile
    row = rules.row(profile.cluster)
    if variant == "rule":
        weights = base_weights(profile, rules, priors)
        floors = priors.value_floors
    elif variant == "prior":
        weights = prior_weights(profile, state.item_value, rules, priors)
        floors = prior_floors(profile.domain, priors)
    else:
        raise ValueError(f"unknown policy variant {variant!r}")
    weights = apply_value_modulation(weights, state.item_value, floors)
    weights = apply_trait_modulation(weights, state.user_traits, priors, domain=profile.domain)
    if variant == "rule":
        weights = _keep_primary_dominant(weights, row)
    return allocate_initiative(weights, state.autonomy_pref, state.item_value, cluster=profile.cluster)


def flat_policy() -> AimWeights:
    """Baseline: every aim at 0.5, mixed initiative."""
    return AimWeights(w_edu=0.5, w_exp=0.5, w_aff=0.5, initiative=Initiative.MIXED)
