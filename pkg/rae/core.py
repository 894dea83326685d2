"""Domain types shared across the engine."""

import base64
import logging
from enum import Enum
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_serializer, field_validator

from . import config
from .data_reader import load_json
from .errors import InvalidRating, SchemaMismatch, UnknownDomain

logger = logging.getLogger(__name__)


# ── Enumerations ──

class Domain(str, Enum):
    APPAREL = "Apparel"
    BEAUTY = "Beauty"
    ENTERTAINMENT = "Entertainment"
    TECH = "Tech"
    DINING = "Dining"
    WELLNESS = "Wellness"
    TRAVEL = "Travel"
    EDUCATION = "Education"
    FINANCE = "Finance"
    HOUSING = "Housing"


class Aim(str, Enum):
    EDUCATIVE = "Educative"
    EXPLORATIVE = "Explorative"
    AFFECTIVE = "Affective"


class Level(str, Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"


class ItemValue(str, Enum):
    LOW = "Low"
    HIGH = "High"


class Cluster(str, Enum):
    HIGH_STAKES_COMPLEX = "HighStakesComplex"
    CROSS_CUTTING = "CrossCutting"
    HEDONIC_LEISURE = "HedonicLeisure"
    AFFECT_RICH_IDENTITY = "AffectRichIdentity"
    SOCIAL_CONTEXTUAL = "SocialContextual"
    FUNCTIONAL_PRAGMATIC = "FunctionalPragmatic"


class Gender(str, Enum):
    FEMALE = "Female"
    MALE = "Male"
    OTHER = "Other"
    UNDISCLOSED = "Undisclosed"


class AgeGroup(str, Enum):
    A18_24 = "A18_24"
    A25_34 = "A25_34"
    A35_44 = "A35_44"
    A45_54 = "A45_54"
    A55_64 = "A55_64"
    A65PLUS = "A65plus"


class Initiative(str, Enum):
    SYSTEM_LED = "SystemLed"
    MIXED = "Mixed"
    USER_LED = "UserLed"


DOMAINS = tuple(Domain)
AIMS = tuple(Aim)


# ── Parsing ──

def _parse_enum(enum_cls, token, error_cls=ValueError, *, line=None):
    if isinstance(token, enum_cls):
        return token
    try:
        return enum_cls(token)
    except ValueError:
        label = enum_cls.__name__
        if error_cls is ValueError:
            raise ValueError(f"unknown {label} {token!r}") from None
        raise error_cls(f"unknown {label} {token!r}", line=line) from None


def parse_domain(token, *, line=None) -> Domain:
    return _parse_enum(Domain, token, UnknownDomain, line=line)


def parse_aim(token, *, line=None) -> Aim:
    return _parse_enum(Aim, token, SchemaMismatch, line=line)


def parse_item_value(token, *, line=None) -> ItemValue:
    return _parse_enum(ItemValue, token, SchemaMismatch, line=line)


def parse_gender(token, *, line=None) -> Gender:
    return _parse_enum(Gender, token, SchemaMismatch, line=line)


def parse_age_group(token, *, line=None) -> AgeGroup:
    return _parse_enum(AgeGroup, token, SchemaMismatch, line=line)


def parse_ordinal(value, field: str, *, line=None) -> int:
    """Parse a 1..5 ordinal; anything else is InvalidRating."""
    if isinstance(value, bool):
        raise InvalidRating(f"{field}={value!r} is not an ordinal 1-5", line=line)
    if isinstance(value, str):
        try:
            value = int(value.strip())
        except ValueError:
            raise InvalidRating(f"{field}={value!r} is not an ordinal 1-5", line=line) from None
    if not isinstance(value, int) or not 1 <= value <= config.N_CATEGORIES:
        raise InvalidRating(f"{field}={value!r} is not an ordinal 1-5", line=line)
    return value


# ── Value types ──

class _Value(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    @classmethod
    def from_dict(cls, data: dict):
        return cls.model_validate(data)


class DomainProfile(_Value):
    domain: Domain
    complexity: Level
    novelty_orientation: Level
    emotional_salience: Level
    cluster: Cluster
    notes: str = ""


class UserTraits(_Value):
    crs_experience: int
    gender: Gender
    age_group: AgeGroup


class AutonomyPref(_Value):
    """1 = fully system-initiated, 5 = fully user-initiated."""

    educative_control: int
    explorative_control: int

    def mean(self) -> float:
        return (self.educative_control + self.explorative_control) / 2.0


class StateVector(_Value):
    domain_profile: DomainProfile
    item_value: ItemValue
    user_traits: UserTraits
    autonomy_pref: AutonomyPref
    # Dialogue history; carried through, never interpreted.
    history: bytes = b""

    @field_validator("history", mode="before")
    @classmethod
    def _decode_history(cls, value):
        if isinstance(value, str):
            return base64.b64decode(value.encode("ascii"), validate=True)
        return value

    @field_serializer("history")
    def _encode_history(self, value: bytes) -> str:
        return base64.b64encode(value).decode("ascii")


class AimWeights(_Value):
    """Independent per-aim intensities (not a simplex) plus an initiative mode."""

    w_edu: float = Field(ge=0.0, le=1.0)
    w_exp: float = Field(ge=0.0, le=1.0)
    w_aff: float = Field(ge=0.0, le=1.0)
    initiative: Initiative
    affective_system_init: bool = True

    def weight(self, aim: Aim) -> float:
        return {Aim.EDUCATIVE: self.w_edu, Aim.EXPLORATIVE: self.w_exp, Aim.AFFECTIVE: self.w_aff}[Aim(aim)]

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.w_edu, self.w_exp, self.w_aff)

    def replace(self, **changes) -> "AimWeights":
        return self.model_validate({**self.model_dump(), **changes})

    def ternary(self) -> tuple[float, float, float]:
        """Blend coordinates w_i / sum(w) for the triangle view."""
        total = self.w_edu + self.w_exp + self.w_aff
        if total <= 0.0:
            return (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
        return (self.w_edu / total, self.w_exp / total, self.w_aff / total)


AIM_FIELDS = {Aim.EDUCATIVE: "w_edu", Aim.EXPLORATIVE: "w_exp", Aim.AFFECTIVE: "w_aff"}


class RatingRecord(_Value):
    participant_id: str
    domain: Domain
    aim: Aim
    value_frame: ItemValue
    rating: int
    traits: UserTraits
    autonomy: AutonomyPref | None = None


# ── Profiles ──

def load_profiles(path: Path) -> dict[Domain, DomainProfile]:
    """Load a profile table; every Domain must appear exactly once."""
    data, err = load_json(path)
    if err is not None:
        raise SchemaMismatch(err)
    rows = data.get("profiles") if isinstance(data, dict) else None
    if not isinstance(rows, list):
        raise SchemaMismatch(f"{Path(path).name}: expected a 'profiles' list")
    profiles: dict[Domain, DomainProfile] = {}
    for row in rows:
        if not isinstance(row, dict):
            raise SchemaMismatch(f"{Path(path).name}: profile rows must be objects")
        domain = parse_domain(row.get("domain"))
        if domain in profiles:
            raise SchemaMismatch(f"{Path(path).name}: duplicate profile for {domain.value}")
        try:
            profiles[domain] = DomainProfile.from_dict(row)
        except ValidationError as e:
            raise SchemaMismatch(f"{Path(path).name}: invalid profile for {domain.value}: {e}") from None
    missing = [d.value for d in DOMAINS if d not in profiles]
    if missing:
        raise SchemaMismatch(f"{Path(path).name}: no profile for {', '.join(missing)}")
    logger.info("PROFILES_LOADED path=%s domains=%d", path, len(profiles))
    return {d: profiles[d] for d in DOMAINS}


def default_profiles() -> dict[Domain, DomainProfile]:
    return load_profiles(config.DOMAIN_PROFILES_JSON)


# ── Validation ──

def validate_traits(traits: UserTraits, *, line=None) -> UserTraits:
    parse_ordinal(traits.crs_experience, "crs_experience", line=line)
    return traits


def validate_autonomy(autonomy: AutonomyPref, *, line=None) -> AutonomyPref:
    parse_ordinal(autonomy.educative_control, "educative_control", line=line)
    parse_ordinal(autonomy.explorative_control, "explorative_control", line=line)
    return autonomy


def validate_state(state: StateVector) -> StateVector:
    """Return the state unchanged if every ordinal field is in range."""
    parse_domain(state.domain_profile.domain)
    validate_traits(state.user_traits)
    validate_autonomy(state.autonomy_pref)
    return state


def validate_record(record: RatingRecord, *, line=None) -> RatingRecord:
    parse_ordinal(record.rating, "rating", line=line)
    validate_traits(record.traits, line=line)
    if record.autonomy is not None:
        validate_autonomy(record.autonomy, line=line)
    return record


def state_from_dict(data: dict) -> StateVector:
    """Decode a state object, surfacing enum and range errors as engine errors."""
    if not isinstance(data, dict):
        raise SchemaMismatch("state must be a JSON object")
    profile = data.get("domain_profile")
    if isinstance(profile, dict):
        parse_domain(profile.get("domain"))
    try:
        state = StateVector.from_dict(data)
    except ValidationError as e:
        raise SchemaMismatch(f"invalid state: {e}") from None
    return validate_state(state)
