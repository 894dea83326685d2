"""Paths, constants and runtime overrides for the adaptation engine."""

import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path

from pydantic import BaseModel, ConfigDict

from .data_reader import load_json

logger = logging.getLogger(__name__)

# ── Base directory (parent of rae/) ──
BASE_DIR = Path(__file__).resolve().parent.parent

# ── Shipped tables ──
DOMAIN_PROFILES_JSON = BASE_DIR / "domain_profiles.json"
RULE_TABLE_JSON = BASE_DIR / "rule_table.json"
PUBLISHED_ESTIMATES_JSON = BASE_DIR / "published_estimates.json"
DEFAULT_POPULATION_JSON = BASE_DIR / "population_default.json"

# ── Environment ──
CONFIG_ENV = "RAE_CONFIG"
LOG_PATH_ENV = "RAE_LOG_PATH"
LOG_MAX_MB_ENV = "RAE_LOG_MAX_MB"
LOG_BACKUP_COUNT_ENV = "RAE_LOG_BACKUP_COUNT"
_LOG_MAX_MB_DEFAULT = 5
_LOG_BACKUP_COUNT_DEFAULT = 3
LOG_FORMAT = "%(asctime)s [%(name)s] %(levelname)s: %(message)s"

# ── CSV schema (bit-exact header) ──
EXPECTED_COLUMNS = [
    "participant_id", "domain", "aim", "value_frame", "rating",
    "age_group", "gender", "crs_experience", "autonomy_edu", "autonomy_exp",
]

# ── Ordinal scale ──
N_CATEGORIES = 5
LIKERT_MIDPOINT = 3

# ── Artifacts ──
PRIORS_SCHEMA_VERSION = "rae-priors/1"
REPORT_SCHEMA_VERSION = "rae-report/1"
HYPOTHESIS_FAMILIES = ("h1_h3", "h4", "h5", "h6")

# ── Analysis thresholds ──
ALPHA = 0.05
FDR_Q = 0.05
HDI_MASS = 0.94
PAIRWISE_MIN_R = 0.20
EXACT_WILCOXON_MAX_N = 12
H6_MIN_PARTICIPANTS = 10

# ── MCMC defaults ──
MCMC_CHAINS = 4
MCMC_WARMUP = 1000
MCMC_DRAWS = 2000
MCMC_TARGET_ACCEPT = 0.8
PRIOR_SCALE = 1.0
CUTPOINT_PRIOR_SCALE = 5.0
PPC_DRAWS = 200

# ── Policy defaults ──
EMPHASIS_WEIGHTS = {"Primary": 0.85, "Secondary": 0.55, "Deemphasized": 0.25}
VALUE_FLOORS = {"Educative": 0.8, "Explorative": 0.6, "Affective": 0.7}
TRAIT_GAIN = 0.05


class Settings(BaseModel):
    """Effective runtime settings: module defaults plus accepted overrides."""

    model_config = ConfigDict(frozen=True)

    mcmc_chains: int = MCMC_CHAINS
    mcmc_warmup: int = MCMC_WARMUP
    mcmc_draws: int = MCMC_DRAWS
    mcmc_target_accept: float = MCMC_TARGET_ACCEPT
    prior_scale: float = PRIOR_SCALE
    hdi_mass: float = HDI_MASS
    fdr_q: float = FDR_Q
    pairwise_min_r: float = PAIRWISE_MIN_R
    trait_gain: float = TRAIT_GAIN
    ppc_draws: int = PPC_DRAWS
    profiles_path: str = str(DOMAIN_PROFILES_JSON)
    rules_path: str = str(RULE_TABLE_JSON)


def _is_int_at_least(minimum):
    return lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= minimum


def _is_open_unit(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and 0.0 < v < 1.0


def _is_positive(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0.0


def _is_unit(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and 0.0 <= v <= 1.0


def _is_existing_file(v):
    return isinstance(v, str) and v.strip() and Path(v).is_file()


ALLOWED_OVERRIDES = {
    "mcmc_chains": _is_int_at_least(2),
    "mcmc_warmup": _is_int_at_least(1),
    "mcmc_draws": _is_int_at_least(4),
    "mcmc_target_accept": _is_open_unit,
    "prior_scale": _is_positive,
    "hdi_mass": _is_open_unit,
    "fdr_q": _is_open_unit,
    "pairwise_min_r": _is_unit,
    "trait_gain": _is_unit,
    "ppc_draws": _is_int_at_least(0),
    "profiles_path": _is_existing_file,
    "rules_path": _is_existing_file,
}


def load_settings_overrides(path: Path) -> dict:
    """Load and validate a JSON defaults file; unknown or invalid keys are dropped."""
    overrides, err = load_json(path)
    if err is not None:
        logger.warning("OVERRIDE_REJECT reason=unreadable path=%s error=%s", path, err)
        return {}
    if not isinstance(overrides, dict):
        logger.warning("OVERRIDE_REJECT reason=not_object path=%s", path)
        return {}
    accepted = {}
    for key, value in overrides.items():
        validator = ALLOWED_OVERRIDES.get(key)
        if not validator:
            logger.warning("OVERRIDE_REJECT key=%s reason=not_allowed", key)
            continue
        if not validator(value):
            logger.warning("OVERRIDE_REJECT key=%s reason=invalid_value", key)
            continue
        logger.info("OVERRIDE_ACCEPT key=%s value=%s", key, value)
        accepted[key] = value
    return accepted


def load_settings(path: Path | None = None) -> Settings:
    """Settings from defaults, overlaid with the file named by RAE_CONFIG (or ``path``)."""
    if path is None:
        raw = os.getenv(CONFIG_ENV, "").strip()
        if not raw:
            return Settings()
        path = Path(raw)
    return Settings(**load_settings_overrides(Path(path)))


# ── Logging ──

def _read_int_env(name, default, minimum):
    raw = os.getenv(name, "")
    if not raw:
        return default
    try:
        value = int(raw)
    except (TypeError, ValueError):
        return default
    return max(minimum, value)


def configure_logging(level=logging.INFO) -> None:
    """Console logging on stderr, plus a rotating file when RAE_LOG_PATH is set."""
    logging.basicConfig(level=level, format=LOG_FORMAT)
    log_path = os.getenv(LOG_PATH_ENV, "").strip()
    if not log_path:
        return
    root = logging.getLogger()
    if any(isinstance(h, RotatingFileHandler) for h in root.handlers):
        return
    max_mb = _read_int_env(LOG_MAX_MB_ENV, _LOG_MAX_MB_DEFAULT, 1)
    backup_count = _read_int_env(LOG_BACKUP_COUNT_ENV, _LOG_BACKUP_COUNT_DEFAULT, 1)
    handler = RotatingFileHandler(
        log_path,
        maxBytes=max_mb * 1024 * 1024,
        backupCount=backup_count,
        encoding="utf-8",
        delay=True,
    )
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)


_log_once_keys: set[str] = set()


def log_once(log: logging.Logger, key: str, msg: str, *args, level=logging.WARNING) -> bool:
    if key in _log_once_keys:
        return False
    _log_once_keys.add(key)
    log.log(level, msg, *args)
    return True
