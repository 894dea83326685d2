"""On-disk formats: ratings CSV, analysis reports, priors artifact, alignment scores."""

import hashlib
import logging
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import config
from .core import (
    AutonomyPref,
    RatingRecord,
    UserTraits,
    parse_age_group,
    parse_aim,
    parse_domain,
    parse_gender,
    parse_item_value,
    parse_ordinal,
)
from .data_reader import atomic_write_csv, atomic_write_json, load_csv, load_json, mtime_epoch, sha256_file
from .errors import RaeError, SchemaMismatch
from .pipeline import AnalysisReport, records_frame
from .policy import PolicyPriors, RuleTable
from .sim import AlignmentScore

logger = logging.getLogger(__name__)

SOURCE_DATE_EPOCH_ENV = "SOURCE_DATE_EPOCH"


# ── Ratings CSV ──

class IngestResult(BaseModel):
    records: list[RatingRecord] = Field(default_factory=list)
    errors: list[str] = Field(default_factory=list)
    n_rows: int = 0

    @property
    def ok(self) -> bool:
        return not self.errors


def _parse_row(row: dict, line: int) -> RatingRecord:
    pid = row["participant_id"].strip()
    if not pid:
        raise SchemaMismatch("empty participant_id", line=line)
    edu, exp = row["autonomy_edu"].strip(), row["autonomy_exp"].strip()
    autonomy = None
    if edu or exp:
        if not (edu and exp):
            raise SchemaMismatch("autonomy_edu and autonomy_exp must be given together", line=line)
        autonomy = AutonomyPref(
            educative_control=parse_ordinal(edu, "autonomy_edu", line=line),
            explorative_control=parse_ordinal(exp, "autonomy_exp", line=line),
        )
    return RatingRecord(
        participant_id=pid,
        domain=parse_domain(row["domain"], line=line),
        aim=parse_aim(row["aim"], line=line),
        value_frame=parse_item_value(row["value_frame"], line=line),
        rating=parse_ordinal(row["rating"], "rating", line=line),
        traits=UserTraits(
            crs_experience=parse_ordinal(row["crs_experience"], "crs_experience", line=line),
            gender=parse_gender(row["gender"], line=line),
            age_group=parse_age_group(row["age_group"], line=line),
        ),
        autonomy=autonomy,
    )


def ingest(path: Path, *, strict: bool = False) -> IngestResult:
    """Read a ratings CSV into validated records.

    Line numbers count the header as line 1. In strict mode the first bad row
    raises; otherwise bad rows are skipped and reported in ``errors``.
    """
    frame, err = load_csv(path)
    if err is not None:
        raise SchemaMismatch(err)
    header = list(frame.columns)
    if header != config.EXPECTED_COLUMNS:
        missing = [c for c in config.EXPECTED_COLUMNS if c not in header]
        extra = [c for c in header if c not in config.EXPECTED_COLUMNS]
        detail = []
        if missing:
            detail.append(f"missing {', '.join(missing)}")
        if extra:
            detail.append(f"unexpected {', '.join(extra)}")
        raise SchemaMismatch(f"{Path(path).name}: header mismatch ({'; '.join(detail) or 'column order'})")

    result = IngestResult(n_rows=len(frame))
    for offset, row in enumerate(frame.to_dict(orient="records")):
        line = offset + 2
        try:
            result.records.append(_parse_row(row, line))
        except RaeError as e:
            if strict:
                raise
            result.errors.append(str(e))
    if result.errors:
        logger.warning("INGEST_ROW_ERRORS path=%s rejected=%d first=%s", path, len(result.errors), result.errors[0])
    logger.info("INGEST_DONE path=%s rows=%d records=%d", path, result.n_rows, len(result.records))
    return result


def records_to_csv_frame(records) -> pd.DataFrame:
    """Records in the ingest schema; missing autonomy becomes an empty cell."""
    frame = records_frame(records)
    for column in ("autonomy_edu", "autonomy_exp"):
        frame[column] = frame[column].astype("Int64")
    return frame


def write_records(path: Path, records) -> None:
    ok, err = atomic_write_csv(path, records_to_csv_frame(records))
    if not ok:
        raise OSError(f"could not write {path}: {err}")


# ── Generic JSON artifacts ──

def write_model(path: Path, model: BaseModel) -> None:
    ok, err = atomic_write_json(path, model.model_dump(mode="json"))
    if not ok:
        raise OSError(f"could not write {path}: {err}")


def write_report(path: Path, report: AnalysisReport) -> None:
    write_model(path, report)
    logger.info("REPORT_WRITTEN path=%s hypothesis=%s", path, report.hypothesis)


def write_alignment(path: Path, scores: list[AlignmentScore]) -> None:
    ok, err = atomic_write_json(path, {"scores": [s.model_dump(mode="json") for s in scores]})
    if not ok:
        raise OSError(f"could not write {path}: {err}")


def load_alignment(path: Path) -> list[AlignmentScore]:
    data, err = load_json(path)
    if err is not None:
        raise SchemaMismatch(err)
    try:
        return [AlignmentScore.model_validate(s) for s in data["scores"]]
    except (KeyError, TypeError, ValidationError) as e:
        raise SchemaMismatch(f"{Path(path).name}: not an alignment file: {e}") from None


# ── Priors artifact ──

class Provenance(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    input_kind: Literal["ratings", "reports", "published"]
    inputs: list[str]
    input_sha256: str
    seed: int
    created_at: str


class PriorsArtifact(BaseModel):
    """Calibrated priors plus the rule table they were paired with."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: Literal["rae-priors/1"] = config.PRIORS_SCHEMA_VERSION
    priors: PolicyPriors
    rules: RuleTable
    provenance: Provenance


def inputs_digest(paths) -> str:
    """sha256 of one file, or of the sorted (name, sha256) list for several."""
    paths = [Path(p) for p in paths]
    if len(paths) == 1:
        return sha256_file(paths[0])
    digest = hashlib.sha256()
    for path in sorted(paths, key=lambda p: p.name):
        digest.update(f"{path.name}:{sha256_file(path)}\n".encode("utf-8"))
    return digest.hexdigest()


def provenance_timestamp(paths) -> str:
    """SOURCE_DATE_EPOCH when set, else the newest input mtime (UTC ISO-8601)."""
    raw = os.getenv(SOURCE_DATE_EPOCH_ENV, "").strip()
    epoch = None
    if raw:
        try:
            epoch = int(raw)
        except ValueError:
            logger.warning("SOURCE_DATE_EPOCH_INVALID value=%s", raw)
    if epoch is None:
        mtimes = [mtime_epoch(p) for p in paths]
        epoch = max((m for m in mtimes if m is not None), default=0)
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def build_artifact(priors: PolicyPriors, rules: RuleTable, *, input_kind: str, inputs, seed: int) -> PriorsArtifact:
    inputs = [Path(p) for p in inputs]
    return PriorsArtifact(
        priors=priors,
        rules=rules,
        provenance=Provenance(
            input_kind=input_kind,
            inputs=sorted(p.name for p in inputs),
            input_sha256=inputs_digest(inputs),
            seed=seed,
            created_at=provenance_timestamp(inputs),
        ),
    )


def write_priors(path: Path, artifact: PriorsArtifact) -> None:
    write_model(path, artifact)
    logger.info("PRIORS_WRITTEN path=%s sha256=%s", path, artifact.provenance.input_sha256[:12])


def load_priors(path: Path) -> PriorsArtifact:
    data, err = load_json(path)
    if err is not None:
        raise SchemaMismatch(err)
    if not isinstance(data, dict) or data.get("schema_version") != config.PRIORS_SCHEMA_VERSION:
        found = data.get("schema_version") if isinstance(data, dict) else None
        raise SchemaMismatch(f"{Path(path).name}: expected schema_version "
                             f"{config.PRIORS_SCHEMA_VERSION!r}, found {found!r}")
    try:
        return PriorsArtifact.model_validate(data)
    except ValidationError as e:
        raise SchemaMismatch(f"{Path(path).name}: invalid priors artifact: {e}") from None


def verify_artifact(artifact: PriorsArtifact, inputs) -> bool:
    """True when the inputs still hash to the recorded provenance."""
    actual = inputs_digest(inputs)
    expected = artifact.provenance.input_sha256
    if actual != expected:
        logger.warning("PRIORS_VERIFY_MISMATCH expected=%s actual=%s", expected[:12], actual[:12])
        return False
    logger.info("PRIORS_VERIFY_OK sha256=%s", actual[:12])
    return True


# ── Detection for `report` ──

def artifact_kind(data) -> str:
    """Classify a loaded JSON document: report, priors, alignment, weights or unknown."""
    if not isinstance(data, dict):
        return "unknown"
    if data.get("schema_version") == config.PRIORS_SCHEMA_VERSION:
        return "priors"
    if data.get("schema_version") == config.REPORT_SCHEMA_VERSION or "hypothesis" in data:
        return "report"
    if "scores" in data:
        return "alignment"
    if {"w_edu", "w_exp", "w_aff"} <= set(data) or (
            isinstance(data.get("weights"), list) and data["weights"]
            and isinstance(data["weights"][0], dict)):
        return "weights"
    return "unknown"
