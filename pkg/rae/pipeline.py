"""Hypothesis runners (H1-H6) and calibration of policy priors from their reports."""

import itertools
import logging
import math
from typing import Iterable, Mapping

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import config
from .config import log_once
from .core import AIMS, DOMAINS, Aim, Domain, Gender, ItemValue, RatingRecord
from .data_reader import load_json
from .errors import (
    AllTies,
    ConstantInput,
    DegenerateData,
    EmptyGroup,
    InsufficientData,
    InsufficientDraws,
    MissingPair,
    MissingReport,
    SchemaMismatch,
)
from .infer import FitResult, McmcConfig, PpcResult, fit, hdi, posterior_predictive_check
from .ordinal import (
    AGE_DUMMY_NAMES,
    OrdinalData,
    age_dummies,
    encode_age,
    encode_experience,
    encode_gender,
    odds_ratio,
)
from .policy import AimModel, Coefficient, Override, PolicyPriors
from .stats import TestResult, benjamini_hochberg, kruskal_wallis, mann_whitney_u, spearman, wilcoxon_signed_rank

logger = logging.getLogger(__name__)

# Statistical failures that are recorded per cell instead of aborting a family.
CELL_ERRORS = (AllTies, ConstantInput, DegenerateData, EmptyGroup, InsufficientDraws)

_STAGE_INDEX = {"h1_h3": 1, "h4": 4, "h5": 5, "h6": 6}
_CONTROL_COLUMNS = {"educative_control": "autonomy_edu", "explorative_control": "autonomy_exp"}


# ── Report types ──

class _Row(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class CellResult(_Row):
    family: str
    label: str
    domain: Domain | None = None
    aim: Aim | None = None
    result: TestResult | None = None
    error: str | None = None
    p_adjusted: float | None = None
    significant: bool | None = None


class PairwiseRow(_Row):
    aim: Aim
    domain_a: Domain
    domain_b: Domain
    u: float
    z: float
    p_raw: float
    p_adjusted: float
    r: float
    rank_biserial: float
    cles: float
    direction: str
    notable: bool


class MeanRankRow(_Row):
    aim: Aim
    domain: Domain
    mean_rank: float
    n: int


class DistributionRow(_Row):
    aim: Aim
    value_frame: ItemValue
    category: int
    count: int
    percent: float


class CoefficientSummary(_Row):
    model: str
    parameter: str
    mean: float
    sd: float
    hdi_low: float
    hdi_high: float
    hdi_mass: float = config.HDI_MASS
    credible: bool = False
    rhat: float | None = None
    ess_bulk: float | None = None
    odds_ratio: float | None = None
    or_low: float | None = None
    or_high: float | None = None
    or_contrast: str | None = None

    @model_validator(mode="before")
    @classmethod
    def _credible_from_interval(cls, data):
        if isinstance(data, dict) and "hdi_low" in data and "hdi_high" in data:
            data = dict(data)
            data["credible"] = bool(data["hdi_low"] > 0.0 or data["hdi_high"] < 0.0)
        return data


class FitDiagnostics(_Row):
    model: str
    n_obs: int
    max_rhat: float | None
    min_ess: float | None
    divergences: int
    accept_rate: list[float] = Field(default_factory=list)
    ppc: PpcResult | None = None


class AnalysisReport(_Row):
    schema_version: str = config.REPORT_SCHEMA_VERSION
    hypothesis: str
    seed: int = 0
    n_records: int = 0
    n_effective: dict[str, int] = Field(default_factory=dict)
    tests: list[CellResult] = Field(default_factory=list)
    pairwise: list[PairwiseRow] = Field(default_factory=list)
    mean_ranks: list[MeanRankRow] = Field(default_factory=list)
    coefficients: list[CoefficientSummary] = Field(default_factory=list)
    distribution: list[DistributionRow] = Field(default_factory=list)
    diagnostics: list[FitDiagnostics] = Field(default_factory=list)
    notes: list[str] = Field(default_factory=list)
    settings: dict[str, float | int | str | bool] = Field(default_factory=dict)

    def cells(self, family: str) -> list[CellResult]:
        return [c for c in self.tests if c.family == family]

    def coefficient(self, model: str, parameter: str) -> CoefficientSummary | None:
        for c in self.coefficients:
            if c.model == model and c.parameter == parameter:
                return c
        return None

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")


class RunOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = 0
    strict: bool = False
    fit_models: bool = True
    mcmc: McmcConfig = Field(default_factory=McmcConfig)
    hdi_mass: float = config.HDI_MASS
    fdr_q: float = config.FDR_Q
    pairwise_min_r: float = config.PAIRWISE_MIN_R
    ppc_draws: int = config.PPC_DRAWS
    h1_grouping: str = "domain"

    @classmethod
    def from_settings(cls, settings: config.Settings, *, seed: int = 0, strict: bool = False,
                      **overrides) -> "RunOptions":
        return cls(
            seed=seed,
            strict=strict,
            mcmc=McmcConfig.from_settings(settings, seed),
            hdi_mass=settings.hdi_mass,
            fdr_q=settings.fdr_q,
            pairwise_min_r=settings.pairwise_min_r,
            ppc_draws=settings.ppc_draws,
            **overrides,
        )

    def report_settings(self) -> dict:
        return {
            "hdi_mass": self.hdi_mass,
            "fdr_q": self.fdr_q,
            "pairwise_min_r": self.pairwise_min_r,
            "mcmc_chains": self.mcmc.chains,
            "mcmc_warmup": self.mcmc.warmup_draws,
            "mcmc_draws": self.mcmc.post_warmup_draws,
            "h1_grouping": self.h1_grouping,
        }


# ── Frames ──

def records_frame(records: Iterable[RatingRecord]) -> pd.DataFrame:
    """One row per record, enum tokens as strings, missing autonomy as NaN."""
    rows = []
    for r in records:
        rows.append({
            "participant_id": r.participant_id,
            "domain": r.domain.value,
            "aim": r.aim.value,
            "value_frame": r.value_frame.value,
            "rating": r.rating,
            "age_group": r.traits.age_group.value,
            "gender": r.traits.gender.value,
            "crs_experience": r.traits.crs_experience,
            "autonomy_edu": r.autonomy.educative_control if r.autonomy else np.nan,
            "autonomy_exp": r.autonomy.explorative_control if r.autonomy else np.nan,
        })
    return pd.DataFrame(rows, columns=config.EXPECTED_COLUMNS)


def _fit_seed(seed: int, stage: str, index: int) -> int:
    seq = np.random.SeedSequence([seed, _STAGE_INDEX[stage], index])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def _finite_or_none(value: float) -> float | None:
    return float(value) if math.isfinite(value) else None


def _cell_error(options: RunOptions, family: str, label: str, err: Exception, **fields) -> CellResult:
    if options.strict:
        raise err
    log_once(logger, f"{family}:{label}:{type(err).__name__}",
             "CELL_ERROR family=%s cell=%s error=%s detail=%s", family, label, type(err).__name__, err)
    return CellResult(family=family, label=label, error=f"{type(err).__name__}: {err}", **fields)


def _sort_key(row) -> tuple:
    domain = getattr(row, "domain", None)
    aim = getattr(row, "aim", None)
    return (getattr(row, "family", ""), domain.value if domain else "", aim.value if aim else "",
            getattr(row, "label", ""))


def _coefficient_rows(result: FitResult, model: str, mass: float, parameters=None) -> list[CoefficientSummary]:
    rows = []
    for name in result.param_names:
        if parameters is not None and name not in parameters:
            continue
        flat = result.draws[name].ravel()
        low, high = hdi(flat, mass)
        rows.append(CoefficientSummary(
            model=model,
            parameter=name,
            mean=float(flat.mean()),
            sd=float(flat.std(ddof=1)),
            hdi_low=low,
            hdi_high=high,
            hdi_mass=mass,
            rhat=_finite_or_none(result.rhat[name]),
            ess_bulk=_finite_or_none(result.ess_bulk[name]),
        ))
    return rows


def _diagnostics(result: FitResult, model: str, ppc: PpcResult | None) -> FitDiagnostics:
    return FitDiagnostics(
        model=model,
        n_obs=result.n_obs,
        max_rhat=_finite_or_none(result.max_rhat),
        min_ess=_finite_or_none(result.min_ess),
        divergences=result.divergence_count,
        accept_rate=result.accept_rate,
        ppc=ppc,
    )


def _fit_and_summarize(data: OrdinalData, options: RunOptions, stage: str, index: int, model: str,
                       report: dict, parameters=None) -> FitResult | None:
    cfg = options.mcmc.model_copy(update={"seed": _fit_seed(options.seed, stage, index),
                                          "hdi_mass": options.hdi_mass})
    try:
        result = fit(data, cfg)
    except CELL_ERRORS as e:
        report["tests"].append(_cell_error(options, f"{stage}_fit", model, e))
        return None
    ppc = None
    if options.ppc_draws > 0:
        rng = np.random.default_rng([options.seed, _STAGE_INDEX[stage], index, 7])
        ppc = posterior_predictive_check(result, data, rng, n_draws=options.ppc_draws, band_mass=options.hdi_mass)
    report["coefficients"].extend(_coefficient_rows(result, model, options.hdi_mass, parameters))
    report["diagnostics"].append(_diagnostics(result, model, ppc))
    return result


def _new_report() -> dict:
    return {"tests": [], "pairwise": [], "mean_ranks": [], "coefficients": [], "distribution": [],
            "diagnostics": [], "notes": [], "n_effective": {}}


def _finish(hypothesis: str, parts: dict, options: RunOptions, n_records: int) -> AnalysisReport:
    parts["tests"].sort(key=_sort_key)
    report = AnalysisReport(
        hypothesis=hypothesis,
        seed=options.seed,
        n_records=n_records,
        settings=options.report_settings(),
        **parts,
    )
    logger.info("REPORT_DONE hypothesis=%s tests=%d coefficients=%d", hypothesis,
                len(report.tests), len(report.coefficients))
    return report


# ── H1-H3: domain differences per aim ──

def _h1_design(sub: pd.DataFrame, present: list[Domain], grouping: str) -> OrdinalData:
    value_high = (sub["value_frame"] == ItemValue.HIGH.value).to_numpy(dtype=float)
    experience = sub["crs_experience"].astype(int).map(encode_experience).to_numpy(dtype=float)
    y = sub["rating"].astype(int).to_numpy()
    if grouping == "participant":
        participants = sorted(sub["participant_id"].unique())
        index = {p: i for i, p in enumerate(participants)}
        dummies = [(sub["domain"] == d.value).to_numpy(dtype=float) for d in present[1:]]
        X = np.column_stack([value_high, experience, *dummies])
        names = ("value_high", "experience", *(f"domain_{d.value}" for d in present[1:]))
        group = sub["participant_id"].map(index).to_numpy(dtype=int)
        return OrdinalData(X=X, y=y, group=group, n_groups=len(participants),
                           feature_names=names, group_labels=tuple(participants))
    index = {d.value: i for i, d in enumerate(present)}
    group = sub["domain"].map(index).to_numpy(dtype=int)
    return OrdinalData(X=np.column_stack([value_high, experience]), y=y, group=group, n_groups=len(present),
                       feature_names=("value_high", "experience"), group_labels=tuple(d.value for d in present))


def run_h1_h3(records: list[RatingRecord], options: RunOptions | None = None) -> AnalysisReport:
    """Per aim: Kruskal-Wallis across domains, Bonferroni pairwise Mann-Whitney, hierarchical fit."""
    options = options or RunOptions()
    if options.h1_grouping not in ("domain", "participant"):
        raise ValueError(f"unknown grouping {options.h1_grouping!r}")
    df = records_frame(records)
    parts = _new_report()
    for aim_index, aim in enumerate(AIMS):
        sub = df[df["aim"] == aim.value]
        present = [d for d in DOMAINS if (sub["domain"] == d.value).any()]
        absent = [d.value for d in DOMAINS if d not in present]
        if absent:
            parts["notes"].append(f"{aim.value}: no data for {', '.join(absent)}")
        parts["n_effective"][aim.value] = int(len(sub))
        if len(present) < 2:
            err = InsufficientData(f"{aim.value}: fewer than two domains with data")
            if options.strict:
                raise err
            parts["tests"].append(CellResult(family="kruskal_wallis", label=aim.value, aim=aim,
                                             error=f"{type(err).__name__}: {err}"))
            continue

        groups = {d: sub.loc[sub["domain"] == d.value, "rating"].astype(int).to_numpy() for d in present}
        try:
            kw = kruskal_wallis([groups[d] for d in present])
        except CELL_ERRORS as e:
            parts["tests"].append(_cell_error(options, "kruskal_wallis", aim.value, e, aim=aim))
        else:
            parts["tests"].append(CellResult(family="kruskal_wallis", label=aim.value, aim=aim, result=kw,
                                             significant=kw.p_value <= config.ALPHA))
            parts["mean_ranks"].extend(
                MeanRankRow(aim=aim, domain=d, mean_rank=mr, n=int(groups[d].size))
                for d, mr in zip(present, kw.mean_ranks))

        pairs = list(itertools.combinations(present, 2))
        for a, b in pairs:
            res = mann_whitney_u(groups[a], groups[b], adjust=len(pairs))
            parts["pairwise"].append(PairwiseRow(
                aim=aim, domain_a=a, domain_b=b, u=res.statistic, z=res.z, p_raw=res.p_raw,
                p_adjusted=res.p_value, r=res.effect_r, rank_biserial=res.rank_biserial, cles=res.cles,
                direction=res.direction, notable=res.effect_r >= options.pairwise_min_r,
            ))

        if options.fit_models:
            data = _h1_design(sub, present, options.h1_grouping)
            _fit_and_summarize(data, options, "h1_h3", aim_index, aim.value, parts)
    return _finish("h1_h3", parts, options, len(df))


# ── H4: value framing ──

def _frame_means(sub: pd.DataFrame, options: RunOptions, aim: Aim, notes: list[str]) -> pd.DataFrame:
    means = sub.pivot_table(index="participant_id", columns="value_frame", values="rating", aggfunc="mean")
    means = means.reindex(columns=[ItemValue.LOW.value, ItemValue.HIGH.value])
    unpaired = means[means.isna().any(axis=1)]
    if len(unpaired):
        if options.strict:
            raise MissingPair(f"{aim.value}: participant {unpaired.index[0]} lacks a value frame")
        notes.append(f"{aim.value}: dropped {len(unpaired)} unpaired participants")
        logger.warning("H4_UNPAIRED aim=%s dropped=%d", aim.value, len(unpaired))
    return means.dropna()


def run_h4(records: list[RatingRecord], options: RunOptions | None = None) -> AnalysisReport:
    """Paired Wilcoxon (High vs Low frame) on per-participant mean ratings, plus the stacked distribution."""
    options = options or RunOptions()
    df = records_frame(records)
    parts = _new_report()
    for aim in AIMS:
        sub = df[df["aim"] == aim.value]
        paired = _frame_means(sub, options, aim, parts["notes"])
        parts["n_effective"][aim.value] = int(len(paired))
        try:
            res = wilcoxon_signed_rank(paired[ItemValue.HIGH.value].to_numpy(),
                                       paired[ItemValue.LOW.value].to_numpy(), mode="paired")
        except CELL_ERRORS as e:
            parts["tests"].append(_cell_error(options, "wilcoxon_paired", aim.value, e, aim=aim))
        else:
            parts["tests"].append(CellResult(family="wilcoxon_paired", label=aim.value, aim=aim, result=res,
                                             significant=res.p_value <= config.ALPHA))

        for frame in ItemValue:
            ratings = sub.loc[sub["value_frame"] == frame.value, "rating"].astype(int)
            counts = np.bincount(ratings.to_numpy(), minlength=config.N_CATEGORIES + 1)[1:]
            total = int(counts.sum())
            for k, count in enumerate(counts, start=1):
                parts["distribution"].append(DistributionRow(
                    aim=aim, value_frame=frame, category=k, count=int(count),
                    percent=100.0 * count / total if total else 0.0,
                ))
    return _finish("h4", parts, options, len(df))


# ── H5: demographic screen and pooled trait models ──

def _participant_traits(df: pd.DataFrame) -> pd.DataFrame:
    traits = df.groupby("participant_id")[["crs_experience", "gender", "age_group"]].first()
    traits["experience"] = traits["crs_experience"].astype(int).map(encode_experience)
    traits["gender_code"] = traits["gender"].map(lambda g: encode_gender(Gender(g), "effect"))
    traits["age_code"] = traits["age_group"].map(encode_age)
    return traits


_H5_FAMILIES = {"experience": "experience", "gender": "gender_code", "age": "age_code"}


def run_h5(records: list[RatingRecord], options: RunOptions | None = None) -> AnalysisReport:
    """30 Spearman cells per predictor family with BH inside each family; pooled trait fits per aim."""
    options = options or RunOptions()
    df = records_frame(records)
    parts = _new_report()
    traits = _participant_traits(df)
    cell_means = df.groupby(["participant_id", "domain", "aim"])["rating"].mean()

    for family, column in _H5_FAMILIES.items():
        predictor = traits[column].dropna().astype(float)
        cells: list[CellResult] = []
        for domain in DOMAINS:
            for aim in AIMS:
                label = f"{domain.value}/{aim.value}"
                try:
                    ratings = cell_means.xs((domain.value, aim.value), level=("domain", "aim"))
                except KeyError:
                    cells.append(_cell_error(options, family, label, EmptyGroup("no ratings"), domain=domain, aim=aim))
                    continue
                joined = pd.concat([predictor, ratings], axis=1, join="inner").dropna()
                try:
                    res = spearman(joined.iloc[:, 0].to_numpy(), joined.iloc[:, 1].to_numpy())
                except (ConstantInput, ValueError) as e:
                    err = e if isinstance(e, ConstantInput) else InsufficientData(str(e))
                    if options.strict:
                        raise err
                    cells.append(_cell_error(options, family, label, err, domain=domain, aim=aim))
                    continue
                cells.append(CellResult(family=family, label=label, domain=domain, aim=aim, result=res))

        tested = [i for i, c in enumerate(cells) if c.result is not None]
        if tested:
            adjusted, reject = benjamini_hochberg([cells[i].result.p_value for i in tested], options.fdr_q)
            for i, p_adj, rej in zip(tested, adjusted, reject):
                cells[i] = cells[i].model_copy(update={"p_adjusted": float(p_adj), "significant": bool(rej)})
        parts["n_effective"][family] = int(predictor.size)
        parts["tests"].extend(cells)

    if options.fit_models:
        coded = traits.dropna(subset=["gender_code"])
        excluded = len(traits) - len(coded)
        if excluded:
            parts["notes"].append(f"excluded {excluded} participants without a binary gender code from pooled fits")
        for aim_index, aim in enumerate(AIMS):
            sub = df[(df["aim"] == aim.value) & df["participant_id"].isin(coded.index)]
            if sub.empty:
                continue
            present = [d for d in DOMAINS if (sub["domain"] == d.value).any()]
            index = {d.value: i for i, d in enumerate(present)}
            person = coded.loc[sub["participant_id"]]
            X = np.column_stack([
                person["experience"].to_numpy(dtype=float),
                person["gender_code"].to_numpy(dtype=float),
                person["age_code"].to_numpy(dtype=float),
                (sub["value_frame"] == ItemValue.HIGH.value).to_numpy(dtype=float),
            ])
            data = OrdinalData(X=X, y=sub["rating"].astype(int).to_numpy(),
                               group=sub["domain"].map(index).to_numpy(dtype=int), n_groups=len(present),
                               feature_names=("experience", "gender", "age", "value_high"),
                               group_labels=tuple(d.value for d in present))
            parts["n_effective"][f"fit_{aim.value}"] = int(len(data))
            _fit_and_summarize(data, options, "h5", aim_index, aim.value, parts)
    return _finish("h5", parts, options, len(df))


# ── H6: dialogue control ──

def run_h6(records: list[RatingRecord], options: RunOptions | None = None) -> AnalysisReport:
    """One-sample Wilcoxon of each control item vs the midpoint; ordinal regressions on demographics."""
    options = options or RunOptions()
    df = records_frame(records)
    parts = _new_report()
    people = (df.dropna(subset=["autonomy_edu", "autonomy_exp"])
              .groupby("participant_id")[["autonomy_edu", "autonomy_exp", "crs_experience", "gender", "age_group"]]
              .first())
    if len(people) < config.H6_MIN_PARTICIPANTS:
        raise InsufficientData(f"autonomy items present for {len(people)} participants, "
                               f"need {config.H6_MIN_PARTICIPANTS}")
    parts["n_effective"]["participants"] = int(len(people))

    for control, column in _CONTROL_COLUMNS.items():
        try:
            res = wilcoxon_signed_rank(people[column].to_numpy(dtype=float), config.LIKERT_MIDPOINT,
                                       mode="one-sample")
        except CELL_ERRORS as e:
            parts["tests"].append(_cell_error(options, "wilcoxon_one_sample", control, e))
            continue
        parts["tests"].append(CellResult(family="wilcoxon_one_sample", label=control, result=res,
                                         significant=res.p_value <= config.ALPHA))
        parts["n_effective"][control] = res.n_effective

    try:
        rho = spearman(people["autonomy_edu"].to_numpy(dtype=float), people["autonomy_exp"].to_numpy(dtype=float))
    except (ConstantInput, ValueError) as e:
        parts["tests"].append(_cell_error(options, "spearman_controls", "educative~explorative",
                                          e if isinstance(e, ConstantInput) else InsufficientData(str(e))))
    else:
        parts["tests"].append(CellResult(family="spearman_controls", label="educative~explorative", result=rho,
                                         significant=rho.p_value <= config.ALPHA))

    if options.fit_models:
        coded = people[people["gender"].isin([Gender.FEMALE.value, Gender.MALE.value])]
        parts["n_effective"]["regression"] = int(len(coded))
        if len(coded) < len(people):
            parts["notes"].append(f"excluded {len(people) - len(coded)} participants without a binary gender "
                                  "from regressions")
        male = coded["gender"].map(lambda g: encode_gender(Gender(g), "male_dummy")).to_numpy(dtype=float)
        experience = coded["crs_experience"].astype(int).map(encode_experience).to_numpy(dtype=float)
        ages = np.array([age_dummies(a) for a in coded["age_group"]], dtype=float).reshape(len(coded), -1)
        keep = [i for i in range(ages.shape[1]) if ages[:, i].any()]
        X = np.column_stack([male, experience, ages[:, keep]])
        names = ("male", "experience", *(AGE_DUMMY_NAMES[i] for i in keep))
        for index, (control, column) in enumerate(_CONTROL_COLUMNS.items()):
            data = OrdinalData(X=X, y=coded[column].astype(int).to_numpy(), group=np.zeros(0, dtype=int),
                               n_groups=0, feature_names=names)
            start = len(parts["coefficients"])
            result = _fit_and_summarize(data, options, "h6", index, control, parts)
            if result is None:
                continue
            parts["coefficients"][start:] = [_with_odds_ratio(c) for c in parts["coefficients"][start:]]
    return _finish("h6", parts, options, len(df))


def _with_odds_ratio(row: CoefficientSummary) -> CoefficientSummary:
    if not row.parameter.startswith("beta["):
        return row
    if row.parameter == "beta[male]":
        return row.model_copy(update={
            "odds_ratio": odds_ratio(row.mean, "reference_vs_coded"),
            "or_low": odds_ratio(row.hdi_high, "reference_vs_coded"),
            "or_high": odds_ratio(row.hdi_low, "reference_vs_coded"),
            "or_contrast": "Female vs Male",
        })
    return row.model_copy(update={
        "odds_ratio": odds_ratio(row.mean, "coded_vs_reference"),
        "or_low": odds_ratio(row.hdi_low, "coded_vs_reference"),
        "or_high": odds_ratio(row.hdi_high, "coded_vs_reference"),
        "or_contrast": "coded vs reference",
    })


# ── Dispatch ──

RUNNERS = {"h1_h3": run_h1_h3, "h4": run_h4, "h5": run_h5, "h6": run_h6}
_TOKENS = {"h1": "h1_h3", "h2": "h1_h3", "h3": "h1_h3", "h1_h3": "h1_h3", "h4": "h4", "h5": "h5", "h6": "h6"}


def parse_hypotheses(selector: str) -> list[str]:
    """'h1,h2,h3,h4' -> ['h1_h3', 'h4']; unknown tokens raise ValueError."""
    families: list[str] = []
    for token in (t.strip().lower() for t in selector.split(",")):
        if not token:
            continue
        if token == "all":
            return list(config.HYPOTHESIS_FAMILIES)
        family = _TOKENS.get(token)
        if family is None:
            raise ValueError(f"unknown hypothesis token {token!r}")
        if family not in families:
            families.append(family)
    if not families:
        raise ValueError("no hypotheses selected")
    return [f for f in config.HYPOTHESIS_FAMILIES if f in families]


def run_all(records: list[RatingRecord], hypotheses: Iterable[str], options: RunOptions | None = None
            ) -> dict[str, AnalysisReport]:
    options = options or RunOptions()
    return {family: RUNNERS[family](records, options) for family in hypotheses}


# ── Calibration ──

def _intercept_coefficients(report: AnalysisReport) -> dict[Domain, dict[Aim, Coefficient]]:
    intercepts: dict[Domain, dict[Aim, Coefficient]] = {}
    for row in report.coefficients:
        try:
            aim = Aim(row.model)
        except ValueError:
            continue
        if row.parameter.startswith("alpha["):
            token = row.parameter[len("alpha["):-1]
        elif row.parameter.startswith("beta[domain_"):
            token = row.parameter[len("beta[domain_"):-1]
        else:
            continue
        try:
            domain = Domain(token)
        except ValueError:
            continue
        intercepts.setdefault(domain, {})[aim] = Coefficient(
            mean=row.mean, hdi_low=row.hdi_low, hdi_high=row.hdi_high, admitted=row.credible)
    return {d: intercepts[d] for d in DOMAINS if d in intercepts}


def _aim_models(report: AnalysisReport, floors: Mapping[Aim, float]) -> dict[Aim, AimModel]:
    """Cutpoints per aim from the H1-H3 fits.

    The value shift is admitted when its HDI excludes zero or the aim's H4 floor
    was kept; otherwise it is stored as 0.0.
    """
    models = {}
    for aim in AIMS:
        cut = [report.coefficient(aim.value, f"cutpoint[{k}]") for k in range(1, config.N_CATEGORIES)]
        if any(c is None for c in cut):
            continue
        shift = report.coefficient(aim.value, "beta[value_high]")
        admitted = shift is not None and (shift.credible or floors.get(aim, 0.0) > 0.0)
        if shift is not None and not admitted:
            logger.info("CALIBRATE_VALUE_SHIFT_DROPPED aim=%s mean=%.3f", aim.value, shift.mean)
        models[aim] = AimModel(cutpoints=[c.mean for c in cut], value_shift=shift.mean if admitted else 0.0)
    return models


def _trait_coefficients(report: AnalysisReport, parameter: str, admit: bool) -> dict[Aim, Coefficient]:
    coefs = {}
    for aim in AIMS:
        row = report.coefficient(aim.value, parameter)
        if row is None:
            continue
        coefs[aim] = Coefficient(mean=row.mean, hdi_low=row.hdi_low, hdi_high=row.hdi_high,
                                 admitted=admit and row.credible)
    return coefs


def calibrate(reports: Mapping[str, AnalysisReport], *, trait_gain: float = config.TRAIT_GAIN) -> PolicyPriors:
    """Translate H1-H5 reports into policy priors.

    Experience is admitted per aim when its HDI excludes zero. Gender acts only
    through BH-significant (domain, aim) cells of the H5 screen. Age is never admitted.
    An aim keeps its high-value floor only when its H4 test is significant.
    """
    missing = [f for f in ("h1_h3", "h4", "h5") if f not in reports]
    if missing:
        raise MissingReport(f"calibration needs reports for {', '.join(missing)}")
    h1, h4, h5 = reports["h1_h3"], reports["h4"], reports["h5"]

    experience = _trait_coefficients(h5, "beta[experience]", admit=True)
    gender = _trait_coefficients(h5, "beta[gender]", admit=False)
    age = _trait_coefficients(h5, "beta[age]", admit=False)

    overrides = []
    for cell in h5.cells("gender"):
        if not cell.significant or cell.domain is None or cell.aim is None:
            continue
        coef = gender[cell.aim].mean if cell.aim in gender else cell.result.statistic
        overrides.append(Override(domain=cell.domain, aim=cell.aim, coef=coef))
        logger.info("CALIBRATE_GENDER_OVERRIDE domain=%s aim=%s coef=%.3f", cell.domain.value, cell.aim.value, coef)

    floors = {}
    for aim in AIMS:
        default = config.VALUE_FLOORS[aim.value]
        cell = next((c for c in h4.cells("wilcoxon_paired") if c.aim is aim), None)
        kept = cell is not None and cell.result is not None and cell.result.p_value <= config.ALPHA
        floors[aim] = default if kept else 0.0

    for aim, coef in experience.items():
        logger.info("CALIBRATE_EXPERIENCE aim=%s mean=%.3f admitted=%s", aim.value, coef.mean, coef.admitted)

    return PolicyPriors(
        trait_gain=trait_gain,
        value_floors=floors,
        experience=experience,
        gender=gender,
        age=age,
        intercepts=_intercept_coefficients(h1),
        gender_overrides=overrides,
        aim_models=_aim_models(h1, floors),
    )


def load_report(path) -> AnalysisReport:
    data, err = load_json(path)
    if err is not None:
        raise MissingReport(err)
    try:
        return AnalysisReport.model_validate(data)
    except ValidationError as e:
        raise MissingReport(f"unreadable report {path}: {e}") from None


def published_reports() -> dict[str, AnalysisReport]:
    """Reports rebuilt from the published estimates table."""
    data, err = load_json(config.PUBLISHED_ESTIMATES_JSON)
    if err is not None:
        raise SchemaMismatch(err)
    return {k: AnalysisReport.model_validate(v) for k, v in data["reports"].items()}


def default_priors() -> PolicyPriors:
    return calibrate(published_reports())
