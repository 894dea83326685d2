"""Command-line front end: analyze, calibrate, policy, simulate, report.

Exit codes: 0 success, 2 input or usage error, 3 computation error.
Machine-readable output goes to stdout; logs go to stderr.
"""

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd
from pydantic import ValidationError

from . import config
from .artifacts import (
    PriorsArtifact,
    artifact_kind,
    build_artifact,
    ingest,
    load_priors,
    verify_artifact,
    write_alignment,
    write_priors,
    write_records,
    write_report,
)
from .core import (
    AIMS,
    AimWeights,
    AutonomyPref,
    StateVector,
    UserTraits,
    load_profiles,
    parse_age_group,
    parse_domain,
    parse_gender,
    parse_item_value,
    parse_ordinal,
    state_from_dict,
)
from .data_reader import dumps_json, load_json
from .errors import EXIT_COMPUTE, EXIT_INPUT, EXIT_OK, RaeError, SchemaMismatch, SpecValidationError
from .infer import McmcConfig
from .pipeline import (
    AnalysisReport,
    RunOptions,
    calibrate,
    load_report,
    parse_hypotheses,
    published_reports,
    run_all,
)
from .policy import VARIANTS, decide, load_rules
from .sim import PopulationSpec, compare_with_flat, evaluate_policy, generate_population, load_population_spec

logger = logging.getLogger(__name__)

_CALIBRATION_FAMILIES = ("h1_h3", "h4", "h5")


def _seed(args) -> int:
    return args.seed if args.seed is not None else 0


def _output_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_options(args, settings: config.Settings) -> RunOptions:
    seed = _seed(args)
    options = RunOptions.from_settings(settings, seed=seed, strict=args.strict,
                                       fit_models=not args.no_fit, h1_grouping=args.h1_grouping)
    overrides = {}
    if args.chains is not None:
        overrides["chains"] = args.chains
    if args.warmup is not None:
        overrides["warmup_draws"] = args.warmup
    if args.draws is not None:
        overrides["post_warmup_draws"] = args.draws
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        options = options.model_copy(update={"mcmc": McmcConfig.from_settings(settings, seed, **overrides)})
    return options


def _load_records(args):
    result = ingest(Path(args.input), strict=args.strict)
    if not result.records:
        raise SchemaMismatch(f"{Path(args.input).name}: no valid rows")
    for message in result.errors[:5]:
        print(f"skipped: {message}", file=sys.stderr)
    return result.records


# ── analyze ──

def cmd_analyze(args, settings: config.Settings) -> int:
    try:
        families = parse_hypotheses(args.hypotheses)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    records = _load_records(args)
    reports = run_all(records, families, _run_options(args, settings))
    out = _output_dir(args)
    for family, report in reports.items():
        path = out / f"{family}.json"
        write_report(path, report)
        print(path)
    return EXIT_OK


# ── calibrate ──

def _calibration_inputs(args, settings: config.Settings) -> tuple[dict[str, AnalysisReport], str, list[Path]]:
    if args.input:
        records = _load_records(args)
        reports = run_all(records, _CALIBRATION_FAMILIES, _run_options(args, settings))
        return reports, "ratings", [Path(args.input)]
    if args.reports:
        reports = {}
        for raw in args.reports:
            report = load_report(Path(raw))
            reports[report.hypothesis] = report
        return reports, "reports", [Path(p) for p in args.reports]
    return published_reports(), "published", [config.PUBLISHED_ESTIMATES_JSON]


def cmd_calibrate(args, settings: config.Settings) -> int:
    if args.verify:
        artifact = load_priors(Path(args.verify))
        inputs = [Path(args.input)] if args.input else [Path(p) for p in args.reports or []]
        if not inputs:
            inputs = [config.PUBLISHED_ESTIMATES_JSON]
        ok = verify_artifact(artifact, inputs)
        print("OK" if ok else "MISMATCH")
        return EXIT_OK if ok else EXIT_INPUT

    reports, kind, inputs = _calibration_inputs(args, settings)
    if kind == "ratings" and args.output_dir:
        out = _output_dir(args)
        for family, report in reports.items():
            write_report(out / f"{family}.json", report)
    priors = calibrate(reports, trait_gain=settings.trait_gain)
    rules = load_rules(Path(settings.rules_path))
    artifact = build_artifact(priors, rules, input_kind=kind, inputs=inputs, seed=_seed(args))
    path = Path(args.output) if args.output else _output_dir(args) / "priors.json"
    write_priors(path, artifact)
    print(path)
    return EXIT_OK


# ── policy ──

def _state_from_flags(args, settings: config.Settings) -> StateVector:
    if args.state:
        data, err = load_json(Path(args.state))
        if err is not None:
            raise SchemaMismatch(err)
        return state_from_dict(data)
    if not args.domain:
        raise SchemaMismatch("either --state or --domain is required")
    profiles = load_profiles(Path(settings.profiles_path))
    parts = [p.strip() for p in args.controls.split(",")]
    if len(parts) != 2:
        raise SchemaMismatch(f"--controls expects two values, got {args.controls!r}")
    return StateVector(
        domain_profile=profiles[parse_domain(args.domain)],
        item_value=parse_item_value(args.value),
        user_traits=UserTraits(
            crs_experience=parse_ordinal(args.experience, "experience"),
            gender=parse_gender(args.gender),
            age_group=parse_age_group(args.age),
        ),
        autonomy_pref=AutonomyPref(
            educative_control=parse_ordinal(parts[0], "educative_control"),
            explorative_control=parse_ordinal(parts[1], "explorative_control"),
        ),
    )


def _priors_and_rules(args, settings: config.Settings):
    if args.priors:
        artifact = load_priors(Path(args.priors))
        return artifact.priors, artifact.rules
    return calibrate(published_reports(), trait_gain=settings.trait_gain), load_rules(Path(settings.rules_path))


def cmd_policy(args, settings: config.Settings) -> int:
    state = _state_from_flags(args, settings)
    priors, rules = _priors_and_rules(args, settings)
    weights = decide(state, rules, priors, args.variant)
    logger.info("POLICY_DECIDED domain=%s value=%s variant=%s initiative=%s",
                state.domain_profile.domain.value, state.item_value.value, args.variant, weights.initiative.value)
    sys.stdout.write(dumps_json(weights.to_dict()))
    return EXIT_OK


# ── simulate ──

def cmd_simulate(args, settings: config.Settings) -> int:
    spec = load_population_spec(Path(args.spec) if args.spec else config.DEFAULT_POPULATION_JSON)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.n_users is not None:
        updates["n_users"] = args.n_users
    if updates:
        try:
            spec = PopulationSpec.model_validate({**spec.model_dump(), **updates})
        except ValidationError as e:
            raise SpecValidationError(f"invalid population override: {e}") from None
    out = _output_dir(args)

    records = generate_population(spec)
    records_path = out / "records.csv"
    write_records(records_path, records)
    print(records_path)

    priors, rules = _priors_and_rules(args, settings)
    profiles = load_profiles(Path(settings.profiles_path))
    if args.compare_flat:
        scores = list(compare_with_flat(rules, priors, spec, variant=args.variant, profiles=profiles))
    else:
        scores = [evaluate_policy(rules, priors, spec, variant=args.variant, profiles=profiles)]
    alignment_path = out / "alignment.json"
    write_alignment(alignment_path, scores)
    print(alignment_path)
    return EXIT_OK


# ── report ──

def _frame(rows, columns=None) -> str:
    if not rows:
        return "(none)"
    frame = pd.DataFrame(rows, columns=columns)
    return frame.to_string(index=False, float_format=lambda v: f"{v:.4g}")


def _render_report(report: AnalysisReport) -> list[str]:
    lines = [f"== {report.hypothesis} (seed {report.seed}, {report.n_records} records) =="]
    tests = []
    for c in report.tests:
        r = c.result
        tests.append({
            "family": c.family,
            "cell": c.label,
            "statistic": r.statistic if r else None,
            "z": r.z if r else None,
            "p": r.p_value if r else None,
            "p_adj": c.p_adjusted,
            "n": r.n_effective if r else None,
            "r": r.effect_r if r else None,
            "sig": c.significant,
            "error": c.error or "",
        })
    lines += ["", "-- tests --", _frame(tests)]
    if report.mean_ranks:
        lines += ["", "-- mean ranks --", _frame([m.model_dump(mode="json") for m in report.mean_ranks])]
    if report.pairwise:
        lines += ["", "-- pairwise --", _frame([p.model_dump(mode="json") for p in report.pairwise])]
    if report.coefficients:
        cols = ["model", "parameter", "mean", "sd", "hdi_low", "hdi_high", "credible", "rhat", "ess_bulk",
                "odds_ratio", "or_low", "or_high"]
        rows = [{k: c.model_dump(mode="json")[k] for k in cols} for c in report.coefficients]
        lines += ["", "-- coefficients --", _frame(rows, cols)]
    if report.diagnostics:
        rows = [{"model": d.model, "n_obs": d.n_obs, "max_rhat": d.max_rhat, "min_ess": d.min_ess,
                 "divergences": d.divergences,
                 "ppc_all_inside": d.ppc.all_inside if d.ppc else None} for d in report.diagnostics]
        lines += ["", "-- diagnostics --", _frame(rows)]
    if report.distribution:
        table = (pd.DataFrame([d.model_dump(mode="json") for d in report.distribution])
                 .pivot_table(index=["aim", "value_frame"], columns="category", values="percent"))
        lines += ["", "-- rating distribution (%) --", table.to_string(float_format=lambda v: f"{v:.1f}")]
    for note in report.notes:
        lines.append(f"note: {note}")
    return lines


def _render_priors(data: dict) -> list[str]:
    artifact = PriorsArtifact.model_validate(data)
    p = artifact.priors
    prov = artifact.provenance
    lines = [f"== priors ({artifact.schema_version}) from {prov.input_kind} {', '.join(prov.inputs)} ==",
             f"sha256 {prov.input_sha256}  seed {prov.seed}  created {prov.created_at}", ""]
    lines += ["-- emphasis map --", _frame([{"emphasis": k.value, "weight": v} for k, v in p.emphasis_weights.items()])]
    lines += ["", "-- value floors --", _frame([{"aim": a.value, "floor": v} for a, v in p.value_floors.items()])]
    traits = []
    for name, table in (("experience", p.experience), ("gender", p.gender), ("age", p.age)):
        for aim, c in table.items():
            traits.append({"trait": name, "aim": aim.value, "mean": c.mean, "hdi_low": c.hdi_low,
                           "hdi_high": c.hdi_high, "admitted": c.admitted})
    lines += ["", "-- trait coefficients --", _frame(traits)]
    intercepts = [{"domain": d.value, "aim": a.value, "mean": c.mean, "hdi_low": c.hdi_low, "hdi_high": c.hdi_high}
                  for d, row in p.intercepts.items() for a, c in row.items()]
    lines += ["", "-- domain intercepts --", _frame(intercepts)]
    overrides = [{"kind": kind, "domain": o.domain.value, "aim": o.aim.value, "coef": o.coef}
                 for kind, items in (("gender", p.gender_overrides), ("age", p.age_overrides)) for o in items]
    lines += ["", "-- overrides --", _frame(overrides)]
    return lines


def _render_alignment(data: dict) -> list[str]:
    rows = []
    for s in data["scores"]:
        row = {"label": s["label"], "n": s["n"], "overall_gap": s["overall_gap"],
               "initiative_mismatch": s["initiative_mismatch"]}
        row.update({f"gap_{aim.value}": s["mean_gap"].get(aim.value) for aim in AIMS})
        rows.append(row)
    return ["== alignment ==", _frame(rows)]


def _render_weights(data: dict) -> list[str]:
    items = data["weights"] if "weights" in data else [data]
    rows = []
    for item in items:
        w = AimWeights.from_dict(item)
        t_edu, t_exp, t_aff = w.ternary()
        rows.append({"w_edu": w.w_edu, "w_exp": w.w_exp, "w_aff": w.w_aff, "initiative": w.initiative.value,
                     "t_edu": t_edu, "t_exp": t_exp, "t_aff": t_aff})
    return ["== aim weights ==", _frame(rows)]


_RENDERERS = {
    "report": lambda data: _render_report(AnalysisReport.model_validate(data)),
    "priors": _render_priors,
    "alignment": _render_alignment,
    "weights": _render_weights,
}


def cmd_report(args, settings: config.Settings) -> int:
    for raw in args.paths:
        data, err = load_json(Path(raw))
        if err is not None:
            raise SchemaMismatch(err)
        kind = artifact_kind(data)
        renderer = _RENDERERS.get(kind)
        if renderer is None:
            raise SchemaMismatch(f"{Path(raw).name}: not a recognised artifact")
        try:
            lines = renderer(data)
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaMismatch(f"{Path(raw).name}: malformed {kind}: {e}") from None
        print("\n".join(lines))
        print()
    return EXIT_OK


# ── Parser ──

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--strict", action="store_true", help="abort on the first row or cell error")
    common.add_argument("--output-dir", default=".", help="directory for written artifacts")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    mcmc = argparse.ArgumentParser(add_help=False)
    mcmc.add_argument("--no-fit", action="store_true", help="skip the Bayesian model fits")
    mcmc.add_argument("--chains", type=int, default=None)
    mcmc.add_argument("--warmup", type=int, default=None)
    mcmc.add_argument("--draws", type=int, default=None)
    mcmc.add_argument("--workers", type=int, default=None, help="chains sampled in parallel threads")
    mcmc.add_argument("--h1-grouping", default="domain", choices=["domain", "participant"])

    parser = argparse.ArgumentParser(prog="rae", description="Recommendation aim-adaptation engine.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common, mcmc], help="run hypothesis tests on a ratings CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--hypotheses", default="all", help="comma list of h1..h6, or 'all'")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("calibrate", parents=[common, mcmc], help="build a priors artifact")
    source = p.add_mutually_exclusive_group()
    source.add_argument("--input", help="ratings CSV (runs h1-h5 first)")
    source.add_argument("--reports", nargs="+", help="h1_h3, h4 and h5 report files")
    p.add_argument("--output", help="artifact path (default <output-dir>/priors.json)")
    p.add_argument("--verify", metavar="PRIORS", help="check an artifact's provenance hash against the inputs")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("policy", parents=[common], help="decide aim weights for one state")
    p.add_argument("--priors", help="priors artifact (default: published estimates)")
    p.add_argument("--variant", default="rule", choices=VARIANTS)
    p.add_argument("--state", help="state as a JSON file")
    p.add_argument("--domain")
    p.add_argument("--value", default="Low")
    p.add_argument("--experience", default="3")
    p.add_argument("--gender", default="Undisclosed")
    p.add_argument("--age", default="A25_34")
    p.add_argument("--controls", default="3,3", help="educative,explorative control preference (1-5)")
    p.set_defaults(func=cmd_policy)

    p = sub.add_parser("simulate", parents=[common], help="generate a population and score a policy")
    p.add_argument("--spec", help="population spec JSON (default: population_default.json)")
    p.add_argument("--priors", help="priors artifact (default: published estimates)")
    p.add_argument("--variant", default="prior", choices=VARIANTS)
    p.add_argument("--n-users", type=int, default=None)
    p.add_argument("--compare-flat", action="store_true", help="also score the flat 0.5 baseline")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", parents=[common], help="print JSON artifacts as text tables")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config.configure_logging(getattr(logging, args.log_level))
    settings = config.load_settings()
    try:
        return args.func(args, settings)
    except RaeError as e:
        logger.error("COMMAND_FAILED command=%s error=%s detail=%s", args.command, type(e).__name__, e)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error("COMMAND_FAILED command=%s error=OSError detail=%s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
