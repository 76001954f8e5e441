"""End-to-end orchestration, result files and run metadata."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import RunConfig
from .crossover import (
    VARIANTS, AnalysisVariant, CodeResult, StratifiedResult, as_grid, compare_variants,
    run_stage2, run_stratified, stratum_labels, variant_from_config,
)
from .errors import BundleMismatch, InputValidationError
from .exposure import ExposureSeries, PercentileAnchors, load_grid, load_temperature, percentile_anchors
from .ingest import GemTable, StudyFilters, load_gem, load_holidays, parse_visits, visit_frame
from .screening import ScreeningResult, screen

log = logging.getLogger(__name__)

SCREENING_COLUMNS = ["code", "description", "irr", "ci_low", "ci_high", "raw_p", "adj_p", "count", "rel_freq",
                     "crit_slope", "crit_freq", "crit_count", "retained"]
MANHATTAN_COLUMNS = ["code", "chapter", "neg_log10_adj_p", "retained"]
DLNM_COLUMNS = ["code", "variant", "contrast", "or_point", "ci_low", "ci_high", "n_strata", "n_dropped_strata",
                "stable", "significant", "error"]
STRATIFIED_COLUMNS = ["strat_var", "stratum"] + DLNM_COLUMNS + ["stability_reason"]
SENSITIVITY_COLUMNS = ["variant", "dropped_codes", "new_codes"]
FLOAT_FORMAT = "%.6g"


@dataclass
class AnalysisInputs:
    visits: pd.DataFrame
    exposure: ExposureSeries
    holidays: frozenset
    anchors: PercentileAnchors
    ingest_summary: dict = field(default_factory=dict)
    digests: dict = field(default_factory=dict)
    descriptions: dict = field(default_factory=dict)


@dataclass
class PipelineResult:
    screening: ScreeningResult | None = None
    stage2: dict[str, dict[str, CodeResult]] = field(default_factory=dict)
    stratified: list[StratifiedResult] = field(default_factory=list)
    sensitivity: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    files: dict[str, Path] = field(default_factory=dict)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def load_inputs(config: RunConfig) -> AnalysisInputs:
    """Parse and validate every input named in ``config.inputs``."""
    inp = config.inputs
    if not inp.visits:
        raise InputValidationError("config.inputs.visits is required")
    if not inp.temperature and not (inp.grid and inp.membership):
        raise InputValidationError("need inputs.temperature or inputs.grid + inputs.membership")
    paths = {k: v for k, v in vars(inp).items() if v}
    for name, p in paths.items():
        if not Path(p).is_file():
            raise InputValidationError(f"input {name} not found: {p}")
    gem = load_gem(inp.gem) if inp.gem else GemTable({})
    holidays = load_holidays(inp.holidays) if inp.holidays else frozenset()
    filters = StudyFilters(tuple(config.years), frozenset(config.season_months), config.min_age,
                           config.keep_missing_age)
    parsed = parse_visits(inp.visits, gem, filters)
    if not parsed.visits:
        raise InputValidationError("no visits survived parsing and filtering")
    exposure = load_temperature(inp.temperature) if inp.temperature else load_grid(inp.grid, inp.membership)
    anchors = percentile_anchors(exposure.citywide, config.season_months, config.years)
    descriptions = {}
    if inp.descriptions:
        d = pd.read_csv(inp.descriptions, dtype=str)
        descriptions = dict(zip(d["code"], d["description"]))
    summary = parsed.summary() | {"unmapped_codes": int(sum(parsed.unmapped_codes.values()))}
    return AnalysisInputs(
        visits=visit_frame(parsed.visits), exposure=exposure, holidays=holidays, anchors=anchors,
        ingest_summary=summary, digests={k: file_digest(v) for k, v in sorted(paths.items())},
        descriptions=descriptions,
    )


def _fmt_bool(frame: pd.DataFrame) -> pd.DataFrame:
    for col in frame.columns:
        if frame[col].dtype == bool:
            frame[col] = frame[col].map({True: "true", False: "false"})
    return frame


def _write(frame: pd.DataFrame, columns, path: Path, config_hash: str) -> Path:
    frame = frame.reindex(columns=columns).copy()
    frame["config_hash"] = config_hash
    _fmt_bool(frame).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def screening_frame(result: ScreeningResult, descriptions=None) -> pd.DataFrame:
    f = result.to_frame()
    if f.empty:
        return pd.DataFrame(columns=SCREENING_COLUMNS)
    descriptions = descriptions or {}
    return pd.DataFrame({
        "code": f["code"], "description": f["code"].map(lambda c: descriptions.get(c, "")),
        "irr": f["irr"], "ci_low": f["ci_low"], "ci_high": f["ci_high"], "raw_p": f["raw_p"],
        "adj_p": f["adj_p"], "count": f["total_count"], "rel_freq": f["rel_freq_above_p70"],
        "crit_slope": f["crit_slope"], "crit_freq": f["crit_freq"], "crit_count": f["crit_count"],
        "retained": f["retained"],
    })


def _result_rows(r: CodeResult) -> list[dict]:
    base = {"code": r.code, "variant": r.variant, "n_strata": r.n_strata, "n_dropped_strata": r.n_dropped_strata,
            "stable": r.stable, "significant": r.significant, "error": r.error}
    if r.error or not r.estimates:
        return [base | {"contrast": "", "or_point": np.nan, "ci_low": np.nan, "ci_high": np.nan}]
    return [base | {"contrast": e.contrast_name, "or_point": e.point, "ci_low": e.ci_low, "ci_high": e.ci_high}
            for e in r.estimates]


def dlnm_frame(results_by_variant: dict[str, dict[str, CodeResult]]) -> pd.DataFrame:
    rows = [row for name in results_by_variant for code in sorted(results_by_variant[name])
            for row in _result_rows(results_by_variant[name][code])]
    return pd.DataFrame(rows, columns=DLNM_COLUMNS)


def stratified_frame(results: list[StratifiedResult]) -> pd.DataFrame:
    rows = []
    for s in results:
        for row in _result_rows(s.result):
            rows.append({"strat_var": s.strat_var, "stratum": s.stratum, **row,
                         "stability_reason": s.stability_reason})
    return pd.DataFrame(rows, columns=STRATIFIED_COLUMNS)


def sensitivity_frame(rows) -> pd.DataFrame:
    return pd.DataFrame([{"variant": r.variant, "dropped_codes": ";".join(r.dropped_codes),
                          "new_codes": ";".join(r.new_codes)} for r in rows], columns=SENSITIVITY_COLUMNS)


def _decisions(config: RunConfig, stages, variants, result: PipelineResult) -> list[str]:
    out = [
        "percentile_estimator=linear_order_statistics",
        "citywide_temperature=unweighted_tract_mean",
        "extreme_day_rule=" + (">p95" if config.extreme_strict else ">=p95"),
        f"stage1_year_coding={config.year_coding}",
        "stage1_pvalue=wald_quasi_likelihood_se",
        "stage1_hot_day_rule=tmax>p70",
        "missing_age=" + ("retained_overall_excluded_from_age_strata" if config.keep_missing_age else "dropped"),
    ]
    if result.screening is not None:
        out.append(f"bh_family=all_fitted_codes(n={result.screening.family_size})")
    if any(s in stages for s in ("stage2", "stratified", "sensitivity")):
        out += [
            f"stage2_missing_tract={config.stage2_missing_tract}",
            f"stage2_unknown_tract={'citywide_fallback' if config.tract_fallback_citywide else 'dropped'}",
            "exposure_basis_domain=analysis_sample_lagged_min_max",
            "exposure_basis_first_column_dropped",
            "lag_knots=log_spaced_from_lag1",
            "identical_visit_strata_weighted",
        ]
    if "sens_ii" in variants:
        out.append("fixed28_epoch=first_in_season_monday")
    if "stratified" in stages:
        out.append("stratified_code_list=" + ("rescreened" if config.stratified_rescreen else "pooled_stage1"))
    return out


def config_for_variant(config: RunConfig, name: str) -> RunConfig:
    """Copy of ``config`` with the stage-2 settings of a named variant."""
    if name not in VARIANTS:
        raise InputValidationError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    v = VARIANTS[name]
    return config.replace(ref_percentile=v.ref_percentile, target_percentile=v.target_percentile,
                          exposure_degree=v.exposure_degree, max_lag=v.max_lag, lag_knots=v.lag_knots,
                          referent=v.referent)


def run_pipeline(config: RunConfig, out_dir, stages=("screen", "stage2", "stratified", "sensitivity"),
                 inputs: AnalysisInputs | None = None, variant: str | None = None) -> PipelineResult:
    """Run the requested stages and write their result files plus run_metadata.json."""
    if variant:
        config = config_for_variant(config, variant)
    main_variant: AnalysisVariant = variant_from_config(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs = inputs or load_inputs(config)
    chash = config.config_hash()
    result = PipelineResult()
    grid = as_grid(inputs.exposure)

    result.screening = screen(inputs.visits, inputs.exposure.citywide, inputs.anchors, config, inputs.holidays)
    retained = result.screening.retained_codes
    result.files["screening_results"] = _write(screening_frame(result.screening, inputs.descriptions),
                                               SCREENING_COLUMNS, out / "screening_results.csv", chash)
    result.files["manhattan"] = _write(result.screening.manhattan_frame(), MANHATTAN_COLUMNS,
                                       out / "manhattan.csv", chash)

    variants_run: list[str] = []
    if "stage2" in stages or "sensitivity" in stages:
        result.stage2[main_variant.name] = run_stage2(retained, inputs.visits, grid, inputs.anchors, main_variant,
                                                      inputs.holidays, config)
        variants_run.append(main_variant.name)
    if "sensitivity" in stages:
        names = [v for v in config.variants if v in VARIANTS]
        if "primary" not in result.stage2:
            result.stage2["primary"] = run_stage2(retained, inputs.visits, grid, inputs.anchors, "primary",
                                                  inputs.holidays, config)
        for name in names:
            if name not in result.stage2:
                result.stage2[name] = run_stage2(retained, inputs.visits, grid, inputs.anchors, name,
                                                 inputs.holidays, config)
        ordered = {n: result.stage2[n] for n in ["primary"] + [n for n in names if n != "primary"]}
        result.stage2 = ordered | {k: v for k, v in result.stage2.items() if k not in ordered}
        variants_run = list(result.stage2)
        result.sensitivity = compare_variants(ordered)
        result.files["sensitivity_results"] = _write(sensitivity_frame(result.sensitivity), SENSITIVITY_COLUMNS,
                                                     out / "sensitivity_results.csv", chash)
    if result.stage2:
        result.files["dlnm_results"] = _write(dlnm_frame(result.stage2), DLNM_COLUMNS, out / "dlnm_results.csv", chash)

    if "stratified" in stages:
        for strat_var in config.strat_vars:
            by_stratum = None
            if config.stratified_rescreen:
                labels = stratum_labels(inputs.visits, strat_var)
                by_stratum = {}
                for level in sorted(set(labels.dropna())):
                    sub = inputs.visits[(labels == level).to_numpy()]
                    by_stratum[level] = screen(sub, inputs.exposure.citywide, inputs.anchors, config,
                                               inputs.holidays).retained_codes
            result.stratified += run_stratified(retained, inputs.visits, grid, inputs.anchors, strat_var,
                                                main_variant, inputs.holidays, config, codes_by_stratum=by_stratum)
        result.files["stratified_results"] = _write(stratified_frame(result.stratified), STRATIFIED_COLUMNS,
                                                    out / "stratified_results.csv", chash)

    result.metadata = {
        "package_version": __version__,
        "config_hash": chash,
        "config": {k: v for k, v in config.to_dict().items() if k not in ("workers", "inputs")},
        "input_digests": inputs.digests,
        "percentile_anchors": inputs.anchors.to_dict(),
        "ingest": inputs.ingest_summary,
        "stages": list(stages),
        "variant": main_variant.name,
        "variants_run": variants_run,
        "screening": {
            "family_size": result.screening.family_size,
            "n_days": result.screening.n_days,
            "n_days_without_temperature": result.screening.n_days_without_temperature,
            "retained_codes": retained,
            "pruned_design_columns": result.screening.dropped_design_columns,
        },
        "dropped_strata": {
            name: {code: r.n_dropped_strata for code, r in res.items()} for name, res in result.stage2.items()
        },
        "design_decisions": _decisions(config, stages, variants_run, result),
        "output_files": sorted(p.name for p in result.files.values()),
    }
    meta_path = out / "run_metadata.json"
    meta_path.write_text(json.dumps(result.metadata, indent=2, sort_keys=True, default=_json_default) + "\n")
    result.files["run_metadata"] = meta_path
    return result


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not serializable: {type(obj)}")


def validate_bundle(out_dir) -> str:
    """Check that every result file carries the hash recorded in run_metadata.json."""
    out = Path(out_dir)
    meta = json.loads((out / "run_metadata.json").read_text())
    expected = meta["config_hash"]
    for name in meta.get("output_files", []):
        path = out / name
        if path.suffix != ".csv":
            continue
        hashes = set(pd.read_csv(path, usecols=["config_hash"], dtype=str)["config_hash"].dropna())
        if hashes - {expected}:
            raise BundleMismatch(f"{name} carries config hash {sorted(hashes)} != {expected}")
    return expected
