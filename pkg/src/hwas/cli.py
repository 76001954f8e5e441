"""Command-line entry point.

Exit codes: 0 on success, 1 for invalid input, 2 for internal errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .config import RunConfig
from .crossover import VARIANTS
from .errors import InputValidationError
from .exposure import load_grid
from .ingest import GemTable, StudyFilters, load_gem, parse_visits
from .pipeline import run_pipeline, validate_bundle
from .synth import SynthScenario, generate_synthetic, scenario_to_dict

log = logging.getLogger("hwas")

STAGES = {
    "screen": ("screen",),
    "stage2": ("screen", "stage2"),
    "stratified": ("screen", "stratified"),
    "sensitivity": ("screen", "sensitivity"),
    "pipeline": ("screen", "stage2", "stratified", "sensitivity"),
}
INPUT_FLAGS = ("visits", "gem", "holidays", "temperature", "grid", "membership", "descriptions")


def _add_common(p: argparse.ArgumentParser, with_variant=False):
    p.add_argument("--config", help="YAML or JSON run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--seed", type=int, help="random seed recorded with the run")
    for name in INPUT_FLAGS:
        p.add_argument(f"--{name}", help=f"path to the {name} file (overrides the config)")
    if with_variant:
        p.add_argument("--variant", choices=sorted(VARIANTS), help="stage-2 model variant")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hwas", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-check", help="parse and validate the visits file, print a summary")
    _add_common(p)
    p = sub.add_parser("link-temperature", help="aggregate gridded Tmax to tract daily values")
    _add_common(p)
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage(s) and write result files")
        _add_common(p, with_variant=name != "screen")
    p = sub.add_parser("synth", help="write a synthetic input bundle with known truth")
    p.add_argument("--config", help="YAML scenario file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-codes", type=int)
    return parser


def load_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    overrides = {k: getattr(args, k) for k in INPUT_FLAGS if getattr(args, k, None)}
    if overrides:
        changes["inputs"] = type(config.inputs)(**(vars(config.inputs) | overrides))
    if args.config:
        # relative input paths resolve against the config file's directory
        base = Path(args.config).resolve().parent
        inputs = changes.get("inputs", config.inputs)
        resolved = {k: (v if k in overrides or v is None or Path(v).is_absolute() else str(base / v))
                    for k, v in vars(inputs).items()}
        changes["inputs"] = type(config.inputs)(**resolved)
    config = config.replace(**changes) if changes else config
    config.validate()
    return config


def _ingest_check(args) -> int:
    config = load_config(args)
    if not config.inputs.visits:
        raise InputValidationError("--visits is required")
    gem = load_gem(config.inputs.gem) if config.inputs.gem else GemTable({})
    filters = StudyFilters(tuple(config.years), frozenset(config.season_months), config.min_age,
                           config.keep_missing_age)
    parsed = parse_visits(config.inputs.visits, gem, filters)
    summary = parsed.summary() | {"unmapped_codes": dict(sorted(parsed.unmapped_codes.items()))}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(summary, indent=2, sort_keys=True)
    (out / "ingest_summary.json").write_text(text + "\n")
    print(text)
    return 0


def _link_temperature(args) -> int:
    config = load_config(args)
    if not (config.inputs.grid and config.inputs.membership):
        raise InputValidationError("--grid and --membership are required")
    series = load_grid(config.inputs.grid, config.inputs.membership)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    long = series.to_long()
    long["date"] = long["date"].dt.strftime("%Y-%m-%d")
    long.to_csv(out / "temperature.csv", index=False, float_format="%.6g", lineterminator="\n")
    print(f"wrote {len(long)} tract-days to {out / 'temperature.csv'}")
    return 0


def _synth(args) -> int:
    data = {}
    if args.config:
        try:
            data = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise InputValidationError(f"cannot read scenario {args.config}: {exc}") from exc
    if args.seed is not None:
        data["seed"] = args.seed
    if args.n_codes is not None:
        data["n_codes"] = args.n_codes
    try:
        scenario = SynthScenario(**data)
    except (TypeError, ValueError) as exc:
        raise InputValidationError(f"invalid scenario: {exc}") from exc
    paths = generate_synthetic(scenario, args.out)
    (Path(args.out) / "scenario.json").write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def _stages(args) -> int:
    config = load_config(args)
    result = run_pipeline(config, args.out, stages=STAGES[args.command], variant=getattr(args, "variant", None))
    chash = validate_bundle(args.out)
    retained = result.screening.retained_codes
    print(f"config_hash {chash}; {result.screening.family_size} codes screened, {len(retained)} retained")
    for name, res in result.stage2.items():
        sig = sorted(c for c, r in res.items() if r.significant)
        print(f"{name}: {len(sig)} significant ({', '.join(sig) or '-'})")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"ingest-check": _ingest_check, "link-temperature": _link_temperature, "synth": _synth}
    try:
        return handler.get(args.command, _stages)(args)
    except InputValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
