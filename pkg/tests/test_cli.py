import json

import pandas as pd
import pytest

from hwas.cli import main
from hwas.errors import BundleMismatch
from hwas.pipeline import (
    DLNM_COLUMNS, SCREENING_COLUMNS, SENSITIVITY_COLUMNS, STRATIFIED_COLUMNS, validate_bundle,
)


def _args(bundle, out, *extra):
    d, p = bundle
    return ["--out", str(out), "--visits", str(p["visits"]), "--gem", str(p["gem"]), "--holidays",
            str(p["holidays"]), "--temperature", str(p["temperature"]), *extra]


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "run.yaml"
    path.write_text("years: [2011, 2013]\nstrat_vars: [sex]\n")
    return path


@pytest.fixture(scope="module")
def pipeline_out(synth_bundle, config_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["pipeline", "--config", str(config_file)] + _args(synth_bundle, out)) == 0
    return out


def test_all_outputs_present_with_fixed_columns(pipeline_out):
    expected = {"screening_results.csv": SCREENING_COLUMNS, "dlnm_results.csv": DLNM_COLUMNS,
                "stratified_results.csv": STRATIFIED_COLUMNS, "sensitivity_results.csv": SENSITIVITY_COLUMNS,
                "manhattan.csv": ["code", "chapter", "neg_log10_adj_p", "retained"]}
    for name, cols in expected.items():
        frame = pd.read_csv(pipeline_out / name)
        assert list(frame.columns) == cols + ["config_hash"]


def test_metadata_anchors_and_hash(pipeline_out, small_synth):
    meta = json.loads((pipeline_out / "run_metadata.json").read_text())
    a = small_synth.anchors
    assert meta["percentile_anchors"]["p95"] == pytest.approx(a.p95, abs=1e-6)
    assert meta["percentile_anchors"]["p50"] == pytest.approx(a.p50, abs=1e-6)
    assert validate_bundle(pipeline_out) == meta["config_hash"]
    assert "stage2_missing_tract=exclude" in meta["design_decisions"]
    assert set(meta["input_digests"]) == {"visits", "gem", "holidays", "temperature"}
    assert meta["variants_run"] == ["primary", "sens_i", "sens_ii", "sens_iii", "sens_iv"]


def test_rerun_byte_identical(pipeline_out, synth_bundle, config_file, tmp_path):
    assert main(["pipeline", "--config", str(config_file), "--workers", "2"] + _args(synth_bundle, tmp_path)) == 0
    for f in sorted(pipeline_out.iterdir()):
        assert (tmp_path / f.name).read_bytes() == f.read_bytes(), f.name


def test_hash_mismatch_detected(pipeline_out, tmp_path):
    for f in pipeline_out.iterdir():
        (tmp_path / f.name).write_bytes(f.read_bytes())
    frame = pd.read_csv(tmp_path / "manhattan.csv", dtype=str)
    frame["config_hash"] = "0" * 16
    frame.to_csv(tmp_path / "manhattan.csv", index=False)
    with pytest.raises(BundleMismatch):
        validate_bundle(tmp_path)


def test_ref70_config_labelled_sens_i(synth_bundle, config_file, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(config_file.read_text() + "ref_percentile: 0.70\n")
    assert main(["stage2", "--config", str(cfg)] + _args(synth_bundle, tmp_path / "o")) == 0
    dl = pd.read_csv(tmp_path / "o" / "dlnm_results.csv")
    assert set(dl["variant"]) == {"sens_i"}


def test_variant_flag(synth_bundle, config_file, tmp_path):
    assert main(["stage2", "--config", str(config_file), "--variant", "sens_iv"] + _args(synth_bundle, tmp_path)) == 0
    dl = pd.read_csv(tmp_path / "dlnm_results.csv")
    assert set(dl["variant"]) == {"sens_iv"}
    assert "cum0-5" in set(dl["contrast"])


def test_exit_code_for_bad_input(synth_bundle, tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("visit_id\nv1\n")
    d, p = synth_bundle
    rc = main(["screen", "--out", str(tmp_path / "o"), "--visits", str(tmp_path / "bad.csv"),
               "--temperature", str(p["temperature"])])
    assert rc == 1
    assert "error" in capsys.readouterr().err
    assert main(["screen", "--out", str(tmp_path / "o"), "--visits", str(tmp_path / "missing.csv"),
                 "--temperature", str(p["temperature"])]) == 1


def test_exit_code_for_internal_error(monkeypatch, synth_bundle, tmp_path):
    import hwas.cli as cli

    def boom(*a, **k):
        raise RuntimeError("boom")
    monkeypatch.setattr(cli, "run_pipeline", boom)
    assert main(["screen"] + _args(synth_bundle, tmp_path)) == 2


def test_ingest_check_and_link_temperature(synth_bundle, tmp_path, capsys):
    assert main(["ingest-check"] + _args(synth_bundle, tmp_path)) == 0
    summary = json.loads((tmp_path / "ingest_summary.json").read_text())
    assert summary["n_visits"] > 0
    pd.DataFrame({"cell_id": ["c1", "c2"], "date": ["2012-07-01"] * 2, "tmax_c": [30.0, 32.0]}).to_csv(
        tmp_path / "grid.csv", index=False)
    pd.DataFrame({"cell_id": ["c1", "c2"], "tract_id": ["A", "A"]}).to_csv(tmp_path / "m.csv", index=False)
    assert main(["link-temperature", "--out", str(tmp_path / "t"), "--grid", str(tmp_path / "grid.csv"),
                 "--membership", str(tmp_path / "m.csv")]) == 0
    assert pd.read_csv(tmp_path / "t" / "temperature.csv")["tmax_c"].tolist() == [31.0]


def test_synth_subcommand(tmp_path):
    (tmp_path / "s.yaml").write_text("n_codes: 4\nyears: [2011, 2011]\neffects: {1: {0: 0.1}}\n")
    assert main(["synth", "--config", str(tmp_path / "s.yaml"), "--seed", "3", "--out", str(tmp_path / "b")]) == 0
    truth = pd.read_csv(tmp_path / "b" / "truth.csv")
    assert truth["injected"].sum() == 11
    assert main(["synth", "--out", str(tmp_path / "x"), "--n-codes", "-1"]) == 1
