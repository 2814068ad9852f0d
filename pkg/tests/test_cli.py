"""End-to-end tests of the command-line pipeline on miniature runs."""

import json
from pathlib import Path

import numpy as np
import pytest

from dltomo.cli import load_run_config, main
from dltomo.io import read_manifest, read_records, read_report, read_trace, read_truth

# a configuration small enough for fast end-to-end runs: 8 scans, 4 bins,
# single-photon-scale fields so a low cutoff suffices
SMALL_CONFIG = {
    "fields": {"Ep": 2.3, "Es": 4.247, "Ec1": 0.1, "Ec2": 0.032968},
    "scan": {"burst_len": 0.04},
    "n_bins": 4,
    "cutoff": 14,
    "bootstrap": 0,
    "seed": 3,
}


@pytest.fixture(scope="module")
def small_config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return str(path)


@pytest.fixture(scope="module")
def simulated(tmp_path_factory, small_config_path):
    out = tmp_path_factory.mktemp("run")
    code = main(["simulate", "--config", small_config_path, "--out", str(out)])
    assert code == 0
    return out


class TestRunConfig:
    def test_defaults(self):
        config = load_run_config(None)
        params, fields, schedule, scan, noise = config.resolve()
        assert params.Gamma == 1.0
        assert fields.Ep == 3.3
        assert config.n_bins == 10

    def test_bundled_single_photon(self):
        config = load_run_config("single-photon")
        assert config.fields["Ep"] == 2.3
        assert config.cutoff == 15

    def test_atomic_preset_file_accepted_directly(self, tmp_path):
        # a bare AtomicParams JSON is wrapped in the default run config
        from importlib import resources

        src = Path(str(resources.files("dltomo") / "presets" / "paper-default.json"))
        config = load_run_config(str(src))
        assert isinstance(config.atomic, dict)
        assert config.atomic["Gamma"] == 1.0

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"seed": 1, "wavelength": 780}')
        with pytest.raises(Exception, match="wavelength"):
            load_run_config(str(path))


class TestSimulate:
    def test_outputs_exist(self, simulated):
        for name in (
            "trace.npy", "trace.json", "vacuum.npy", "reference.npy",
            "truth.csv", "reference_truth.csv", "config.json",
        ):
            assert (simulated / name).exists()

    def test_missing_seed_exits_2(self, tmp_path):
        code = main(["simulate", "--out", str(tmp_path / "x")])
        assert code == 2

    def test_rerun_bit_identical(self, tmp_path, small_config_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", small_config_path, "--out", str(a)]) == 0
        assert main(["simulate", "--config", small_config_path, "--out", str(b)]) == 0
        for name in ("trace.npy", "vacuum.npy", "reference.npy", "truth.csv", "config.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_paper_scale_honored_in_header(self, tmp_path):
        config = dict(SMALL_CONFIG)
        config["scan"] = {"burst_len": 0.005}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(config))
        out = tmp_path / "run"
        code = main(["simulate", "--config", str(path), "--out", str(out), "--paper-scale"])
        assert code == 0
        meta = json.loads((out / "trace.json").read_text())
        assert meta["scan"]["sample_rate"] == 1e8
        assert read_trace(out / "trace.npy").sample_rate == 1e8

    def test_reference_is_lossless_probe(self, simulated):
        truth = read_truth(simulated / "reference_truth.csv")
        assert np.allclose(truth.e_probe, 2.3)
        assert np.allclose(truth.e_fwm, 0.0)

    def test_csv_trace_format(self, tmp_path, small_config_path):
        out = tmp_path / "csvrun"
        config = dict(SMALL_CONFIG)
        config["scan"] = {"burst_len": 0.005, "sample_rate": 1e6}
        config["schedule"] = {"pulse_len": 1e-5, "gap": 1.5e-5, "cycle": 6e-5}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(config))
        code = main(["simulate", "--config", str(path), "--out", str(out),
                     "--trace-format", "csv"])
        assert code == 0
        trace = read_trace(out / "trace.csv")
        assert len(trace.samples) == 5000


class TestExtract:
    def test_records_and_manifest(self, simulated, tmp_path):
        out = tmp_path / "ext"
        code = main([
            "extract", "--trace", str(simulated / "trace.npy"),
            "--out", str(out), "--n-bins", "4",
        ])
        assert code == 0
        records = read_records(out / "records.csv")
        assert len(records) == 3 * 8
        manifest = read_manifest(out / "bins.csv")
        assert len(manifest) == 4
        assert sum(m["count_dl"] for m in manifest) <= 8

    def test_roundtrip_against_truth(self, simulated, tmp_path):
        out = tmp_path / "ext2"
        main(["extract", "--trace", str(simulated / "trace.npy"), "--out", str(out)])
        records = read_records(out / "records.csv")
        truth = read_truth(simulated / "truth.csv")
        errors = []
        for rec in records:
            if rec.case == "probe" and np.isfinite(rec.dphi_fwm):
                from dltomo.atomic import wrap_phase

                errors.append(wrap_phase(rec.dphi_fwm - truth.dphi_fwm[rec.scan_id]))
        assert np.sqrt(np.mean(np.square(errors))) < 0.15

    def test_missing_calibration_source_exits_2(self, simulated, tmp_path):
        lone = tmp_path / "lone"
        lone.mkdir()
        (lone / "trace.npy").write_bytes((simulated / "trace.npy").read_bytes())
        (lone / "trace.json").write_bytes((simulated / "trace.json").read_bytes())
        code = main(["extract", "--trace", str(lone / "trace.npy"), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_malformed_csv_header_exits_2(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("# sample_rate\n0.0,1.0\n")
        code = main(["extract", "--trace", str(bad), "--out", str(tmp_path / "o"),
                     "--scale", "1.0"])
        assert code == 2


class TestBinCommand:
    def test_rebin(self, simulated, tmp_path):
        ext = tmp_path / "ext"
        main(["extract", "--trace", str(simulated / "trace.npy"), "--out", str(ext)])
        out = tmp_path / "rebin"
        code = main(["bin", "--records", str(ext / "records.csv"),
                     "--out", str(out), "--n-bins", "6"])
        assert code == 0
        assert len(read_manifest(out / "bins.csv")) == 6


@pytest.fixture(scope="module")
def full_run(tmp_path_factory, small_config_path):
    out = tmp_path_factory.mktemp("pipeline")
    code = main([
        "pipeline", "--config", small_config_path, "--out", str(out), "--seed", "3",
    ])
    assert code == 0
    return out


class TestPipeline:
    def test_reports_per_nonempty_bin_and_case(self, full_run):
        manifest = read_manifest(full_run / "bins.csv")
        expected = sum(
            1
            for m in manifest
            for case in ("probe", "dl", "fwm")
            if m[f"count_{case}"] > 0
        )
        reports = list(full_run.glob("report_bin*.json"))
        assert len(reports) == expected

    def test_reference_report_exists(self, full_run):
        report = read_report(full_run / "report_reference.json")
        # lossless probe reference: mean photon ~ (Ep/2)^2
        assert report["mean_photon"]["value"] == pytest.approx((2.3 / 2) ** 2, rel=0.2)

    def test_reports_carry_fidelity_vs_input(self, full_run):
        path = sorted(full_run.glob("report_bin*_dl.json"))[0]
        report = read_report(path)
        assert "fidelity_vs_input" in report
        assert 0.0 <= report["fidelity_vs_input"]["value"] <= 1.0

    def test_figure_tables_exist(self, full_run):
        for name in (
            "phase_scatter.csv", "phase_theory.csv", "bin_quadratures.csv",
            "wigner_max_locus.csv", "mean_photon_by_bin.csv", "fidelity_by_bin.csv",
        ):
            assert (full_run / name).exists(), name

    def test_figure_images_exist(self, full_run):
        for name in (
            "phase_scatter.png", "bin_quadratures.png", "wigner_max_locus.png",
            "mean_photon_by_bin.png", "fidelity_by_bin.png", "wigner_maps.png",
        ):
            assert (full_run / name).exists(), name

    def test_tables_carry_bin_ranges_and_counts(self, full_run):
        header = (full_run / "mean_photon_by_bin.csv").read_text().splitlines()[0]
        for column in ("lo", "hi", "count"):
            assert column in header.split(",")

    def test_wigner_grids_written(self, full_run):
        grids = list(full_run.glob("wigner_bin*.csv"))
        assert grids
        from dltomo.io import read_wigner

        grid = read_wigner(grids[0])
        assert grid.x_axis.min() <= -5.0 and grid.x_axis.max() >= 5.0

    def test_deterministic_metrics_across_runs(self, full_run, tmp_path, small_config_path):
        out = tmp_path / "again"
        code = main([
            "pipeline", "--config", small_config_path, "--out", str(out), "--seed", "3",
        ])
        assert code == 0
        for path in sorted(full_run.glob("report_bin*.json")):
            again = out / path.name
            assert read_report(path) == read_report(again)


class TestReconstructSelection:
    def test_bin_selection_limits_outputs(self, full_run, tmp_path):
        out = tmp_path / "sel"
        code = main([
            "reconstruct", "--records", str(full_run / "records.csv"),
            "--out", str(out), "--bins", "0", "--cutoff", "10",
            "--n-bins", "4", "--bootstrap", "0",
        ])
        assert code == 0
        reports = list(out.glob("report_bin*.json"))
        assert all("bin0" in p.name for p in reports)

    def test_jobs_flag_matches_serial(self, full_run, tmp_path):
        serial = tmp_path / "serial"
        parallel = tmp_path / "parallel"
        base = [
            "reconstruct", "--records", str(full_run / "records.csv"),
            "--bins", "0,1", "--cutoff", "10", "--n-bins", "4",
            "--bootstrap", "2", "--seed", "5",
        ]
        assert main(base + ["--out", str(serial), "--jobs", "1"]) == 0
        assert main(base + ["--out", str(parallel), "--jobs", "2"]) == 0
        for path in sorted(serial.glob("report_bin*.json")):
            assert read_report(path) == read_report(parallel / path.name)
