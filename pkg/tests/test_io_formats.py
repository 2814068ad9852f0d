"""Round-trip and format tests for every pipeline artifact file."""

import numpy as np
import pytest

from dltomo.atomic import FieldSet, load_params
from dltomo.errors import FileFormatError
from dltomo.extract import bin_records, split_shots, to_quadrature_records
from dltomo.io import (
    read_density_matrix,
    read_manifest,
    read_records,
    read_report,
    read_trace,
    read_truth,
    read_wigner,
    write_density_matrix,
    write_manifest,
    write_records,
    write_report,
    write_trace,
    write_truth,
    write_wigner,
)
from dltomo.synth import NoiseConfig, PulseSchedule, ScanConfig, synth_burst
from dltomo.tomography import (
    DensityMatrix,
    ReconstructionReport,
    coherent_dm,
    wigner,
)


@pytest.fixture(scope="module")
def small_trace():
    params = load_params("paper-default")
    fields = FieldSet(Ep=3.3, Es=6.094, Ec1=0.1, Ec2=0.032968)
    scan = ScanConfig(burst_len=0.01)
    return synth_burst(params, fields, PulseSchedule(), scan, NoiseConfig(), seed=77)


class TestTraceFiles:
    def test_npy_roundtrip(self, small_trace, tmp_path):
        out = write_trace(small_trace, tmp_path / "trace", fmt="npy")
        back = read_trace(out)
        assert np.array_equal(back.samples, small_trace.samples)
        assert back.sample_rate == small_trace.sample_rate
        assert back.schedule == small_trace.schedule
        assert back.scan == small_trace.scan
        assert back.seed == small_trace.seed

    def test_csv_roundtrip(self, small_trace, tmp_path):
        out = write_trace(small_trace, tmp_path / "trace", fmt="csv")
        back = read_trace(out)
        assert np.allclose(back.samples, small_trace.samples, atol=1e-8)
        assert back.scan.scan_freq == small_trace.scan.scan_freq

    def test_npy_write_is_deterministic(self, small_trace, tmp_path):
        a = write_trace(small_trace, tmp_path / "a", fmt="npy")
        b = write_trace(small_trace, tmp_path / "b", fmt="npy")
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_malformed_header_names_line(self, small_trace, tmp_path):
        out = write_trace(small_trace, tmp_path / "trace", fmt="csv")
        lines = out.read_text().splitlines()
        lines[2] = "# schedule.gap"  # strip the value
        out.write_text("\n".join(lines) + "\n")
        with pytest.raises(FileFormatError, match=":3"):
            read_trace(out)

    def test_missing_header_key_rejected(self, small_trace, tmp_path):
        out = write_trace(small_trace, tmp_path / "trace", fmt="csv")
        lines = [l for l in out.read_text().splitlines() if "scan_freq" not in l]
        out.write_text("\n".join(lines) + "\n")
        with pytest.raises(FileFormatError, match="scan.scan_freq"):
            read_trace(out)


class TestTruthSidecar:
    def test_roundtrip(self, small_trace, tmp_path):
        path = write_truth(small_trace.truth, tmp_path / "truth.csv")
        back = read_truth(path)
        assert np.allclose(back.phi_p, small_trace.truth.phi_p)
        assert np.allclose(back.dphi_fwm, small_trace.truth.dphi_fwm)
        assert np.allclose(back.dphi_dl, small_trace.truth.dphi_dl)
        assert np.allclose(back.e_dl, small_trace.truth.e_dl)

    def test_header_columns(self, small_trace, tmp_path):
        path = write_truth(small_trace.truth, tmp_path / "truth.csv")
        assert path.read_text().splitlines()[0] == "scan_id,phi_p,dphi_fwm,dphi_dl,E_E,E_F"


class TestRecordFiles:
    def test_roundtrip(self, small_trace, tmp_path):
        sched, scan = small_trace.schedule, small_trace.scan
        records = to_quadrature_records(split_shots(small_trace), sched, scan, scale=1.0)
        path = write_records(records, tmp_path / "records.csv")
        back = read_records(path)
        assert len(back) == len(records)
        for a, b in zip(records, back):
            assert (a.scan_id, a.case, a.degenerate) == (b.scan_id, b.case, b.degenerate)
            assert np.allclose(a.thetas, b.thetas, atol=1e-8)
            assert np.allclose(a.xs, b.xs, atol=1e-8)
            assert a.dphi_fwm == pytest.approx(b.dphi_fwm, abs=1e-8)

    def test_binning_survives_roundtrip(self, small_trace, tmp_path):
        sched, scan = small_trace.schedule, small_trace.scan
        records = to_quadrature_records(split_shots(small_trace), sched, scan, scale=1.0)
        path = write_records(records, tmp_path / "records.csv")
        direct = bin_records(records, 6)
        loaded = bin_records(read_records(path), 6)
        for a, b in zip(direct, loaded):
            for case in ("probe", "dl", "fwm"):
                assert a.count(case) == b.count(case)

    def test_bad_header_rejected(self, tmp_path):
        bad = tmp_path / "records.csv"
        bad.write_text("scan,case\n")
        with pytest.raises(FileFormatError, match=":1"):
            read_records(bad)


class TestManifest:
    def test_roundtrip(self, small_trace, tmp_path):
        sched, scan = small_trace.schedule, small_trace.scan
        records = to_quadrature_records(split_shots(small_trace), sched, scan, scale=1.0)
        bins = bin_records(records, 5)
        path = write_manifest(bins, tmp_path / "bins.csv")
        back = read_manifest(path)
        assert len(back) == 5
        for b, row in zip(bins, back):
            assert row["count_dl"] == b.count("dl")
            assert row["lo"] == pytest.approx(b.lo)


class TestDensityMatrixFile:
    def test_roundtrip(self, tmp_path):
        rho = coherent_dm(0.4 + 0.2j, 8)
        path = write_density_matrix(rho, tmp_path / "rho.json")
        back = read_density_matrix(path)
        assert back.cutoff == 8
        assert np.allclose(back.elems, rho.elems)

    def test_bad_payload_rejected(self, tmp_path):
        bad = tmp_path / "rho.json"
        bad.write_text('{"cutoff": 4}')
        with pytest.raises(FileFormatError):
            read_density_matrix(bad)


class TestWignerFile:
    def test_roundtrip(self, tmp_path):
        ax = np.linspace(-6, 6, 31)
        grid = wigner(DensityMatrix.fock(0, 6), ax, ax)
        path = write_wigner(grid, tmp_path / "wigner.csv")
        back = read_wigner(path)
        assert np.allclose(back.x_axis, grid.x_axis)
        assert np.allclose(back.values, grid.values, atol=1e-8)


class TestReportFile:
    def test_roundtrip(self, tmp_path):
        report = ReconstructionReport(
            rho=DensityMatrix.fock(0, 4),
            log_likelihood=-120.5,
            iterations=42,
            converged=True,
            n_points=1000,
            purity=0.97,
            mean_photon=0.51,
            coherent_overlap=0.95,
            fidelity_vs_input=0.93,
            purity_err=0.01,
            wigner_max_location=(1.0, 0.1),
            source_bin=3,
            case="dl",
            bin_range=(0.0, 0.63),
        )
        path = write_report(report, tmp_path / "report.json")
        back = read_report(path)
        assert back["case"] == "dl"
        assert back["purity"]["value"] == pytest.approx(0.97)
        assert back["fidelity_vs_input"]["value"] == pytest.approx(0.93)
        assert back["wigner_max"]["x"] == pytest.approx(1.0)
        assert back["iterations"] == 42
