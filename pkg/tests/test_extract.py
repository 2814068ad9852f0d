"""Tests for shot splitting, peak extraction, fits, and binning."""

import math

import numpy as np
import pytest
from scipy.stats import chisquare

from dltomo.atomic import FieldSet, load_params, wrap_phase
from dltomo.errors import (
    CalibrationError,
    ConfigError,
    InsufficientDataError,
    ScheduleError,
    UndefinedPhaseError,
)
from dltomo.extract import (
    PhaseBin,
    QuadratureRecord,
    Shot,
    SinusoidFit,
    bin_records,
    calibrate_vacuum,
    degenerate_count,
    extract_peaks,
    fit_sinusoid,
    phase_shifts,
    rms_phase_errors,
    split_shots,
    to_quadrature_records,
)
from dltomo.synth import (
    NoiseConfig,
    PulseSchedule,
    ScanConfig,
    mean_peak_voltage,
    synth_burst,
    vacuum_burst,
)


@pytest.fixture(scope="module")
def preset():
    return load_params("paper-default")


@pytest.fixture(scope="module")
def fields():
    return FieldSet(Ep=3.3, Es=6.094, Ec1=0.1, Ec2=0.032968)


def make_fit(amplitude=1.0, phase=0.0, degenerate=False):
    return SinusoidFit(
        amplitude=amplitude,
        phase=phase,
        offset=0.0,
        residual_rms=0.0,
        degenerate=degenerate,
    )


class TestSplitShots:
    def test_full_burst_shot_count(self, preset, fields):
        scan = ScanConfig(burst_len=0.031)  # 6.2 scan periods
        trace = synth_burst(preset, fields, PulseSchedule(), scan, NoiseConfig(), seed=1)
        shots = split_shots(trace)
        assert len(shots) == 6
        assert all(len(s.samples) == round(scan.scan_period * scan.sample_rate) for s in shots)

    def test_single_period_trace(self, preset, fields):
        scan = ScanConfig(burst_len=5e-3)
        trace = synth_burst(preset, fields, PulseSchedule(), scan, NoiseConfig(), seed=2)
        assert len(split_shots(trace)) == 1

    def test_too_short_trace_rejected(self, preset, fields):
        scan = ScanConfig(burst_len=5e-3)
        trace = synth_burst(preset, fields, PulseSchedule(), scan, NoiseConfig(), seed=3)
        clipped = type(trace)(
            samples=trace.samples[:100],
            sample_rate=trace.sample_rate,
            schedule=trace.schedule,
            scan=trace.scan,
            seed=trace.seed,
            truth=trace.truth,
        )
        with pytest.raises(InsufficientDataError):
            split_shots(clipped)


class TestExtractPeaks:
    def test_counts_per_case(self, preset, fields):
        scan = ScanConfig(burst_len=5e-3)
        trace = synth_burst(preset, fields, PulseSchedule(), scan, NoiseConfig(), seed=4)
        peaks = extract_peaks(split_shots(trace)[0], trace.schedule)
        for case in ("probe", "dl", "fwm"):
            assert peaks[case].shape == (83, 2)

    def test_constant_pulse_returns_constant(self):
        sched = PulseSchedule()
        rate = 1e7
        n = round(60e-6 * rate)
        samples = np.zeros(n)
        win = round(sched.pulse_len * rate)
        for onset in sched.onsets:
            k = round(onset * rate)
            samples[k : k + win] = 2.5
        shot = Shot(scan_id=0, samples=samples, t0=0.0, sample_rate=rate)
        peaks = extract_peaks(shot, sched)
        for case in ("probe", "dl", "fwm"):
            assert peaks[case][0, 1] == pytest.approx(2.5)

    def test_noiseless_peaks_match_homodyne_law(self, preset, fields):
        sched = PulseSchedule()
        scan = ScanConfig(burst_len=0.01)
        noise = NoiseConfig(vacuum_std=0.0)
        trace = synth_burst(preset, fields, sched, scan, noise, seed=5)
        shot = split_shots(trace)[1]
        omega = 2 * np.pi * scan.scan_freq
        peaks = extract_peaks(shot, sched, omega=omega)
        truth = trace.truth
        for case, amp, phi in [
            ("probe", truth.e_probe[1], truth.phi_p[1]),
            ("fwm", truth.e_fwm[1], wrap_phase(truth.phi_p[1] + truth.dphi_fwm[1])),
        ]:
            t, v = peaks[case][:, 0], peaks[case][:, 1]
            expect = np.array(
                [mean_peak_voltage(amp, scan.lo_amplitude, omega * ti, phi) for ti in t]
            )
            assert np.allclose(v, expect, atol=1e-9)

    def test_window_outside_shot_rejected(self):
        sched = PulseSchedule()
        shot = Shot(scan_id=0, samples=np.zeros(550), t0=0.0, sample_rate=1e7)
        # 550 samples = 55 us: cycle declares pulses up to 40 us + pulse,
        # but floor(55/60) = 0 cycles -> schedule error
        with pytest.raises(ScheduleError):
            extract_peaks(shot, sched)


class TestFitSinusoid:
    def test_exact_recovery(self):
        omega = 2 * np.pi * 200.0
        t = np.linspace(0, 5e-3, 83, endpoint=False)
        v = 1.0 * np.cos(omega * t - 0.7)
        fit = fit_sinusoid(np.column_stack([t, v]), omega)
        assert fit.amplitude == pytest.approx(1.0, abs=1e-9)
        assert fit.phase == pytest.approx(0.7, abs=1e-9)
        assert not fit.degenerate

    def test_offset_recovered(self):
        omega = 2 * np.pi * 200.0
        t = np.linspace(0, 5e-3, 83, endpoint=False)
        v = 2.0 * np.cos(omega * t - 1.3) + 0.4
        fit = fit_sinusoid(np.column_stack([t, v]), omega)
        assert fit.offset == pytest.approx(0.4, abs=1e-9)

    def test_phase_error_near_cramer_rao(self):
        # sigma = 1, N = 83, amplitude 2: phase std ~ sqrt(2/N)/A ~ 0.078
        omega = 2 * np.pi * 200.0
        t = np.linspace(0, 5e-3, 83, endpoint=False)
        rng = np.random.default_rng(17)
        errors = []
        for _ in range(1000):
            v = 2.0 * np.cos(omega * t - 0.9) + rng.normal(0, 1.0, 83)
            fit = fit_sinusoid(np.column_stack([t, v]), omega)
            errors.append(wrap_phase(fit.phase - 0.9))
        bound = math.sqrt(2 / 83) / 2.0
        assert np.std(errors) == pytest.approx(bound, rel=0.2)
        # unbiased on symmetric noise: mean error within 3 standard errors
        assert abs(np.mean(errors)) <= 3 * np.std(errors) / math.sqrt(len(errors))

    def test_all_zero_input_degenerate(self):
        omega = 2 * np.pi * 200.0
        t = np.linspace(0, 5e-3, 83, endpoint=False)
        fit = fit_sinusoid(np.column_stack([t, np.zeros_like(t)]), omega)
        assert fit.degenerate

    def test_noise_only_input_degenerate(self):
        omega = 2 * np.pi * 200.0
        t = np.linspace(0, 5e-3, 83, endpoint=False)
        rng = np.random.default_rng(3)
        fit = fit_sinusoid(np.column_stack([t, rng.normal(0, 1, 83)]), omega)
        assert fit.degenerate

    def test_too_few_points_rejected(self):
        with pytest.raises(InsufficientDataError):
            fit_sinusoid(np.array([[0.0, 1.0], [1.0, 2.0], [2.0, 0.5]]), 1.0)


class TestPhaseShifts:
    def test_identical_fits_give_zero(self):
        fit = make_fit(phase=0.9)
        assert phase_shifts(fit, fit, fit) == (0.0, 0.0)

    def test_wrapping_rule(self):
        probe = make_fit(phase=0.0)
        dl = make_fit(phase=wrap_phase(3 * math.pi / 2))
        dphi_dl, _ = phase_shifts(probe, dl, probe)
        assert dphi_dl == pytest.approx(-math.pi / 2)

    def test_lo_phase_cancels_exactly(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            p, d, f, lo = rng.uniform(-np.pi, np.pi, 4)
            base = phase_shifts(make_fit(phase=p), make_fit(phase=d), make_fit(phase=f))
            shifted = phase_shifts(
                make_fit(phase=p + lo), make_fit(phase=d + lo), make_fit(phase=f + lo)
            )
            assert wrap_phase(base[0] - shifted[0]) == pytest.approx(0.0, abs=1e-12)
            assert wrap_phase(base[1] - shifted[1]) == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_input_names_case(self):
        good = make_fit()
        bad = make_fit(degenerate=True)
        with pytest.raises(UndefinedPhaseError, match="dl"):
            phase_shifts(good, bad, good)


class TestCalibrateVacuum:
    def test_recovers_known_gain(self):
        sched = PulseSchedule()
        scan = ScanConfig(burst_len=0.225, lo_amplitude=2.5)  # 45 scans, >1e4 peaks
        trace = vacuum_burst(sched, scan, NoiseConfig(vacuum_std=1.0), seed=6)
        scale = calibrate_vacuum(trace, sched, scan)
        assert scale == pytest.approx(1 / 2.5, rel=0.02)

    def test_doubled_voltages_halve_scale(self):
        sched = PulseSchedule()
        scan = ScanConfig(burst_len=0.05)
        trace = vacuum_burst(sched, scan, NoiseConfig(), seed=7)
        doubled = type(trace)(
            samples=2 * trace.samples,
            sample_rate=trace.sample_rate,
            schedule=sched,
            scan=scan,
            seed=trace.seed,
            truth=trace.truth,
        )
        assert calibrate_vacuum(doubled, sched, scan) == pytest.approx(
            calibrate_vacuum(trace, sched, scan) / 2, rel=1e-12
        )

    def test_constant_trace_rejected(self, preset, fields):
        sched = PulseSchedule()
        scan = ScanConfig(burst_len=5e-3)
        trace = synth_burst(preset, fields, sched, scan, NoiseConfig(vacuum_std=0.0), seed=8)
        flat = type(trace)(
            samples=np.zeros_like(trace.samples),
            sample_rate=trace.sample_rate,
            schedule=sched,
            scan=scan,
            seed=trace.seed,
            truth=trace.truth,
        )
        with pytest.raises(CalibrationError):
            calibrate_vacuum(flat, sched, scan)


class TestQuadratureRecords:
    def test_noiseless_roundtrip(self, preset, fields):
        sched = PulseSchedule()
        scan = ScanConfig(burst_len=0.05)
        noise = NoiseConfig(vacuum_std=0.0)
        trace = synth_burst(preset, fields, sched, scan, noise, seed=9)
        records = to_quadrature_records(split_shots(trace), sched, scan, scale=1.0)
        errs = rms_phase_errors(records, trace.truth)
        assert errs["dphi_fwm"] <= 1e-3
        assert errs["dphi_dl"] <= 1e-3
        for rec in records:
            if rec.case == "probe":
                truth_amp = trace.truth.e_probe[rec.scan_id]
                assert rec.fit.amplitude == pytest.approx(truth_amp, rel=1e-3)

    def test_points_lie_on_cosine(self, preset, fields):
        sched = PulseSchedule()
        scan = ScanConfig(burst_len=0.01)
        trace = synth_burst(preset, fields, sched, scan, NoiseConfig(vacuum_std=0.0), seed=10)
        records = to_quadrature_records(split_shots(trace), sched, scan, scale=1.0)
        for rec in records:
            if rec.case != "probe":
                continue
            amp = trace.truth.e_probe[rec.scan_id]
            # probe-referenced frame: the probe case sits at phase zero
            assert np.allclose(rec.xs, amp * np.cos(rec.thetas), atol=1e-5 * amp)

    def test_record_count_bound(self, preset, fields):
        scan = ScanConfig(burst_len=0.02)
        trace = synth_burst(preset, fields, PulseSchedule(), scan, NoiseConfig(), seed=11)
        records = to_quadrature_records(split_shots(trace), PulseSchedule(), scan, scale=1.0)
        assert len(records) == 3 * 4

    def test_vacuum_case_degenerate(self):
        sched = PulseSchedule()
        scan = ScanConfig(burst_len=0.01)
        trace = vacuum_burst(sched, scan, NoiseConfig(), seed=12)
        records = to_quadrature_records(split_shots(trace), sched, scan, scale=1.0)
        assert degenerate_count(records) == len(records)

    def test_vacuum_point_variance_near_one(self):
        sched = PulseSchedule()
        scan = ScanConfig(burst_len=0.1, lo_amplitude=3.0)
        trace = vacuum_burst(sched, scan, NoiseConfig(), seed=13)
        scale = calibrate_vacuum(trace, sched, scan)
        records = to_quadrature_records(split_shots(trace), sched, scan, scale=scale)
        xs = np.concatenate([r.xs for r in records])
        assert np.var(xs) == pytest.approx(1.0, rel=0.05)


class TestBinRecords:
    def _record(self, dphi, case="dl", scan_id=0):
        return QuadratureRecord(
            scan_id=scan_id,
            case=case,
            thetas=np.zeros(1),
            xs=np.zeros(1),
            fit=make_fit(),
            dphi_fwm=dphi,
            dphi_dl=0.0,
            degenerate=False,
        )

    def test_bin_width(self):
        bins = bin_records([], n_bins=10)
        assert len(bins) == 10
        assert bins[0].hi - bins[0].lo == pytest.approx(2 * math.pi / 10)

    def test_boundary_belongs_to_lower_bin(self):
        width = 2 * math.pi / 10
        edge = -math.pi + width
        bins = bin_records([self._record(edge)], n_bins=10)
        assert bins[0].count("dl") == 1
        assert bins[1].count("dl") == 0

    def test_plus_pi_lands_in_last_bin(self):
        bins = bin_records([self._record(math.pi)], n_bins=10)
        assert bins[-1].count("dl") == 1

    def test_partition_preserves_counts(self):
        rng = np.random.default_rng(14)
        records = [self._record(wrap_phase(x)) for x in rng.uniform(-np.pi, np.pi, 500)]
        records.append(
            QuadratureRecord(
                scan_id=0, case="dl", thetas=np.zeros(1), xs=np.zeros(1),
                fit=make_fit(degenerate=True), dphi_fwm=float("nan"),
                dphi_dl=float("nan"), degenerate=True,
            )
        )
        bins = bin_records(records, n_bins=10)
        assert sum(b.count("dl") for b in bins) == 500

    def test_uniform_drift_fills_bins_uniformly(self):
        rng = np.random.default_rng(15)
        records = [self._record(wrap_phase(x)) for x in rng.uniform(-np.pi, np.pi, 10_000)]
        counts = [b.count("dl") for b in bin_records(records, n_bins=10)]
        assert chisquare(counts).pvalue > 0.01

    def test_invalid_bin_count_rejected(self):
        with pytest.raises(ConfigError):
            bin_records([], n_bins=0)
