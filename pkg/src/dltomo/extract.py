"""Shot-by-shot phase and quadrature extraction from homodyne bursts.

A burst is split into scans ("shots", one full 2*pi LO sweep each).  Within a
shot, every pulse window contributes one peak value (the mean of the central
half of the window, unbiased under additive noise), each case's peak series
is fitted to a known-frequency sinusoid by linear least squares, and the
case phases relative to the probe-only fit give the two phase shifts.  The
LO phase offset cancels in those differences by construction.

Quadrature angles attached to the extracted points are referenced to the
shot's fitted probe phase.  That puts every scan in a common frame, which is
what makes it possible to pool quadrature records across scans inside one
mixing-phase bin and reconstruct a meaningful state from them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .atomic import wrap_phase
from .errors import (
    CalibrationError,
    ConfigError,
    InsufficientDataError,
    ScheduleError,
    UndefinedPhaseError,
)
from .synth import CASES, HomodyneTrace, PulseSchedule, ScanConfig


@dataclass(frozen=True)
class Shot:
    """One LO sweep's worth of samples, burst-relative start at t0."""

    scan_id: int
    samples: np.ndarray
    t0: float
    sample_rate: float


@dataclass(frozen=True)
class SinusoidFit:
    """Least-squares fit of V(t) = amplitude * cos(omega t - phase) + offset."""

    amplitude: float
    phase: float
    offset: float
    residual_rms: float
    degenerate: bool
    amplitude_err: float = 0.0


@dataclass(frozen=True)
class QuadratureRecord:
    """Calibrated quadrature points of one case in one scan.

    ``thetas`` are LO phases referenced to the scan's fitted probe phase and
    wrapped into (-pi, pi]; ``xs`` are quadrature values.  ``dphi_fwm`` and
    ``dphi_dl`` are the scan-level phase shifts shared by the scan's three
    records.  Degenerate records (underpowered fits, or any record whose
    probe reference is degenerate) carry NaN phase shifts and are excluded
    from binning.
    """

    scan_id: int
    case: str
    thetas: np.ndarray
    xs: np.ndarray
    fit: SinusoidFit
    dphi_fwm: float
    dphi_dl: float
    degenerate: bool


@dataclass(frozen=True)
class PhaseBin:
    """Records grouped by the mixing phase shift, half-open range (lo, hi]."""

    index: int
    lo: float
    hi: float
    records: dict[str, list[QuadratureRecord]]

    def count(self, case: str) -> int:
        return len(self.records.get(case, []))


def split_shots(trace: HomodyneTrace) -> list[Shot]:
    """Cut a burst into consecutive scan-period windows, dropping the tail."""
    spp = round(trace.scan.scan_period * trace.sample_rate)
    n = len(trace.samples) // spp
    if n < 1:
        raise InsufficientDataError(
            f"trace holds {len(trace.samples)} samples, shorter than one scan ({spp})"
        )
    return [
        Shot(
            scan_id=i,
            samples=trace.samples[i * spp : (i + 1) * spp],
            t0=i * spp / trace.sample_rate,
            sample_rate=trace.sample_rate,
        )
        for i in range(n)
    ]


def extract_peaks(
    shot: Shot, schedule: PulseSchedule, omega: float | None = None
) -> dict[str, np.ndarray]:
    """Per-case (time, volts) peak series from one shot.

    The peak statistic is the mean over the central 50% of each pulse
    window (unbiased under additive noise), tagged with the center of the
    averaged samples, shot-relative.  When the LO angular frequency is
    given, the mean is divided by the known in-window cosine attenuation
    mean(cos(omega (t_i - tbar))), making the statistic equal to the
    homodyne voltage at the tagged time exactly for clean data.

    Returns:
        dict mapping case name to an array of shape (n_triplets, 2).
    """
    rate = shot.sample_rate
    duration = len(shot.samples) / rate
    n_trip = int(math.floor(duration / schedule.cycle))
    if n_trip < 1:
        raise ScheduleError("shot shorter than one pulse cycle")
    win = round(schedule.pulse_len * rate)
    lo_off = round(0.25 * schedule.pulse_len * rate)
    hi_off = max(lo_off + 1, round(0.75 * schedule.pulse_len * rate))
    cyc = round(schedule.cycle * rate)
    offsets = np.arange(lo_off, hi_off)
    center = offsets.mean()
    attenuation = 1.0
    if omega is not None:
        attenuation = float(np.mean(np.cos(omega * (offsets - center) / rate)))

    out = {}
    for c, case in enumerate(schedule.case_order):
        onset = round(schedule.onsets[c] * rate)
        starts = np.arange(n_trip) * cyc + onset
        if starts[-1] + win > len(shot.samples):
            raise ScheduleError(
                f"pulse window for case {case!r} extends past the shot"
            )
        idx = starts[:, None] + offsets[None, :]
        values = shot.samples[idx].mean(axis=1) / attenuation
        times = (starts + center) / rate
        out[case] = np.column_stack([times, values])
    return out


def fit_sinusoid(points: np.ndarray, omega: float) -> SinusoidFit:
    """Fit points (t, V) to a cosine of known angular frequency.

    Linear least squares on the basis {cos(omega t), sin(omega t), 1}; the
    amplitude is sqrt(a^2 + b^2) and the phase atan2(b, a), so the model is
    V = A cos(omega t - phase) + offset.  The fit is flagged degenerate when
    the amplitude is below five times its standard error (the phase of a
    near-zero phasor carries no information).
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2 or len(points) < 4:
        raise InsufficientDataError("need at least 4 (time, volts) points")
    if omega <= 0:
        raise ConfigError("omega must be positive")
    t, v = points[:, 0], points[:, 1]
    design = np.column_stack([np.cos(omega * t), np.sin(omega * t), np.ones_like(t)])
    coef, _, _, _ = np.linalg.lstsq(design, v, rcond=None)
    a, b, offset = coef
    amplitude = math.hypot(a, b)
    resid = v - design @ coef
    dof = len(v) - 3
    sigma2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = sigma2 * np.linalg.inv(design.T @ design)
    if amplitude > 0:
        grad = np.array([a / amplitude, b / amplitude, 0.0])
        amp_err = math.sqrt(max(float(grad @ cov @ grad), 0.0))
    else:
        amp_err = math.sqrt(max(cov[0, 0], cov[1, 1], 0.0))
    tiny = 1e-12 * max(1.0, float(np.max(np.abs(v))) if len(v) else 1.0)
    degenerate = amplitude < max(5.0 * amp_err, tiny)
    return SinusoidFit(
        amplitude=amplitude,
        phase=wrap_phase(math.atan2(b, a)),
        offset=float(offset),
        residual_rms=math.sqrt(float(np.mean(resid**2))),
        degenerate=bool(degenerate),
        amplitude_err=amp_err,
    )


def phase_shifts(
    fit_probe: SinusoidFit, fit_dl: SinusoidFit, fit_fwm: SinusoidFit
) -> tuple[float, float]:
    """Case phases relative to the probe-only fit, wrapped into (-pi, pi].

    Any common phase (for instance the LO sweep offset) cancels exactly in
    the differences.
    """
    for fit, label in ((fit_probe, "probe"), (fit_dl, "dl"), (fit_fwm, "fwm")):
        if fit.degenerate:
            raise UndefinedPhaseError(f"degenerate fit for case {label!r}")
    return (
        wrap_phase(fit_dl.phase - fit_probe.phase),
        wrap_phase(fit_fwm.phase - fit_probe.phase),
    )


def calibrate_vacuum(
    trace: HomodyneTrace, schedule: PulseSchedule, scan: ScanConfig
) -> float:
    """Quadrature-units-per-volt scale from a blocked-input trace.

    The returned scale s makes the scaled peak-value variance equal one,
    matching the vacuum-variance-1 convention.
    """
    shots = split_shots(trace)
    values = []
    for shot in shots:
        peaks = extract_peaks(shot, schedule)
        for case in schedule.case_order:
            values.append(peaks[case][:, 1])
    pooled = np.concatenate(values)
    var = float(np.var(pooled))
    if var <= 0.0 or not np.isfinite(var):
        raise CalibrationError("vacuum trace peak variance is zero; cannot calibrate")
    return 1.0 / math.sqrt(var)


def to_quadrature_records(
    shots: list[Shot],
    schedule: PulseSchedule,
    scan: ScanConfig,
    scale: float,
) -> list[QuadratureRecord]:
    """Fit every shot and emit calibrated quadrature records per case.

    Each record's points are (theta - fitted probe phase, scale * volts);
    fits are reported in calibrated units as well.  Records whose own fit or
    whose probe reference is degenerate are flagged; callers exclude them
    from binning and report the count.
    """
    if scale <= 0 or not np.isfinite(scale):
        raise CalibrationError("calibration scale must be positive and finite")
    omega = 2.0 * math.pi * scan.scan_freq
    records: list[QuadratureRecord] = []
    for shot in shots:
        peaks = extract_peaks(shot, schedule, omega=omega)
        fits = {}
        for case in schedule.case_order:
            pts = peaks[case].copy()
            pts[:, 1] *= scale
            fits[case] = fit_sinusoid(pts, omega)
        probe_fit = fits["probe"]
        # Scan-level shifts: each is defined only when both fits entering the
        # difference are usable.
        dphi_dl = dphi_fwm = float("nan")
        if not probe_fit.degenerate:
            if not fits["dl"].degenerate:
                dphi_dl = wrap_phase(fits["dl"].phase - probe_fit.phase)
            if not fits["fwm"].degenerate:
                dphi_fwm = wrap_phase(fits["fwm"].phase - probe_fit.phase)
        for case in schedule.case_order:
            pts = peaks[case]
            thetas = wrap_phase(omega * pts[:, 0] - probe_fit.phase)
            records.append(
                QuadratureRecord(
                    scan_id=shot.scan_id,
                    case=case,
                    thetas=thetas,
                    xs=pts[:, 1] * scale,
                    fit=fits[case],
                    dphi_fwm=dphi_fwm,
                    dphi_dl=dphi_dl,
                    degenerate=fits[case].degenerate or probe_fit.degenerate,
                )
            )
    return records


def bin_records(records: list[QuadratureRecord], n_bins: int = 10) -> list[PhaseBin]:
    """Group non-degenerate records into uniform mixing-phase bins.

    The partition covers (-pi, pi] with half-open intervals (lo, hi]; a
    record sitting exactly on a boundary belongs to the bin that ends there.
    """
    if n_bins < 1:
        raise ConfigError("n_bins must be >= 1")
    width = 2.0 * math.pi / n_bins
    bins = [
        PhaseBin(
            index=k,
            lo=-math.pi + k * width,
            hi=-math.pi + (k + 1) * width,
            records={case: [] for case in CASES},
        )
        for k in range(n_bins)
    ]
    for rec in records:
        if rec.degenerate or not np.isfinite(rec.dphi_fwm):
            continue
        x = wrap_phase(rec.dphi_fwm)
        k = min(int(math.ceil((x + math.pi) / width)) - 1, n_bins - 1)
        k = max(k, 0)
        bins[k].records[rec.case].append(rec)
    return bins


def degenerate_count(records: list[QuadratureRecord]) -> int:
    return sum(1 for r in records if r.degenerate)


def rms_phase_errors(records: list[QuadratureRecord], truth) -> dict[str, float]:
    """RMS error of extracted phase shifts against a ground-truth table.

    The shifts are scan-level quantities, so one record per scan (the probe
    case) is consulted; NaN shifts from degenerate fits are skipped.
    """
    errs = {"dphi_fwm": [], "dphi_dl": []}
    for rec in records:
        if rec.case != "probe":
            continue
        sid = rec.scan_id
        if np.isfinite(rec.dphi_fwm):
            errs["dphi_fwm"].append(wrap_phase(rec.dphi_fwm - truth.dphi_fwm[sid]))
        if np.isfinite(rec.dphi_dl):
            errs["dphi_dl"].append(wrap_phase(rec.dphi_dl - truth.dphi_dl[sid]))
    return {
        key: float(np.sqrt(np.mean(np.square(vals)))) if vals else float("nan")
        for key, vals in errs.items()
    }
