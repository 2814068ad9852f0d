"""Synthetic balanced-homodyne traces for the three-pulse protocol.

Each acquisition burst contains hundreds of local-oscillator scans.  Within a
scan the LO phase sweeps linearly through 2*pi (sawtooth) while the pulse
triplet (probe only, both weak fields, signal only) repeats every cycle; the
input phases drift between scans but are constant within one.  The mean
voltage of a pulse follows the homodyne law E * E_lo * cos(theta - phi), and
each pulse carries a single Gaussian quadrature deviate: a pulse is one
temporal mode, so its quantum noise rides on top of the whole window rather
than varying sample to sample.  With that choice the extracted peak values
have variance vacuum_std**2 by construction, which is what downstream
calibration assumes.

Quadrature convention: the vacuum quadrature variance is 1 and a coherent
state of amplitude a has mean quadrature 2*|a|*cos(theta - phi).  The weak
FieldSet amplitudes already carry this scale (Ep = 2*|a_probe|), so per-case
voltages are E_case * lo_amplitude with no further conversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .atomic import AtomicParams, FieldSet, cell_response, dl_interference, wrap_phase
from .atomic import PhasorDecomposition
from .errors import ConfigError

CASE_PROBE = "probe"
CASE_DL = "dl"
CASE_FWM = "fwm"
CASES = (CASE_PROBE, CASE_DL, CASE_FWM)

DRIFT_RANDOM_WALK = "random-walk"
DRIFT_UNIFORM = "uniform-resample"


@dataclass(frozen=True)
class PulseSchedule:
    """Timing of the repeated three-pulse sequence.

    Pulses start at 0, cycle/3 and 2*cycle/3 within each cycle, in the fixed
    case order (probe only, double-lambda, mixing only).
    """

    pulse_len: float = 1.5e-6
    gap: float = 20e-6
    cycle: float = 60e-6
    case_order: tuple[str, str, str] = CASES

    def __post_init__(self):
        if self.pulse_len <= 0 or self.gap <= 0 or self.cycle <= 0:
            raise ConfigError("pulse_len, gap and cycle must be positive")
        if self.pulse_len >= self.gap:
            raise ConfigError("pulse_len must be shorter than the interpulse gap")
        if self.pulse_len > self.cycle / 3:
            raise ConfigError("pulse sequence does not fit in the cycle")
        if tuple(self.case_order) != CASES:
            raise ConfigError(f"case_order must be {CASES}")

    @property
    def onsets(self) -> tuple[float, float, float]:
        return (0.0, self.cycle / 3.0, 2.0 * self.cycle / 3.0)


@dataclass(frozen=True)
class ScanConfig:
    """Local-oscillator sweep and acquisition settings.

    ``sample_rate`` defaults to the desk-scale 10 MHz; pass 1e8 for the
    full-rate mode.  ``lo_amplitude`` is the voltage gain per quadrature
    unit contributed by the local oscillator.
    """

    scan_freq: float = 200.0
    burst_len: float = 1.3
    sample_rate: float = 1e7
    lo_amplitude: float = 1.0

    def __post_init__(self):
        if self.scan_freq <= 0 or self.burst_len <= 0 or self.sample_rate <= 0:
            raise ConfigError("scan_freq, burst_len and sample_rate must be positive")
        if self.lo_amplitude <= 0:
            raise ConfigError("lo_amplitude must be positive")

    @property
    def scan_period(self) -> float:
        return 1.0 / self.scan_freq

    @property
    def n_samples(self) -> int:
        return round(self.burst_len * self.sample_rate)


@dataclass(frozen=True)
class NoiseConfig:
    """Noise and phase-drift settings for synthesis."""

    vacuum_std: float = 1.0
    electronic_std: float = 0.0
    drift_std_per_scan: float = 0.1
    drift_model: str = DRIFT_UNIFORM

    def __post_init__(self):
        if self.vacuum_std < 0 or self.electronic_std < 0 or self.drift_std_per_scan < 0:
            raise ConfigError("noise standard deviations must be >= 0")
        if self.drift_model not in (DRIFT_RANDOM_WALK, DRIFT_UNIFORM):
            raise ConfigError(
                f"drift_model must be {DRIFT_RANDOM_WALK!r} or {DRIFT_UNIFORM!r}"
            )


@dataclass(frozen=True)
class GroundTruth:
    """Per-scan synthesis record used as the extraction oracle.

    Amplitudes are stored in calibrated quadrature units for all three
    cases; the phases are the values the extraction stage should recover.
    """

    scan_id: np.ndarray
    phi_p: np.ndarray
    dphi_fwm: np.ndarray
    dphi_dl: np.ndarray
    e_probe: np.ndarray
    e_fwm: np.ndarray
    e_dl: np.ndarray

    def __len__(self) -> int:
        return len(self.scan_id)


@dataclass(frozen=True)
class HomodyneTrace:
    """One synthesized (or recorded) acquisition burst."""

    samples: np.ndarray
    sample_rate: float
    schedule: PulseSchedule
    scan: ScanConfig
    seed: int
    truth: GroundTruth | None = None


def mean_peak_voltage(e_field: float, e_lo: float, theta: float, phi: float) -> float:
    """Mean homodyne voltage of a pulse at LO phase theta and field phase phi."""
    return e_field * e_lo * math.cos(theta - phi)


def drift_step(state: float, noise: NoiseConfig, rng: np.random.Generator) -> float:
    """Advance one phase-drift state by one scan.

    Random walk adds Normal(0, drift_std_per_scan); uniform resampling draws
    a fresh phase from (-pi, pi] each scan.
    """
    if noise.drift_model == DRIFT_RANDOM_WALK:
        return float(state + rng.normal(0.0, noise.drift_std_per_scan))
    # uniform over [-pi, pi); wrapping folds the closed end onto +pi
    return wrap_phase(float(rng.uniform(-np.pi, np.pi)))


def triplets_per_scan(schedule: PulseSchedule, scan: ScanConfig) -> int:
    return int(math.floor(scan.scan_period / schedule.cycle))


def _validate_configs(schedule: PulseSchedule, scan: ScanConfig) -> None:
    if scan.sample_rate * schedule.pulse_len < 10:
        raise ConfigError(
            "sample_rate too low: need at least 10 samples per pulse "
            f"(got {scan.sample_rate * schedule.pulse_len:.2f})"
        )
    if scan.scan_period < schedule.cycle:
        raise ConfigError("scan period must hold at least one pulse cycle")


def case_amplitudes_and_phases(
    e_probe: float, e_fwm: float, phi_p: float, dphi_fwm: float
) -> dict[str, tuple[float, float]]:
    """Amplitude and phase of each pulse case given the scan's drift phases."""
    out = {CASE_PROBE: (e_probe, phi_p), CASE_FWM: (e_fwm, wrap_phase(phi_p + dphi_fwm))}
    if e_probe > 0:
        dl = dl_interference(PhasorDecomposition(E_E=e_probe, E_F=e_fwm, dphi_fwm=dphi_fwm))
        out[CASE_DL] = (e_probe * dl.amplitude_normalized, wrap_phase(phi_p + dl.dphi_dl))
    else:
        # dark probe: the combined case is the mixing contribution alone
        out[CASE_DL] = (e_fwm, wrap_phase(phi_p + dphi_fwm))
    return out


def synth_burst(
    params: AtomicParams,
    fields: FieldSet,
    schedule: PulseSchedule,
    scan: ScanConfig,
    noise: NoiseConfig,
    seed: int,
    steps: int = 1000,
) -> HomodyneTrace:
    """Synthesize one homodyne burst with ground truth attached.

    The medium response is evaluated once (probe-only and signal-only
    propagation); per scan the drift model draws the probe phase and the
    effective mixing phase, the three case phasors follow from the phasor
    sum, and pulse windows are filled with the mean homodyne voltage plus
    one quantum deviate per pulse.  Samples outside pulses are zero apart
    from optional electronic noise, which is white over the whole record.

    Per-scan random streams are spawned from the seed, so scans are
    independent and the result is bit-reproducible regardless of how a
    caller might parallelize.
    """
    _validate_configs(schedule, scan)
    rate = scan.sample_rate
    n_total = scan.n_samples
    spp = round(scan.scan_period * rate)
    n_scans = int(math.floor(n_total / spp))
    if n_scans < 1:
        raise ConfigError("burst shorter than one scan period")
    n_trip = triplets_per_scan(schedule, scan)

    resp = cell_response(params, fields, steps=steps)
    e_probe, e_fwm = resp.e_probe, resp.e_fwm
    static_offset = resp.static_dphi_fwm

    seq = np.random.SeedSequence(seed)
    scan_seeds = seq.spawn(n_scans + 1)
    tail_rng = np.random.default_rng(scan_seeds[-1])

    omega = 2.0 * math.pi * scan.scan_freq
    win = round(schedule.pulse_len * rate)
    onset_idx = [round(o * rate) for o in schedule.onsets]
    cyc_idx = round(schedule.cycle * rate)

    samples = np.zeros(n_total)
    truth = {k: np.empty(n_scans) for k in ("phi_p", "dphi_fwm", "dphi_dl", "e_dl")}

    phi_p_state = 0.0
    dphi_state = static_offset
    lo = scan.lo_amplitude
    rel_idx = np.arange(win)
    base_starts = np.array([s * cyc_idx for s in range(n_trip)])

    for s in range(n_scans):
        rng = np.random.default_rng(scan_seeds[s])
        phi_p_state = drift_step(phi_p_state, noise, rng)
        dphi_state = drift_step(dphi_state, noise, rng)
        phi_p = wrap_phase(phi_p_state)
        dphi_fwm = wrap_phase(dphi_state)

        cases = case_amplitudes_and_phases(e_probe, e_fwm, phi_p, dphi_fwm)
        truth["phi_p"][s] = phi_p
        truth["dphi_fwm"][s] = dphi_fwm
        dl_amp, dl_phase = cases[CASE_DL]
        truth["e_dl"][s] = dl_amp
        truth["dphi_dl"][s] = wrap_phase(dl_phase - phi_p)

        scan_start = s * spp
        for c, case in enumerate(schedule.case_order):
            amp, phi = cases[case]
            starts = scan_start + base_starts + onset_idx[c]
            idx = starts[:, None] + rel_idx[None, :]
            # scan-relative LO phase, matching the shot-relative fits downstream
            theta = omega * ((idx - scan_start).astype(float) / rate)
            mean = amp * lo * np.cos(theta - phi)
            deviate = rng.normal(0.0, noise.vacuum_std * lo, size=(n_trip, 1))
            samples[idx] = mean + deviate
        if noise.electronic_std > 0:
            samples[scan_start : scan_start + spp] += rng.normal(
                0.0, noise.electronic_std, size=spp
            )

    if noise.electronic_std > 0 and n_scans * spp < n_total:
        tail = n_total - n_scans * spp
        samples[n_scans * spp :] += tail_rng.normal(0.0, noise.electronic_std, size=tail)

    ground = GroundTruth(
        scan_id=np.arange(n_scans),
        phi_p=truth["phi_p"],
        dphi_fwm=truth["dphi_fwm"],
        dphi_dl=truth["dphi_dl"],
        e_probe=np.full(n_scans, e_probe),
        e_fwm=np.full(n_scans, e_fwm),
        e_dl=truth["e_dl"],
    )
    return HomodyneTrace(
        samples=samples,
        sample_rate=rate,
        schedule=schedule,
        scan=scan,
        seed=seed,
        truth=ground,
    )


def vacuum_burst(
    schedule: PulseSchedule, scan: ScanConfig, noise: NoiseConfig, seed: int
) -> HomodyneTrace:
    """Burst with all weak inputs blocked, for homodyne calibration.

    Equivalent to a zero-depth medium with a dark probe: every pulse window
    carries only the quadrature deviate.
    """
    params = AtomicParams(
        Gamma=1.0, gamma=1.0, Delta1=0.0, Delta2=0.0, Delta=0.0,
        dip13=1.0, dip23=1.0, alpha_p=0.0, alpha_s=0.0,
    )
    dark = FieldSet(Ep=0.0, Es=0.0, Ec1=0.0, Ec2=0.0)
    return synth_burst(params, dark, schedule, scan, noise, seed, steps=1)
