"""Semi-classical model of a double-lambda vapor cell.

Two lambda subsystems share the same ground states: a weak probe and a weak
signal each couple one ground state to the excited state, while two strong
control fields couple the other.  The steady-state medium response is linear
in the weak fields.  The probe response contains two contributions: a
transparency-like term proportional to the probe itself, and a mixing term in
which the two controls convert signal light into the probe frequency.  The
relative phase between those two contributions,

    dphi_fwm = phi_s - phi_p + phi_c2 - phi_c1,

controls whether they interfere constructively or destructively, which is the
mechanism that produces the conditional phase shift this package simulates.

All rates are expressed in units of the excited-state decay rate
(``Gamma == 1`` for the shipped preset) and the cell length is normalized to
one.  Weak-field amplitudes are stated in detector quadrature units (twice
the coherent amplitude); because the response is linear in them, this scale
convention does not affect transmissions or phases.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    DivergenceError,
    NormalizationError,
    ParameterError,
    SingularParameterError,
    UndefinedPhaseError,
)

TWO_PI = 2.0 * math.pi

PRESET_ENV_VAR = "DLTOMO_PRESET_DIR"
DEFAULT_PRESET = "paper-default"


def wrap_phase(phi):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(phi), TWO_PI)
    if np.ndim(phi) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class AtomicParams:
    """Rates, detunings, and depths that define the double-lambda medium.

    Attributes:
        Gamma: excited-state decay rate; sets the unit scale.
        gamma: ground-state coherence decay rate.
        Delta1: one-photon detuning of lambda system 1.
        Delta2: one-photon detuning of lambda system 2.
        Delta: two-photon frequency offset, exactly ``Delta2 - Delta1``.
        dip13: normalized dipole magnitude of the weak transition.
        dip23: normalized dipole magnitude of the control transition.
        alpha_p: probe optical depth.
        alpha_s: signal optical depth.
        length: cell length (normalized to 1).
        gamma31: propagation decay coefficient (preset ties it to Gamma).
        mu13: propagation dipole coefficient (preset ties it to dip13).
    """

    Gamma: float
    gamma: float
    Delta1: float
    Delta2: float
    Delta: float
    dip13: float
    dip23: float
    alpha_p: float
    alpha_s: float
    length: float = 1.0
    gamma31: float = 1.0
    mu13: float = 1.0

    def __post_init__(self):
        if self.Gamma <= 0:
            raise ParameterError(f"Gamma must be > 0, got {self.Gamma}")
        if self.gamma <= 0:
            raise ParameterError(f"gamma must be > 0, got {self.gamma}")
        if self.alpha_p < 0 or self.alpha_s < 0:
            raise ParameterError("optical depths must be >= 0")
        if self.length <= 0:
            raise ParameterError(f"length must be > 0, got {self.length}")
        if self.Delta != self.Delta2 - self.Delta1:
            raise ParameterError(
                f"Delta must equal Delta2 - Delta1 exactly "
                f"({self.Delta} != {self.Delta2} - {self.Delta1})"
            )


@dataclass(frozen=True)
class FieldSet:
    """Amplitudes and phases of the four driving fields.

    Amplitudes are non-negative; phases are stored unwrapped and compared
    modulo 2*pi.  Weak-field amplitudes (``Ep``, ``Es``) double as the
    detector quadrature scale: an input probe of coherent amplitude ``a``
    is represented by ``Ep = 2*|a|``.
    """

    Ep: float
    Es: float
    Ec1: float
    Ec2: float
    phi_p: float = 0.0
    phi_s: float = 0.0
    phi_c1: float = 0.0
    phi_c2: float = 0.0

    def __post_init__(self):
        for name in ("Ep", "Es", "Ec1", "Ec2"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")

    @property
    def dphi_fwm(self) -> float:
        """Relative phase between the mixing and probe-only contributions."""
        return wrap_phase(self.phi_s - self.phi_p + self.phi_c2 - self.phi_c1)

    @property
    def probe(self) -> complex:
        return self.Ep * np.exp(1j * self.phi_p)

    @property
    def signal(self) -> complex:
        return self.Es * np.exp(1j * self.phi_s)


@dataclass(frozen=True)
class CoherencePair:
    """Steady-state coherences of one lambda subsystem."""

    rho13: complex
    rho12: complex


@dataclass(frozen=True)
class PhasorDecomposition:
    """Probe-only and mixing amplitudes entering the output interference."""

    E_E: float
    E_F: float
    dphi_fwm: float

    def __post_init__(self):
        if self.E_E < 0 or self.E_F < 0:
            raise ParameterError("phasor amplitudes must be >= 0")


@dataclass(frozen=True)
class DLInterference:
    """Result of adding the probe-only and mixing phasors."""

    dphi_dl: float
    amplitude_normalized: float
    degenerate: bool = False


def steady_state_coherences(params: AtomicParams, weak: complex, strong: complex) -> CoherencePair:
    """Perturbative steady-state coherences for one lambda subsystem.

    ``weak`` and ``strong`` are the effective complex Rabi amplitudes of the
    weak drive and the control.  The expressions are the leading orders of a
    weak-drive expansion and are only meaningful for ``|weak| << |strong|``
    (not enforced).

    Returns:
        CoherencePair with the optical coherence rho13 and the ground-state
        coherence rho12.
    """
    denom = 2j * params.Delta2 + params.Gamma
    if params.gamma == 0 or denom == 0:
        raise SingularParameterError(
            "gamma and 2i*Delta2 + Gamma must both be nonzero"
        )
    weak = complex(weak)
    strong = complex(strong)
    rho13 = 1j * weak / denom - weak * abs(strong) ** 2 / (params.gamma * denom**2)
    rho12 = 1j * weak * np.conj(strong) / (params.gamma * denom**2)
    return CoherencePair(rho13=complex(rho13), rho12=complex(rho12))


def _linear_coeffs(params: AtomicParams) -> tuple[complex, complex]:
    """Coefficients of the medium response, linear in the weak fields.

    Returns ``(c_self, u)`` where the probe response is
    ``c_probe = c_self + u * (Ec1**2 + Ec2**2)`` applied to the probe and the
    mixing coefficient is ``u * Ec1 * Ec2`` applied to the other weak field.
    """
    d2 = 2j * params.Delta2 + params.Gamma
    dd = 2j * params.Delta + params.Gamma
    if params.gamma == 0 or d2 == 0 or dd == 0:
        raise SingularParameterError(
            "gamma, 2i*Delta2 + Gamma and 2i*Delta + Gamma must be nonzero"
        )
    c_self = 1j * params.dip13 / d2
    u = params.dip13 * params.dip23**2 / (params.gamma * dd**2)
    return complex(c_self), complex(u)


def response_coefficients(params: AtomicParams, fields: FieldSet) -> tuple[complex, complex]:
    """Probe-only and mixing response coefficients for the given controls.

    ``c_probe`` multiplies the field at its own frequency; ``c_mix`` couples
    the two weak fields through the control pair.
    """
    c_self, u = _linear_coeffs(params)
    c_probe = c_self + u * (fields.Ec1**2 + fields.Ec2**2)
    c_mix = u * fields.Ec1 * fields.Ec2
    return c_probe, c_mix


def polarizabilities(params: AtomicParams, fields: FieldSet) -> tuple[complex, complex]:
    """Medium polarizabilities at the probe and signal frequencies.

    Each output is the sum of a self term and a phase-sensitive mixing term;
    the probe mixing term carries ``exp(+1j * dphi_fwm)`` and the signal one
    the conjugate phase.
    """
    c_probe, c_mix = response_coefficients(params, fields)
    dphi = fields.dphi_fwm
    p_probe = np.exp(1j * fields.phi_p) * (
        c_probe * fields.Ep + c_mix * fields.Es * np.exp(1j * dphi)
    )
    p_signal = np.exp(1j * fields.phi_s) * (
        c_probe * fields.Es + c_mix * fields.Ep * np.exp(-1j * dphi)
    )
    return complex(p_probe), complex(p_signal)


def propagate_fields(params: AtomicParams, fields: FieldSet, steps: int = 1000) -> FieldSet:
    """Integrate the weak fields through the cell in the steady-state regime.

    Solves d(E)/dz = 1j * (alpha * gamma31 / (2 L mu13)) * P(omega) for the
    probe/signal pair over z in [0, L] with a fixed-step midpoint rule,
    re-evaluating the polarizabilities at every step.  Control fields do not
    deplete and are passed through unchanged.

    Args:
        params: medium parameters.
        fields: input fields at z = 0.
        steps: number of midpoint steps (>= 1).

    Returns:
        FieldSet at z = L.  Output phases are unwrapped along z whenever the
        corresponding amplitude stays nonzero; otherwise the wrapped angle of
        the final complex amplitude is reported.

    Raises:
        DivergenceError: if an intermediate field is non-finite, naming the
            z position where integration failed.
    """
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    c_probe, c_mix = response_coefficients(params, fields)
    beta_p = params.alpha_p * params.gamma31 / (2.0 * params.length * params.mu13)
    beta_s = params.alpha_s * params.gamma31 / (2.0 * params.length * params.mu13)
    if beta_p == 0.0 and beta_s == 0.0:
        return fields
    q = np.exp(1j * (fields.phi_c2 - fields.phi_c1))
    m = 1j * np.array(
        [
            [beta_p * c_probe, beta_p * c_mix * q],
            [beta_s * c_mix * np.conj(q), beta_s * c_probe],
        ],
        dtype=complex,
    )
    h = params.length / steps
    # Midpoint rule for an autonomous linear system reduces to a constant
    # per-step matrix: y <- (I + h M + h^2/2 M^2) y.
    step_matrix = np.eye(2, dtype=complex) + h * m + 0.5 * h**2 * (m @ m)

    y = np.array([fields.probe, fields.signal], dtype=complex)
    unwrapped = np.array([fields.phi_p, fields.phi_s])
    track = np.abs(y) > 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            y_next = step_matrix @ y
            if not np.all(np.isfinite(y_next)):
                raise DivergenceError(
                    f"field diverged at z = {(k + 1) * h:.6g} of {params.length:.6g}"
                )
            nonzero = (np.abs(y) > 0.0) & (np.abs(y_next) > 0.0)
            ratio = np.where(nonzero, y_next / np.where(nonzero, y, 1.0), 1.0)
            unwrapped = unwrapped + np.angle(ratio)
            track &= nonzero
            y = y_next

    phi_out = np.where(track, unwrapped, np.angle(y))
    return replace(
        fields,
        Ep=float(np.abs(y[0])),
        Es=float(np.abs(y[1])),
        phi_p=float(phi_out[0]),
        phi_s=float(phi_out[1]),
    )


def output_phase(field: complex) -> float:
    """Phase of a complex field amplitude in (-pi, pi]."""
    if abs(field) == 0:
        raise UndefinedPhaseError("phase of a zero field is undefined")
    return wrap_phase(math.atan2(field.imag, field.real))


def dl_interference(ph: PhasorDecomposition) -> DLInterference:
    """Phase and normalized amplitude of the combined output phasor.

    Adds the probe-only and mixing contributions as complex phasors,
    ``E_E + E_F * exp(1j * dphi_fwm)``.  This construction satisfies

        amplitude / E_E == sqrt(1 + r**2 + 2 r cos(dphi_fwm)),  r = E_F/E_E,

    identically, and its phase goes to 0 as E_F -> 0.  (An arctangent form
    with the tangent inverted would instead give pi/2 in that limit; the
    phasor sum is the form consistent with the amplitude expression and with
    the physical limit.)  dphi_fwm is wrapped before use, so results are
    exactly 2*pi periodic.

    Raises:
        NormalizationError: if E_E == 0.
    """
    if ph.E_E <= 0:
        raise NormalizationError("probe-only amplitude E_E must be > 0")
    dphi = wrap_phase(ph.dphi_fwm)
    total = ph.E_E + ph.E_F * np.exp(1j * dphi)
    amplitude = float(np.abs(total)) / ph.E_E
    if amplitude < 1e-12:
        # Complete destructive interference: phase undefined, reported as 0.
        return DLInterference(dphi_dl=0.0, amplitude_normalized=amplitude, degenerate=True)
    return DLInterference(
        dphi_dl=wrap_phase(float(np.angle(total))),
        amplitude_normalized=amplitude,
        degenerate=False,
    )


@dataclass(frozen=True)
class CellResponse:
    """Complex probe-frequency outputs for the three pulse cases.

    ``probe_only`` is the output with the signal blocked, ``fwm_only`` the
    output with the probe blocked (light converted from the signal).  Because
    the propagation is linear in the weak fields, the both-on output is
    exactly their sum; the effective interference phase is the argument of
    their ratio.
    """

    probe_only: complex
    fwm_only: complex

    @property
    def e_probe(self) -> float:
        return abs(self.probe_only)

    @property
    def e_fwm(self) -> float:
        return abs(self.fwm_only)

    @property
    def static_dphi_fwm(self) -> float:
        if self.e_probe == 0 or self.e_fwm == 0:
            return 0.0
        return wrap_phase(float(np.angle(self.fwm_only / self.probe_only)))


def cell_response(params: AtomicParams, fields: FieldSet, steps: int = 1000) -> CellResponse:
    """Propagate the probe-only and signal-only configurations.

    Used by the trace synthesizer: the two complex outputs determine every
    per-case amplitude and the double-lambda interference.
    """
    probe_in = replace(fields, Es=0.0)
    signal_in = replace(fields, Ep=0.0)
    out_probe = propagate_fields(params, probe_in, steps)
    out_fwm = propagate_fields(params, signal_in, steps)
    return CellResponse(
        probe_only=out_probe.Ep * np.exp(1j * out_probe.phi_p),
        fwm_only=out_fwm.Ep * np.exp(1j * out_fwm.phi_p),
    )


def intensity_transmission(
    params: AtomicParams, fields: FieldSet, steps: int = 1000
) -> float:
    """Probe power transmission |Ep(L)|^2 / |Ep(0)|^2 with the signal blocked."""
    if fields.Ep <= 0:
        raise ParameterError("probe amplitude must be > 0 to define transmission")
    out = propagate_fields(params, replace(fields, Es=0.0), steps)
    return (out.Ep / fields.Ep) ** 2


def calibrate_transmissions(
    params: AtomicParams,
    fields: FieldSet,
    target_control1: float = 0.80,
    target_both: float = 0.50,
    steps: int = 4000,
    tol: float = 1e-4,
) -> tuple[AtomicParams, FieldSet]:
    """Fit the optical depth and second control to two transmission targets.

    First bisects the (shared) optical depth so the probe transmits
    ``target_control1`` with only control 1 on, then bisects the second
    control amplitude so the transmission with both controls drops to
    ``target_both``.  The first stage is independent of Ec2, so the two
    bisections do not interact.

    Returns the calibrated ``(params, fields)`` pair.
    """
    probe_c1 = replace(fields, Ec2=0.0)

    def t1(alpha: float) -> float:
        p = replace(params, alpha_p=alpha, alpha_s=alpha)
        return intensity_transmission(p, probe_c1, steps)

    lo, hi = 1e-3, 1.0
    while t1(hi) > target_control1:
        hi *= 2.0
        if hi > 1e9:
            raise ParameterError("cannot reach the control-1 transmission target")
    while abs(hi - lo) > tol * hi:
        mid = 0.5 * (lo + hi)
        if t1(mid) > target_control1:
            lo = mid
        else:
            hi = mid
    alpha = 0.5 * (lo + hi)
    params = replace(params, alpha_p=alpha, alpha_s=alpha)

    def tboth(ec2: float) -> float:
        return intensity_transmission(params, replace(fields, Ec2=ec2), steps)

    lo, hi = 0.0, fields.Ec1
    if tboth(hi) > target_both:
        raise ParameterError("cannot reach the both-controls target with Ec2 <= Ec1")
    while hi - lo > tol * fields.Ec1:
        mid = 0.5 * (lo + hi)
        if tboth(mid) > target_both:
            lo = mid
        else:
            hi = mid
    fields = replace(fields, Ec2=0.5 * (lo + hi))
    return params, fields


def _preset_dirs() -> list[Path]:
    dirs = []
    env = os.environ.get(PRESET_ENV_VAR)
    if env:
        dirs.append(Path(env))
    dirs.append(Path(str(resources.files("dltomo") / "presets")))
    return dirs


def load_params(name_or_path: str) -> AtomicParams:
    """Load an AtomicParams preset by name or explicit JSON path.

    Named presets are searched first in the directory given by the
    ``DLTOMO_PRESET_DIR`` environment variable, then among the presets
    shipped with the package.  Preset files are JSON objects whose keys
    mirror the AtomicParams field names.
    """
    path = Path(name_or_path)
    if not path.suffix == ".json" or not path.exists():
        for base in _preset_dirs():
            candidate = base / f"{name_or_path}.json"
            if candidate.exists():
                path = candidate
                break
        else:
            if not path.exists():
                raise ParameterError(f"unknown preset or missing file: {name_or_path!r}")
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    unknown = set(data) - {f for f in AtomicParams.__dataclass_fields__}
    if unknown:
        raise ParameterError(f"unknown AtomicParams keys in {path}: {sorted(unknown)}")
    return AtomicParams(**data)
