"""Fock-basis maximum-likelihood state reconstruction and derived metrics.

Quadrature convention: the vacuum variance is 1, so the number-state
wavefunctions carry exp(-x**2/4) envelopes and a coherent state of complex
amplitude a has mean quadrature 2*Re(a exp(-1j*theta)) at LO phase theta.
Phase-space coordinates follow the same scale: x = 2*Re(a), p = 2*Im(a),
vacuum Wigner peak 1/(2*pi).

The reconstruction iterates the expectation-maximization fixed point
rho <- N[R rho R] with R the likelihood-weighted sum of projector kernels,
falling back to diluted steps (R mixed with the identity) whenever a full
step would lower the log-likelihood, so accepted iterations never decrease
it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

from .errors import (
    InsufficientDataError,
    InvalidStateError,
    ParameterError,
    TruncationError,
)

logger = logging.getLogger(__name__)

HERMITIAN_ATOL = 1e-12
TRACE_ATOL = 1e-10
EIGVAL_ATOL = 1e-10

# Test builds flip this on to assert likelihood monotonicity in every
# reconstruction, wherever it is invoked from.
STRICT_MONOTONE = False


@dataclass(frozen=True)
class DensityMatrix:
    """Fock-basis density matrix with finite cutoff.

    ``elems`` is a cutoff x cutoff complex matrix; validation enforces
    Hermiticity to 1e-12, unit trace to 1e-10 and eigenvalues >= -1e-10.
    """

    cutoff: int
    elems: np.ndarray

    def __post_init__(self):
        elems = np.asarray(self.elems, dtype=complex)
        if elems.shape != (self.cutoff, self.cutoff):
            raise InvalidStateError(
                f"elems shape {elems.shape} does not match cutoff {self.cutoff}"
            )
        object.__setattr__(self, "elems", elems)

    def validate(self) -> "DensityMatrix":
        if not np.allclose(self.elems, self.elems.conj().T, atol=HERMITIAN_ATOL):
            raise InvalidStateError("density matrix is not Hermitian")
        tr = float(np.trace(self.elems).real)
        if abs(tr - 1.0) > TRACE_ATOL:
            raise InvalidStateError(f"trace {tr} deviates from 1")
        eigs = np.linalg.eigvalsh(0.5 * (self.elems + self.elems.conj().T))
        if eigs.min() < -EIGVAL_ATOL:
            raise InvalidStateError(f"negative eigenvalue {eigs.min():.3e}")
        return self

    @classmethod
    def maximally_mixed(cls, cutoff: int) -> "DensityMatrix":
        return cls(cutoff, np.eye(cutoff, dtype=complex) / cutoff)

    @classmethod
    def fock(cls, n: int, cutoff: int) -> "DensityMatrix":
        if n >= cutoff:
            raise TruncationError(f"Fock index {n} requires cutoff > {n}")
        m = np.zeros((cutoff, cutoff), dtype=complex)
        m[n, n] = 1.0
        return cls(cutoff, m)


@dataclass(frozen=True)
class QuadratureDataset:
    """Pooled (theta, x) samples feeding one reconstruction."""

    thetas: np.ndarray
    xs: np.ndarray
    source_bin: int | None = None
    case: str | None = None

    def __post_init__(self):
        thetas = np.asarray(self.thetas, dtype=float).ravel()
        xs = np.asarray(self.xs, dtype=float).ravel()
        if thetas.shape != xs.shape:
            raise ParameterError("thetas and xs must have equal length")
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "xs", xs)
        if len(thetas) and np.ptp(thetas) < math.pi:
            logger.warning(
                "quadrature dataset spans only %.2f rad of LO phase", np.ptp(thetas)
            )

    def __len__(self) -> int:
        return len(self.thetas)


@dataclass(frozen=True)
class WignerGrid:
    x_axis: np.ndarray
    p_axis: np.ndarray
    values: np.ndarray

    def riemann_sum(self) -> float:
        dx = self.x_axis[1] - self.x_axis[0]
        dp = self.p_axis[1] - self.p_axis[0]
        return float(self.values.sum() * dx * dp)

    def max_location(self) -> tuple[float, float]:
        """Grid maximum with one step of quadratic sub-grid refinement."""
        i, j = np.unravel_index(np.argmax(self.values), self.values.shape)
        x = _parabolic_refine(self.x_axis, self.values[:, j], i)
        p = _parabolic_refine(self.p_axis, self.values[i, :], j)
        return (x, p)


def _parabolic_refine(axis, column, k):
    if 0 < k < len(axis) - 1:
        y0, y1, y2 = column[k - 1], column[k], column[k + 1]
        denom = y0 - 2 * y1 + y2
        if denom != 0:
            shift = 0.5 * (y0 - y2) / denom
            if abs(shift) <= 1.0:
                return float(axis[k] + shift * (axis[1] - axis[0]))
    return float(axis[k])


@dataclass
class MLEResult:
    """Raw output of the iterative reconstruction."""

    rho: DensityMatrix
    log_likelihood: float
    iterations: int
    converged: bool
    downweighted: int = 0
    likelihood_path: np.ndarray | None = None


@dataclass
class ReconstructionReport:
    """Reconstructed state plus every derived metric for one dataset.

    Metric errors are bootstrap standard deviations when available, else
    None.
    """

    rho: DensityMatrix
    log_likelihood: float
    iterations: int
    converged: bool
    n_points: int
    purity: float
    mean_photon: float
    coherent_overlap: float
    fidelity_vs_input: float | None = None
    purity_err: float | None = None
    mean_photon_err: float | None = None
    coherent_overlap_err: float | None = None
    fidelity_vs_input_err: float | None = None
    wigner_max_location: tuple[float, float] | None = None
    source_bin: int | None = None
    case: str | None = None
    bin_range: tuple[float, float] | None = None


def fock_wavefunction(n: int, x) -> np.ndarray | float:
    """Number-state quadrature wavefunction under the variance-1 convention.

    psi_n(x) = (2 pi)^(-1/4) (2^n n!)^(-1/2) H_n(x / sqrt(2)) exp(-x^2 / 4),
    evaluated through the stable three-term recurrence
    psi_{n+1} = (x psi_n - sqrt(n) psi_{n-1}) / sqrt(n+1).
    """
    if n < 0:
        raise ParameterError("n must be >= 0")
    x = np.asarray(x, dtype=float)
    psi = _fock_stack(n, x)
    out = psi[n]
    return float(out) if out.ndim == 0 else out


def _fock_stack(n_max: int, x: np.ndarray) -> np.ndarray:
    """All psi_n(x) for n = 0..n_max, stacked along the first axis."""
    shape = (n_max + 1,) + x.shape
    psi = np.empty(shape)
    psi[0] = (2.0 * math.pi) ** (-0.25) * np.exp(-(x**2) / 4.0)
    if n_max >= 1:
        psi[1] = x * psi[0]
    for n in range(1, n_max):
        psi[n + 1] = (x * psi[n] - math.sqrt(n) * psi[n - 1]) / math.sqrt(n + 1)
    return psi


def povm_element(theta: float, x: float, cutoff: int) -> np.ndarray:
    """Rank-one quadrature projector kernel, truncated to the Fock cutoff.

    Pi(theta, x)_{mn} = psi_m(x) psi_n(x) exp(1j * (m - n) * theta).  The
    phase sign is fixed by the measurement model X_theta = a e^{-i theta} +
    a^dagger e^{i theta}: a coherent state of phase phi then reconstructs at
    phase +phi and its Wigner peak lands at (2|a|cos phi, 2|a|sin phi).
    """
    if cutoff < 1:
        raise ParameterError("cutoff must be >= 1")
    psi = _fock_stack(cutoff - 1, np.atleast_1d(np.asarray(x, dtype=float)))[:, 0]
    v = psi * np.exp(1j * np.arange(cutoff) * theta)
    return np.outer(v, v.conj())


def _kernel_matrix(thetas: np.ndarray, xs: np.ndarray, cutoff: int) -> np.ndarray:
    """Row j holds the projector vector v_j with Pi_j = v_j v_j^dagger."""
    psi = _fock_stack(cutoff - 1, xs)  # (cutoff, J)
    phases = np.exp(1j * np.outer(thetas, np.arange(cutoff)))  # (J, cutoff)
    return psi.T * phases


def mle_reconstruct(
    data: QuadratureDataset,
    cutoff: int = 10,
    max_iter: int = 2000,
    tol: float = 1e-9,
    strict_monotone: bool = False,
) -> MLEResult:
    """Iterative maximum-likelihood reconstruction from quadrature samples.

    Starting from the maximally mixed state, iterates rho <- N[R rho R]
    with R = (1/J) sum_j Pi_j / Tr(rho Pi_j).  If a step would decrease the
    log-likelihood, the step operator is diluted, R <- (1 - eps) I + eps R,
    halving eps until the step is non-decreasing, so the accepted likelihood
    path is monotone.  Convergence is declared when the relative
    log-likelihood change falls below ``tol``.

    Points whose projection probability underflows are removed from the sum
    with a warning and counted in the result.

    Args:
        data: pooled quadrature samples.
        cutoff: Fock-space dimension; choose it so the top level stays
            unpopulated (checked post hoc by callers).
        max_iter: iteration cap; non-convergence is reported, not raised.
        tol: relative log-likelihood change declaring convergence.
        strict_monotone: raise AssertionError if an accepted step ever
            lowers the log-likelihood (test builds enable this).
    """
    if len(data) == 0:
        raise InsufficientDataError("empty quadrature dataset")
    if cutoff < 1:
        raise ParameterError("cutoff must be >= 1")
    strict_monotone = strict_monotone or STRICT_MONOTONE

    kernel = _kernel_matrix(data.thetas, data.xs, cutoff)  # (J, N)
    n_points = kernel.shape[0]
    weights = np.ones(n_points, dtype=bool)
    rho = np.eye(cutoff, dtype=complex) / cutoff
    identity = np.eye(cutoff, dtype=complex)

    def probabilities(r):
        # p_j = v_j^dagger rho v_j, evaluated as two dense products
        return np.sum(kernel.conj() * (kernel @ r.T), axis=1).real

    probs = probabilities(rho)
    underflow = probs <= 1e-280
    downweighted = 0
    if np.any(underflow & weights):
        downweighted = int(np.count_nonzero(underflow & weights))
        logger.warning(
            "down-weighting %d quadrature points with underflowing probability",
            downweighted,
        )
        weights &= ~underflow

    def loglik(p):
        return float(np.sum(np.log(p[weights])))

    current = loglik(probs)
    path = [current]
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        active = weights & (probs > 1e-280)
        inv = np.zeros_like(probs)
        inv[active] = 1.0 / probs[active]
        scaled = kernel * inv[:, None]
        r_op = (scaled.T @ kernel.conj()) / np.count_nonzero(active)
        r_op = 0.5 * (r_op + r_op.conj().T)

        eps = 1.0
        accepted = None
        for _ in range(60):
            step = (1.0 - eps) * identity + eps * r_op
            cand = step @ rho @ step
            cand = 0.5 * (cand + cand.conj().T)
            cand /= np.trace(cand).real
            cand_probs = probabilities(cand)
            bad = weights & (cand_probs <= 0)
            if not np.any(bad):
                cand_ll = loglik(cand_probs)
                if cand_ll >= current - 1e-12 * abs(current):
                    accepted = (cand, cand_probs, cand_ll)
                    break
            eps *= 0.5
        if accepted is None:
            # No productive step remains at any dilution; treat as converged.
            converged = True
            break
        rho, probs, new_ll = accepted
        if strict_monotone and new_ll < current - 1e-9 * abs(current):
            raise AssertionError("log-likelihood decreased on an accepted step")
        delta = new_ll - current
        current = new_ll
        path.append(current)
        if abs(delta) <= tol * abs(current):
            converged = True
            break

    rho = _project_physical(rho)
    return MLEResult(
        rho=DensityMatrix(cutoff, rho).validate(),
        log_likelihood=current,
        iterations=iterations,
        converged=converged,
        downweighted=downweighted,
        likelihood_path=np.asarray(path),
    )


def _project_physical(rho: np.ndarray) -> np.ndarray:
    """Clip negligible negative eigenvalues and renormalize."""
    rho = 0.5 * (rho + rho.conj().T)
    vals, vecs = np.linalg.eigh(rho)
    vals = np.clip(vals, 0.0, None)
    rho = (vecs * vals) @ vecs.conj().T
    return rho / np.trace(rho).real


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.conj().T))
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def fidelity(rho_a: DensityMatrix, rho_b: DensityMatrix) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(a) b sqrt(a)))**2, symmetric in a, b.

    Evaluated as the squared trace norm of sqrt(a) sqrt(b): the eigenvalues
    of sqrt(a) b sqrt(a) are the squared singular values of that product, so
    the two forms agree while the singular-value route is symmetric to
    machine precision.
    """
    if rho_a.cutoff != rho_b.cutoff:
        raise ParameterError("density matrices must share a cutoff")
    for rho in (rho_a, rho_b):
        eigs = np.linalg.eigvalsh(0.5 * (rho.elems + rho.elems.conj().T))
        if eigs.min() < -1e-8:
            raise InvalidStateError(f"state eigenvalue {eigs.min():.3e} below tolerance")
    product = _sqrtm_psd(rho_a.elems) @ _sqrtm_psd(rho_b.elems)
    f = float(np.linalg.svd(product, compute_uv=False).sum() ** 2)
    return min(f, 1.0)


def purity(rho: DensityMatrix) -> float:
    """Tr(rho^2)."""
    return float(np.trace(rho.elems @ rho.elems).real)


def mean_photon(rho: DensityMatrix) -> float:
    """Sum_n n rho_nn."""
    return float(np.sum(np.arange(rho.cutoff) * np.diag(rho.elems).real))


def coherent_vector(alpha: complex, cutoff: int) -> np.ndarray:
    """Truncated coherent-state amplitudes c_n = e^{-|a|^2/2} a^n / sqrt(n!)."""
    c = np.empty(cutoff, dtype=complex)
    c[0] = math.exp(-0.5 * abs(alpha) ** 2)
    for n in range(cutoff - 1):
        c[n + 1] = c[n] * alpha / math.sqrt(n + 1)
    return c


def coherent_dm(alpha: complex, cutoff: int, max_loss: float = 1e-6) -> DensityMatrix:
    """Truncated coherent state, renormalized inside the cutoff.

    Raises:
        TruncationError: if the discarded tail exceeds ``max_loss``.
    """
    if cutoff < 1:
        raise ParameterError("cutoff must be >= 1")
    c = coherent_vector(alpha, cutoff)
    norm2 = float(np.vdot(c, c).real)
    loss = 1.0 - norm2
    if loss > max_loss:
        raise TruncationError(
            f"cutoff {cutoff} keeps only {norm2:.8f} of |alpha|={abs(alpha):.3f}"
        )
    c = c / math.sqrt(norm2)
    return DensityMatrix(cutoff, np.outer(c, c.conj()))


def annihilation_expectation(rho: DensityMatrix) -> complex:
    """Tr(rho a) for the truncated mode, Sum_m sqrt(m) rho_{m, m-1}."""
    diag = np.sqrt(np.arange(1, rho.cutoff))
    return complex(np.sum(diag * np.diagonal(rho.elems, offset=-1)))


def coherent_overlap(rho: DensityMatrix) -> float:
    """Fidelity with the coherent state of equal mean photon number.

    The comparison amplitude is sqrt(mean_photon) with phase arg(Tr(rho a));
    when that expectation is numerically zero the phase is picked by
    maximizing over a 64-point grid.  The comparison state is truncated and
    renormalized at the state's own cutoff, so the overlap stays defined
    even when the coherent tail would spill past it.
    """
    nbar = max(mean_photon(rho), 0.0)
    amp = math.sqrt(nbar)
    expect_a = annihilation_expectation(rho)
    if abs(expect_a) > 1e-9 * max(amp, 1.0):
        phases = [math.atan2(expect_a.imag, expect_a.real)]
    else:
        phases = list(np.linspace(-math.pi, math.pi, 64, endpoint=False))
    best = 0.0
    for phi in phases:
        ref = coherent_dm(amp * np.exp(1j * phi), rho.cutoff, max_loss=1.0)
        best = max(best, fidelity(rho, ref))
    return best


def rotate_dm(rho: DensityMatrix, delta: float) -> DensityMatrix:
    """Advance the state's phase-space angle by delta.

    Shifting every LO phase in a dataset by delta reconstructs to the
    rotation of the original state by delta, rho'_{mn} =
    e^{1j (m - n) delta} rho_{mn}.
    """
    n = np.arange(rho.cutoff)
    u = np.exp(1j * n * delta)
    return DensityMatrix(rho.cutoff, rho.elems * np.outer(u, u.conj()))


def wigner(rho: DensityMatrix, x_axis: np.ndarray, p_axis: np.ndarray) -> WignerGrid:
    """Wigner function on a phase-space grid, normalized to unit integral.

    Uses the associated-Laguerre Fock kernel expressed in the variance-1
    coordinates (x = 2 Re a, p = 2 Im a); the vacuum peak is 1/(2 pi).
    Grids should span at least +-5 quadrature units for the normalization
    to be meaningful.
    """
    x_axis = np.asarray(x_axis, dtype=float)
    p_axis = np.asarray(p_axis, dtype=float)
    if x_axis.max() < 5.0 or p_axis.max() < 5.0 or x_axis.min() > -5.0 or p_axis.min() > -5.0:
        logger.warning("wigner grid spans less than +-5 quadrature units")
    x, p = np.meshgrid(x_axis, p_axis, indexing="ij")
    b = (x**2 + p**2) / 2.0
    # Complex amplitude with the chirality matching povm_element: a state at
    # angle phi peaks at (2|a|cos phi, 2|a|sin phi).
    z = (x - 1j * p) / math.sqrt(2.0)
    env = np.exp(-b) / (2.0 * math.pi)
    cutoff = rho.cutoff
    w = np.zeros_like(b)
    for m in range(cutoff):
        for n in range(m, cutoff):
            if abs(rho.elems[m, n]) < 1e-16 and abs(rho.elems[n, m]) < 1e-16:
                continue
            k = n - m
            lag = eval_genlaguerre(m, k, 2.0 * b)
            coeff = math.exp(0.5 * (gammaln(m + 1) - gammaln(n + 1)) + 0.5 * k * math.log(2.0)) if k else 1.0
            kernel = env * (-1.0) ** m * coeff * z**k * lag
            if n == m:
                w += (rho.elems[m, m].real) * kernel.real
            else:
                w += 2.0 * (rho.elems[n, m] * kernel).real
    return WignerGrid(x_axis=x_axis, p_axis=p_axis, values=w)


def bootstrap_errors(
    data: QuadratureDataset,
    cutoff: int,
    resamples: int = 100,
    seed: int = 0,
    max_iter: int = 2000,
    tol: float = 1e-9,
    reference: DensityMatrix | None = None,
    reference_rotation: float = 0.0,
) -> dict:
    """Bootstrap standard deviations of the reconstruction metrics.

    Resamples (theta, x) pairs with replacement, reruns the reconstruction,
    and reports the sample standard deviation of each metric.  Resamples
    that fail to converge are counted and excluded.  With fewer than two
    usable resamples the errors are zero and flagged insufficient.

    ``reference`` (optionally rotated by ``reference_rotation``) adds a
    fidelity-vs-input column; the rotation is held fixed across resamples.
    """
    if len(data) < 100:
        raise InsufficientDataError("bootstrap needs at least 100 points")
    rng = np.random.default_rng(seed)
    ref = rotate_dm(reference, reference_rotation) if reference is not None else None
    metrics: dict[str, list[float]] = {
        "purity": [],
        "mean_photon": [],
        "coherent_overlap": [],
    }
    if ref is not None:
        metrics["fidelity_vs_input"] = []
    failures = 0
    for _ in range(resamples):
        idx = rng.integers(0, len(data), size=len(data))
        sample = QuadratureDataset(data.thetas[idx], data.xs[idx])
        result = mle_reconstruct(sample, cutoff=cutoff, max_iter=max_iter, tol=tol)
        if not result.converged:
            failures += 1
            continue
        metrics["purity"].append(purity(result.rho))
        metrics["mean_photon"].append(mean_photon(result.rho))
        metrics["coherent_overlap"].append(coherent_overlap(result.rho))
        if ref is not None:
            metrics["fidelity_vs_input"].append(fidelity(result.rho, ref))
    usable = len(metrics["purity"])
    out = {
        "errors": {
            key: float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            for key, vals in metrics.items()
        },
        "resamples": resamples,
        "usable": usable,
        "failures": failures,
        "insufficient": usable < 2,
    }
    if out["insufficient"]:
        logger.warning("bootstrap had %d usable resamples; errors set to 0", usable)
    return out


def build_report(
    data: QuadratureDataset,
    cutoff: int,
    max_iter: int = 2000,
    tol: float = 1e-9,
    reference: DensityMatrix | None = None,
    reference_rotation: float = 0.0,
    bootstrap_resamples: int = 0,
    bootstrap_seed: int = 0,
    wigner_axes: tuple[np.ndarray, np.ndarray] | None = None,
    strict_monotone: bool = False,
) -> tuple[ReconstructionReport, WignerGrid | None]:
    """Reconstruct one dataset and assemble its full metric report."""
    result = mle_reconstruct(
        data, cutoff=cutoff, max_iter=max_iter, tol=tol, strict_monotone=strict_monotone
    )
    rho = result.rho
    ref = rotate_dm(reference, reference_rotation) if reference is not None else None
    report = ReconstructionReport(
        rho=rho,
        log_likelihood=result.log_likelihood,
        iterations=result.iterations,
        converged=result.converged,
        n_points=len(data),
        purity=purity(rho),
        mean_photon=mean_photon(rho),
        coherent_overlap=coherent_overlap(rho),
        fidelity_vs_input=fidelity(rho, ref) if ref is not None else None,
        source_bin=data.source_bin,
        case=data.case,
    )
    grid = None
    if wigner_axes is not None:
        grid = wigner(rho, *wigner_axes)
        report.wigner_max_location = grid.max_location()
    if bootstrap_resamples > 0 and len(data) < 100:
        logger.warning(
            "skipping bootstrap for %d-point dataset (needs >= 100)", len(data)
        )
        bootstrap_resamples = 0
    if bootstrap_resamples > 0:
        boot = bootstrap_errors(
            data,
            cutoff,
            resamples=bootstrap_resamples,
            seed=bootstrap_seed,
            max_iter=max_iter,
            tol=tol,
            reference=reference,
            reference_rotation=reference_rotation,
        )
        errs = boot["errors"]
        report.purity_err = errs["purity"]
        report.mean_photon_err = errs["mean_photon"]
        report.coherent_overlap_err = errs["coherent_overlap"]
        report.fidelity_vs_input_err = errs.get("fidelity_vs_input")
    return report, grid
