"""Independent numerical oracles used by the test suite.

These deliberately avoid the package's own code paths: the Bloch oracle
integrates the full 3-level master equation with an ODE solver, and the
helpers below evaluate closed-form references directly.
"""

import numpy as np
from scipy.integrate import solve_ivp


def bloch_steady_state(Gamma, gamma, Delta2, weak, strong, rtol=1e-10):
    """Steady state of the 3-level lambda master equation by time integration.

    Levels: 0 and 1 are ground states, 2 is the excited state.  The weak
    field couples 0-2 with complex Rabi amplitude ``weak`` and the control
    couples 1-2 with ``strong``; both lambda legs are on two-photon
    resonance at one-photon detuning ``Delta2``.  The Hamiltonian convention
    (coupling Omega/2, detuning sign) is fixed so that with the control off
    the optical coherence relaxes to ``1j * weak / (Gamma + 2j*Delta2)``.
    Excited-state decay Gamma branches equally to the two ground states and
    a dephasing term makes the ground coherence decay at rate ``gamma``.

    Returns:
        (rho_opt, rho_gnd): the weak-transition optical coherence and the
        ground-state coherence, as complex numbers.
    """
    h = np.zeros((3, 3), dtype=complex)
    h[2, 2] = Delta2
    h[2, 0] = -0.5 * weak
    h[0, 2] = -0.5 * np.conj(weak)
    h[2, 1] = -0.5 * strong
    h[1, 2] = -0.5 * np.conj(strong)

    collapse = [
        np.sqrt(Gamma / 2.0) * _ketbra(0, 2),
        np.sqrt(Gamma / 2.0) * _ketbra(1, 2),
        np.sqrt(2.0 * gamma) * _ketbra(1, 1),
    ]

    def rhs(_t, y):
        rho = y.reshape(3, 3)
        drho = -1j * (h @ rho - rho @ h)
        for c in collapse:
            cd = c.conj().T
            drho += c @ rho @ cd - 0.5 * (cd @ c @ rho + rho @ cd @ c)
        return drho.ravel()

    rho0 = np.zeros((3, 3), dtype=complex)
    rho0[0, 0] = 1.0
    t_final = max(60.0 / Gamma, 12.0 / gamma)
    sol = solve_ivp(
        rhs,
        (0.0, t_final),
        rho0.ravel(),
        method="BDF",
        rtol=rtol,
        atol=1e-14,
        t_eval=[0.5 * t_final, t_final],
    )
    half = sol.y[:, 0].reshape(3, 3)
    rho = sol.y[:, 1].reshape(3, 3)
    if np.abs(rho[2, 0] - half[2, 0]) > 1e-3 * max(np.abs(rho[2, 0]), 1e-300):
        raise RuntimeError("Bloch oracle did not reach steady state")
    return rho[2, 0], rho[1, 0]


def _ketbra(i, j):
    m = np.zeros((3, 3), dtype=complex)
    m[i, j] = 1.0
    return m


def phasor_amplitude(e_e, e_f, dphi):
    """Closed-form normalized amplitude of two interfering phasors."""
    r = e_f / e_e
    return np.sqrt(1.0 + r**2 + 2.0 * r * np.cos(dphi))


def linear_loss_output(c_probe, beta, length, e_in):
    """Closed-form output of the probe under a pure self-response."""
    return e_in * np.exp(1j * beta * c_probe * length)
