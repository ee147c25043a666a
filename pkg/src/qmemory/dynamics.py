"""Closed-form decay amplitudes and channel constructors for the physical
examples: two-level and Lambda-type three-level giant atoms coupled to a
waveguide through two distant contacts, qubit dephasing, and a two-qubit
exchange model.

Times are dimensionless throughout, measured in units of the round-trip
delay tau between the two coupling points; all rates enter as gamma*tau
products.  Vacuum Lamb shifts are neglected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel_core import ChoiOperator

POPULATION_CONSERVATION_ATOL = 1e-6


@dataclass(frozen=True)
class GiantAtom2LParams:
    """Two-level giant atom: transition frequency and single-contact decay
    rate, both scaled by the delay tau."""

    omega_e_tau: float
    gamma_tau: float
    series_terms: int = 64

    def __post_init__(self):
        if self.gamma_tau <= 0:
            raise ValueError("gamma_tau must be positive")
        if self.series_terms < 1:
            raise ValueError("series_terms must be positive")


@dataclass(frozen=True)
class GiantAtom3LParams:
    """Lambda-type three-level giant atom with two dipole-allowed transitions
    e<->g (rate gamma1) and e<->s (rate gamma2)."""

    omega_e_tau: float
    omega_s_tau: float
    gamma1_tau: float
    gamma2_tau: float
    series_terms: int = 64
    integrator_step: float = 1e-3

    def __post_init__(self):
        if self.gamma1_tau <= 0 or self.gamma2_tau <= 0:
            raise ValueError("decay rates must be positive")
        if self.series_terms < 1:
            raise ValueError("series_terms must be positive")
        if not 0 < self.integrator_step <= 1e-3:
            raise ValueError("integrator_step must lie in (0, 1e-3]")

    @property
    def gamma_bar_1(self) -> float:
        """Mean amplitude decay rate (gamma1 + gamma2)/2, times tau."""
        return (self.gamma1_tau + self.gamma2_tau) / 2

    @property
    def gamma_bar_2(self) -> complex:
        """Delay coupling (gamma1 e^{-i omega_s tau} + gamma2)/2, times tau."""
        return (self.gamma1_tau * np.exp(-1j * self.omega_s_tau) + self.gamma2_tau) / 2


@dataclass(frozen=True)
class TwoLevelDecay:
    """Excited-state amplitude c(t) of the two-level emission at one time."""

    c: complex
    time: float

    def __post_init__(self):
        if abs(self.c) > 1 + 1e-12:
            raise ValueError("|c| must not exceed 1")


@dataclass(frozen=True)
class ThreeLevelDecay:
    """Dynamical data (d, G, S, phase) of the three-level emission at one time.

    G and S are the populations transferred from |e> to |g> and |s>;
    phi_s is the accumulated phase omega_s * t modulo 2*pi.
    """

    d: complex
    G: float
    S: float
    phi_s: float
    time: float

    def __post_init__(self):
        if abs(self.d) > 1 + 1e-12:
            raise ValueError("|d| must not exceed 1")
        if self.G < -1e-9 or self.S < -1e-9:
            raise ValueError("populations must be nonnegative")
        if abs(abs(self.d) ** 2 + self.G + self.S - 1) > POPULATION_CONSERVATION_ATOL:
            raise ValueError("|d|^2 + G + S must equal 1")


@dataclass(frozen=True)
class DephasingParams:
    """Qubit dephasing with coherence multiplier alpha, |alpha| <= 1."""

    alpha: complex

    def __post_init__(self):
        if abs(self.alpha) > 1 + 1e-12:
            raise ValueError("|alpha| must not exceed 1")


@dataclass(frozen=True)
class HeisenbergParams:
    """Exchange couplings (rate units) of the two-qubit environment model."""

    jx: float
    jy: float
    jz: float


def _delayed_series(t: np.ndarray, decay: complex, delay_coupling: complex,
                    series_terms: int) -> np.ndarray:
    """Evaluate ``sum_n Theta(t-n) [-b (t-n)]^n / n! e^{-a (t-n)}`` at t >= 0.

    The Heaviside factor makes the truncation at n = floor(t) exact.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be nonnegative")
    n_needed = int(np.max(t, initial=0.0)) + 1
    if series_terms < n_needed:
        raise ValueError(
            f"series_terms={series_terms} is too small for t={np.max(t)}: "
            f"need at least {n_needed}"
        )
    total = np.zeros(t.shape, dtype=complex)
    for n in range(n_needed):
        x = t - n
        live = x >= 0
        xn = np.where(live, x, 0.0)
        term = (-delay_coupling * xn) ** n / math.factorial(n) * np.exp(-decay * xn)
        total += np.where(live, term, 0.0)
    return total


def amplitude_c(t_over_tau: float, p: GiantAtom2LParams) -> complex:
    """Excited-state amplitude of the two-level giant atom.

    ``c(t) = sum_n Theta(t-n tau) [-gamma (t-n tau)/2]^n / n!
    e^{-(i omega_e + gamma/2)(t-n tau)}``, evaluated with t in units of tau.
    """
    decay = 1j * p.omega_e_tau + p.gamma_tau / 2
    return complex(
        _delayed_series(np.asarray(t_over_tau), decay, p.gamma_tau / 2, p.series_terms)
    )


def amplitude_c_grid(ts_over_tau: np.ndarray, p: GiantAtom2LParams) -> np.ndarray:
    """Vectorized :func:`amplitude_c` over an array of times."""
    decay = 1j * p.omega_e_tau + p.gamma_tau / 2
    return _delayed_series(ts_over_tau, decay, p.gamma_tau / 2, p.series_terms)


def amplitude_d(t_over_tau: float, p: GiantAtom3LParams) -> complex:
    """Excited-state amplitude of the three-level giant atom.

    Same delayed series as :func:`amplitude_c` with the mean decay rate
    gamma_bar_1 and the complex delay coupling gamma_bar_2.
    """
    decay = 1j * p.omega_e_tau + p.gamma_bar_1
    return complex(
        _delayed_series(np.asarray(t_over_tau), decay, p.gamma_bar_2, p.series_terms)
    )


def amplitude_d_grid(ts_over_tau: np.ndarray, p: GiantAtom3LParams) -> np.ndarray:
    """Vectorized :func:`amplitude_d` over an array of times."""
    decay = 1j * p.omega_e_tau + p.gamma_bar_1
    return _delayed_series(ts_over_tau, decay, p.gamma_bar_2, p.series_terms)


def _population_fluxes(ts: np.ndarray, p: GiantAtom3LParams, delay_active: bool):
    """Rates of population transfer into |g> (gamma1 flux) and |s> (gamma2
    flux), obtained from the delay equation solved by d(t):

        dG/dt = gamma1 (|d(t)|^2 + Re[e^{-i omega_s tau} d(t-tau) d*(t)])
        dS/dt = gamma2 (|d(t)|^2 + Re[d(t-tau) d*(t)])

    with d(t<0) = 0.  The split conserves |d|^2 + G + S exactly.

    The fluxes jump at t = tau because the delayed amplitude switches from
    d(0^-) = 0 to d(0) = 1; ``delay_active`` selects the one-sided limit so
    that segment endpoints on the kink are evaluated consistently.
    """
    d_now = amplitude_d_grid(ts, p)
    d_delayed = np.zeros_like(d_now)
    if delay_active:
        d_delayed = amplitude_d_grid(np.maximum(ts - 1.0, 0.0), p)
    cross = d_delayed * d_now.conj()
    base = np.abs(d_now) ** 2
    flux_g = p.gamma1_tau * (base + np.real(np.exp(-1j * p.omega_s_tau) * cross))
    flux_s = p.gamma2_tau * (base + np.real(cross))
    return flux_g, flux_s


def _simpson_segment(f0: np.ndarray, fm: np.ndarray, f1: np.ndarray, h: float):
    return (f0 + 4 * fm + f1) * (h / 6)


def populations_G_S(t_over_tau: float, p: GiantAtom3LParams) -> tuple:
    """Populations (G, S) transferred to |g> and |s> by time t.

    Integrates the delay-flux equations with composite Simpson quadrature at
    the configured step, segment-aligned to the delay kinks at multiples of
    tau.  Raises if the |d|^2 + G + S = 1 conservation check fails, which
    indicates a too coarse integrator_step.
    """
    t = float(t_over_tau)
    if t < 0:
        raise ValueError("time must be nonnegative")
    if t == 0.0:
        return 0.0, 0.0
    G = 0.0
    S = 0.0
    segment_start = 0.0
    while segment_start < t:
        segment_end = min(math.floor(segment_start) + 1.0, t)
        length = segment_end - segment_start
        delay_active = segment_start >= 1.0
        n_sub = max(1, int(math.ceil(length / p.integrator_step)))
        edges = np.linspace(segment_start, segment_end, n_sub + 1)
        mids = (edges[:-1] + edges[1:]) / 2
        fg_e, fs_e = _population_fluxes(edges, p, delay_active)
        fg_m, fs_m = _population_fluxes(mids, p, delay_active)
        h = length / n_sub
        G += float(np.sum(_simpson_segment(fg_e[:-1], fg_m, fg_e[1:], h)))
        S += float(np.sum(_simpson_segment(fs_e[:-1], fs_m, fs_e[1:], h)))
        segment_start = segment_end
    leak = abs(abs(amplitude_d(t, p)) ** 2 + G + S - 1.0)
    if leak > POPULATION_CONSERVATION_ATOL:
        raise ValueError(
            f"population conservation violated by {leak:.2e}; "
            "decrease integrator_step"
        )
    return G, S


def two_level_decay(t_over_tau: float, p: GiantAtom2LParams) -> TwoLevelDecay:
    """Bundle c(t) with its time stamp."""
    return TwoLevelDecay(amplitude_c(t_over_tau, p), t_over_tau)


def three_level_decay(t_over_tau: float, p: GiantAtom3LParams) -> ThreeLevelDecay:
    """Bundle d(t), G(t), S(t) and the metastable phase at one time."""
    d = amplitude_d(t_over_tau, p)
    G, S = populations_G_S(t_over_tau, p)
    phi = (p.omega_s_tau * t_over_tau) % (2 * math.pi)
    return ThreeLevelDecay(d, G, S, phi, t_over_tau)


def channel_two_level(c: complex) -> ChoiOperator:
    """Choi operator of the two-level emission channel C[c].

    Basis order (gg, ge, eg, ee); the channel acts as |g><g| -> |g><g|,
    |g><e| -> c* |g><e|, |e><e| -> |c|^2 |e><e| + (1-|c|^2)|g><g|.
    """
    if abs(c) > 1 + 1e-12:
        raise ValueError("|c| must not exceed 1")
    m = np.zeros((4, 4), dtype=complex)
    m[0, 0] = 1.0
    m[0, 3] = np.conj(c)
    m[3, 0] = c
    m[2, 2] = 1.0 - abs(c) ** 2
    m[3, 3] = abs(c) ** 2
    return ChoiOperator(2, 2, m)


def channel_three_level(d: complex, G: float, phi_s: float) -> ChoiOperator:
    """Choi operator of the three-level emission channel C[d, G] with the
    metastable phase e^{+/- i phi_s} on the |s> coherences.

    Basis order |g>=|0>, |s>=|1>, |e>=|2| (energetically increasing).
    """
    if G < -1e-9:
        raise ValueError("G must be nonnegative")
    if abs(d) ** 2 + G > 1 + 1e-9:
        raise ValueError("|d|^2 + G must not exceed 1")
    G = max(G, 0.0)
    s_pop = max(1.0 - abs(d) ** 2 - G, 0.0)
    phase = np.exp(1j * phi_s)
    m = np.zeros((9, 9), dtype=complex)
    m[0, 0] = 1.0
    m[0, 4] = phase
    m[4, 0] = np.conj(phase)
    m[4, 4] = 1.0
    m[0, 8] = np.conj(d)
    m[8, 0] = d
    m[4, 8] = np.conj(d) * np.conj(phase)
    m[8, 4] = d * phase
    m[6, 6] = G
    m[7, 7] = s_pop
    m[8, 8] = abs(d) ** 2
    return ChoiOperator(3, 3, m)


def dephasing_channel(alpha: complex) -> ChoiOperator:
    """Choi operator of the qubit dephasing map |0><1| -> alpha |0><1|."""
    if abs(alpha) > 1 + 1e-12:
        raise ValueError("|alpha| must not exceed 1")
    m = np.zeros((4, 4), dtype=complex)
    m[0, 0] = 1.0
    m[3, 3] = 1.0
    m[0, 3] = alpha
    m[3, 0] = np.conj(alpha)
    return ChoiOperator(2, 2, m)


_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_SZ = np.array([[1, 0], [0, -1]], dtype=complex)

# Bell vectors (unnormalized by sqrt(2)) and the eigenvalues of
# -Jx sx ot sx - Jy sy ot sy - Jz sz ot sz on them.
_BELL = np.array(
    [
        [1, 0, 0, 1],   # phi+
        [1, 0, 0, -1],  # phi-
        [0, 1, 1, 0],   # psi+
        [0, 1, -1, 0],  # psi-
    ],
    dtype=complex,
).T / np.sqrt(2)


def _bell_eigenvalues(p: HeisenbergParams) -> np.ndarray:
    return np.array(
        [
            -p.jx + p.jy - p.jz,
            p.jx - p.jy - p.jz,
            -p.jx - p.jy + p.jz,
            p.jx + p.jy + p.jz,
        ]
    )


def heisenberg_channel(t: float, p: HeisenbergParams) -> ChoiOperator:
    """Choi operator of tracing out a qubit environment prepared in |1> after
    evolving under the exchange Hamiltonian for time t.

    The Hamiltonian is Bell-diagonal, so the propagator e^{i t H} is built
    from its exact eigendecomposition rather than a generic matrix
    exponential.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    phases = np.exp(1j * t * _bell_eigenvalues(p) / 2)
    u = (_BELL * phases) @ _BELL.conj().T
    # Kraus operators A_k = (1 ot <k|) U (1 ot |1>), system is the first factor
    u4 = u.reshape(2, 2, 2, 2)
    m = np.zeros((4, 4), dtype=complex)
    for k in range(2):
        a_k = u4[:, k, :, 1]
        y = a_k.T.ravel()
        m += np.outer(y, y.conj())
    return ChoiOperator(2, 2, m)
