"""Closed-form memory classification for the studied channel families, with
explicit constructive certificates.

Two-level and three-level spontaneous emission: any memory is quantum, so
the verdict is Markovian or QuantumMemory.  Qubit dephasing: every pair is
classically implementable with a two-element instrument, so non-monotone
coherence yields ClassicalNonMarkovian, never QuantumMemory.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .channel_core import (
    ChoiOperator,
    SubchannelDecomposition,
    link_product,
)
from .dynamics import ThreeLevelDecay, dephasing_channel


class MemoryKind(Enum):
    MARKOVIAN = "Markovian"
    CLASSICAL_NON_MARKOVIAN = "ClassicalNonMarkovian"
    QUANTUM_MEMORY = "QuantumMemory"


@dataclass(frozen=True)
class MemoryVerdict:
    """Classification outcome with a signed distance to the criterion
    boundary, in the natural units of the family's criterion (amplitude
    moduli or populations; not comparable across families).

    Markovian verdicts carry a nonnegative margin and QuantumMemory
    verdicts a nonpositive one.  ClassicalNonMarkovian sits between the
    Markovianity and classicality boundaries: its margin is nonpositive
    when issued against the Markovianity criterion (dephasing classifier)
    and nonnegative when issued against the classicality criterion
    (membership programs that did not detect quantum memory).
    """

    kind: MemoryKind
    margin: float

    def __post_init__(self):
        if self.kind is MemoryKind.MARKOVIAN and self.margin < 0:
            raise ValueError("Markovian verdict requires nonnegative margin")
        if self.kind is MemoryKind.QUANTUM_MEMORY and self.margin > 0:
            raise ValueError("QuantumMemory verdict requires nonpositive margin")


def classify_two_level(c1: complex, c2: complex) -> MemoryVerdict:
    """Classify the two-level emission pair by the amplitude moduli.

    Markovian iff |c2| <= |c1|; otherwise the memory is necessarily quantum
    (classical memory never suffices for this family).
    """
    if abs(c1) > 1 + 1e-12 or abs(c2) > 1 + 1e-12:
        raise ValueError("amplitudes must lie in the unit disk")
    margin = abs(c1) - abs(c2)
    if margin >= 0:
        return MemoryVerdict(MemoryKind.MARKOVIAN, margin)
    return MemoryVerdict(MemoryKind.QUANTUM_MEMORY, margin)


def classify_three_level(s1: ThreeLevelDecay, s2: ThreeLevelDecay) -> MemoryVerdict:
    """Classify the three-level emission pair.

    Classical implementability requires both G(t2) >= G(t1) and
    G(t1) + |d(t1)|^2 >= G(t2) + |d(t2)|^2, and then the pair is even
    Markovian; violating either makes the memory quantum.  The margin is
    the smaller of the two slacks.
    """
    slack_ground = s2.G - s1.G
    slack_excited = (s1.G + abs(s1.d) ** 2) - (s2.G + abs(s2.d) ** 2)
    margin = min(slack_ground, slack_excited)
    if margin >= 0:
        return MemoryVerdict(MemoryKind.MARKOVIAN, margin)
    return MemoryVerdict(MemoryKind.QUANTUM_MEMORY, margin)


def classify_dephasing(a1: complex, a2: complex) -> MemoryVerdict:
    """Classify the dephasing pair: Markovian iff |a2| <= |a1|, otherwise
    classically non-Markovian (a two-element instrument always suffices)."""
    if abs(a1) > 1 + 1e-12 or abs(a2) > 1 + 1e-12:
        raise ValueError("coherence factors must lie in the unit disk")
    margin = abs(a1) - abs(a2)
    if margin >= 0:
        return MemoryVerdict(MemoryKind.MARKOVIAN, margin)
    return MemoryVerdict(MemoryKind.CLASSICAL_NON_MARKOVIAN, margin)


def _half_circle_point(center: complex) -> complex:
    """A point z with |z| = 1/2 and |center - z| = 1/2, for |center| <= 1.

    Intersection of the two radius-1/2 circles around 0 and around center;
    degeneracies are resolved by taking the intersection with nonnegative
    imaginary part (and positive real part when both are real).
    """
    r = abs(center)
    if r < 1e-15:
        return 0.5 + 0.0j
    half = center / 2
    height = np.sqrt(max(0.25 - r * r / 4, 0.0))
    normal = 1j * center / r
    z_plus = half + height * normal
    z_minus = half - height * normal
    if z_plus.imag > z_minus.imag or (
        z_plus.imag == z_minus.imag and z_plus.real >= z_minus.real
    ):
        return z_plus
    return z_minus


def _coherence_subchannel(coherence: complex) -> ChoiOperator:
    """CP map with Choi diag(1/2, 0, 0, 1/2) and corner coherence."""
    m = np.zeros((4, 4), dtype=complex)
    m[0, 0] = 0.5
    m[3, 3] = 0.5
    m[0, 3] = coherence
    m[3, 0] = np.conj(coherence)
    return ChoiOperator(2, 2, m)


def dephasing_instrument(a1: complex, a2: complex):
    """Two-element instrument realizing D_{a2} from D_{a1} with classical
    feed-forward.

    Splits D_{a1} into subchannels with coherences gamma and a1 - gamma on
    the half-radius circles, and pairs them with dephasing transitions of
    unimodular coherence ratios delta/gamma and (a2 - delta)/(a1 - gamma).
    Returns the subchannel decomposition of D_{a1} and the two transition
    channels; linking and summing reproduces D_{a2} exactly.
    """
    if abs(a1) > 1 + 1e-12 or abs(a2) > 1 + 1e-12:
        raise ValueError("coherence factors must lie in the unit disk")
    gamma = _half_circle_point(a1)
    delta = _half_circle_point(a2)
    part1 = _coherence_subchannel(gamma)
    part2 = _coherence_subchannel(a1 - gamma)
    k1 = dephasing_channel(delta / gamma)
    rest = a1 - gamma
    if abs(rest) < 1e-15:
        # |a1 - gamma| = 1/2 by construction, so this cannot occur for
        # admissible inputs; guard anyway.
        k2 = dephasing_channel(0.0)
    else:
        k2 = dephasing_channel((a2 - delta) / rest)
    decomposition = SubchannelDecomposition(
        (part1, part2), dephasing_channel(a1)
    )
    return decomposition, (k1, k2)


def markovian_transition_two_level(c1: complex, c2: complex) -> ChoiOperator:
    """Choi operator of the candidate Markovian transition C[c2/c1].

    Always satisfies link(C[c1], K) = C[c2] as a linear identity; it is a
    channel (PSD) precisely when |c2| <= |c1|.
    """
    if c1 == 0:
        raise ValueError("transition undefined for c1 = 0")
    ratio = c2 / c1
    m = np.zeros((4, 4), dtype=complex)
    m[0, 0] = 1.0
    m[0, 3] = np.conj(ratio)
    m[3, 0] = ratio
    m[2, 2] = 1.0 - abs(ratio) ** 2
    m[3, 3] = abs(ratio) ** 2
    return ChoiOperator(2, 2, m)


def markovian_transition_three_level(
    s1: ThreeLevelDecay, s2: ThreeLevelDecay
) -> ChoiOperator:
    """Choi operator of the candidate transition C[d2/d1, (G2-G1)/|d1|^2].

    A channel precisely when both classical-implementability inequalities
    hold; always composes with C[d1, G1] to C[d2, G2].
    """
    if s1.d == 0:
        raise ValueError("transition undefined for d1 = 0")
    ratio = s2.d / s1.d
    g_step = (s2.G - s1.G) / abs(s1.d) ** 2
    phi_step = s2.phi_s - s1.phi_s
    phase = np.exp(1j * phi_step)
    m = np.zeros((9, 9), dtype=complex)
    m[0, 0] = 1.0
    m[0, 4] = phase
    m[4, 0] = np.conj(phase)
    m[4, 4] = 1.0
    m[0, 8] = np.conj(ratio)
    m[8, 0] = ratio
    m[4, 8] = np.conj(ratio) * np.conj(phase)
    m[8, 4] = ratio * phase
    m[6, 6] = g_step
    m[7, 7] = 1.0 - abs(ratio) ** 2 - g_step
    m[8, 8] = abs(ratio) ** 2
    return ChoiOperator(3, 3, m)


def _unitary_from_choi(choi: ChoiOperator, atol: float = 1e-9) -> np.ndarray:
    """Extract V from the Choi operator of rho -> V rho V^dag."""
    d = choi.dim_in
    if choi.dim_out != d:
        raise ValueError("unitary channel must be square")
    vals, vecs = np.linalg.eigh(choi.matrix)
    if abs(vals[-1] - d) > atol * d or np.max(np.abs(vals[:-1])) > atol * d:
        raise ValueError("Choi operator is not a unitary channel")
    top = vecs[:, -1] * np.sqrt(d)
    v = top.reshape(d, d).T
    if np.max(np.abs(v @ v.conj().T - np.eye(d))) > 1e-8:
        raise ValueError("Choi operator is not a unitary channel")
    return v


def transform_decomposition(
    decomposition: SubchannelDecomposition,
    transitions,
    pre: ChoiOperator,
    post: ChoiOperator,
    mid_unitary: ChoiOperator,
):
    """Conjugate a classical realization by pre/post processing.

    Given an instrument {I_i} of E with transitions {K_i} realizing
    G = sum_i K_i o I_i, returns the instrument {U o I_i o C} of U o E o C
    with transitions {D o K_i o U^{-1}}, which realizes D o G o C.  The
    middle channel must be unitary; pre and post may be any channels.
    """
    if len(transitions) != len(decomposition.parts):
        raise ValueError("need one transition per subchannel")
    v = _unitary_from_choi(mid_unitary)
    d = mid_unitary.dim_in
    mid_inverse = ChoiOperator(d, d, _choi_of_unitary(v.conj().T))
    new_parts = tuple(
        link_product(link_product(pre, part), mid_unitary)
        for part in decomposition.parts
    )
    new_transitions = tuple(
        link_product(link_product(mid_inverse, k), post) for k in transitions
    )
    new_parent = link_product(link_product(pre, decomposition.parent), mid_unitary)
    return SubchannelDecomposition(new_parts, new_parent), new_transitions


def _choi_of_unitary(v: np.ndarray) -> np.ndarray:
    y = v.T.ravel()
    return np.outer(y, y.conj())
