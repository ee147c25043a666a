"""Linear witnesses of quantum memory.

A witness is a pair of Hermitian observables (W1, W2) on the doubled system
whose summed expectation tr(W1 E1) + tr(W2 E2) is nonnegative whenever E2
lies in the classical future of E1; a negative value certifies quantum
memory.  Validity is checked through the sufficient decomposition

    W1 ot 1/d + W2 ot Phi+  =  Q + R^{T_D'B},   Q, R >= 0,

with W1 acting on A|D, W2 on A|B, Phi+ the unnormalized maximally entangled
projector on D|D', all arranged on the A|D|D'|B space.

Witnesses built from a restricted set of preparations and observables make
the certificate measurable with limited data: coefficients w^a_ij weight
the expectation values tr(O_j E(t_a)[rho_i]).  The shipped coefficient
tables use the process-tomography pairing Lambda_ij = tr(E[sigma_i^T]
sigma_j), so their fixture bases list the transposed preparation operators.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources

import cvxpy as cp
import numpy as np

from .channel_core import ChoiOperator, phi_plus_projector
from .sdp_engine import (
    SdpProblem,
    SdpSolution,
    SdpTolerances,
    SolverFailure,
    SolverStatus,
    solve,
)

VALIDITY_ATOL = 1e-8


@dataclass(frozen=True)
class WitnessPair:
    """Hermitian observables (W1 on A|D, W2 on A|B) of one witness."""

    w1: np.ndarray
    w2: np.ndarray
    certificate: tuple | None = None  # (Q, R) once verified
    slack: float | None = None

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=complex)
        w2 = np.asarray(self.w2, dtype=complex)
        for name, w in (("w1", w1), ("w2", w2)):
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ValueError(f"{name} must be square")
            if np.max(np.abs(w - w.conj().T)) > 1e-12:
                raise ValueError(f"{name} must be Hermitian")
        if w1.shape != w2.shape:
            raise ValueError("w1 and w2 must act on spaces of equal dimension")
        w1.setflags(write=False)
        w2.setflags(write=False)
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.w1.shape[0])))


@dataclass(frozen=True)
class RestrictedBasis:
    """Preparation operators and observables probing the two channels.

    ``mask`` flags the allowed coefficients, indexed (alpha, i, j) with
    alpha in {0, 1} for the two time points.  Preparations are normally
    density matrices but operator bases (e.g. raw Paulis, or transposed
    operators realizing a tomography convention) are accepted; only
    hermiticity is enforced.
    """

    preparations: tuple
    observables: tuple
    mask: np.ndarray

    def __post_init__(self):
        preps = tuple(np.asarray(p, dtype=complex) for p in self.preparations)
        obs = tuple(np.asarray(o, dtype=complex) for o in self.observables)
        for op in (*preps, *obs):
            if np.max(np.abs(op - op.conj().T)) > 1e-12:
                raise ValueError("basis operators must be Hermitian")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (2, len(preps), len(obs)):
            raise ValueError("mask must have shape (2, n_preparations, n_observables)")
        if not mask.any():
            raise ValueError("mask must allow at least one coefficient")
        mask.setflags(write=False)
        object.__setattr__(self, "preparations", preps)
        object.__setattr__(self, "observables", obs)
        object.__setattr__(self, "mask", mask)

    @property
    def dim(self) -> int:
        return self.preparations[0].shape[0]


@dataclass(frozen=True)
class WitnessCoefficients:
    """Real coefficients w[alpha, i, j], zero outside the basis mask."""

    values: np.ndarray
    normalization: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3 or values.shape[0] != 2:
            raise ValueError("values must have shape (2, n_preparations, n_observables)")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def assemble_from_coefficients(
    coeffs: WitnessCoefficients, basis: RestrictedBasis
) -> WitnessPair:
    """W_alpha = sum_ij w[alpha,i,j] (rho_i^T ot O_j), so that
    tr(W_alpha E_alpha) = sum_ij w[alpha,i,j] tr(O_j E_alpha[rho_i])."""
    if coeffs.values.shape != basis.mask.shape:
        raise ValueError("coefficient shape does not match basis mask")
    if np.any(coeffs.values[~basis.mask] != 0):
        raise ValueError("coefficients must vanish outside the mask")
    d = basis.dim
    ws = []
    for alpha in range(2):
        w = np.zeros((d * d, d * d), dtype=complex)
        for i, prep in enumerate(basis.preparations):
            for j, obs in enumerate(basis.observables):
                if coeffs.values[alpha, i, j] != 0:
                    w += coeffs.values[alpha, i, j] * np.kron(prep.T, obs)
        ws.append(w)
    return WitnessPair(ws[0], ws[1])


def evaluate_witness(witness: WitnessPair, E1: ChoiOperator, E2: ChoiOperator) -> float:
    """tr(W1 E1) + tr(W2 E2); nonnegative on classically implementable pairs
    for a verified witness."""
    if E1.matrix.shape != witness.w1.shape or E2.matrix.shape != witness.w2.shape:
        raise ValueError("witness and channel dimensions do not match")
    return float(
        np.real(np.trace(witness.w1 @ E1.matrix) + np.trace(witness.w2 @ E2.matrix))
    )


def _embed_w1(w1: np.ndarray, d: int) -> np.ndarray:
    return np.kron(w1, np.eye(d * d)) / d


def _embed_w2(w2: np.ndarray, d: int) -> np.ndarray:
    # W2 on A|B, Phi+ on D|D', rearranged to A|D|D'|B: kron axes are
    # (a,b,i,i') x (a',b',j,j'), target rows (a,i,i',b), cols (a',j,j',b').
    t = np.kron(w2, phi_plus_projector(d)).reshape((d,) * 8)
    t = t.transpose(0, 2, 3, 1, 4, 6, 7, 5)
    return t.reshape(d ** 4, d ** 4)


def witness_lhs(witness: WitnessPair) -> np.ndarray:
    """The operator W1 ot 1/d + W2 ot Phi+ on A|D|D'|B."""
    d = witness.dim
    return _embed_w1(witness.w1, d) + _embed_w2(witness.w2, d)


def _pt_last(expr, d: int):
    return cp.partial_transpose(expr, [d * d, d * d], 1)


@dataclass(frozen=True)
class WitnessCertificate:
    valid: bool
    slack: float
    Q: np.ndarray | None
    R: np.ndarray | None
    solution: SdpSolution


def verify_witness(
    witness: WitnessPair,
    tol: float = VALIDITY_ATOL,
    tolerances: SdpTolerances | None = None,
) -> WitnessCertificate:
    """Feasibility of the PPT witness decomposition, as a minimum-slack SDP.

    Finds PSD R and the smallest t >= 0 with LHS + t*1 - R^{T_D'B} >= 0
    (the PSD part of the split is the slack Q of that constraint); the
    witness is valid iff t is zero within ``tol`` scaled by the LHS norm.
    The returned certificate (Q, R) is checked constructively: both parts
    PSD and summing to LHS + t*1.
    """
    d = witness.dim
    n = d ** 4
    lhs = witness_lhs(witness)
    r_var = cp.Variable((n, n), hermitian=True)
    t_var = cp.Variable(nonneg=True)
    q_expr = lhs + t_var * np.eye(n) - _pt_last(r_var, d)
    problem = SdpProblem(
        blocks=(("R", n), ("t", 1)),
        equalities={},
        maximize=False,
        objective_name="min slack",
        problem=cp.Problem(cp.Minimize(t_var), [r_var >> 0, q_expr >> 0]),
        variables={"R": r_var, "t": t_var},
        equality_constraints={},
        metadata={"dim": d, "largest_cone": n, "kind": "witness_verify",
                  "gap_reconstructable": False},
    )
    sol = solve(problem, tolerances)
    if sol.status not in (SolverStatus.OPTIMAL, SolverStatus.MAX_ITERATIONS):
        raise SolverFailure(f"witness verification SDP failed: {sol.status.value}", sol)
    slack = float(max(sol.objective_value, 0.0))
    r_val = sol.primal_blocks.get("R")
    r_val = (r_val + r_val.conj().T) / 2
    q_val = lhs + slack * np.eye(n) - _pt_last_numeric(r_val, d)
    scale = max(1.0, float(np.linalg.norm(lhs, 2)))
    feas = tolerances.feasibility if tolerances else 1e-8
    certificate_ok = (
        float(np.linalg.eigvalsh(q_val)[0]) >= -100 * feas * scale
        and float(np.linalg.eigvalsh(r_val)[0]) >= -100 * feas * scale
    )
    valid = slack <= tol * scale and certificate_ok
    return WitnessCertificate(valid, slack, q_val, r_val, sol)


def _pt_last_numeric(matrix: np.ndarray, d: int) -> np.ndarray:
    n = d * d
    return matrix.reshape(n, n, n, n).transpose(0, 3, 2, 1).reshape(n * n, n * n)


@dataclass(frozen=True)
class WitnessSearchResult:
    coefficients: WitnessCoefficients
    witness: WitnessPair
    value: float
    solution: SdpSolution


def restricted_witness_search(
    E1: ChoiOperator,
    E2: ChoiOperator,
    basis: RestrictedBasis,
    normalization: str = "TraceSum",
    normalization_value: float | None = None,
    budget: int | None = None,
    tolerances: SdpTolerances | None = None,
) -> WitnessSearchResult:
    """Most-violated valid witness supported on the basis mask.

    Minimizes tr(W1 E1) + tr(W2 E2) over coefficients on the mask subject
    to the PPT witness decomposition and a scale anchor: either
    tr(W1) + tr(W2) (``TraceSum``) or the plain coefficient sum
    (``CoeffSum``) is fixed to ``normalization_value``.  A negative optimum
    certifies quantum memory using only the restricted data.  ``budget``
    caps solver iterations.
    """
    d = basis.dim
    if E1.dim_in != d or E2.dim_in != d:
        raise ValueError("basis dimension does not match the channels")
    n = d ** 4
    entries = [
        (alpha, i, j)
        for alpha in range(2)
        for i in range(len(basis.preparations))
        for j in range(len(basis.observables))
        if basis.mask[alpha, i, j]
    ]
    w_var = cp.Variable(len(entries))

    lhs_maps = []
    cost = np.zeros(len(entries))
    trace_coeffs = np.zeros(len(entries))
    targets = (E1.matrix, E2.matrix)
    for m, (alpha, i, j) in enumerate(entries):
        op = np.kron(basis.preparations[i].T, basis.observables[j])
        emb = _embed_w1(op, d) if alpha == 0 else _embed_w2(op, d)
        lhs_maps.append(emb.ravel())
        cost[m] = float(np.real(np.trace(op @ targets[alpha])))
        trace_coeffs[m] = float(np.real(np.trace(op)))
    lhs_stack = np.column_stack(lhs_maps)

    r_var = cp.Variable((n, n), hermitian=True)
    lhs_expr = cp.reshape(lhs_stack @ w_var, (n, n), order="C")
    lhs_herm = (lhs_expr + cp.conj(cp.transpose(lhs_expr))) / 2
    q_expr = lhs_herm - _pt_last(r_var, d)

    if normalization == "TraceSum":
        norm_expr = trace_coeffs @ w_var
    elif normalization == "CoeffSum":
        norm_expr = cp.sum(w_var)
    else:
        raise ValueError("normalization must be 'TraceSum' or 'CoeffSum'")
    if normalization_value is None:
        raise ValueError("normalization_value is required")
    eq_norm = norm_expr == float(normalization_value)

    tolerances = tolerances or SdpTolerances()
    if budget is not None:
        tolerances = SdpTolerances(tolerances.feasibility, tolerances.gap, budget)
    problem = SdpProblem(
        blocks=(("R", n), ("w", len(entries))),
        equalities={"normalization": float(normalization_value)},
        maximize=False,
        objective_name="min witness value",
        problem=cp.Problem(cp.Minimize(cost @ w_var), [r_var >> 0, q_expr >> 0, eq_norm]),
        variables={"R": r_var, "w": w_var},
        equality_constraints={"normalization": eq_norm},
        metadata={"dim": d, "largest_cone": n, "kind": "witness_search",
                  "gap_reconstructable": False},
    )
    sol = solve(problem, tolerances)
    if sol.status not in (SolverStatus.OPTIMAL, SolverStatus.MAX_ITERATIONS):
        raise SolverFailure(f"witness search SDP failed: {sol.status.value}", sol)
    w_opt = np.asarray(w_var.value).ravel()
    values = np.zeros(basis.mask.shape)
    for m, (alpha, i, j) in enumerate(entries):
        values[alpha, i, j] = w_opt[m]
    coeffs = WitnessCoefficients(values, float(normalization_value))
    witness = assemble_from_coefficients(coeffs, basis)
    return WitnessSearchResult(coeffs, witness, float(sol.objective_value), sol)


def extract_witness_from_dual(solution: SdpSolution) -> WitnessPair:
    """Reassemble the membership program's equality multipliers into a
    witness pair.

    Requires a membership solution of the full (unreduced) program with
    s* < 1; the duals satisfy tr(W1 E1) + tr(W2 E2) = s* - 1 < 0.  The
    candidate is verified against the PPT decomposition; if the literal
    decomposition is infeasible for it (the dual certificate may live in a
    slightly larger cone), it is polished by re-optimizing a full-mask
    witness at the candidate's trace normalization.
    """
    meta = solution.metadata
    if meta.get("kind") != "ppt_membership":
        raise ValueError("witness extraction needs a PPT membership solution")
    if meta.get("reduced", True):
        raise ValueError(
            "witness extraction needs the unreduced membership program "
            "(build with facial_reduction=False)"
        )
    if solution.objective_value >= 1 - 1e-9:
        raise ValueError("pair is classical at PPT level (s* >= 1): nothing to witness")
    d = meta["dim"]
    m1 = solution.dual_multipliers.get("first_step_marginal")
    m2 = solution.dual_multipliers.get("target_mixture")
    if m1 is None or m2 is None:
        raise ValueError("solution carries no dual multipliers")
    if np.linalg.norm(m1) + np.linalg.norm(m2) < 1e-10:
        raise SolverFailure("degenerate dual: multiplier norm below 1e-10")

    # multiplier of the marginal constraint lives on A|D|D'; pair with E1
    # by tracing out D'
    m1 = m1.reshape(d * d, d, d * d, d)
    w1 = np.trace(m1, axis1=1, axis2=3)
    w2 = np.asarray(m2)
    e1 = ChoiOperator(d, d, meta["E1"])
    e2 = ChoiOperator(d, d, meta["E2"])
    candidate = WitnessPair((w1 + w1.conj().T) / 2, (w2 + w2.conj().T) / 2)
    if evaluate_witness(candidate, e1, e2) > 0:
        candidate = WitnessPair(-candidate.w1, -candidate.w2)
    cert = verify_witness(candidate)
    if cert.valid:
        return WitnessPair(candidate.w1, candidate.w2, (cert.Q, cert.R), cert.slack)

    trace_sum = float(np.real(np.trace(candidate.w1) + np.trace(candidate.w2)))
    basis = pauli_operator_basis() if d == 2 else three_level_state_basis()
    anchor = trace_sum if abs(trace_sum) > 1e-6 else 1.0
    result = restricted_witness_search(e1, e2, basis, "TraceSum", anchor)
    cert = verify_witness(result.witness)
    if not cert.valid:
        raise SolverFailure("polished witness failed verification", cert.solution)
    return WitnessPair(result.witness.w1, result.witness.w2, (cert.Q, cert.R), cert.slack)


_PAULIS = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


def pauli_operator_basis(mask: np.ndarray | None = None) -> RestrictedBasis:
    """Raw-Pauli operator basis in the tomography pairing
    Lambda_ij = tr(E[sigma_i^T] sigma_j).

    Preparations are the transposed Paulis, so that assembling gives
    W_alpha = sum_ij w_ij sigma_i ot sigma_j and the evaluation identity
    reproduces the tabulated pairing.  These are operator-basis entries,
    not physical states; physically, each Lambda_ij is a linear
    combination of expectation values over Pauli eigenstate preparations.
    """
    preps = tuple(p.T.copy() for p in _PAULIS)
    if mask is None:
        mask = np.ones((2, 4, 4), dtype=bool)
    return RestrictedBasis(preps, _PAULIS, mask)


def _three_level_states():
    g = np.array([1, 0, 0], dtype=complex)
    s = np.array([0, 1, 0], dtype=complex)
    e = np.array([0, 0, 1], dtype=complex)
    rt = 1 / np.sqrt(2)
    kets = (
        g,
        s,
        e,
        rt * (g + e),
        rt * (s + e),
        rt * (g - e),
        rt * (s - e),
        rt * (g + 1j * e),
        rt * (g - 1j * e),
        rt * (s + 1j * e),
        rt * (s - 1j * e),
    )
    return tuple(np.outer(k, k.conj()) for k in kets)


def three_level_state_basis(mask: np.ndarray | None = None) -> RestrictedBasis:
    """The eleven projectors onto g, s, e and the +/-, +/-i superpositions of
    g|e and s|e, in the tomography pairing with transposed preparations
    (<psi_j| E[(|psi_i><psi_i|)^T] |psi_j>)."""
    projectors = _three_level_states()
    preps = tuple(p.T.copy() for p in projectors)
    if mask is None:
        mask = np.ones((2, 11, 11), dtype=bool)
    return RestrictedBasis(preps, projectors, mask)


def _load_table(name: str) -> np.ndarray:
    with resources.files("qmemory.data").joinpath(name).open() as fh:
        return np.array([[float(x) for x in row] for row in csv.reader(fh)])


def load_table_witness(dim: int):
    """Published coefficient tables as (coefficients, basis, witness).

    dim=2: the 12-coefficient Pauli witness; dim=3: the 11-state witness.
    The coefficient tables are rounded to three decimals in the source, so
    evaluations carry an absolute uncertainty of a few 1e-3.
    """
    if dim == 2:
        w1 = _load_table("witness_2l_t1.csv")
        w2 = _load_table("witness_2l_t2.csv")
        values = np.stack([w1, w2])
        basis = pauli_operator_basis(mask=values != 0)
    elif dim == 3:
        w1 = _load_table("witness_3l_t1.csv")
        w2 = _load_table("witness_3l_t2.csv")
        values = np.stack([w1, w2])
        basis = three_level_state_basis(mask=np.ones_like(values, dtype=bool))
    else:
        raise ValueError("tables exist for dim 2 and 3 only")
    coeffs = WitnessCoefficients(values, float(values.sum()))
    return coeffs, basis, assemble_from_coefficients(coeffs, basis)


def witness_to_json(witness: WitnessPair) -> str:
    return json.dumps(
        {
            "dim": witness.dim,
            "w1_re": witness.w1.real.ravel().tolist(),
            "w1_im": witness.w1.imag.ravel().tolist(),
            "w2_re": witness.w2.real.ravel().tolist(),
            "w2_im": witness.w2.imag.ravel().tolist(),
        }
    )


def witness_from_json(text: str) -> WitnessPair:
    data = json.loads(text)
    d = int(data["dim"])
    n = d * d
    w1 = np.asarray(data["w1_re"], float) + 1j * np.asarray(data["w1_im"], float)
    w2 = np.asarray(data["w2_re"], float) + 1j * np.asarray(data["w2_im"], float)
    return WitnessPair(w1.reshape(n, n), w2.reshape(n, n))
