"""Semidefinite programs deciding classical-future membership.

The central program: given Choi operators E1, E2 of the channels at two
times, maximize the weight s such that ``s E2 + (1-s) G`` lies in the
PPT-relaxed classical future of E1, over CPTP slack channels G.  The
membership structure is encoded by a four-partite operator X on A|D|D'|B
(each factor of dimension d) with

    X >= 0,   X^{T_AD} >= 0,
    Tr_B X = E1 ot 1_{D'},
    <Phi+|_{DD'} X |Phi+>_{DD'} = s E2 + (1-s) G.

Because the PPT set contains the true classical future, s*_PPT >= s*_exact:
the reported robustness r* = 1/s* - 1 is a lower bound on the true
robustness and any detection (r* > 0) is a valid quantum-memory
certificate.  A see-saw over explicit instrument decompositions provides
matching lower bounds on s*.

Two structural reductions keep the programs small and well conditioned,
both exact:

* rows of X whose A|D diagonal weight vanishes in E1 are forced to zero by
  positivity and are dropped;
* when both channels commute with all diagonal-phase unitaries
  (``(conj(u) ot u) E (conj(u) ot u)^dag = E``), X can be twirled to the
  charge-conserving subspace, splitting each PSD cone into small blocks.

X is additionally rescaled by sqrt(diag E1) on the A|D factor, which maps
the first marginal to unit diagonal and preserves both positivity cones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import cvxpy as cp
import numpy as np
from scipy import sparse

from .channel_core import ChoiOperator, link_product
from .memory_criteria import MemoryKind, MemoryVerdict

CLASSICAL_THRESHOLD = 1e-6  # classical iff s* >= 1 - this


@dataclass(frozen=True)
class SdpTolerances:
    """Solver accuracy contract: a solution is Optimal only if its primal
    residuals and duality gap meet these."""

    feasibility: float = 1e-8
    gap: float = 1e-7
    max_iterations: int = 200


class SolverStatus(Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIter"
    NUMERICAL_TROUBLE = "NumericalTrouble"


@dataclass
class SdpProblem:
    """A conic program with named PSD blocks and named equality groups.

    ``blocks`` lists (name, complex dimension) of the PSD matrix variables
    (scalars are 1x1).  ``equalities`` maps a group name to its constant
    right-hand side; every other constraint is a homogeneous cone
    membership, so the dual objective is recovered as sum_i <rhs_i, y_i>.
    """

    blocks: tuple
    equalities: dict
    maximize: bool
    objective_name: str
    problem: cp.Problem
    variables: dict
    equality_constraints: dict
    metadata: dict = field(default_factory=dict)


@dataclass
class SdpSolution:
    status: SolverStatus
    primal_blocks: dict
    dual_multipliers: dict
    objective_value: float
    duality_gap: float
    solver_name: str = ""
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RobustnessResult:
    s_star: float
    r_star: float
    verdict: MemoryVerdict
    solution: SdpSolution
    dual_witness: object | None = None  # attached by witnesses.extract_witness_from_dual

    @property
    def detected(self) -> bool:
        return self.r_star > 0


def _charge(level: int, d: int) -> np.ndarray:
    q = np.zeros(d - 1, dtype=int)
    if level > 0:
        q[level - 1] = 1
    return q


def is_phase_covariant(choi: np.ndarray, d: int, atol: float = 1e-12) -> bool:
    """True if the Choi operator commutes with conj(u) ot u for every
    diagonal-phase unitary u, i.e. carries no charge-violating entries."""
    m = choi.reshape(d, d, d, d)
    for i in range(d):
        for k in range(d):
            row = _charge(k, d) - _charge(i, d)
            for j in range(d):
                for l in range(d):
                    col = _charge(l, d) - _charge(j, d)
                    if not np.array_equal(row, col) and abs(m[i, k, j, l]) > atol:
                        return False
    return True


class _Assembler:
    """Collects sparse linear maps from stacked block entries to constraint
    matrices."""

    def __init__(self, class_sizes):
        self.offsets = np.concatenate([[0], np.cumsum([k * k for k in class_sizes])])
        self.total = int(self.offsets[-1])

    def entry_column(self, class_id: int, i: int, j: int, size: int) -> int:
        return int(self.offsets[class_id]) + i * size + j

    def matrix(self, rows, cols, vals, n_rows: int) -> sparse.csr_matrix:
        return sparse.csr_matrix(
            (vals, (rows, cols)), shape=(n_rows, self.total), dtype=float
        )


def _hermitian_part(expr):
    return (expr + cp.conj(cp.transpose(expr))) / 2


def _facial_basis(m1: np.ndarray, d: int, covariant: bool, cutoff: float = 1e-12):
    """Eigenbasis of E1 restricted to its range, charge-pure when covariant.

    Returns (vectors, weights, charges): columns of ``vectors`` span
    range(E1) in the A|D space, ``weights`` are the (positive) eigenvalues
    and ``charges`` the A|D charge keys (empty tuples when not covariant).
    Positivity forces any feasible X onto range(E1) ot D'B, so compressing
    to this face is exact; it also restores strict feasibility when E1 is
    rank deficient.
    """
    n = d * d
    vectors, weights, charges = [], [], []
    if covariant:
        sector_of = {}
        for a in range(d):
            for dd in range(d):
                key = tuple(_charge(dd, d) - _charge(a, d))
                sector_of.setdefault(key, []).append(a * d + dd)
        sectors = sector_of.items()
    else:
        sectors = [((), list(range(n)))]
    scale = float(np.max(np.abs(m1))) or 1.0
    for key, members in sectors:
        sub = m1[np.ix_(members, members)]
        vals, vecs = np.linalg.eigh(sub)
        for lam, vec in zip(vals, vecs.T):
            if lam > cutoff * scale:
                full = np.zeros(n, dtype=complex)
                full[members] = vec
                vectors.append(full)
                weights.append(float(lam))
                charges.append(key)
    if not vectors:
        raise ValueError("first channel has numerically vanishing Choi operator")
    return np.column_stack(vectors), np.array(weights), charges


def build_ppt_membership(
    E1: ChoiOperator,
    E2: ChoiOperator,
    mixing: bool = True,
    facial_reduction: bool = True,
    symmetry: str = "auto",
) -> SdpProblem:
    """Build the PPT classical-future program for the pair (E1, E2).

    With ``mixing`` the scalar weight s and a CPTP slack G are variables and
    the objective is max s (the robustness program); without it s is fixed
    to 1 and G absent, leaving a pure membership feasibility problem.

    ``symmetry='auto'`` applies the diagonal-phase twirl whenever both
    channels are phase covariant; 'off' disables it.  ``facial_reduction``
    compresses X onto range(E1) ot D'B in E1's scaled eigenbasis (the
    partial-transpose cone compresses covariantly, so this is exact); both
    reductions change only the problem size, never the optimum.
    """
    if E1.dim_in != E1.dim_out or E2.dim_in != E2.dim_out or E1.dim_in != E2.dim_in:
        raise ValueError("membership program needs two square channels of equal dimension")
    d = E1.dim_in
    m1, m2 = E1.matrix, E2.matrix

    if symmetry not in ("auto", "off"):
        raise ValueError("symmetry must be 'auto' or 'off'")
    use_sym = symmetry == "auto" and is_phase_covariant(m1, d) and is_phase_covariant(m2, d)

    if facial_reduction:
        vmat, weights, ad_charges = _facial_basis(m1, d, use_sym)
        rank = vmat.shape[1]
        f = np.sqrt(weights)
        # columns of vmat scaled by sqrt(weights): marginal becomes the identity
        vmat_scaled = vmat * f
        marginal_basis_rhs = np.eye(rank)
    else:
        # keep the computational basis (duals then live on the original
        # A|D|D' space, as needed for witness extraction)
        rank = d * d
        vmat = np.eye(rank, dtype=complex)
        vmat_scaled = vmat
        weights = np.ones(rank)
        ad_charges = [
            tuple(_charge(ad % d, d) - _charge(ad // d, d)) for ad in range(rank)
        ]
        marginal_basis_rhs = m1

    # Reduced index v = (r, dp, b): r enumerates the face basis of A|D.
    indices = [(r, dp, b) for r in range(rank) for dp in range(d) for b in range(d)]
    n = len(indices)

    def beta(dp, b):
        return _charge(b, d) - _charge(dp, d)

    if use_sym:
        key_c = [tuple(np.array(ad_charges[r]) + beta(dp, b)) for (r, dp, b) in indices]
        key_d = [tuple(np.array(ad_charges[r]) - beta(dp, b)) for (r, dp, b) in indices]
    else:
        key_c = [()] * n
        key_d = [()] * n

    classes_c, classes_d = {}, {}
    for idx, v in enumerate(indices):
        classes_c.setdefault(key_c[idx], []).append(idx)
        classes_d.setdefault(key_d[idx], []).append(idx)
    class_list = list(classes_c.values())
    sizes = [len(c) for c in class_list]
    where = {}
    for cid, members in enumerate(class_list):
        for pos, idx in enumerate(members):
            where[idx] = (cid, pos)
    flat = {v: i for i, v in enumerate(indices)}

    asm = _Assembler(sizes)
    x_blocks = [cp.Variable((kk, kk), hermitian=True) for kk in sizes]
    theta = cp.hstack([cp.vec(b, order="C") for b in x_blocks])

    def x_entry_column(v_idx: int, w_idx: int):
        cid_v, pos_v = where[v_idx]
        cid_w, pos_w = where[w_idx]
        if cid_v != cid_w:
            return None  # forced zero by charge conservation
        return asm.entry_column(cid_v, pos_v, pos_w, sizes[cid_v])

    constraints = [b >> 0 for b in x_blocks]
    blocks_meta = [(f"X[{i}]", kk) for i, kk in enumerate(sizes)]

    # Partial transpose over the face factor: entry ((r,dp,b),(r',dp',b'))
    # of X^T is X[(r',dp,b),(r,dp',b')]; block-diagonal in the charge
    # difference.
    for members in classes_d.values():
        mlen = len(members)
        rows, cols, vals = [], [], []
        for i, vi in enumerate(members):
            r, dp, b = indices[vi]
            for j, wj in enumerate(members):
                rp, dpp, bp = indices[wj]
                col = x_entry_column(flat[(rp, dp, b)], flat[(r, dpp, bp)])
                if col is not None:
                    rows.append(i * mlen + j)
                    cols.append(col)
                    vals.append(1.0)
        s_pt = asm.matrix(rows, cols, vals, mlen * mlen)
        block = cp.reshape(s_pt @ theta, (mlen, mlen), order="C")
        constraints.append(_hermitian_part(block) >> 0)

    # Tr_B X == identity on the scaled face ot D' space.
    kd = rank * d
    rows, cols, vals = [], [], []
    for r in range(rank):
        for dp in range(d):
            for rp in range(rank):
                for dpp in range(d):
                    row = (r * d + dp) * kd + rp * d + dpp
                    for b in range(d):
                        col = x_entry_column(flat[(r, dp, b)], flat[(rp, dpp, b)])
                        if col is not None:
                            rows.append(row)
                            cols.append(col)
                            vals.append(1.0)
    s_tr = asm.matrix(rows, cols, vals, kd * kd)
    marginal = cp.reshape(s_tr @ theta, (kd, kd), order="C")
    marginal_rhs = np.kron(marginal_basis_rhs, np.eye(d))
    eq_marginal = _hermitian_part(marginal) == marginal_rhs

    # <Phi+| X |Phi+> over DD' in the original basis:
    # C[(a,b),(a',b')] = sum V[(a,i),r] f_r conj(V[(a',j),r']) f_r'
    #                    X[(r,i,b),(r',j,b')].
    rows, cols, vals = [], [], []
    for r in range(rank):
        for rp in range(rank):
            for i in range(d):
                for j in range(d):
                    for a in range(d):
                        va = vmat_scaled[a * d + i, r]
                        if abs(va) < 1e-16:
                            continue
                        for ap in range(d):
                            vap = np.conj(vmat_scaled[ap * d + j, rp])
                            if abs(vap) < 1e-16:
                                continue
                            coeff = va * vap
                            for b in range(d):
                                for bp in range(d):
                                    col = x_entry_column(
                                        flat[(r, i, b)], flat[(rp, j, bp)]
                                    )
                                    if col is not None:
                                        rows.append((a * d + b) * (d * d) + ap * d + bp)
                                        cols.append(col)
                                        vals.append(coeff)
    s_con = sparse.csr_matrix(
        (vals, (rows, cols)), shape=(d ** 4, asm.total), dtype=complex
    )
    future = _hermitian_part(cp.reshape(s_con @ theta, (d * d, d * d), order="C"))

    variables = {f"X[{i}]": b for i, b in enumerate(x_blocks)}
    equalities = {"first_step_marginal": marginal_rhs}
    if mixing:
        s_var = cp.Variable(nonneg=True)
        g_slack = cp.Variable((d * d, d * d), hermitian=True)
        constraints.append(g_slack >> 0)
        eq_target = future == s_var * m2 + g_slack
        objective = cp.Maximize(s_var)
        variables["s"] = s_var
        variables["G_slack"] = g_slack
        blocks_meta += [("G_slack", d * d), ("s", 1)]
        equalities["target_mixture"] = np.zeros((d * d, d * d))
        objective_name = "max s"
    else:
        eq_target = future == m2
        objective = cp.Maximize(cp.Constant(0.0))
        equalities["target_mixture"] = m2
        objective_name = "feasibility"
    constraints.append(eq_marginal)
    constraints.append(eq_target)

    meta = {
        "dim": d,
        "face_basis": vmat,
        "face_weights": weights,
        "reduced": facial_reduction,
        "symmetric": use_sym,
        "mixing": mixing,
        "E1": m1,
        "E2": m2,
        "largest_cone": max(sizes + [d * d]),
        "kind": "ppt_membership",
    }
    return SdpProblem(
        blocks=tuple(blocks_meta),
        equalities=equalities,
        maximize=True,
        objective_name=objective_name,
        problem=cp.Problem(objective, constraints),
        variables=variables,
        equality_constraints={
            "first_step_marginal": eq_marginal,
            "target_mixture": eq_target,
        },
        metadata=meta,
    )


def _pick_solver(problem: SdpProblem, tolerances: SdpTolerances):
    largest = problem.metadata.get("largest_cone", 64)
    if largest <= 40:
        return "CLARABEL", dict(
            tol_gap_abs=min(tolerances.gap, 1e-9),
            tol_gap_rel=min(tolerances.gap, 1e-9),
            tol_feas=min(tolerances.feasibility, 1e-9),
            max_iter=max(tolerances.max_iterations, 200),
        )
    # first-order solver for the large cones; eps tracks the gap target
    eps = max(min(tolerances.gap, tolerances.feasibility), 1e-9)
    return "SCS", dict(eps=eps, max_iters=200000)


def solve(problem: SdpProblem, tolerances: SdpTolerances | None = None,
          solver: str | None = None) -> SdpSolution:
    """Solve an :class:`SdpProblem` and certify the result.

    The returned status is Optimal only when the solver reports success and
    the solution's own constraint residuals and duality gap (recomputed
    here, not taken from the solver) meet the tolerances.
    """
    tolerances = tolerances or SdpTolerances()
    name, options = _pick_solver(problem, tolerances)
    if solver is not None:
        name = solver
        if solver == "SCS":
            options = dict(eps=min(tolerances.gap, tolerances.feasibility) * 0.1,
                           max_iters=200000)
        elif solver == "CLARABEL":
            options = dict(tol_gap_abs=1e-9, tol_gap_rel=1e-9, tol_feas=1e-9,
                           max_iter=max(tolerances.max_iterations, 200))
    try:
        problem.problem.solve(solver=name, **options)
    except cp.error.SolverError:
        return SdpSolution(SolverStatus.NUMERICAL_TROUBLE, {}, {}, math.nan,
                           math.nan, name, dict(problem.metadata))

    raw = problem.problem.status
    if raw in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return SdpSolution(SolverStatus.INFEASIBLE, {}, {}, math.nan, math.nan,
                           name, dict(problem.metadata))
    if raw in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE) or problem.problem.value is None:
        return SdpSolution(SolverStatus.NUMERICAL_TROUBLE, {}, {}, math.nan,
                           math.nan, name, dict(problem.metadata))

    primal = {}
    for key, var in problem.variables.items():
        primal[key] = np.atleast_2d(var.value) if var.value is not None else None
    duals = {}
    for key, con in problem.equality_constraints.items():
        dv = con.dual_value
        if dv is not None:
            dv = np.atleast_2d(np.asarray(dv))
            if dv.shape[0] == dv.shape[1]:
                dv = (dv + dv.conj().T) / 2
        duals[key] = dv

    objective_value = float(problem.problem.value)
    gap = _duality_gap(problem, objective_value, duals)
    residual = max(
        (float(np.max(c.violation())) for c in problem.problem.constraints),
        default=0.0,
    )

    certified = residual <= 10 * tolerances.feasibility and (
        math.isnan(gap) or gap <= 10 * tolerances.gap
    )
    if raw == cp.OPTIMAL and certified:
        status = SolverStatus.OPTIMAL
    elif raw == cp.OPTIMAL_INACCURATE and certified:
        status = SolverStatus.OPTIMAL
    elif raw == cp.OPTIMAL_INACCURATE:
        status = SolverStatus.MAX_ITERATIONS
    elif raw == cp.OPTIMAL:
        status = SolverStatus.OPTIMAL if certified else SolverStatus.NUMERICAL_TROUBLE
    else:
        status = SolverStatus.NUMERICAL_TROUBLE
    return SdpSolution(status, primal, duals, objective_value, gap, name,
                       dict(problem.metadata))


def _duality_gap(problem: SdpProblem, primal_value: float, duals: dict) -> float:
    """|primal - dual| with the dual objective recovered as
    +/- sum_i <rhs_i, y_i> over the equality groups (+ for maximization,
    cvxpy's sign convention).

    Valid only when every non-equality cone constraint is homogeneous;
    builders with constants inside cone constraints set the metadata flag
    ``gap_reconstructable`` to False and are certified by their residuals
    and explicit certificates instead.
    """
    if not problem.metadata.get("gap_reconstructable", True) or not problem.equalities:
        return math.nan
    total = 0.0
    for key, rhs in problem.equalities.items():
        y = duals.get(key)
        if y is None:
            return math.nan
        rhs = np.atleast_2d(np.asarray(rhs))
        total += float(np.real(np.sum(rhs.conj() * y)))
    if not problem.maximize:
        total = -total
    return abs(primal_value - total)


def _robustness_verdict(s_star: float, quantum_kind: MemoryKind) -> MemoryVerdict:
    margin = s_star - (1 - CLASSICAL_THRESHOLD)
    if margin < 0:
        return MemoryVerdict(quantum_kind, margin)
    other = (MemoryKind.CLASSICAL_NON_MARKOVIAN
             if quantum_kind is MemoryKind.QUANTUM_MEMORY else MemoryKind.MARKOVIAN)
    return MemoryVerdict(other, margin)


def robustness_quantum_memory(
    E1: ChoiOperator,
    E2: ChoiOperator,
    tolerances: SdpTolerances | None = None,
    facial_reduction: bool = True,
    symmetry: str = "auto",
) -> RobustnessResult:
    """Robustness of quantum memory of the pair (E1, E2) via the PPT program.

    r* > 0 certifies quantum memory.  A verdict of ClassicalNonMarkovian
    means only that no quantum memory was detected at the PPT level (the
    pair may even be Markovian; this program does not distinguish).
    """
    prob = build_ppt_membership(E1, E2, mixing=True,
                                facial_reduction=facial_reduction,
                                symmetry=symmetry)
    sol = solve(prob, tolerances)
    if sol.status not in (SolverStatus.OPTIMAL,):
        raise SolverFailure(f"membership SDP did not certify: {sol.status.value}", sol)
    s_star = min(max(sol.objective_value, 0.0), 1.0)
    if s_star <= 0:
        raise SolverFailure("degenerate optimum s*=0", sol)
    return RobustnessResult(s_star, 1 / s_star - 1,
                            _robustness_verdict(s_star, MemoryKind.QUANTUM_MEMORY), sol)


def build_markovian_membership(E1: ChoiOperator, E2: ChoiOperator) -> SdpProblem:
    """Program max s s.t. s E2 + (1-s) G = K o E1 with K, G CPTP."""
    if E1.dim_in != E1.dim_out or E2.dim_in != E2.dim_out or E1.dim_in != E2.dim_in:
        raise ValueError("markovianity program needs two square channels of equal dimension")
    d = E1.dim_in
    k_var = cp.Variable((d * d, d * d), hermitian=True)
    g_slack = cp.Variable((d * d, d * d), hermitian=True)
    s_var = cp.Variable(nonneg=True)
    # J[K o E1] is linear in K: out[(a,b),(a',b')] = sum E1[(a,m),(a',m')] K[(m,b),(m',b')]
    e4 = E1.matrix.reshape(d, d, d, d)
    rows, cols, vals = [], [], []
    for a in range(d):
        for b in range(d):
            for ap in range(d):
                for bp in range(d):
                    row = (a * d + b) * d * d + ap * d + bp
                    for m in range(d):
                        for mp in range(d):
                            val = e4[a, m, ap, mp]
                            if val != 0:
                                rows.append(row)
                                cols.append((m * d + b) * d * d + mp * d + bp)
                                vals.append(val)
    s_link = sparse.csr_matrix((vals, (rows, cols)),
                               shape=(d ** 4, d ** 4), dtype=complex)
    composed = cp.reshape(s_link @ cp.vec(k_var, order="C"), (d * d, d * d), order="C")
    eq_target = _hermitian_part(composed) == s_var * E2.matrix + g_slack
    eq_tp = cp.partial_trace(k_var, [d, d], 1) == np.eye(d)
    constraints = [k_var >> 0, g_slack >> 0, eq_target, eq_tp]
    meta = {"dim": d, "largest_cone": d * d, "mixing": True,
            "E1": E1.matrix, "E2": E2.matrix, "kind": "markov_membership"}
    return SdpProblem(
        blocks=(("K", d * d), ("G_slack", d * d), ("s", 1)),
        equalities={"target_mixture": np.zeros((d * d, d * d)),
                    "transition_trace_preserving": np.eye(d)},
        maximize=True,
        objective_name="max s",
        problem=cp.Problem(cp.Maximize(s_var), constraints),
        variables={"K": k_var, "G_slack": g_slack, "s": s_var},
        equality_constraints={"target_mixture": eq_target,
                              "transition_trace_preserving": eq_tp},
        metadata=meta,
    )


def robustness_markovianity(
    E1: ChoiOperator,
    E2: ChoiOperator,
    tolerances: SdpTolerances | None = None,
) -> RobustnessResult:
    """Robustness of non-Markovianity: distance of E2 from the single-channel
    future {K o E1}.

    r* > 0 certifies a non-Markovian pair; whether the memory is classical
    or quantum is not decided by this program (a ClassicalNonMarkovian
    verdict only asserts non-Markovianity).
    """
    prob = build_markovian_membership(E1, E2)
    sol = solve(prob, tolerances)
    if sol.status is not SolverStatus.OPTIMAL:
        raise SolverFailure(f"markovianity SDP did not certify: {sol.status.value}", sol)
    s_star = min(max(sol.objective_value, 0.0), 1.0)
    if s_star <= 0:
        raise SolverFailure("degenerate optimum s*=0", sol)
    return RobustnessResult(s_star, 1 / s_star - 1,
                            _robustness_verdict(s_star, MemoryKind.CLASSICAL_NON_MARKOVIAN),
                            sol)


class SolverFailure(RuntimeError):
    """Raised when a program cannot be certified at the requested tolerances."""

    def __init__(self, message: str, solution: SdpSolution | None = None):
        super().__init__(message)
        self.solution = solution


def _haar_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _unitary_choi(u: np.ndarray) -> np.ndarray:
    d = u.shape[0]
    y = u.T.ravel()
    return np.outer(y, y.conj())


def _link_fixed_second(i_var, k_fixed: np.ndarray, d: int):
    """Affine J[K o I] with K a fixed matrix and I a cvxpy variable."""
    k4 = k_fixed.reshape(d, d, d, d)
    rows, cols, vals = [], [], []
    for a in range(d):
        for b in range(d):
            for ap in range(d):
                for bp in range(d):
                    row = (a * d + b) * d * d + ap * d + bp
                    for m in range(d):
                        for mp in range(d):
                            val = k4[m, b, mp, bp]
                            if val != 0:
                                rows.append(row)
                                cols.append((a * d + m) * d * d + ap * d + mp)
                                vals.append(val)
    s_link = sparse.csr_matrix((vals, (rows, cols)), shape=(d ** 4, d ** 4),
                               dtype=complex)
    return cp.reshape(s_link @ cp.vec(i_var, order="C"), (d * d, d * d), order="C")


def _link_fixed_first(i_fixed: np.ndarray, k_var, d: int):
    """Affine J[K o I] with I fixed and K a cvxpy variable."""
    i4 = i_fixed.reshape(d, d, d, d)
    rows, cols, vals = [], [], []
    for a in range(d):
        for b in range(d):
            for ap in range(d):
                for bp in range(d):
                    row = (a * d + b) * d * d + ap * d + bp
                    for m in range(d):
                        for mp in range(d):
                            val = i4[a, m, ap, mp]
                            if val != 0:
                                rows.append(row)
                                cols.append((m * d + b) * d * d + mp * d + bp)
                                vals.append(val)
    s_link = sparse.csr_matrix((vals, (rows, cols)), shape=(d ** 4, d ** 4),
                               dtype=complex)
    return cp.reshape(s_link @ cp.vec(k_var, order="C"), (d * d, d * d), order="C")


@dataclass(frozen=True)
class SeesawResult:
    s_lower: float
    instrument: tuple          # Choi matrices I_i
    transitions: tuple         # Choi matrices K_i
    slack: np.ndarray          # CPTP slack G actually mixed in
    iterations: int
    stalled: bool
    recombination_error: float


def _seesaw_once(e1: np.ndarray, e2: np.ndarray, d: int, n: int,
                 k_init, iterations: int, tol: float):
    ks = [np.asarray(k) for k in k_init]
    best_s = -np.inf
    i_vals = None
    g_val = None
    stalled = False
    solver_opts = dict(tol_gap_abs=1e-9, tol_gap_rel=1e-9, tol_feas=1e-9)
    for it in range(iterations):
        # (i) fixed transitions: optimize instrument and s
        i_vars = [cp.Variable((d * d, d * d), hermitian=True) for _ in range(n)]
        s_var = cp.Variable(nonneg=True)
        g_var = cp.Variable((d * d, d * d), hermitian=True)
        total = sum(_link_fixed_second(iv, k, d) for iv, k in zip(i_vars, ks))
        cons = [iv >> 0 for iv in i_vars]
        cons += [g_var >> 0,
                 sum(iv for iv in i_vars) == e1,
                 _hermitian_part(total) == s_var * e2 + g_var]
        prob = cp.Problem(cp.Maximize(s_var), cons)
        try:
            prob.solve(solver="CLARABEL", **solver_opts)
        except cp.error.SolverError:
            break
        if prob.value is None or prob.status in (cp.INFEASIBLE, cp.UNBOUNDED):
            break
        i_vals = [np.asarray(iv.value) for iv in i_vars]
        i_vals = [(m + m.conj().T) / 2 for m in i_vals]
        g_val = np.asarray(g_var.value)
        s_now = float(prob.value)

        # (ii) fixed instrument: optimize transitions and s
        k_vars = [cp.Variable((d * d, d * d), hermitian=True) for _ in range(n)]
        s_var2 = cp.Variable(nonneg=True)
        g_var2 = cp.Variable((d * d, d * d), hermitian=True)
        total2 = sum(_link_fixed_first(iv, kv, d) for iv, kv in zip(i_vals, k_vars))
        cons2 = [kv >> 0 for kv in k_vars]
        cons2 += [cp.partial_trace(kv, [d, d], 1) == np.eye(d) for kv in k_vars]
        cons2 += [g_var2 >> 0, _hermitian_part(total2) == s_var2 * e2 + g_var2]
        prob2 = cp.Problem(cp.Maximize(s_var2), cons2)
        try:
            prob2.solve(solver="CLARABEL", **solver_opts)
        except cp.error.SolverError:
            break
        if prob2.value is None or prob2.status in (cp.INFEASIBLE, cp.UNBOUNDED):
            break
        ks = [np.asarray(kv.value) for kv in k_vars]
        ks = [(m + m.conj().T) / 2 for m in ks]
        g_val = np.asarray(g_var2.value)
        s_now = float(prob2.value)
        if s_now <= best_s + tol:
            best_s = max(best_s, s_now)
            stalled = True
            break
        best_s = s_now
    return best_s, i_vals, ks, g_val, stalled


def seesaw_lower_bound(
    E1: ChoiOperator,
    E2: ChoiOperator,
    n: int | None = None,
    iterations: int = 25,
    restarts: int = 8,
    seed: int = 0,
    stall_tol: float = 1e-7,
) -> SeesawResult:
    """Alternating lower bound on the exact classical-future weight s*.

    Fixes the transition channels and optimizes the instrument, then the
    reverse, each step an SDP; s is monotone nondecreasing across
    iterations.  Transitions are initialized as random unitary channels
    drawn from the seeded generator; the best run over ``restarts`` is
    returned together with its explicit decomposition, re-verified here by
    direct link-product recombination.

    The theoretical cap on the useful decomposition size is
    n <= d^4 (d^4 + 1); the defaults (4 at d=2, 9 at d=3) are far smaller
    and empirically sufficient for the studied families.
    """
    if E1.dim_in != E1.dim_out or E2.dim_in != E2.dim_out or E1.dim_in != E2.dim_in:
        raise ValueError("seesaw needs square channels of equal dimension")
    d = E1.dim_in
    if n is None:
        n = 4 if d == 2 else 9
    if n < 1:
        raise ValueError("decomposition size must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        k_init = [_unitary_choi(_haar_unitary(d, rng)) for _ in range(n)]
        s_low, i_vals, ks, g_val, stalled = _seesaw_once(
            E1.matrix, E2.matrix, d, n, k_init, iterations, stall_tol
        )
        if i_vals is None:
            continue
        if best is None or s_low > best[0]:
            best = (s_low, i_vals, ks, g_val, stalled)
    if best is None:
        raise SolverFailure("see-saw failed on every restart")
    s_low, i_vals, ks, g_val, stalled = best

    recombined = sum(
        link_product(ChoiOperator(d, d, ii), ChoiOperator(d, d, kk)).matrix
        for ii, kk in zip(i_vals, ks)
    )
    target = s_low * E2.matrix + g_val
    err = float(np.max(np.abs(recombined - target)))
    err = max(err, float(np.max(np.abs(sum(i_vals) - E1.matrix))))
    return SeesawResult(float(s_low), tuple(i_vals), tuple(ks), g_val,
                        iterations, stalled, err)
