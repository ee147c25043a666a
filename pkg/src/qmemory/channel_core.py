"""Dense Choi-operator calculus for quantum channels on small systems.

A linear map ``E`` on d-dimensional operators is represented by its Choi
operator ``E_AB = sum_ij |i><j| ot E[|i><j|]``, a (d*d')x(d*d') Hermitian
matrix whose entries are ``E[(i,k),(j,l)] = <k| E[|i><j|] |l>``.  The map is
a channel (CPTP) iff the Choi operator is positive semidefinite and its
partial trace over the output factor is the identity.

All operations here are pure functions on immutable arrays and are safe to
use from parallel workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

HERMITICITY_ATOL = 1e-12
PSD_ATOL = 1e-9
TRACE_PRESERVING_ATOL = 1e-9


def _as_hermitian(matrix: np.ndarray, atol: float = HERMITICITY_ATOL) -> np.ndarray:
    """Symmetrize a matrix that is Hermitian up to floating-point drift."""
    matrix = np.asarray(matrix, dtype=complex)
    deviation = np.max(np.abs(matrix - matrix.conj().T), initial=0.0)
    if deviation > atol:
        raise ValueError(f"matrix is not Hermitian: max |X - X^dag| = {deviation:.3e}")
    out = (matrix + matrix.conj().T) / 2
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ChoiOperator:
    """Choi operator of a linear map from d_in- to d_out-dimensional operators.

    The matrix is indexed by ordered pairs (input index, output index); it is
    symmetrized at construction and frozen.
    """

    dim_in: int
    dim_out: int
    matrix: np.ndarray

    def __post_init__(self):
        if self.dim_in < 1 or self.dim_out < 1:
            raise ValueError("dimensions must be positive")
        m = _as_hermitian(self.matrix)
        n = self.dim_in * self.dim_out
        if m.shape != (n, n):
            raise ValueError(f"expected {n}x{n} matrix, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @staticmethod
    def identity(dim: int) -> "ChoiOperator":
        """Choi operator of the identity channel: the unnormalized projector
        onto ``sum_i |ii>``."""
        v = phi_plus_vector(dim)
        return ChoiOperator(dim, dim, np.outer(v, v.conj()))


@dataclass(frozen=True)
class MapAction:
    """Action of a linear map given by the images of all basis units |i><j|.

    ``images[i, j]`` is the d_out x d_out image of |i><j|.
    """

    dim: int
    images: np.ndarray

    def __post_init__(self):
        imgs = np.asarray(self.images, dtype=complex)
        if imgs.ndim != 4 or imgs.shape[0] != self.dim or imgs.shape[1] != self.dim:
            raise ValueError("images must have shape (d, d, d_out, d_out)")
        if imgs.shape[2] != imgs.shape[3]:
            raise ValueError("image matrices must be square")
        imgs.setflags(write=False)
        object.__setattr__(self, "images", imgs)

    @property
    def dim_out(self) -> int:
        return self.images.shape[2]


@dataclass(frozen=True)
class SubchannelDecomposition:
    """A finite list of completely positive maps summing to a parent channel."""

    parts: tuple
    parent: ChoiOperator
    atol: float = field(default=PSD_ATOL)

    def __post_init__(self):
        if len(self.parts) < 1:
            raise ValueError("need at least one subchannel")
        object.__setattr__(self, "parts", tuple(self.parts))
        total = np.zeros_like(self.parent.matrix)
        for part in self.parts:
            if (part.dim_in, part.dim_out) != (self.parent.dim_in, self.parent.dim_out):
                raise ValueError("subchannel dimensions do not match parent")
            if min_eigenvalue(part.matrix) < -self.atol:
                raise ValueError("subchannel is not positive semidefinite")
            total = total + part.matrix
        if np.max(np.abs(total - self.parent.matrix)) > self.atol:
            raise ValueError("subchannels do not sum to the parent channel")


def phi_plus_vector(dim: int) -> np.ndarray:
    """Unnormalized maximally entangled vector ``sum_i |ii>``."""
    v = np.zeros(dim * dim)
    v[:: dim + 1] = 1.0
    return v


def phi_plus_projector(dim: int) -> np.ndarray:
    """Unnormalized projector ``sum_ij |ii><jj|``."""
    v = phi_plus_vector(dim)
    return np.outer(v, v)


def min_eigenvalue(matrix: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(matrix)[0])


def choi_from_action(action: MapAction) -> ChoiOperator:
    """Assemble ``sum_ij |i><j| ot E[|i><j|]`` from the map's action."""
    d, dout = action.dim, action.dim_out
    m = action.images.transpose(0, 2, 1, 3).reshape(d * dout, d * dout)
    return ChoiOperator(d, dout, m)


def action_from_choi(choi: ChoiOperator) -> MapAction:
    """Exact inverse of :func:`choi_from_action`."""
    d, dout = choi.dim_in, choi.dim_out
    imgs = choi.matrix.reshape(d, dout, d, dout).transpose(0, 2, 1, 3)
    return MapAction(d, imgs.copy())


def apply_channel(choi: ChoiOperator, state: np.ndarray) -> np.ndarray:
    """Apply a channel to a density matrix: ``rho -> Tr_A[(rho^T ot 1) E]``."""
    state = np.asarray(state, dtype=complex)
    d, dout = choi.dim_in, choi.dim_out
    if state.shape != (d, d):
        raise ValueError(f"state must be {d}x{d}, got {state.shape}")
    choi4 = choi.matrix.reshape(d, dout, d, dout)
    return np.einsum("ij,ikjl->kl", state, choi4)


def link_product(first: ChoiOperator, second: ChoiOperator) -> ChoiOperator:
    """Choi operator of the composition ``second o first``.

    Equals ``<Phi+| first ot second |Phi+>`` contracted over the shared
    (output-of-first = input-of-second) factor.
    """
    if first.dim_out != second.dim_in:
        raise ValueError(
            f"cannot compose: first maps into dim {first.dim_out}, "
            f"second expects dim {second.dim_in}"
        )
    da, dm, db = first.dim_in, first.dim_out, second.dim_out
    f4 = first.matrix.reshape(da, dm, da, dm)
    s4 = second.matrix.reshape(dm, db, dm, db)
    # f4[a,m,a',m'] s4[m,b,m',b'] -> out[a,b,a',b']
    out = np.einsum("amcn,mbnd->abcd", f4, s4).reshape(da * db, da * db)
    return ChoiOperator(da, db, out)


def partial_trace(matrix: np.ndarray, subsystem_dims, traced_index: int) -> np.ndarray:
    """Trace out one tensor factor of a square matrix."""
    matrix = np.asarray(matrix)
    dims = list(subsystem_dims)
    n = int(np.prod(dims))
    if matrix.shape != (n, n):
        raise ValueError("matrix dimension does not match subsystem_dims")
    if not 0 <= traced_index < len(dims):
        raise ValueError(f"invalid subsystem index {traced_index}")
    k = len(dims)
    t = matrix.reshape(dims + dims)
    t = np.trace(t, axis1=traced_index, axis2=traced_index + k)
    rem = n // dims[traced_index]
    return t.reshape(rem, rem)


def partial_transpose(matrix: np.ndarray, subsystem_dims, transposed_indices) -> np.ndarray:
    """Transpose the listed tensor factors of a square matrix."""
    matrix = np.asarray(matrix)
    dims = list(subsystem_dims)
    n = int(np.prod(dims))
    if matrix.shape != (n, n):
        raise ValueError("matrix dimension does not match subsystem_dims")
    if isinstance(transposed_indices, int):
        transposed_indices = [transposed_indices]
    k = len(dims)
    for idx in transposed_indices:
        if not 0 <= idx < k:
            raise ValueError(f"invalid subsystem index {idx}")
    perm = list(range(2 * k))
    for idx in transposed_indices:
        perm[idx], perm[idx + k] = perm[idx + k], perm[idx]
    return matrix.reshape(dims + dims).transpose(perm).reshape(n, n)


@dataclass(frozen=True)
class CptpReport:
    """Diagnostics from a CPTP check."""

    is_cptp: bool
    min_eigenvalue: float
    trace_preservation_error: float


def is_cptp(choi: ChoiOperator, tol: float = PSD_ATOL) -> CptpReport:
    """Check complete positivity and trace preservation of a Choi operator.

    CP requires the minimum eigenvalue to be >= -tol; TP requires
    ``Tr_B(E) = 1`` elementwise within tol.
    """
    lam = min_eigenvalue(choi.matrix)
    marginal = partial_trace(choi.matrix, [choi.dim_in, choi.dim_out], 1)
    tp_err = float(np.max(np.abs(marginal - np.eye(choi.dim_in))))
    return CptpReport(lam >= -tol and tp_err <= tol, lam, tp_err)


def choi_to_json(choi: ChoiOperator) -> str:
    """Serialize to JSON with row-major real/imaginary arrays."""
    return json.dumps(
        {
            "dim_in": choi.dim_in,
            "dim_out": choi.dim_out,
            "re": choi.matrix.real.ravel().tolist(),
            "im": choi.matrix.imag.ravel().tolist(),
        }
    )


def choi_from_json(text: str) -> ChoiOperator:
    """Inverse of :func:`choi_to_json`."""
    data = json.loads(text)
    d_in, d_out = int(data["dim_in"]), int(data["dim_out"])
    n = d_in * d_out
    re = np.asarray(data["re"], dtype=float)
    im = np.asarray(data["im"], dtype=float)
    if re.size != n * n or im.size != n * n:
        raise ValueError("re/im arrays have wrong length")
    return ChoiOperator(d_in, d_out, (re + 1j * im).reshape(n, n))
