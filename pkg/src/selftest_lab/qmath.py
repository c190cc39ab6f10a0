"""Dense complex linear algebra used throughout the lab.

Operators are plain ``numpy`` complex arrays.  Pure states carry their
tensor factorization in :class:`StateVector` so that partial contractions
and subsystem permutations are explicit.  Every spectral quantity (sign,
absolute value, balancing) goes through :func:`herm_eig`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

HERMITIAN_ATOL = 1e-12
ZERO_TOL = 1e-9

I2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"I": I2, "X": SIGMA_X, "Y": SIGMA_Y, "Z": SIGMA_Z}


class NotHermitianError(ValueError):
    pass


@dataclass(frozen=True)
class StateVector:
    """Pure state with an ordered list of tensor factor dimensions.

    Normalization is not enforced here because intermediate vectors (for
    instance the image of a state under a non-isometric map) are also
    carried in this type; use :meth:`norm` or :meth:`normalized`.
    """

    amplitudes: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        dims = tuple(int(d) for d in self.dims)
        if int(np.prod(dims)) != amps.size:
            raise ValueError(f"dims {dims} do not match {amps.size} amplitudes")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "dims", dims)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        nrm = self.norm()
        if nrm == 0:
            raise ZeroDivisionError("cannot normalize the zero vector")
        return StateVector(self.amplitudes / nrm, self.dims)

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.dims)


def is_hermitian(m: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    m = np.asarray(m)
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    return m.ndim == 2 and m.shape[0] == m.shape[1] and np.allclose(m, m.conj().T, rtol=0, atol=atol * scale)


def _require_hermitian(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    if not is_hermitian(m, atol=1e-10):
        raise NotHermitianError("matrix is not Hermitian")
    return m


def tensor(*factors: np.ndarray) -> np.ndarray:
    """Kronecker product of one or more matrices or vectors, left to right."""
    if not factors:
        raise ValueError("tensor() needs at least one factor")
    return reduce(np.kron, (np.asarray(f, dtype=complex) for f in factors))


def herm_eig(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix, eigenvalues ascending.

    Returns ``(w, q)`` with ``m = q @ diag(w) @ q^H``.  The input is
    symmetrized before LAPACK sees it so round-off asymmetry below the
    acceptance threshold does not leak into the eigenvectors.
    """
    m = _require_hermitian(m)
    w, q = np.linalg.eigh((m + m.conj().T) / 2)
    return w, q


def spectral_apply(m: np.ndarray, fn) -> np.ndarray:
    w, q = herm_eig(m)
    out = (q * fn(w)) @ q.conj().T
    return (out + out.conj().T) / 2


def sign_regularized(m: np.ndarray, zero_tol: float = ZERO_TOL) -> np.ndarray:
    """Operator sign with near-zero eigenvalues sent to +1.

    The result is a reflection by construction: it is reassembled from an
    orthonormal eigenbasis with eigenvalues in {+1, -1}.
    """
    return spectral_apply(m, lambda w: np.where(np.abs(w) < zero_tol, 1.0, np.sign(w)))


def abs_op(m: np.ndarray) -> np.ndarray:
    return spectral_apply(m, np.abs)


def projector_from_reflection(r: np.ndarray, sign: int = 1) -> np.ndarray:
    d = r.shape[0]
    return (np.eye(d) + sign * r) / 2


def is_reflection(r: np.ndarray, atol: float = 1e-10) -> bool:
    r = np.asarray(r)
    if not is_hermitian(r, atol=atol):
        return False
    return np.linalg.norm(r @ r - np.eye(r.shape[0]), 2) <= atol


def eigen_counts(r: np.ndarray) -> tuple[int, int]:
    """Dimensions of the +1 and -1 eigenspaces of a reflection."""
    w, _ = herm_eig(r)
    return int(np.sum(w > 0)), int(np.sum(w <= 0))


def is_balanced(r: np.ndarray) -> bool:
    plus, minus = eigen_counts(r)
    return plus == minus


def op_norm(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, 2))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def anticommutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b + b @ a


# --- bipartite helpers ----------------------------------------------------------

def apply_local(op: np.ndarray, psi: StateVector, side: int) -> StateVector:
    """Apply ``op`` to factor ``side`` (0 = Alice, 1 = Bob) of a bipartite state."""
    if len(psi.dims) != 2:
        raise ValueError("apply_local expects a bipartite state")
    mat = psi.amplitudes.reshape(psi.dims)
    if side == 0:
        out = op @ mat
    elif side == 1:
        out = mat @ op.T
    else:
        raise ValueError(f"side must be 0 or 1, got {side}")
    return StateVector(out, out.shape)


def expectation(psi: StateVector, op_a: np.ndarray | None = None, op_b: np.ndarray | None = None) -> complex:
    """<psi| op_a (x) op_b |psi> for a bipartite state; ``None`` means identity."""
    phi = psi
    if op_a is not None:
        phi = apply_local(op_a, phi, 0)
    if op_b is not None:
        phi = apply_local(op_b, phi, 1)
    return complex(np.vdot(psi.amplitudes, phi.amplitudes))


def permute_subsystems(psi: StateVector, order: Sequence[int]) -> StateVector:
    """Reorder tensor factors: output factor ``k`` is input factor ``order[k]``."""
    order = list(order)
    if sorted(order) != list(range(len(psi.dims))):
        raise ValueError(f"{order} is not a permutation of the factors")
    t = np.transpose(psi.tensor(), order)
    return StateVector(t.reshape(-1), tuple(psi.dims[k] for k in order))


def min_dist_over_junk(
    v: StateVector, target: StateVector, target_subsystems: Sequence[int]
) -> tuple[float, StateVector]:
    """Distance from ``v`` to the closest ``target (x) junk`` with unit junk.

    The junk lives on the factors of ``v`` not listed in
    ``target_subsystems``; the optimal junk is the normalized partial
    overlap ``(<target| (x) I) v``.  Returns ``(distance, junk)``.  When the
    overlap vanishes every junk is optimal and a basis vector is returned.
    """
    subs = list(target_subsystems)
    if len(set(subs)) != len(subs) or any(not 0 <= s < len(v.dims) for s in subs):
        raise ValueError(f"bad target subsystems {subs}")
    if tuple(v.dims[s] for s in subs) != target.dims:
        raise ValueError(
            f"target dims {target.dims} do not match subsystems {subs} of {v.dims}"
        )
    rest = [k for k in range(len(v.dims)) if k not in subs]
    t = np.transpose(v.tensor(), subs + rest).reshape(target.dim, -1)
    overlap = target.amplitudes.conj() @ t
    junk_dims = tuple(v.dims[k] for k in rest)
    onrm = float(np.linalg.norm(overlap))
    if onrm > 0:
        junk = StateVector(overlap / onrm, junk_dims)
    else:
        basis = np.zeros(overlap.size, dtype=complex)
        basis[0] = 1
        junk = StateVector(basis, junk_dims)
    # The residual is formed explicitly: the closed form
    # sqrt(|v|^2 + |t|^2 - 2|overlap|) loses half the digits near zero.
    residual = t - np.outer(target.amplitudes, junk.amplitudes)
    return float(np.linalg.norm(residual)), junk


# --- balancing ------------------------------------------------------------------

def balancing_padding(reflections: Sequence[np.ndarray]) -> int:
    """Smallest common padding dimension that makes every reflection balanced."""
    pad = 0
    for r in reflections:
        plus, minus = eigen_counts(r)
        pad = max(pad, abs(plus - minus))
    return pad


def extend_reflection(r: np.ndarray, pad: int) -> np.ndarray:
    """Direct sum ``r (+) D`` with a diagonal +-1 block chosen to balance."""
    if pad == 0:
        return np.asarray(r, dtype=complex)
    plus, minus = eigen_counts(r)
    extra_plus = (pad - (plus - minus)) // 2
    if extra_plus < 0 or extra_plus > pad or (pad - (plus - minus)) % 2:
        raise ValueError(f"padding {pad} cannot balance a ({plus}, {minus}) reflection")
    diag = np.concatenate([np.ones(extra_plus), -np.ones(pad - extra_plus)])
    d = r.shape[0]
    out = np.zeros((d + pad, d + pad), dtype=complex)
    out[:d, :d] = r
    out[d:, d:] = np.diag(diag)
    return out


def extend_operator(m: np.ndarray, pad: int) -> np.ndarray:
    """Direct sum ``m (+) 0``; used for operators supported on the original block."""
    d = m.shape[0]
    out = np.zeros((d + pad, d + pad), dtype=complex)
    out[:d, :d] = m
    return out


def pad_state(psi: StateVector, side: int, pad: int) -> StateVector:
    """Embed a bipartite state into a larger factor on ``side``; no mass on the padding."""
    if pad == 0:
        return psi
    mat = psi.amplitudes.reshape(psi.dims)
    da, db = psi.dims
    if side == 0:
        out = np.zeros((da + pad, db), dtype=complex)
        out[:da] = mat
    else:
        out = np.zeros((da, db + pad), dtype=complex)
        out[:, :db] = mat
    return StateVector(out, out.shape)


def balance_and_extend(r: np.ndarray, psi: StateVector, side: int = 0) -> tuple[np.ndarray, StateVector]:
    """Balance a single reflection acting on ``side`` of ``psi``.

    Returns the extended reflection and the zero-padded state; an already
    balanced reflection is returned unchanged.
    """
    pad = balancing_padding([r])
    return extend_reflection(r, pad), pad_state(psi, side, pad)


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    """GUE sample rescaled to unit operator norm."""
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = (g + g.conj().T) / 2
    return h / op_norm(h)


def unitary_from_hermitian(h: np.ndarray, t: float) -> np.ndarray:
    """exp(-i t h) via the Hermitian eigendecomposition."""
    w, q = herm_eig(h)
    return (q * np.exp(-1j * t * w)) @ q.conj().T


def random_unit_vector(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_reflection(dim: int, rng: np.random.Generator, plus: int | None = None) -> np.ndarray:
    """Reflection with a Haar-random eigenbasis; ``plus`` fixes the +1 multiplicity."""
    if plus is None:
        plus = dim // 2
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, _ = np.linalg.qr(g)
    diag = np.concatenate([np.ones(plus), -np.ones(dim - plus)])
    r = (q * diag) @ q.conj().T
    return (r + r.conj().T) / 2
