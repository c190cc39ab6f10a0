"""Quantum strategies: ideal single-copy strategies, parallel composition,
local-unitary noise and compilation to correlation tables.

A strategy stores the shared state as a bipartite :class:`StateVector`
with dims ``(d_A, d_B)`` and each party's measurements as a dense array
``proj[question, answer]`` of projectors.  Composite factors are ordered
with all of Alice's copies first, then all of Bob's.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .games import CorrelationTable, GameKind, GameSpec, tilt_params
from .qmath import (
    I2,
    SIGMA_X,
    SIGMA_Z,
    StateVector,
    random_hermitian,
    tensor,
    unitary_from_hermitian,
)

PROJECTOR_ATOL = 1e-10
BUNDLE_FORMAT = 1


@dataclass(frozen=True)
class Strategy:
    spec: GameSpec
    state: StateVector
    alice: np.ndarray
    bob: np.ndarray
    # per-copy local dimensions (d_A_i, d_B_i), used to relabel copies
    copy_dims: tuple[tuple[int, int], ...] = field(default=())

    @property
    def dims(self) -> tuple[int, int]:
        return self.state.dims

    def projectors(self, side: int) -> np.ndarray:
        return self.alice if side == 0 else self.bob

    def validate(self, atol: float = PROJECTOR_ATOL) -> None:
        """Raise ``ValueError`` if the state or any measurement is malformed."""
        if abs(self.state.norm() - 1) > 1e-12:
            raise ValueError("state is not normalized")
        nq, na = self.spec.question_count, self.spec.answer_count
        for side, proj in enumerate((self.alice, self.bob)):
            d = self.dims[side]
            if proj.shape != (nq, na, d, d):
                raise ValueError(f"side {side} projector array has shape {proj.shape}")
            eye = np.eye(d)
            for q in range(nq):
                fam = proj[q]
                if np.max(np.abs(fam.sum(axis=0) - eye)) > atol:
                    raise ValueError(f"side {side} question {q}: projectors do not sum to I")
                if np.max(np.abs(fam - np.conj(np.swapaxes(fam, 1, 2)))) > atol:
                    raise ValueError(f"side {side} question {q}: projector not Hermitian")
                prods = np.einsum("aij,bjk->abik", fam, fam)
                expected = np.einsum("ab,aik->abik", np.eye(na), fam)
                if np.max(np.abs(prods - expected)) > atol:
                    raise ValueError(f"side {side} question {q}: projectors not orthogonal idempotents")


def _projector_pair(observable: np.ndarray) -> np.ndarray:
    d = observable.shape[0]
    eye = np.eye(d)
    return np.stack([(eye + observable) / 2, (eye - observable) / 2])


def _single_copy(spec: GameSpec, psi: np.ndarray, alice_obs, bob_obs) -> Strategy:
    alice = np.stack([_projector_pair(o) for o in alice_obs])
    bob = np.stack([_projector_pair(o) for o in bob_obs])
    state = StateVector(psi, (2, 2))
    return Strategy(spec, state, alice, bob, ((2, 2),))


def ideal_chsh() -> Strategy:
    """|Phi+>, Alice Z and X, Bob (Z +- X)/sqrt(2)."""
    psi = np.array([1, 0, 0, 1]) / math.sqrt(2)
    b0 = (SIGMA_Z + SIGMA_X) / math.sqrt(2)
    b1 = (SIGMA_Z - SIGMA_X) / math.sqrt(2)
    return _single_copy(GameSpec(GameKind.CHSH, 1), psi, (SIGMA_Z, SIGMA_X), (b0, b1))


def ideal_tilted(theta: float) -> Strategy:
    """cos(theta)|00> + sin(theta)|11>, Alice Z and X, Bob cos(mu) Z +- sin(mu) X."""
    params = tilt_params(theta)
    psi = np.array([math.cos(theta), 0, 0, math.sin(theta)])
    c, s = math.cos(params.mu), math.sin(params.mu)
    b0 = c * SIGMA_Z + s * SIGMA_X
    b1 = c * SIGMA_Z - s * SIGMA_X
    return _single_copy(GameSpec(GameKind.TILTED, 1, (theta,)), psi, (SIGMA_Z, SIGMA_X), (b0, b1))


# (first-bit, second-bit) observables per question, following the square layout.
MAGIC_ALICE_ROWS = (
    (tensor(SIGMA_Z, I2), tensor(I2, SIGMA_Z)),
    (tensor(I2, SIGMA_X), tensor(SIGMA_X, I2)),
    (tensor(SIGMA_Z, SIGMA_X), tensor(SIGMA_X, SIGMA_Z)),
)
MAGIC_BOB_COLUMNS = (
    (tensor(SIGMA_Z, I2), tensor(I2, SIGMA_X)),
    (tensor(I2, SIGMA_Z), tensor(SIGMA_X, I2)),
    (tensor(SIGMA_Z, SIGMA_Z), tensor(SIGMA_X, SIGMA_X)),
)


def _two_bit_projectors(o1: np.ndarray, o2: np.ndarray) -> np.ndarray:
    p1, p2 = _projector_pair(o1), _projector_pair(o2)
    return np.stack([p1[b1] @ p2[b2] for b1 in range(2) for b2 in range(2)])


def ideal_magic_square() -> Strategy:
    """Two EPR pairs; each party measures the commuting Paulis of its row/column."""
    psi = np.eye(4).reshape(-1) / 2
    alice = np.stack([_two_bit_projectors(*obs) for obs in MAGIC_ALICE_ROWS])
    bob = np.stack([_two_bit_projectors(*obs) for obs in MAGIC_BOB_COLUMNS])
    return Strategy(GameSpec(GameKind.MAGIC_SQUARE, 1), StateVector(psi, (4, 4)), alice, bob, ((4, 4),))


def _kron_families(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    nx, na, d, _ = p.shape
    ny, nb, e, _ = q.shape
    out = np.einsum("xaij,ybkl->xyabikjl", p, q)
    return out.reshape(nx * ny, na * nb, d * e, d * e)


def parallel_compose(parts: Sequence[Strategy]) -> Strategy:
    """n-fold parallel strategy from single-game strategies of one kind."""
    parts = list(parts)
    if not parts:
        raise ValueError("parallel_compose needs at least one strategy")
    kind = parts[0].spec.kind
    if any(p.spec.kind is not kind for p in parts):
        raise ValueError("all parts must play the same game kind")
    copies = sum(p.spec.copies for p in parts)
    thetas = tuple(t for p in parts for t in p.spec.thetas)
    spec = GameSpec(kind, copies, thetas)
    spec.check_guardrail()
    if len(parts) == 1:
        return parts[0]

    alice, bob = parts[0].alice, parts[0].bob
    psi = parts[0].state.amplitudes.reshape(parts[0].dims)
    for part in parts[1:]:
        alice = _kron_families(alice, part.alice)
        bob = _kron_families(bob, part.bob)
        nxt = part.state.amplitudes.reshape(part.dims)
        # (A, B) x (A', B') -> (A A', B B')
        psi = np.einsum("ij,kl->ikjl", psi, nxt).reshape(psi.shape[0] * nxt.shape[0], psi.shape[1] * nxt.shape[1])
    copy_dims = tuple(cd for p in parts for cd in p.copy_dims)
    return Strategy(spec, StateVector(psi, psi.shape), alice, bob, copy_dims)


def ideal_strategy(spec: GameSpec) -> Strategy:
    spec.check_guardrail()
    if spec.kind is GameKind.CHSH:
        parts = [ideal_chsh() for _ in range(spec.copies)]
    elif spec.kind is GameKind.TILTED:
        parts = [ideal_tilted(t) for t in spec.thetas]
    else:
        parts = [ideal_magic_square() for _ in range(spec.copies)]
    return parallel_compose(parts)


def random_strategy(spec: GameSpec, local_dim: int, rng: np.random.Generator) -> Strategy:
    """Generic projective strategy on ``C^d (x) C^d`` with a Haar-random state.

    Each question gets its own random orthonormal basis whose vectors are
    assigned to answers uniformly at random, so some answers may carry
    empty projectors.  The result is not a parallel composition.
    """
    spec.check_guardrail()
    d = int(local_dim)
    nq, na = spec.question_count, spec.answer_count

    def family() -> np.ndarray:
        out = np.zeros((nq, na, d, d), dtype=complex)
        for q in range(nq):
            g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
            basis, _ = np.linalg.qr(g)
            labels = rng.integers(0, na, size=d)
            for v, a in zip(basis.T, labels):
                out[q, a] += np.outer(v, v.conj())
        return out

    psi = rng.normal(size=d * d) + 1j * rng.normal(size=d * d)
    psi /= np.linalg.norm(psi)
    alice, bob = family(), family()
    return Strategy(spec, StateVector(psi, (d, d)), alice, bob)


def permute_copies(s: Strategy, perm: Sequence[int]) -> Strategy:
    """Relabel copies: new copy ``k`` is old copy ``perm[k]``."""
    n = s.spec.copies
    perm = list(perm)
    if sorted(perm) != list(range(n)):
        raise ValueError(f"{perm} is not a permutation of {n} copies")
    if len(s.copy_dims) != n:
        raise ValueError("strategy does not record per-copy dimensions")
    da = [cd[0] for cd in s.copy_dims]
    db = [cd[1] for cd in s.copy_dims]

    psi = s.state.amplitudes.reshape(da + db)
    psi = np.transpose(psi, perm + [n + k for k in perm]).reshape(s.dims)

    rq, ra = s.spec.question_radix, s.spec.answer_radix

    def permute_family(proj, dims):
        t = proj.reshape([rq] * n + [ra] * n + dims + dims)
        axes = perm + [n + k for k in perm] + [2 * n + k for k in perm] + [3 * n + k for k in perm]
        return np.transpose(t, axes).reshape(proj.shape)

    thetas = tuple(s.spec.thetas[k] for k in perm) if s.spec.thetas else ()
    return Strategy(
        GameSpec(s.spec.kind, n, thetas),
        StateVector(psi, s.dims),
        permute_family(s.alice, da),
        permute_family(s.bob, db),
        tuple(s.copy_dims[k] for k in perm),
    )


# --- noise ------------------------------------------------------------------------

class NoiseKind(str, enum.Enum):
    ANGLE_JITTER = "angle_jitter"
    STATE_ROTATION = "state_rotation"
    MIXTURE = "mixture_of_both"


# spawn-key streams
_STREAM_ALICE, _STREAM_BOB, _STREAM_STATE = 0, 1, 2


@dataclass(frozen=True)
class NoiseModel:
    kind: NoiseKind = NoiseKind.ANGLE_JITTER
    magnitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.magnitude < 0:
            raise ValueError("noise magnitude must be >= 0")

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "magnitude": self.magnitude, "seed": self.seed}


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, index)))


def _jitter_family(proj: np.ndarray, delta: float, seed: int, stream: int) -> np.ndarray:
    out = np.empty_like(proj)
    d = proj.shape[-1]
    for q in range(proj.shape[0]):
        u = unitary_from_hermitian(random_hermitian(d, _rng(seed, stream, q)), delta)
        fam = np.einsum("ij,ajk,lk->ail", u, proj[q], u.conj())
        out[q] = (fam + np.conj(np.swapaxes(fam, 1, 2))) / 2
    return out


def perturb(s: Strategy, noise: NoiseModel) -> Strategy:
    """Apply seeded local-unitary noise; magnitude 0 returns ``s`` unchanged.

    ``angle_jitter`` conjugates every question's projector family by its
    own ``exp(-i delta H)``; ``state_rotation`` applies one such unitary to
    the joint state.  Both keep the strategy exactly projective.
    """
    if noise.magnitude == 0:
        return s
    delta = noise.magnitude
    alice, bob, state = s.alice, s.bob, s.state
    if noise.kind in (NoiseKind.ANGLE_JITTER, NoiseKind.MIXTURE):
        alice = _jitter_family(alice, delta, noise.seed, _STREAM_ALICE)
        bob = _jitter_family(bob, delta, noise.seed, _STREAM_BOB)
    if noise.kind in (NoiseKind.STATE_ROTATION, NoiseKind.MIXTURE):
        dim = state.dim
        u = unitary_from_hermitian(random_hermitian(dim, _rng(noise.seed, _STREAM_STATE, 0)), delta)
        amps = u @ state.amplitudes
        state = StateVector(amps / np.linalg.norm(amps), state.dims)
    return replace(s, alice=alice, bob=bob, state=state)


# --- compilation ------------------------------------------------------------------

def correlation_table(s: Strategy) -> CorrelationTable:
    """p[a, b, x, y] = <psi| Pi_{a|x} (x) Pi_{b|y} |psi>."""
    psi = s.state.amplitudes.reshape(s.dims)
    nx, na, da, _ = s.alice.shape
    ny, nb, db, _ = s.bob.shape
    # G[x, a, k, l] = sum_{i, j} conj(psi[i, k]) P[x, a, i, j] psi[j, l]
    left = np.einsum("ik,xaij,jl->xakl", psi.conj(), s.alice, psi, optimize=True)
    # p[x, a, y, b] = sum_{k, l} G[x, a, k, l] Q[y, b, k, l]
    p = left.reshape(nx * na, db * db) @ s.bob.reshape(ny * nb, db * db).T
    p = p.real.reshape(nx, na, ny, nb).transpose(1, 3, 0, 2)
    return CorrelationTable(s.spec, np.ascontiguousarray(p))


# --- export / import --------------------------------------------------------------

def save_strategy(s: Strategy, path: str | Path) -> tuple[Path, Path]:
    """Write ``<path>.json`` (metadata) and ``<path>.bin`` (little-endian complex pairs)."""
    base = Path(path)
    arrays = {"state": s.state.amplitudes, "alice": s.alice, "bob": s.bob}
    meta = {
        "format": BUNDLE_FORMAT,
        "game": s.spec.to_json(),
        "dims": list(s.dims),
        "copy_dims": [list(cd) for cd in s.copy_dims],
        "arrays": {},
    }
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=complex)
        raw = np.stack([arr.real, arr.imag], axis=-1).astype("<f8").tobytes(order="C")
        meta["arrays"][name] = {"shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        offset += len(raw)
        chunks.append(raw)
    json_path, bin_path = base.with_suffix(".json"), base.with_suffix(".bin")
    bin_path.write_bytes(b"".join(chunks))
    json_path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return json_path, bin_path


def load_strategy(path: str | Path) -> Strategy:
    base = Path(path)
    meta = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    if meta.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"unsupported strategy bundle format {meta.get('format')}")
    raw = base.with_suffix(".bin").read_bytes()
    arrays = {}
    for name, info in meta["arrays"].items():
        buf = np.frombuffer(raw, dtype="<f8", count=info["nbytes"] // 8, offset=info["offset"])
        pairs = buf.reshape(list(info["shape"]) + [2])
        arrays[name] = pairs[..., 0] + 1j * pairs[..., 1]
    spec = GameSpec.from_json(meta["game"])
    state = StateVector(arrays["state"], tuple(meta["dims"]))
    copy_dims = tuple(tuple(cd) for cd in meta.get("copy_dims", []))
    return Strategy(spec, state, arrays["alice"], arrays["bob"], copy_dims)
