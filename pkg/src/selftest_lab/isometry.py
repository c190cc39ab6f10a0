"""SWAP isometry, junk state and the end-to-end certificate.

Each party's map sends ``v`` to ``sum_s K_1^{s_1} ... K_R^{s_R} v (x) |s>``
with ``K^0 = (I + Z)/2`` and ``K^1 = X (I - Z)/2`` for every extracted
register.  The full output is ordered ``(H_A, H_B, A_1..A_R, B_1..B_R)``.
Target states are assembled pair by pair (``A_1 B_1 A_2 B_2 ...``) and then
permuted into that register order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .extraction import ALICE, BOB, SIDE_NAMES, ExtractionBundle, exact_anticommute
from .games import GameKind, GameSpec
from .qmath import (
    SIGMA_X,
    SIGMA_Z,
    StateVector,
    anticommutator,
    apply_local,
    balancing_padding,
    extend_reflection,
    min_dist_over_junk,
    pad_state,
    permute_subsystems,
)
from .strategies import Strategy
from .verify import hypothesis_norms, lemma_conclusions

SCHEMA_VERSION = 1
JUNK_TOL = 1e-10
REPAIR_TRIGGER = 1e-10


class DegenerateJunkError(RuntimeError):
    """The junk formula annihilates the state: the extracted Z's are degenerate."""


@dataclass(frozen=True)
class SwapIsometry:
    side: int
    z_ops: tuple[np.ndarray, ...]
    x_ops: tuple[np.ndarray, ...]
    # branches[s] = K_1^{s_1} ... K_R^{s_R}, s read big-endian over registers
    branches: np.ndarray = field(repr=False)

    @property
    def input_dim(self) -> int:
        return self.branches.shape[-1]

    @property
    def registers(self) -> int:
        return len(self.z_ops)

    def matrix(self) -> np.ndarray:
        """Dense map of shape ``(d * 2**R, d)`` with output order (factor, registers)."""
        d = self.input_dim
        return np.transpose(self.branches, (1, 0, 2)).reshape(d * self.branches.shape[0], d)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix() @ np.asarray(v, dtype=complex)

    def isometry_defect(self) -> float:
        m = self.matrix()
        return float(np.linalg.norm(m.conj().T @ m - np.eye(self.input_dim), 2))


def build_swap(z_ops, x_ops, side: int = ALICE) -> SwapIsometry:
    z_ops, x_ops = tuple(np.asarray(z, dtype=complex) for z in z_ops), tuple(np.asarray(x, dtype=complex) for x in x_ops)
    if len(z_ops) != len(x_ops) or not z_ops:
        raise ValueError("build_swap needs equal, non-empty lists of Z and X reflections")
    d = z_ops[0].shape[0]
    if any(m.shape != (d, d) for m in z_ops + x_ops):
        raise ValueError("all reflections must act on the same factor")
    eye = np.eye(d)
    branches = np.eye(d, dtype=complex)[None]
    # Prepend registers from the last to the first so K_1 ends up leftmost.
    for z, x in zip(reversed(z_ops), reversed(x_ops)):
        k0 = (eye + z) / 2
        k1 = x @ (eye - z) / 2
        # the new register becomes the most significant digit
        branches = np.concatenate([k0 @ branches, k1 @ branches])
    return SwapIsometry(side, z_ops, x_ops, branches)


def apply_full(iso_a: SwapIsometry, iso_b: SwapIsometry, psi: StateVector) -> StateVector:
    """``(U_A (x) U_B) psi`` with factors ``(H_A, H_B, A_1..A_R, B_1..B_R)``."""
    da, db = psi.dims
    if (iso_a.input_dim, iso_b.input_dim) != (da, db):
        raise ValueError(f"isometries act on {(iso_a.input_dim, iso_b.input_dim)}, state has {psi.dims}")
    mat = psi.amplitudes.reshape(da, db)
    # out[i, l, s, t] = sum_{j,k} A[s, i, j] psi[j, k] B[t, l, k]
    out = np.einsum("sij,jk,tlk->ilst", iso_a.branches, mat, iso_b.branches, optimize=True)
    ra, rb = iso_a.registers, iso_b.registers
    return StateVector(out.reshape(-1), (da, db) + (2,) * (ra + rb))


def tilted_pair(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), 0, 0, math.sin(theta)], dtype=complex)


EPR_PAIR = tilted_pair(math.pi / 4)


def target_state(spec: GameSpec) -> StateVector:
    """Ideal register state in ``(A_1..A_R, B_1..B_R)`` order."""
    if spec.kind is GameKind.TILTED:
        pairs = [tilted_pair(t) for t in spec.thetas]
    elif spec.kind is GameKind.MAGIC_SQUARE:
        pairs = [EPR_PAIR] * (2 * spec.copies)
    else:
        pairs = [EPR_PAIR] * spec.copies
    r = len(pairs)
    amps = pairs[0]
    for p in pairs[1:]:
        amps = np.kron(amps, p)
    interleaved = StateVector(amps, (2,) * (2 * r))
    order = [2 * k for k in range(r)] + [2 * k + 1 for k in range(r)]
    return permute_subsystems(interleaved, order)


def apply_on_factor(op: np.ndarray, v: StateVector, factor: int) -> StateVector:
    t = np.moveaxis(v.tensor(), factor, 0)
    t = np.tensordot(op, t, axes=(1, 0))
    return StateVector(np.moveaxis(t, 0, factor).reshape(-1), v.dims)


def junk_state(z_ops_a, z_ops_b, psi: StateVector) -> tuple[StateVector, float]:
    """Normalized ``prod_r (I + Z_A^r)(I + Z_B^r) psi`` and its pre-normalization norm."""
    v = psi
    for za, zb in zip(reversed(list(z_ops_a)), reversed(list(z_ops_b))):
        v = StateVector(v.amplitudes + apply_local(za, v, ALICE).amplitudes, v.dims)
        v = StateVector(v.amplitudes + apply_local(zb, v, BOB).amplitudes, v.dims)
    nrm = v.norm()
    if nrm <= JUNK_TOL:
        raise DegenerateJunkError(f"junk vector vanishes (norm {nrm:.3g}); extracted Z reflections are degenerate")
    return v.normalized(), nrm


@dataclass
class CertificationReport:
    game: dict
    state_distance: float
    op_action_distances: dict[str, float]
    junk_norm_prenormalization: float
    hypothesis_norms: dict[str, float]
    lemma_residuals: dict[str, float]
    extraction: dict
    balancing: dict
    repairs: dict
    isometry_defects: dict[str, float]
    metadata: dict = field(default_factory=dict)

    @property
    def max_op_distance(self) -> float:
        return max(self.op_action_distances.values(), default=0.0)

    @property
    def max_hypothesis_norm(self) -> float:
        return max(self.hypothesis_norms.values(), default=0.0)

    @property
    def max_lemma_residual(self) -> float:
        return max(self.lemma_residuals.values(), default=0.0)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "game": self.game,
            "state_distance": self.state_distance,
            "max_op_distance": self.max_op_distance,
            "op_action_distances": self.op_action_distances,
            "junk_norm_prenormalization": self.junk_norm_prenormalization,
            "max_hypothesis_norm": self.max_hypothesis_norm,
            "hypothesis_norms": self.hypothesis_norms,
            "max_lemma_residual": self.max_lemma_residual,
            "lemma_residuals": self.lemma_residuals,
            "extraction": self.extraction,
            "balancing": self.balancing,
            "repairs": self.repairs,
            "isometry_defects": self.isometry_defects,
            "metadata": self.metadata,
        }


def certify(s: Strategy, bundle: ExtractionBundle) -> CertificationReport:
    """Run the SWAP isometry on the extracted operators and measure distances.

    Steps: junk-formula degeneracy check with the extracted Z's; common
    zero-padding per side so every reflection is balanced; exact
    anticommutation repair of Z where ``||{X, Z} psi|| > 1e-10``; SWAP on
    the padded state; distance to the best ``target (x) junk``; and for
    each extracted (unrepaired) operator the distance between ``U M psi``
    and the matching Pauli applied to the target, with the same junk.
    """
    psi = s.state
    r_count = bundle.register_count
    _, junk_norm = junk_state(bundle.alice_z, bundle.bob_z, psi)

    padded = psi
    ops = {}
    pads = {}
    for side in (ALICE, BOB):
        zs, xs = bundle.operators(side)
        pad = balancing_padding(list(zs) + list(xs))
        pads[SIDE_NAMES[side]] = pad
        ops[side] = ([extend_reflection(z, pad) for z in zs], [extend_reflection(x, pad) for x in xs])
        padded = pad_state(padded, side, pad)

    swap_z = {}
    repairs = {}
    for side in (ALICE, BOB):
        zs, xs = ops[side]
        zs_new = []
        for r in range(r_count):
            anti = apply_local(anticommutator(xs[r], zs[r]), padded, side).norm()
            key = f"{SIDE_NAMES[side]}/r{r}"
            if anti > REPAIR_TRIGGER:
                rep = exact_anticommute(xs[r], zs[r], padded, side)
                zs_new.append(rep.z)
                repairs[key] = {
                    "applied": True,
                    "anticommutator_norm": rep.anticommutator_norm,
                    "distance": rep.distance,
                    "within_bound": rep.within_bound,
                }
            else:
                zs_new.append(zs[r])
                repairs[key] = {"applied": False, "anticommutator_norm": anti}
        swap_z[side] = zs_new

    iso_a = build_swap(swap_z[ALICE], ops[ALICE][1], ALICE)
    iso_b = build_swap(swap_z[BOB], ops[BOB][1], BOB)
    out = apply_full(iso_a, iso_b, padded)
    target = target_state(bundle.spec)
    target_subs = list(range(2, 2 + 2 * r_count))
    dist, junk = min_dist_over_junk(out, target, target_subs)

    op_dist = {}
    for side in (ALICE, BOB):
        for basis, pauli, mats in (("Z", SIGMA_Z, ops[side][0]), ("X", SIGMA_X, ops[side][1])):
            for r in range(r_count):
                moved = apply_full(iso_a, iso_b, apply_local(mats[r], padded, side))
                factor = r if side == ALICE else r_count + r
                expected = np.kron(junk.amplitudes, apply_on_factor(pauli, target, factor).amplitudes)
                op_dist[f"{SIDE_NAMES[side]}/r{r}/{basis}"] = float(np.linalg.norm(moved.amplitudes - expected))

    return CertificationReport(
        game=bundle.spec.to_json(),
        state_distance=dist,
        op_action_distances=op_dist,
        junk_norm_prenormalization=junk_norm,
        hypothesis_norms=hypothesis_norms(bundle, psi).norms,
        lemma_residuals=lemma_conclusions(bundle, psi),
        extraction=bundle.summary(),
        balancing={"padding": pads, "extended": any(pads.values())},
        repairs=repairs,
        isometry_defects={"A": iso_a.isometry_defect(), "B": iso_b.isometry_defect()},
    )
