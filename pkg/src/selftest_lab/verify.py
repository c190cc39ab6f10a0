"""Hypothesis norms, lemma residuals and robustness scaling fits.

All norms are evaluated on the (unpadded) shared state with the operators
recorded in an :class:`~selftest_lab.extraction.ExtractionBundle`.  Keys
are descriptive strings such as ``"anticommutator/A/r0"`` or
``"cross_commutation_ZX/B/r0,r1"`` so reports stay readable without a
lookup table.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .extraction import (
    ALICE,
    BOB,
    SIDE_NAMES,
    ExtractionBundle,
    _alice_cells,
    _bob_cells,
    pick_commuting_pair,
)
from .games import MAGIC_CONDITIONS, GameKind
from .qmath import StateVector, anticommutator, apply_local, commutator

DISTANCE_FLOOR = 1e-8


def _norm_on(op: np.ndarray, psi: StateVector, side: int) -> float:
    return apply_local(op, psi, side).norm()


def _agreement(a: np.ndarray, b: np.ndarray, psi: StateVector) -> float:
    """|| (a (x) I - I (x) b) psi ||."""
    diff = apply_local(a, psi, ALICE).amplitudes - apply_local(b, psi, BOB).amplitudes
    return float(np.linalg.norm(diff))


def _sin_cos_residual(theta: float, xa, za, xb, zb, psi: StateVector) -> float:
    """|| sin(t) X_A (I + Z_B) psi - cos(t) X_B (I - Z_A) psi ||."""
    left = apply_local(zb, psi, BOB).amplitudes + psi.amplitudes
    left = apply_local(xa, StateVector(left, psi.dims), ALICE).amplitudes
    right = psi.amplitudes - apply_local(za, psi, ALICE).amplitudes
    right = apply_local(xb, StateVector(right, psi.dims), BOB).amplitudes
    return float(np.linalg.norm(math.sin(theta) * left - math.cos(theta) * right))


@dataclass
class HypothesisNorms:
    """Named hypothesis norms; ``max_norm`` is the effective operator epsilon."""

    norms: dict[str, float] = field(default_factory=dict)

    @property
    def max_norm(self) -> float:
        return max(self.norms.values(), default=0.0)

    def argmax(self) -> str | None:
        return max(self.norms, key=self.norms.get) if self.norms else None

    def to_json(self) -> dict:
        return {"norms": dict(self.norms), "max_norm": self.max_norm, "max_condition": self.argmax()}


def _register_theta(bundle: ExtractionBundle, register: int) -> float | None:
    if bundle.spec.kind is GameKind.TILTED:
        return bundle.spec.thetas[register]
    return None


def hypothesis_norms(bundle: ExtractionBundle, psi: StateVector) -> HypothesisNorms:
    """Norms of every hypothesis of the robust parallel self-test.

    Per register: Alice/Bob agreement for Z and X (for tilted registers, Z
    agreement plus the sine/cosine relation), the on-state anticommutator
    of each side's pair, and for every pair of distinct registers the
    on-state commutators of all ``(M, N)`` combinations on each side.
    """
    out: dict[str, float] = {}
    r_count = bundle.register_count
    ops = {ALICE: bundle.operators(ALICE), BOB: bundle.operators(BOB)}
    for r in range(r_count):
        za, xa = ops[ALICE][0][r], ops[ALICE][1][r]
        zb, xb = ops[BOB][0][r], ops[BOB][1][r]
        out[f"agreement_Z/r{r}"] = _agreement(za, zb, psi)
        theta = _register_theta(bundle, r)
        if theta is None:
            out[f"agreement_X/r{r}"] = _agreement(xa, xb, psi)
        else:
            out[f"sin_cos_relation/r{r}"] = _sin_cos_residual(theta, xa, za, xb, zb, psi)
        for side in (ALICE, BOB):
            z, x = ops[side][0][r], ops[side][1][r]
            out[f"anticommutator/{SIDE_NAMES[side]}/r{r}"] = _norm_on(anticommutator(x, z), psi, side)
    for side in (ALICE, BOB):
        zs, xs = ops[side]
        for i, j in itertools.combinations(range(r_count), 2):
            for (ml, m), (nl, nm) in itertools.product((("Z", zs), ("X", xs)), repeat=2):
                key = f"cross_commutation_{ml}{nl}/{SIDE_NAMES[side]}/r{i},r{j}"
                out[key] = _norm_on(commutator(m[i], nm[j]), psi, side)
    return HypothesisNorms(out)


def lemma_conclusions(bundle: ExtractionBundle, psi: StateVector) -> dict[str, float]:
    """Residual norms of the exact-case relations between extracted operators.

    CHSH-type copies are checked in every good context ``k``: Alice's
    marginals agree with Bob's regularized reflections on the state (Z
    always; X for CHSH, the sine/cosine relation for tilted copies), and
    both sides' pairs anticommute on the state.  Distinct copies are checked
    for cross-copy commutation of Bob's regularized reflections, of Alice's
    chosen-context marginals, and of Alice's shared-question marginals (the
    latter vanish identically).  Magic-square copies are checked for the
    nine shared-cell agreements at the chosen contexts and for the
    register-level anticommutation and commutation relations.
    """
    spec = bundle.spec
    if spec.kind is GameKind.MAGIC_SQUARE:
        return _magic_conclusions(bundle, psi)
    out: dict[str, float] = {}
    n = spec.copies
    for i in range(n):
        zb, xb = bundle.bob_z[i], bundle.bob_x[i]
        out[f"bob_anticommutation/i{i}"] = _norm_on(anticommutator(xb, zb), psi, BOB)
        stack = bundle.alice_marginals[i]
        for k in bundle.good_sets[i]:
            za, xa = stack[0, k, 0], stack[1, k, 0]
            out[f"alice_bob_agreement_Z/i{i}/k{k}"] = _agreement(za, zb, psi)
            if spec.kind is GameKind.TILTED:
                out[f"sin_cos_relation/i{i}/k{k}"] = _sin_cos_residual(spec.thetas[i], xa, za, xb, zb, psi)
            else:
                out[f"alice_bob_agreement_X/i{i}/k{k}"] = _agreement(xa, xb, psi)
            out[f"alice_anticommutation/i{i}/k{k}"] = _norm_on(anticommutator(xa, za), psi, ALICE)
    labels = (("Z", 0), ("X", 1))
    for i, j in itertools.combinations(range(n), 2):
        for (ml, md), (nl, nd) in itertools.product(labels, repeat=2):
            mb = (bundle.bob_z, bundle.bob_x)[md][i]
            nb = (bundle.bob_z, bundle.bob_x)[nd][j]
            out[f"bob_cross_commutation_{ml}{nl}/i{i},j{j}"] = _norm_on(commutator(mb, nb), psi, BOB)
            ma = bundle.alice_marginals[i][md, bundle.chosen_contexts[i], 0]
            na = bundle.alice_marginals[j][nd, bundle.chosen_contexts[j], 0]
            out[f"alice_cross_commutation_{ml}{nl}/i{i},j{j}"] = _norm_on(commutator(ma, na), psi, ALICE)
            k, l = pick_commuting_pair(i, j, md, nd, bundle.good_sets, spec.question_radix)
            ma = bundle.alice_marginals[i][md, k, 0]
            na = bundle.alice_marginals[j][nd, l, 0]
            out[f"shared_question_commutation_{ml}{nl}/i{i},j{j}"] = _norm_on(commutator(ma, na), psi, ALICE)
    return out


def _magic_conclusions(bundle: ExtractionBundle, psi: StateVector) -> dict[str, float]:
    out: dict[str, float] = {}
    for i in range(bundle.spec.copies):
        alice_k = bundle.alice_marginals[i][:, bundle.chosen_contexts[i]]
        for r, c in MAGIC_CONDITIONS:
            a = _alice_cells(alice_k, r)[c]
            b = _bob_cells(bundle.bob_marginals[i], c, bundle.bob_chosen_contexts[i])[r]
            out[f"cell_agreement/i{i}/r{r}c{c}"] = _agreement(a, b, psi)
    for side in (ALICE, BOB):
        zs, xs = bundle.operators(side)
        name = SIDE_NAMES[side]
        for r in range(bundle.register_count):
            out[f"register_anticommutation/{name}/r{r}"] = _norm_on(anticommutator(xs[r], zs[r]), psi, side)
        for i, j in itertools.combinations(range(bundle.register_count), 2):
            for (ml, m), (nl, nm) in itertools.product((("Z", zs), ("X", xs)), repeat=2):
                out[f"register_commutation_{ml}{nl}/{name}/r{i},r{j}"] = _norm_on(commutator(m[i], nm[j]), psi, side)
    return out


# --- scaling fits --------------------------------------------------------------

@dataclass(frozen=True)
class ScalingFit:
    """Least-squares fit of ``distance ~ C n^p_n eps^p_eps`` in log space."""

    samples: tuple[tuple[float, float, float], ...]
    constant: float
    p_n: float
    p_eps: float
    residual: float
    p_n_interval: tuple[float, float]
    p_eps_interval: tuple[float, float]
    excluded: int
    reference_p_n: float = 1.5
    reference_p_eps: float = 0.5

    @property
    def reference_p_n_inside(self) -> bool:
        lo, hi = self.p_n_interval
        return lo <= self.reference_p_n <= hi

    @property
    def reference_p_eps_inside(self) -> bool:
        lo, hi = self.p_eps_interval
        return lo <= self.reference_p_eps <= hi

    def to_json(self) -> dict:
        return {
            "constant": self.constant,
            "p_n": self.p_n,
            "p_eps": self.p_eps,
            "residual": self.residual,
            "p_n_interval": list(self.p_n_interval),
            "p_eps_interval": list(self.p_eps_interval),
            "reference_p_n": self.reference_p_n,
            "reference_p_eps": self.reference_p_eps,
            "reference_p_n_inside": self.reference_p_n_inside,
            "reference_p_eps_inside": self.reference_p_eps_inside,
            "samples_used": len(self.samples),
            "samples_excluded": self.excluded,
        }


def scaling_fit(
    samples: Iterable[Sequence[float]],
    floor: float = DISTANCE_FLOOR,
    reference_p_n: float = 1.5,
    reference_p_eps: float = 0.5,
    confidence: float = 0.95,
) -> ScalingFit:
    """Fit ``log d = log C + p_n log n + p_eps log eps`` by ordinary least squares.

    Points with ``d < floor`` are dropped first.  The remaining grid must
    have at least six points, two distinct ``n`` and three distinct ``eps``.
    Intervals are two-sided Student-t intervals on the coefficients.
    """
    rows = [tuple(float(v) for v in s) for s in samples]
    kept = tuple(r for r in rows if r[2] >= floor)
    if len(kept) < 6:
        raise ValueError(f"scaling fit needs at least 6 samples above the floor, got {len(kept)}")
    arr = np.array(kept)
    if len(np.unique(arr[:, 0])) < 2 or len(np.unique(arr[:, 1])) < 3:
        raise ValueError("scaling fit needs at least 2 values of n and 3 values of eps")
    if np.any(arr[:, :2] <= 0):
        raise ValueError("n and eps must be positive")
    design = np.column_stack([np.ones(len(arr)), np.log(arr[:, 0]), np.log(arr[:, 1])])
    target = np.log(arr[:, 2])
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    resid = target - design @ coef
    dof = len(arr) - 3
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(design.T @ design)
    half = stats.t.ppf(0.5 + confidence / 2, dof) * np.sqrt(np.clip(np.diag(cov), 0, None))
    return ScalingFit(
        samples=kept,
        constant=float(np.exp(coef[0])),
        p_n=float(coef[1]),
        p_eps=float(coef[2]),
        residual=float(np.sqrt(np.mean(resid**2))),
        p_n_interval=(float(coef[1] - half[1]), float(coef[1] + half[1])),
        p_eps_interval=(float(coef[2] - half[2]), float(coef[2] + half[2])),
        excluded=len(rows) - len(kept),
        reference_p_n=reference_p_n,
        reference_p_eps=reference_p_eps,
    )


def loglog_slope(xs: Sequence[float], ys: Sequence[float], floor: float = DISTANCE_FLOOR) -> float:
    """Slope of ``log y`` against ``log x`` over points with ``y >= floor``."""
    pts = [(x, y) for x, y in zip(xs, ys) if y >= floor]
    if len(pts) < 2 or len({x for x, _ in pts}) < 2:
        raise ValueError("slope needs two distinct abscissae above the floor")
    lx, ly = np.log(np.array(pts)).T
    return float(np.polyfit(lx, ly, 1)[0])
