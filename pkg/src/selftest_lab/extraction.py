"""Observables extracted from a parallel strategy.

For copy ``i`` and a fixed value of that copy's question digit there are
``radix**(n-1)`` full questions, one per assignment of the other copies'
digits.  Those full questions are the *contexts* of copy ``i``; context
``k`` is the ``k``-th smallest full question index (0-based).  Because the
encoding is big-endian, context ``k`` is simply the other copies' digits
read as a base-``radix`` number.

From the context-indexed marginal reflections this module builds Bob's
averaged operators, their sign-regularized reflections, the per-context
game values, the good context sets, and finally the per-register operator
pairs that feed the SWAP isometry (:class:`ExtractionBundle`).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .games import MAGIC_CONDITIONS, GameKind, GameSpec, TiltParams, decode_question, encode_question
from .qmath import (
    StateVector,
    anticommutator,
    apply_local,
    expectation,
    herm_eig,
    is_balanced,
    sign_regularized,
)
from .strategies import Strategy

ALICE, BOB = 0, 1
SIDE_NAMES = ("A", "B")
ATOL = 1e-10
EPSILON_FLOOR = 1e-10
CHSH_GOOD_FACTOR = 5.0
MAGIC_GOOD_FACTOR = 90.0
REPAIR_BOUND = math.sqrt(1.5)

# Basis labels per side for CHSH-type games: question digit -> label.
_CHSH_LABELS = (("Z", "X"), ("Z", "W"))
_MAGIC_LABELS = ("Z", "X", "W")


class PremiseViolation(RuntimeError):
    """Per-copy optimality premise or a good-set counting claim failed."""


class NoCommutingPairError(PremiseViolation):
    pass


@dataclass(frozen=True)
class MarginalObservable:
    copy: int
    context: int
    basis_label: str
    side: int
    matrix: np.ndarray
    bit: int = 0


# --- context bookkeeping -------------------------------------------------------

def context_question(n: int, copy: int, digit: int, context: int, radix: int = 2) -> int:
    """Full question index of ``context`` for copy ``copy`` with its digit fixed."""
    if not 0 <= copy < n:
        raise IndexError(f"copy {copy} out of range for {n} copies")
    if not 0 <= digit < radix:
        raise ValueError(f"question digit {digit} out of range for radix {radix}")
    if not 0 <= context < radix ** (n - 1):
        raise IndexError(f"context {context} out of range for {n} copies")
    rest = list(decode_question(context, n - 1, radix)) if n > 1 else []
    rest.insert(copy, digit)
    return encode_question(rest, radix)


def context_questions(n: int, copy: int, digit: int, radix: int = 2) -> np.ndarray:
    """All contexts of ``(copy, digit)`` as full question indices, ascending."""
    return np.array([context_question(n, copy, digit, k, radix) for k in range(radix ** (n - 1))])


def context_of_question(question: int, n: int, copy: int, radix: int = 2) -> int:
    digits = list(decode_question(question, n, radix))
    del digits[copy]
    return encode_question(digits, radix) if digits else 0


def _answer_signs(spec: GameSpec, copy: int) -> np.ndarray:
    """signs[bit, a] = +-1 for each of the copy's answer bits over full answers."""
    n, ra = spec.copies, spec.answer_radix
    digit = (np.arange(spec.answer_count) // ra ** (n - 1 - copy)) % ra
    if spec.kind is GameKind.MAGIC_SQUARE:
        bits = np.stack([digit // 2, digit % 2])
    else:
        bits = digit[None, :]
    return 1.0 - 2.0 * bits


def _bits_per_copy(spec: GameSpec) -> int:
    return 2 if spec.kind is GameKind.MAGIC_SQUARE else 1


def marginal_stack(s: Strategy, side: int, copy: int) -> np.ndarray:
    """All marginal reflections of one copy: shape ``(digit, context, bit, d, d)``."""
    spec = s.spec
    n, rq = spec.copies, spec.question_radix
    proj = s.projectors(side)
    signs = _answer_signs(spec, copy)
    d = proj.shape[-1]
    out = np.empty((rq, spec.context_count, signs.shape[0], d, d), dtype=complex)
    for digit in range(rq):
        qs = context_questions(n, copy, digit, rq)
        out[digit] = np.einsum("ba,kaij->kbij", signs, proj[qs])
    return out


def marginal_observable(
    s: Strategy, side: int, copy: int, basis: int, context: int, bit: int = 0
) -> MarginalObservable:
    """Signed sum of the projectors of one full question over a copy's answer bit.

    ``basis`` is the copy's question digit (0/1 for CHSH-type games, the
    row or column 0..2 for the magic square) and ``bit`` selects the first
    or second answer bit of a magic-square copy.
    """
    spec = s.spec
    if side not in (ALICE, BOB):
        raise ValueError(f"side must be 0 or 1, got {side}")
    if not 0 <= bit < _bits_per_copy(spec):
        raise IndexError(f"bit {bit} out of range for {spec.kind.value}")
    q = context_question(spec.copies, copy, basis, context, spec.question_radix)
    signs = _answer_signs(spec, copy)[bit]
    mat = np.einsum("a,aij->ij", signs, s.projectors(side)[q])
    if spec.kind is GameKind.MAGIC_SQUARE:
        label = _MAGIC_LABELS[basis]
    else:
        label = _CHSH_LABELS[side][basis]
    return MarginalObservable(copy, context, label, side, mat, bit)


def magic_square_marginals(s: Strategy, side: int, copy: int, context: int) -> tuple[MarginalObservable, ...]:
    """Six reflections: (first, second) answer bit for question values 0, 1, 2."""
    if s.spec.kind is not GameKind.MAGIC_SQUARE:
        raise ValueError("magic_square_marginals needs a magic-square strategy")
    return tuple(
        marginal_observable(s, side, copy, q, context, bit) for q in range(3) for bit in range(2)
    )


# --- averaged and regularized operators ---------------------------------------

def averaged_pair(s: Strategy, side: int, copy: int) -> tuple[np.ndarray, np.ndarray]:
    """Context averages of the copy's two CHSH observables on one side."""
    if s.spec.kind is GameKind.MAGIC_SQUARE:
        raise ValueError("averaged_pair applies to CHSH-type games")
    stack = marginal_stack(s, side, copy)
    return stack[0, :, 0].mean(axis=0), stack[1, :, 0].mean(axis=0)


def regularize_chsh(v: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return sign_regularized(v + w), sign_regularized(v - w)


def regularize_tilted(v: np.ndarray, w: np.ndarray, params: TiltParams) -> tuple[np.ndarray, np.ndarray]:
    """Sign of ``(v + w) / 2cos(mu)`` and ``(v - w) / 2sin(mu)``."""
    if not 0 < params.mu <= math.pi / 4 + 1e-12:
        raise ValueError(f"tilt angle mu must lie in (0, pi/4], got {params.mu}")
    return (
        sign_regularized((v + w) / (2 * math.cos(params.mu))),
        sign_regularized((v - w) / (2 * math.sin(params.mu))),
    )


# --- per-context values --------------------------------------------------------

def _chsh_context_values(
    s: Strategy, copy: int, alice_stack: np.ndarray, v: np.ndarray, w: np.ndarray, alpha: float
) -> np.ndarray:
    psi = s.state
    out = np.empty(s.spec.context_count)
    plus, minus = v + w, v - w
    for k in range(s.spec.context_count):
        z, x = alice_stack[0, k, 0], alice_stack[1, k, 0]
        val = expectation(psi, z, plus) + expectation(psi, x, minus)
        if alpha:
            val += alpha * expectation(psi, z, None)
        out[k] = val.real
    return out


def _alice_cells(stack_k: np.ndarray, row: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a1, a2 = stack_k[row, 0], stack_k[row, 1]
    return a1, a2, a1 @ a2


def _bob_cells(stack: np.ndarray, column: int, context: int | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bob's column entries; ``context=None`` averages each entry over contexts.

    The parity entry is averaged as a same-context product, which is what
    the correlation table sees.
    """
    sign = -1.0 if column == 2 else 1.0
    b1, b2 = stack[column, :, 0], stack[column, :, 1]
    prod = sign * np.einsum("kij,kjl->kil", b1, b2)
    if context is None:
        return b1.mean(axis=0), b2.mean(axis=0), prod.mean(axis=0)
    return b1[context], b2[context], prod[context]


def _magic_lhs(psi: StateVector, alice_stack: np.ndarray, k: int, bob_stack: np.ndarray, l: int | None) -> np.ndarray:
    alice_k = alice_stack[:, k]
    out = np.empty(len(MAGIC_CONDITIONS))
    for t, (r, c) in enumerate(MAGIC_CONDITIONS):
        a = _alice_cells(alice_k, r)[c]
        b = _bob_cells(bob_stack, c, l)[r]
        out[t] = expectation(psi, a, b).real
    return out


def per_copy_context_value(s: Strategy, copy: int, context: int) -> float | np.ndarray:
    """Game value of one copy with Alice restricted to a single context.

    Bob's operators are averaged over his contexts.  CHSH and tilted games
    return one real; the magic square returns its nine shared-cell
    correlators.
    """
    values = per_copy_context_values(s, copy)
    if not 0 <= context < len(values):
        raise IndexError(f"context {context} out of range")
    return values[context]


def per_copy_context_values(s: Strategy, copy: int) -> np.ndarray:
    spec = s.spec
    if not 0 <= copy < spec.copies:
        raise IndexError(f"copy {copy} out of range for {spec.copies} copies")
    alice = marginal_stack(s, ALICE, copy)
    bob = marginal_stack(s, BOB, copy)
    if spec.kind is GameKind.MAGIC_SQUARE:
        return np.stack([_magic_lhs(s.state, alice, k, bob, None) for k in range(spec.context_count)])
    v, w = bob[0, :, 0].mean(axis=0), bob[1, :, 0].mean(axis=0)
    alpha = spec.tilt(copy).alpha if spec.kind is GameKind.TILTED else 0.0
    return _chsh_context_values(s, copy, alice, v, w, alpha)


def per_copy_value(s: Strategy, copy: int) -> float | np.ndarray:
    """Operator-route game value: the mean of the per-context values."""
    vals = per_copy_context_values(s, copy)
    return vals.mean(axis=0) if vals.ndim > 1 else float(vals.mean())


def copy_deficit(spec: GameSpec, copy: int, value: float | np.ndarray) -> float:
    """Distance below the ideal value (max over the nine conditions for the magic square)."""
    return float(np.max(spec.optimum(copy) - np.asarray(value)))


# --- good sets -----------------------------------------------------------------

def bad_context_bound(kind: GameKind | str, context_count: int) -> int:
    """Largest number of bad contexts compatible with the per-copy premise.

    A copy with average deficit at most ``eps`` can have fewer than a
    quarter (CHSH-type, threshold ``5 eps``) or a ninth (magic square,
    threshold ``90 eps``) of its contexts bad, hence ``ceil(N/4) - 1`` and
    ``ceil(N/9) - 1``.  For ``N = 2**(n-1)`` with ``n >= 3`` the first is
    ``2**(n-3) - 1``; for smaller ``n`` every context must be good.
    """
    kind = GameKind(kind)
    frac = 9 if kind is GameKind.MAGIC_SQUARE else 4
    return -(-context_count // frac) - 1


def good_set(
    values: Sequence[float] | np.ndarray,
    epsilon: float,
    kind: GameKind | str,
    optimum: float | None = None,
    atol: float = ATOL,
) -> tuple[int, ...]:
    """Contexts within the slack of the ideal value, with the counting claim checked.

    ``values`` is the per-context value list (shape ``(N,)``, or ``(N, 9)``
    for the magic square).  Raises :class:`PremiseViolation` if the
    per-copy average misses ``optimum - epsilon`` or the number of bad
    contexts exceeds :func:`bad_context_bound`.
    """
    kind = GameKind(kind)
    vals = np.asarray(values, dtype=float)
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if kind is GameKind.MAGIC_SQUARE:
        if vals.ndim != 2 or vals.shape[1] != 9:
            raise ValueError("magic-square values must have shape (contexts, 9)")
        opt = 1.0 if optimum is None else optimum
        mean = vals.mean(axis=0)
        if np.any(mean < opt - epsilon - atol):
            raise PremiseViolation(f"per-copy premise fails: min condition {mean.min():.6g} < {opt} - {epsilon:.3g}")
        good = np.all(vals >= opt - MAGIC_GOOD_FACTOR * epsilon - atol, axis=1)
    else:
        if vals.ndim != 1:
            raise ValueError("CHSH-type values must be one-dimensional")
        if optimum is None:
            raise ValueError("optimum is required for CHSH-type games")
        opt = optimum
        if vals.mean() < opt - epsilon - atol:
            raise PremiseViolation(f"per-copy premise fails: mean {vals.mean():.12g} < {opt:.12g} - {epsilon:.3g}")
        good = vals >= opt - CHSH_GOOD_FACTOR * epsilon - atol
    bad = int(np.sum(~good))
    bound = bad_context_bound(kind, len(vals))
    if bad > bound:
        raise PremiseViolation(f"{bad} bad contexts exceed the bound {bound} although the premise holds")
    return tuple(int(k) for k in np.flatnonzero(good))


def commuting_pairs(n: int, i: int, j: int, digit_i: int, digit_j: int, radix: int = 2) -> list[tuple[int, int]]:
    """Context pairs ``(k, l)`` of copies ``i`` and ``j`` sharing one full question."""
    if i == j:
        raise ValueError("commuting pairs need two distinct copies")
    pairs = []
    for rest in itertools.product(range(radix), repeat=n - 2):
        digits = list(rest)
        for pos, dig in sorted(((i, digit_i), (j, digit_j))):
            digits.insert(pos, dig)
        q = encode_question(digits, radix)
        pairs.append((context_of_question(q, n, i, radix), context_of_question(q, n, j, radix)))
    return sorted(pairs)


def pick_commuting_pair(
    i: int,
    j: int,
    digit_i: int,
    digit_j: int,
    good_sets: Sequence[Sequence[int]],
    radix: int = 2,
) -> tuple[int, int]:
    """Lexicographically smallest shared-question pair with both contexts good."""
    n = len(good_sets)
    gi, gj = set(good_sets[i]), set(good_sets[j])
    for k, l in commuting_pairs(n, i, j, digit_i, digit_j, radix):
        if k in gi and l in gj:
            return k, l
    raise NoCommutingPairError(f"no commuting good pair for copies {i}, {j}")


# --- exact anticommutation repair ---------------------------------------------

@dataclass(frozen=True)
class AnticommuteRepair:
    z: np.ndarray
    distance: float
    anticommutator_norm: float

    @property
    def within_bound(self) -> bool:
        return self.distance <= REPAIR_BOUND * self.anticommutator_norm + ATOL


def exact_anticommute(x: np.ndarray, z: np.ndarray, psi: StateVector, side: int = ALICE) -> AnticommuteRepair:
    """Closest-style reflection to ``z`` that anticommutes exactly with ``x``.

    In the eigenbasis of ``x`` (``+1`` block first) ``z`` has off-diagonal
    block ``B``; the repaired operator keeps only the unitary polar factor
    of ``B``.  It anticommutes with ``x``, is balanced, and moves the state
    by at most ``||{x, z} psi||``.
    """
    if not (is_balanced(x) and is_balanced(z)):
        raise ValueError("exact_anticommute needs balanced reflections; balance them first")
    w, q = herm_eig(x)
    order = np.argsort(-w, kind="stable")
    q = q[:, order]
    m = x.shape[0] // 2
    zq = q.conj().T @ z @ q
    u_left, _, vh = np.linalg.svd(zq[:m, m:])
    polar = u_left @ vh
    zr = np.zeros_like(zq)
    zr[:m, m:] = polar
    zr[m:, :m] = polar.conj().T
    z_new = q @ zr @ q.conj().T
    z_new = (z_new + z_new.conj().T) / 2
    anti = apply_local(anticommutator(x, z), psi, side).norm()
    dist = apply_local(z - z_new, psi, side).norm()
    return AnticommuteRepair(z_new, dist, anti)


# --- bundle --------------------------------------------------------------------

@dataclass
class ExtractionBundle:
    """Everything the isometry and the verification steps consume.

    ``registers`` lists the extracted qubits; each register has Alice's and
    Bob's ``(Z, X)`` reflections.  CHSH-type games have one register per
    copy, the magic square two.
    """

    spec: GameSpec
    epsilon: float
    copy_values: list
    context_values: list[np.ndarray]
    good_sets: list[tuple[int, ...]]
    chosen_contexts: list[int]
    alice_z: list[np.ndarray]
    alice_x: list[np.ndarray]
    bob_z: list[np.ndarray]
    bob_x: list[np.ndarray]
    alice_marginals: list[np.ndarray] = field(repr=False)
    bob_marginals: list[np.ndarray] = field(repr=False)
    averaged: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list, repr=False)
    bob_good_sets: list[tuple[int, ...]] = field(default_factory=list)
    bob_chosen_contexts: list[int] = field(default_factory=list)
    bob_epsilons: list[float] = field(default_factory=list)

    @property
    def register_count(self) -> int:
        return len(self.alice_z)

    def register_copy(self, register: int) -> int:
        return register // 2 if self.spec.kind is GameKind.MAGIC_SQUARE else register

    def operators(self, side: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
        return (self.alice_z, self.alice_x) if side == ALICE else (self.bob_z, self.bob_x)

    def summary(self) -> dict:
        def as_json(v):
            return np.asarray(v).tolist() if np.ndim(v) else float(v)

        out = {
            "epsilon": self.epsilon,
            "per_copy_values": [as_json(v) for v in self.copy_values],
            "good_set_sizes": [len(g) for g in self.good_sets],
            "context_count": self.spec.context_count,
            "chosen_contexts": list(self.chosen_contexts),
        }
        if self.bob_chosen_contexts:
            out["bob_good_set_sizes"] = [len(g) for g in self.bob_good_sets]
            out["bob_chosen_contexts"] = list(self.bob_chosen_contexts)
            out["bob_epsilons"] = list(self.bob_epsilons)
        return out


def _premise_epsilon(spec: GameSpec, copy_values: list, epsilon: float | None) -> float:
    measured = max(copy_deficit(spec, i, v) for i, v in enumerate(copy_values))
    if epsilon is None:
        return max(measured, EPSILON_FLOOR)
    return float(epsilon)


def build_bundle(s: Strategy, epsilon: float | None = None) -> ExtractionBundle:
    """Extract good sets, chosen contexts and per-register reflections.

    ``epsilon`` defaults to the largest per-copy deficit (floored at
    ``1e-10``); passing a smaller value makes the premise check fail with
    :class:`PremiseViolation`.  The chosen context of each copy is the
    smallest element of its good set.
    """
    spec = s.spec
    n = spec.copies
    alice = [marginal_stack(s, ALICE, i) for i in range(n)]
    bob = [marginal_stack(s, BOB, i) for i in range(n)]
    if spec.kind is GameKind.MAGIC_SQUARE:
        return _build_magic(s, alice, bob, epsilon)

    averaged = [(b[0, :, 0].mean(axis=0), b[1, :, 0].mean(axis=0)) for b in bob]
    context_values = []
    for i in range(n):
        alpha = spec.tilt(i).alpha if spec.kind is GameKind.TILTED else 0.0
        context_values.append(_chsh_context_values(s, i, alice[i], *averaged[i], alpha))
    copy_values = [float(v.mean()) for v in context_values]
    eps = _premise_epsilon(spec, copy_values, epsilon)
    good = [good_set(context_values[i], eps, spec.kind, spec.optimum(i)) for i in range(n)]
    chosen = [g[0] for g in good]

    alice_z = [alice[i][0, chosen[i], 0] for i in range(n)]
    alice_x = [alice[i][1, chosen[i], 0] for i in range(n)]
    bob_z, bob_x = [], []
    for i, (v, w) in enumerate(averaged):
        if spec.kind is GameKind.TILTED:
            zb, xb = regularize_tilted(v, w, spec.tilt(i))
        else:
            zb, xb = regularize_chsh(v, w)
        bob_z.append(zb)
        bob_x.append(xb)
    return ExtractionBundle(
        spec, eps, copy_values, context_values, good, chosen,
        alice_z, alice_x, bob_z, bob_x, alice, bob, averaged,
    )


def _build_magic(s: Strategy, alice: list, bob: list, epsilon: float | None) -> ExtractionBundle:
    spec = s.spec
    n, nctx = spec.copies, spec.context_count
    context_values = [
        np.stack([_magic_lhs(s.state, alice[i], k, bob[i], None) for k in range(nctx)]) for i in range(n)
    ]
    copy_values = [v.mean(axis=0) for v in context_values]
    eps = _premise_epsilon(spec, copy_values, epsilon)
    good = [good_set(context_values[i], eps, spec.kind) for i in range(n)]
    chosen = [g[0] for g in good]

    # Second pass: Alice fixed at her chosen context, Bob context by context.
    bob_good, bob_chosen, bob_eps = [], [], []
    for i in range(n):
        eps2 = max(float(np.max(1.0 - context_values[i][chosen[i]])), EPSILON_FLOOR)
        vals = np.stack([_magic_lhs(s.state, alice[i], chosen[i], bob[i], l) for l in range(nctx)])
        g = good_set(vals, eps2, spec.kind)
        bob_good.append(g)
        bob_chosen.append(g[0])
        bob_eps.append(eps2)

    alice_z, alice_x, bob_z, bob_x = [], [], [], []
    for i in range(n):
        a = alice[i][:, chosen[i]]
        b = bob[i][:, bob_chosen[i]]
        # Register 2i takes (row 0 bit 1, row 1 bit 2) and (column 0 bit 1,
        # column 1 bit 2); register 2i+1 takes (row 0 bit 2, row 1 bit 1) and
        # (column 1 bit 1, column 0 bit 2).
        alice_z += [a[0, 0], a[0, 1]]
        alice_x += [a[1, 1], a[1, 0]]
        bob_z += [b[0, 0], b[1, 0]]
        bob_x += [b[1, 1], b[0, 1]]
    return ExtractionBundle(
        spec, eps, copy_values, context_values, good, chosen,
        alice_z, alice_x, bob_z, bob_x, alice, bob,
        bob_good_sets=bob_good, bob_chosen_contexts=bob_chosen, bob_epsilons=bob_eps,
    )
