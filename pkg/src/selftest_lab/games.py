"""Game definitions and table-side functionals for n-fold parallel play.

Questions and answers for the whole parallel game are single integers
built from per-copy digits in big-endian order: copy 0 is the most
significant digit.  CHSH-type games use one bit per copy for questions and
answers; the magic square uses a trit question and a two-bit answer
(digit ``2*bit1 + bit2``) per copy.

Answer bit 0 stands for the observable outcome +1 and bit 1 for -1.

Magic-square layout (rows are Alice's questions, columns Bob's)::

    Z1/Z3   Z2/Z4   .../W3
    X2/X4   X1/X3   .../W4
    W1/...  W2/...  .../...

A party's first answer bit fills the first cell of the questioned row
(column) and the second bit the second cell.  The third cell is the parity
completion: Alice's rows multiply to +1, Bob's first two columns to +1 and
his third column to -1.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TSIRELSON = 2 * math.sqrt(2)
CHSH_WIN_IDEAL = 0.5 * (math.sqrt(2) / 2 + 1)

# Limits that keep the dense tables and operators at desk scale.
MAX_COPIES = {"chsh": 5, "tilted": 5, "magic_square": 2}


class GameKind(str, enum.Enum):
    CHSH = "chsh"
    TILTED = "tilted"
    MAGIC_SQUARE = "magic_square"


class GuardrailError(ValueError):
    pass


def encode_question(digits: Sequence[int], radix: int = 2) -> int:
    """Big-endian positional index: ``(1, 0, 1)`` in base 2 is 5."""
    idx = 0
    for d in digits:
        d = int(d)
        if not 0 <= d < radix:
            raise ValueError(f"digit {d} out of range for radix {radix}")
        idx = idx * radix + d
    return idx


def decode_question(index: int, n: int, radix: int = 2) -> tuple[int, ...]:
    if not 0 <= index < radix**n:
        raise ValueError(f"index {index} out of range for {n} digits in base {radix}")
    out = []
    for _ in range(n):
        index, d = divmod(index, radix)
        out.append(d)
    return tuple(reversed(out))


# --- tilted CHSH parameters -----------------------------------------------------

@dataclass(frozen=True)
class TiltParams:
    theta: float
    alpha: float
    mu: float

    @property
    def optimum(self) -> float:
        """Quantum maximum of the tilted functional, sqrt(8 + 2 alpha^2)."""
        return math.sqrt(8 + 2 * self.alpha**2)


def tilt_params(theta: float) -> TiltParams:
    if not 0 < theta <= math.pi / 4 + 1e-15:
        raise ValueError(f"theta must lie in (0, pi/4], got {theta}")
    s = math.sin(2 * theta)
    alpha = 2 * math.sqrt(max(0.0, (1 - s * s) / (1 + s * s)))
    return TiltParams(theta=theta, alpha=alpha, mu=math.atan(s))


# --- game specification ---------------------------------------------------------

@dataclass(frozen=True)
class GameSpec:
    kind: GameKind
    copies: int
    thetas: tuple[float, ...] = field(default=())

    def __post_init__(self):
        kind = GameKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.copies < 1:
            raise ValueError("copies must be >= 1")
        thetas = tuple(float(t) for t in self.thetas)
        if kind is GameKind.TILTED:
            if len(thetas) != self.copies:
                raise ValueError(f"tilted game needs {self.copies} angles, got {len(thetas)}")
            for t in thetas:
                tilt_params(t)
        elif thetas:
            raise ValueError(f"{kind.value} takes no angles")
        object.__setattr__(self, "thetas", thetas)

    @property
    def question_radix(self) -> int:
        return 3 if self.kind is GameKind.MAGIC_SQUARE else 2

    @property
    def answer_radix(self) -> int:
        return 4 if self.kind is GameKind.MAGIC_SQUARE else 2

    @property
    def question_count(self) -> int:
        return self.question_radix**self.copies

    @property
    def answer_count(self) -> int:
        return self.answer_radix**self.copies

    @property
    def context_count(self) -> int:
        return self.question_radix ** (self.copies - 1)

    def tilt(self, copy: int) -> TiltParams:
        if self.kind is GameKind.TILTED:
            return tilt_params(self.thetas[copy])
        return tilt_params(math.pi / 4)

    def optimum(self, copy: int) -> float:
        """Ideal per-copy value: Tsirelson / tilted maximum, or 1 for magic square."""
        if self.kind is GameKind.MAGIC_SQUARE:
            return 1.0
        if self.kind is GameKind.CHSH:
            return TSIRELSON
        return self.tilt(copy).optimum

    def check_guardrail(self) -> None:
        limit = MAX_COPIES[self.kind.value]
        if self.copies > limit:
            raise GuardrailError(f"{self.kind.value} is limited to {limit} copies, got {self.copies}")

    def to_json(self) -> dict:
        out = {"kind": self.kind.value, "copies": self.copies}
        if self.kind is GameKind.TILTED:
            out["thetas"] = list(self.thetas)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "GameSpec":
        return cls(kind=GameKind(data["kind"]), copies=int(data["copies"]), thetas=tuple(data.get("thetas", ())))


# --- correlation tables ---------------------------------------------------------

@dataclass(frozen=True)
class CorrelationTable:
    """p[a, b, x, y] = P(a, b | x, y) for the full parallel game."""

    spec: GameSpec
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        na, nq = self.spec.answer_count, self.spec.question_count
        if p.shape != (na, na, nq, nq):
            raise ValueError(f"table shape {p.shape} does not match {self.spec}")
        object.__setattr__(self, "p", p)

    def check(self, atol: float = 1e-9) -> None:
        """Raise ``ValueError`` unless positivity, normalization and no-signalling hold."""
        p = self.p
        if p.min() < -1e-12:
            raise ValueError(f"negative probability {p.min()}")
        sums = p.sum(axis=(0, 1))
        if np.max(np.abs(sums - 1)) > 1e-10:
            raise ValueError("table is not normalized")
        pa = p.sum(axis=1)  # (a, x, y)
        pb = p.sum(axis=0)  # (b, x, y)
        if np.max(np.abs(pa - pa[:, :, :1])) > atol or np.max(np.abs(pb - pb[:, :1, :])) > atol:
            raise ValueError("table is signalling")

    def copy_marginal(self, copy: int) -> np.ndarray:
        """P_i(a_i, b_i | x_i, y_i) with the other copies' questions averaged uniformly.

        Shape ``(A, A, Q, Q)`` with per-copy alphabet sizes.
        """
        spec = self.spec
        n = spec.copies
        if not 0 <= copy < n:
            raise IndexError(f"copy {copy} out of range for {n} copies")
        ra, rq = spec.answer_radix, spec.question_radix
        t = self.p.reshape((ra,) * n + (ra,) * n + (rq,) * n + (rq,) * n)
        keep = (copy, n + copy, 2 * n + copy, 3 * n + copy)
        drop_answers = tuple(k for k in range(2 * n) if k not in keep)
        drop_questions = tuple(k for k in range(2 * n, 4 * n) if k not in keep)
        t = t.sum(axis=drop_answers, keepdims=True).mean(axis=drop_questions, keepdims=True)
        return t.reshape(ra, ra, rq, rq)


def chsh_correlators(t: CorrelationTable, copy: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-copy correlators ``E[x, y]`` and Alice marginals ``<A_x>``."""
    if t.spec.kind is GameKind.MAGIC_SQUARE:
        raise ValueError("CHSH functionals need a CHSH-shaped table")
    q = t.copy_marginal(copy)
    s = np.array([1.0, -1.0])
    corr = np.einsum("abxy,a,b->xy", q, s, s)
    alice = np.einsum("abxy,a->x", q, s) / 2
    return corr, alice


def chsh_value(t: CorrelationTable, copy: int) -> float:
    """A0B0 + A0B1 + A1B0 - A1B1 for one copy."""
    corr, _ = chsh_correlators(t, copy)
    return float(corr[0, 0] + corr[0, 1] + corr[1, 0] - corr[1, 1])


def tilted_value(t: CorrelationTable, copy: int, params: TiltParams) -> float:
    """alpha A0 + A0B0 + A0B1 + A1B0 - A1B1 for one copy."""
    corr, alice = chsh_correlators(t, copy)
    chsh = corr[0, 0] + corr[0, 1] + corr[1, 0] - corr[1, 1]
    if params.alpha == 0:
        return float(chsh)
    return float(params.alpha * alice[0] + chsh)


# --- magic square ----------------------------------------------------------------

# Question pairs (row, column) in the order of the nine optimality conditions.
MAGIC_CONDITIONS = ((0, 0), (0, 1), (1, 1), (1, 0), (0, 2), (1, 2), (2, 0), (2, 1), (2, 2))


def magic_row_entries(answer: int) -> tuple[int, int, int]:
    """Alice's three +-1 entries for a two-bit answer; product is +1."""
    b1, b2 = divmod(answer, 2)
    e1, e2 = 1 - 2 * b1, 1 - 2 * b2
    return e1, e2, e1 * e2


def magic_column_entries(answer: int, column: int) -> tuple[int, int, int]:
    """Bob's three +-1 entries; columns 0, 1 multiply to +1, column 2 to -1."""
    b1, b2 = divmod(answer, 2)
    e1, e2 = 1 - 2 * b1, 1 - 2 * b2
    return e1, e2, (-1 if column == 2 else 1) * e1 * e2


def magic_square_wins(a: int, b: int, row: int, column: int) -> bool:
    return magic_row_entries(a)[column] == magic_column_entries(b, column)[row]


def _shared_cell_signs() -> np.ndarray:
    """sign[a, b, r, c] = Alice's entry at (r, c) times Bob's entry at (r, c)."""
    out = np.zeros((4, 4, 3, 3))
    for a, b, r, c in itertools.product(range(4), range(4), range(3), range(3)):
        out[a, b, r, c] = magic_row_entries(a)[c] * magic_column_entries(b, c)[r]
    return out


_CELL_SIGNS = _shared_cell_signs()


def magic_square_lhs(t: CorrelationTable, copy: int) -> np.ndarray:
    """The nine shared-cell correlators of one copy, in condition order."""
    if t.spec.kind is not GameKind.MAGIC_SQUARE:
        raise ValueError("magic_square_lhs needs a magic-square table")
    q = t.copy_marginal(copy)
    cell = np.einsum("abrc,abrc->rc", q, _CELL_SIGNS)
    return np.array([cell[r, c] for r, c in MAGIC_CONDITIONS])


# --- winning probabilities --------------------------------------------------------

def p_from_s(s: float) -> float:
    return s / 8 + 0.5


def s_from_p(p: float) -> float:
    return 4 * (2 * p - 1)


def win_probability(t: CorrelationTable, copy: int, kind: GameKind | str | None = None) -> float:
    kind = GameKind(kind) if kind is not None else t.spec.kind
    if kind is GameKind.MAGIC_SQUARE:
        lhs = magic_square_lhs(t, copy)
        return float(np.mean((1 + lhs) / 2))
    if kind is GameKind.TILTED:
        raise ValueError("the tilted functional has no winning-probability form")
    return p_from_s(chsh_value(t, copy))


def classical_optimum(kind: GameKind | str) -> float:
    """Best deterministic single-copy strategy, by exhaustive enumeration.

    CHSH returns the best functional value (2); the magic square returns
    the best winning probability (8/9).
    """
    kind = GameKind(kind)
    if kind is GameKind.MAGIC_SQUARE:
        best = 0.0
        for fa in itertools.product(range(4), repeat=3):
            for fb in itertools.product(range(4), repeat=3):
                wins = sum(magic_square_wins(fa[r], fb[c], r, c) for r in range(3) for c in range(3))
                best = max(best, wins / 9)
        return best
    best = -math.inf
    for fa in itertools.product((1, -1), repeat=2):
        for fb in itertools.product((1, -1), repeat=2):
            s = sum((-1) ** (x * y) * fa[x] * fb[y] for x in range(2) for y in range(2))
            best = max(best, s)
    return float(best)
