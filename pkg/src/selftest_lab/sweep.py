"""Noise calibration and sweep-grid execution.

A grid point is ``(n, epsilon_target, seed)``.  The noise magnitude is
tuned so that the largest per-copy deficit of the perturbed ideal strategy
lands near ``epsilon_target``; the deficit actually reached is recorded as
``epsilon_measured``.  Each point then runs the full extraction and
certification pipeline.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .extraction import build_bundle
from .games import GameKind, GameSpec, chsh_value, magic_square_lhs, tilted_value
from .isometry import certify
from .strategies import NoiseKind, NoiseModel, Strategy, correlation_table, ideal_strategy, perturb

CSV_COLUMNS = (
    "game",
    "n",
    "epsilon_target",
    "epsilon_measured",
    "noise_model",
    "seed",
    "state_distance",
    "max_op_distance",
    "max_hypothesis_norm",
    "runtime_ms",
)
START_MAGNITUDE = 0.05
MAX_MAGNITUDE = 3.0


def per_copy_deficits(s: Strategy) -> np.ndarray:
    """Deficit of every copy from its ideal value, computed from the table."""
    spec = s.spec
    t = correlation_table(s)
    out = []
    for i in range(spec.copies):
        if spec.kind is GameKind.MAGIC_SQUARE:
            out.append(float(np.max(1.0 - magic_square_lhs(t, i))))
        elif spec.kind is GameKind.TILTED:
            out.append(spec.optimum(i) - tilted_value(t, i, spec.tilt(i)))
        else:
            out.append(spec.optimum(i) - chsh_value(t, i))
    return np.array(out)


def calibrate_noise(
    ideal: Strategy,
    kind: NoiseKind | str,
    epsilon_target: float,
    seed: int,
    rel_tol: float = 0.05,
    max_iter: int = 8,
) -> tuple[NoiseModel, float]:
    """Noise magnitude whose maximal per-copy deficit is close to the target.

    Small unitary noise lowers the game value quadratically, so the first
    guess rescales a probe magnitude by ``sqrt(target / deficit)``; secant
    steps in log-log coordinates then refine it.  Returns the noise model
    and the deficit it produces.
    """
    if epsilon_target <= 0:
        raise ValueError("epsilon_target must be positive")
    kind = NoiseKind(kind)

    def deficit(mag: float) -> float:
        return float(np.max(per_copy_deficits(perturb(ideal, NoiseModel(kind, mag, seed)))))

    m0, d0 = START_MAGNITUDE, deficit(START_MAGNITUDE)
    m1 = min(m0 * math.sqrt(epsilon_target / max(d0, 1e-300)), MAX_MAGNITUDE)
    d1 = deficit(m1)
    for _ in range(max_iter):
        if abs(d1 / epsilon_target - 1) <= rel_tol:
            break
        if d1 <= 0 or d0 <= 0 or d1 == d0 or m1 == m0:
            slope = 2.0
        else:
            slope = math.log(d1 / d0) / math.log(m1 / m0)
            if not 0.5 <= slope <= 4:
                slope = 2.0
        m_next = m1 * (epsilon_target / max(d1, 1e-300)) ** (1 / slope)
        m0, d0 = m1, d1
        m1 = min(max(m_next, 1e-12), MAX_MAGNITUDE)
        d1 = deficit(m1)
    return NoiseModel(kind, m1, seed), d1


@dataclass(frozen=True)
class SweepPoint:
    spec: GameSpec
    noise_kind: NoiseKind
    epsilon_target: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "noise_kind", NoiseKind(self.noise_kind))


def run_point(point: SweepPoint) -> tuple[dict, dict]:
    """Calibrate, perturb, extract and certify one grid point.

    Returns the CSV row and the full report JSON.
    """
    start = time.perf_counter()
    ideal = ideal_strategy(point.spec)
    noise, measured = calibrate_noise(ideal, point.noise_kind, point.epsilon_target, point.seed)
    s = perturb(ideal, noise)
    report = certify(s, build_bundle(s))
    runtime_ms = (time.perf_counter() - start) * 1e3
    report.metadata.update({"noise": noise.to_json(), "epsilon_target": point.epsilon_target, "epsilon_measured": measured})
    row = {
        "game": point.spec.kind.value,
        "n": point.spec.copies,
        "epsilon_target": point.epsilon_target,
        "epsilon_measured": measured,
        "noise_model": point.noise_kind.value,
        "seed": point.seed,
        "state_distance": report.state_distance,
        "max_op_distance": report.max_op_distance,
        "max_hypothesis_norm": report.max_hypothesis_norm,
        "runtime_ms": runtime_ms,
        "max_lemma_residual": report.max_lemma_residual,
    }
    return row, report.to_json()


def sweep_grid(
    spec_for_n,
    ns: Sequence[int],
    epsilons: Sequence[float],
    seeds: Sequence[int],
    noise_kind: NoiseKind | str,
) -> list[SweepPoint]:
    """Grid in (n, epsilon, seed) order; ``spec_for_n`` maps n to a GameSpec."""
    return [SweepPoint(spec_for_n(n), noise_kind, float(e), int(seed)) for n in ns for e in epsilons for seed in seeds]


def run_sweep(points: Sequence[SweepPoint], jobs: int = 1) -> list[tuple[dict, dict]]:
    """Run every grid point; results come back in grid order regardless of ``jobs``."""
    if jobs <= 1 or len(points) <= 1:
        return [run_point(p) for p in points]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_point, points))


def ordered_fraction(rows: Sequence[dict], key: str = "state_distance") -> float:
    """Fraction of adjacent-epsilon pairs, per (n, seed), where the value drops with epsilon."""
    groups: dict[tuple, list[tuple[float, float]]] = {}
    for r in rows:
        groups.setdefault((r["n"], r["seed"]), []).append((r["epsilon_target"], r[key]))
    ordered = total = 0
    for pts in groups.values():
        pts.sort()
        for (_, lo), (_, hi) in zip(pts, pts[1:]):
            total += 1
            ordered += lo <= hi
    return ordered / total if total else 1.0
