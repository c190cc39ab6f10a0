import math

import numpy as np
import pytest

from selftest_lab.games import GameSpec
from selftest_lab.strategies import ideal_strategy
from selftest_lab.sweep import SweepPoint, calibrate_noise, ordered_fraction, per_copy_deficits, run_point


@pytest.mark.parametrize("kind", ["angle_jitter", "state_rotation", "mixture_of_both"])
def test_calibration_hits_target(kind):
    ideal = ideal_strategy(GameSpec("chsh", 2))
    for target in (1e-4, 1e-2):
        noise, measured = calibrate_noise(ideal, kind, target, seed=1)
        assert measured == pytest.approx(target, rel=0.05)
        assert noise.magnitude > 0


def test_calibration_magic_square():
    ideal = ideal_strategy(GameSpec("magic_square", 1))
    _, measured = calibrate_noise(ideal, "angle_jitter", 1e-3, seed=0)
    assert measured == pytest.approx(1e-3, rel=0.05)


def test_ideal_deficits_vanish():
    for spec in (GameSpec("chsh", 2), GameSpec("tilted", 1, (0.3,)), GameSpec("magic_square", 1)):
        assert np.max(np.abs(per_copy_deficits(ideal_strategy(spec)))) < 1e-12


def test_run_point_row():
    row, report = run_point(SweepPoint(GameSpec("chsh", 2), "angle_jitter", 1e-3, 0))
    assert row["epsilon_measured"] == pytest.approx(1e-3, rel=0.05)
    assert row["state_distance"] == report["state_distance"] > 0
    assert report["metadata"]["epsilon_target"] == 1e-3


def test_ordered_fraction():
    rows = [
        {"n": 1, "seed": 0, "epsilon_target": e, "state_distance": d}
        for e, d in ((1e-4, 0.01), (1e-3, 0.03), (1e-2, 0.02))
    ]
    assert ordered_fraction(rows) == pytest.approx(0.5)
