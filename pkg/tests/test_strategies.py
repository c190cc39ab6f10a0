import math

import numpy as np
import pytest

from selftest_lab.games import GameKind, GameSpec, GuardrailError, TSIRELSON, chsh_value, tilt_params, tilted_value
from selftest_lab.qmath import SIGMA_Z, StateVector
from selftest_lab.strategies import (
    NoiseKind,
    NoiseModel,
    Strategy,
    correlation_table,
    ideal_chsh,
    ideal_magic_square,
    ideal_strategy,
    ideal_tilted,
    load_strategy,
    parallel_compose,
    permute_copies,
    perturb,
    random_strategy,
    save_strategy,
)


def test_ideal_chsh_statistics():
    s = ideal_chsh()
    s.validate()
    t = correlation_table(s)
    assert t.p[0, 0, 0, 0] + t.p[1, 1, 0, 0] == pytest.approx(0.5 * (1 + 1 / math.sqrt(2)))
    pa = t.p.sum(axis=1)
    assert np.allclose(pa, 0.5)
    assert chsh_value(t, 0) == pytest.approx(TSIRELSON, abs=1e-12)
    assert chsh_value(t, 0) > 2


def test_ideal_tilted_alice_marginal():
    theta = math.pi / 8
    t = correlation_table(ideal_tilted(theta))
    assert t.p[0, :, 0, 0].sum() == pytest.approx(math.cos(theta) ** 2)


def test_tilted_at_quarter_pi_equals_chsh():
    a = correlation_table(ideal_tilted(math.pi / 4)).p
    b = correlation_table(ideal_chsh()).p
    assert np.allclose(a, b, atol=1e-12)


def test_product_state_z_measurements():
    fam = np.stack([np.diag([1, 0]), np.diag([0, 1])]).astype(complex)
    proj = np.stack([fam, fam])
    s = Strategy(GameSpec(GameKind.CHSH, 1), StateVector(np.array([1, 0, 0, 0]), (2, 2)), proj, proj, ((2, 2),))
    t = correlation_table(s)
    assert np.allclose(t.p[0, 0], 1.0)


def test_ideal_magic_square_validates():
    ideal_magic_square().validate()


def test_compose_single_is_identity():
    s = ideal_chsh()
    assert parallel_compose([s]) is s


def test_mixed_tilted_composition_matches_single_copy():
    thetas = (math.pi / 4, math.pi / 6)
    s = parallel_compose([ideal_tilted(t) for t in thetas])
    t = correlation_table(s)
    t.check(atol=1e-10)
    for i, th in enumerate(thetas):
        single = tilted_value(correlation_table(ideal_tilted(th)), 0, tilt_params(th))
        assert tilted_value(t, i, tilt_params(th)) == pytest.approx(single, abs=1e-10)


def test_compose_rejects_mixed_kinds_and_guardrail():
    with pytest.raises(ValueError):
        parallel_compose([ideal_chsh(), ideal_tilted(0.3)])
    with pytest.raises(GuardrailError):
        parallel_compose([ideal_magic_square()] * 3)


def test_perturb_zero_is_identity():
    s = ideal_strategy(GameSpec(GameKind.CHSH, 2))
    assert perturb(s, NoiseModel(NoiseKind.ANGLE_JITTER, 0.0, 3)) is s


@pytest.mark.parametrize("kind", list(NoiseKind))
def test_perturb_is_deterministic_and_projective(kind):
    s = ideal_strategy(GameSpec(GameKind.CHSH, 2))
    noise = NoiseModel(kind, 0.1, 7)
    a, b = perturb(s, noise), perturb(s, noise)
    a.validate()
    assert np.array_equal(correlation_table(a).p, correlation_table(b).p)
    c = perturb(s, NoiseModel(kind, 0.1, 8))
    assert not np.array_equal(correlation_table(a).p, correlation_table(c).p)


def test_angle_jitter_loss_is_quadratic():
    s = ideal_chsh()
    deltas = np.array([0.005, 0.01, 0.02, 0.04])
    losses = np.array([TSIRELSON - chsh_value(correlation_table(perturb(s, NoiseModel("angle_jitter", d, 1))), 0) for d in deltas])
    slope = np.polyfit(np.log(deltas), np.log(losses), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.1)
    c = np.max(losses / deltas**2)
    assert np.all(losses <= c * deltas**2 + 1e-15)


def test_tables_are_non_signalling_for_random_strategies():
    rng = np.random.default_rng(0)
    for spec in (GameSpec("chsh", 2), GameSpec("magic_square", 1)):
        s = random_strategy(spec, 4, rng)
        s.validate()
        correlation_table(s).check(atol=1e-10)


def test_validate_rejects_broken_projectors():
    s = ideal_chsh()
    alice = s.alice.copy()
    alice[0, 0] *= 2
    with pytest.raises(ValueError):
        Strategy(s.spec, s.state, alice, s.bob, s.copy_dims).validate()


def test_permute_copies_relabels_per_copy_values():
    thetas = (math.pi / 8, math.pi / 5, math.pi / 4)
    s = parallel_compose([ideal_tilted(t) for t in thetas])
    p = permute_copies(s, [2, 0, 1])
    t = correlation_table(p)
    for new, old in enumerate([2, 0, 1]):
        assert p.spec.thetas[new] == thetas[old]
        assert tilted_value(t, new, tilt_params(thetas[old])) == pytest.approx(tilt_params(thetas[old]).optimum, abs=1e-10)


def test_save_load_round_trip(tmp_path):
    s = perturb(ideal_strategy(GameSpec("tilted", 2, (0.3, 0.5))), NoiseModel("mixture_of_both", 0.2, 4))
    json_path, bin_path = save_strategy(s, tmp_path / "strat")
    assert json_path.exists() and bin_path.exists()
    r = load_strategy(tmp_path / "strat")
    assert r.spec == s.spec and r.copy_dims == s.copy_dims
    assert np.array_equal(r.alice, s.alice) and np.array_equal(r.bob, s.bob)
    assert np.array_equal(r.state.amplitudes, s.state.amplitudes)
