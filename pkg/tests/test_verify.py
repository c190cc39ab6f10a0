import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selftest_lab.extraction import ALICE, BOB, build_bundle
from selftest_lab.games import GameSpec
from selftest_lab.qmath import StateVector, random_hermitian, unitary_from_hermitian
from selftest_lab.strategies import NoiseModel, ideal_strategy, perturb
from selftest_lab.verify import hypothesis_norms, lemma_conclusions, loglog_slope, scaling_fit

SPECS = [
    GameSpec("chsh", 1),
    GameSpec("chsh", 3),
    GameSpec("tilted", 2, (math.pi / 8, math.pi / 6)),
    GameSpec("magic_square", 1),
    GameSpec("magic_square", 2),
]


@pytest.mark.parametrize("spec", SPECS)
def test_ideal_norms_and_residuals_vanish(spec):
    s = ideal_strategy(spec)
    b = build_bundle(s)
    assert hypothesis_norms(b, s.state).max_norm <= 1e-9
    res = lemma_conclusions(b, s.state)
    assert res and max(res.values()) <= 1e-9


def test_tilted_cross_copy_x_commutation():
    s = ideal_strategy(GameSpec("tilted", 2, (math.pi / 8, math.pi / 8)))
    res = lemma_conclusions(build_bundle(s), s.state)
    assert res["bob_cross_commutation_XX/i0,j1"] <= 1e-9


def test_shared_question_commutators_exactly_zero():
    s = perturb(ideal_strategy(GameSpec("chsh", 3)), NoiseModel("angle_jitter", 0.2, 4))
    res = lemma_conclusions(build_bundle(s), s.state)
    shared = [v for k, v in res.items() if k.startswith("shared_question")]
    assert len(shared) == 12
    assert max(shared) < 1e-12
    alice = [v for k, v in res.items() if k.startswith("alice_cross")]
    assert max(alice) > 1e-6


def test_operator_epsilon_scales_as_square_root():
    ideal = ideal_strategy(GameSpec("chsh", 2))
    xs, ys = [], []
    for mag in (0.004, 0.01, 0.03, 0.08):
        for seed in range(3):
            s = perturb(ideal, NoiseModel("angle_jitter", mag, seed))
            b = build_bundle(s)
            xs.append(b.epsilon)
            ys.append(hypothesis_norms(b, s.state).max_norm)
    assert 0.4 <= loglog_slope(xs, ys) <= 0.6


def _conjugate(bundle, u_a, u_b):
    def conj(u, ops):
        return [u @ m @ u.conj().T for m in ops]

    bundle.alice_z, bundle.alice_x = conj(u_a, bundle.alice_z), conj(u_a, bundle.alice_x)
    bundle.bob_z, bundle.bob_x = conj(u_b, bundle.bob_z), conj(u_b, bundle.bob_x)
    return bundle


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), phase=st.floats(0, 2 * math.pi))
def test_norms_invariant_under_phase_and_local_unitaries(seed, phase):
    s = perturb(ideal_strategy(GameSpec("chsh", 2)), NoiseModel("mixture_of_both", 0.15, seed))
    base = hypothesis_norms(build_bundle(s), s.state).norms
    rng = np.random.default_rng(seed)
    u_a = unitary_from_hermitian(random_hermitian(4, rng), 1.0)
    u_b = unitary_from_hermitian(random_hermitian(4, rng), 1.0)
    mat = np.exp(1j * phase) * (u_a @ s.state.tensor() @ u_b.T)
    psi = StateVector(mat, s.state.dims)
    moved = hypothesis_norms(_conjugate(build_bundle(s), u_a, u_b), psi).norms
    assert base.keys() == moved.keys()
    for k in base:
        assert moved[k] == pytest.approx(base[k], abs=1e-10)


def _synthetic(c=2.0, pn=1.5, pe=0.5):
    return [(n, e, c * n**pn * e**pe) for n in (1, 2, 3) for e in (1e-4, 1e-3, 1e-2)]


def test_scaling_fit_recovers_exponents():
    fit = scaling_fit(_synthetic())
    assert fit.p_n == pytest.approx(1.5, abs=1e-6)
    assert fit.p_eps == pytest.approx(0.5, abs=1e-6)
    assert fit.constant == pytest.approx(2.0, rel=1e-6)
    assert fit.residual < 1e-9


def test_scaling_fit_excludes_floor_points():
    samples = _synthetic() + [(1, 1e-5, 0.0), (2, 1e-5, 1e-12)]
    fit = scaling_fit(samples)
    assert fit.excluded == 2
    assert fit.p_eps == pytest.approx(0.5, abs=1e-6)


def test_scaling_fit_is_scale_equivariant():
    rng = np.random.default_rng(0)
    noisy = [(n, e, d * math.exp(rng.normal(0, 0.1))) for n, e, d in _synthetic()]
    a = scaling_fit(noisy)
    b = scaling_fit([(n, e, 7 * d) for n, e, d in noisy])
    assert b.constant == pytest.approx(7 * a.constant, rel=1e-9)
    assert b.p_n == pytest.approx(a.p_n, abs=1e-9)
    assert b.p_eps == pytest.approx(a.p_eps, abs=1e-9)
    assert a.p_eps_interval[0] < a.p_eps < a.p_eps_interval[1]
    assert a.reference_p_eps_inside


def test_scaling_fit_rejects_degenerate_grids():
    with pytest.raises(ValueError):
        scaling_fit(_synthetic()[:5])
    with pytest.raises(ValueError):
        scaling_fit([(1, e, e**0.5) for e in (1e-4, 1e-3, 1e-2, 1e-1, 0.2, 0.3)])
    with pytest.raises(ValueError):
        scaling_fit([(n, e, 1.0) for n in (1, 2, 3) for e in (1e-3, 1e-2)])
