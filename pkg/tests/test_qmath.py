import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from selftest_lab.qmath import (
    SIGMA_X,
    SIGMA_Z,
    NotHermitianError,
    StateVector,
    abs_op,
    apply_local,
    balance_and_extend,
    balancing_padding,
    eigen_counts,
    expectation,
    extend_reflection,
    herm_eig,
    is_balanced,
    is_reflection,
    min_dist_over_junk,
    pad_state,
    permute_subsystems,
    random_hermitian,
    random_reflection,
    random_unit_vector,
    sign_regularized,
    tensor,
    unitary_from_hermitian,
)


def test_state_vector_checks_dims():
    with pytest.raises(ValueError):
        StateVector(np.ones(4), (2, 3))
    v = StateVector(np.arange(6), (2, 3))
    assert v.tensor().shape == (2, 3)
    assert v.normalized().norm() == pytest.approx(1.0)


def test_herm_eig_rejects_non_hermitian():
    with pytest.raises(NotHermitianError):
        herm_eig(np.array([[0, 1], [0, 0]], dtype=complex))


def test_sign_matches_matrix_function_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        h = random_hermitian(5, rng)
        # independent oracle: sign(H) = H (H^2)^{-1/2}
        oracle = h @ np.linalg.inv(scipy.linalg.sqrtm(h @ h))
        assert np.allclose(sign_regularized(h), oracle, atol=1e-8)
        assert np.allclose(abs_op(h), scipy.linalg.sqrtm(h @ h), atol=1e-8)


def test_sign_sends_kernel_to_plus_one():
    m = np.diag([2.0, 0.0, -3.0]).astype(complex)
    assert np.allclose(sign_regularized(m), np.diag([1, 1, -1]))
    assert np.allclose(sign_regularized(np.zeros((2, 2))), np.eye(2))


def test_unitary_from_hermitian_matches_expm():
    rng = np.random.default_rng(1)
    h = random_hermitian(4, rng)
    assert np.allclose(unitary_from_hermitian(h, 0.3), scipy.linalg.expm(-0.3j * h), atol=1e-12)


def test_random_hermitian_unit_norm():
    rng = np.random.default_rng(2)
    assert np.linalg.norm(random_hermitian(6, rng), 2) == pytest.approx(1.0)


def test_apply_local_and_expectation_on_bell_state():
    phi = StateVector(np.array([1, 0, 0, 1]) / math.sqrt(2), (2, 2))
    assert expectation(phi, SIGMA_Z, SIGMA_Z) == pytest.approx(1.0)
    assert expectation(phi, SIGMA_X, SIGMA_X) == pytest.approx(1.0)
    assert expectation(phi, SIGMA_Z, None) == pytest.approx(0.0)
    a = apply_local(SIGMA_Z, phi, 0)
    b = apply_local(SIGMA_Z, phi, 1)
    assert np.allclose(a.amplitudes, b.amplitudes)
    with pytest.raises(ValueError):
        apply_local(SIGMA_Z, phi, 2)


def test_permute_subsystems_matches_kron_order():
    rng = np.random.default_rng(3)
    a, b, c = (random_unit_vector(d, rng) for d in (2, 3, 4))
    v = StateVector(tensor(a, b, c), (2, 3, 4))
    w = permute_subsystems(v, [2, 0, 1])
    assert w.dims == (4, 2, 3)
    assert np.allclose(w.amplitudes, tensor(c, a, b))
    with pytest.raises(ValueError):
        permute_subsystems(v, [0, 0, 1])


def test_min_dist_over_junk_exact_product():
    rng = np.random.default_rng(4)
    target = StateVector(random_unit_vector(4, rng), (2, 2))
    junk = random_unit_vector(3, rng)
    v = StateVector(np.kron(junk, target.amplitudes), (3, 2, 2))
    dist, best = min_dist_over_junk(v, target, [1, 2])
    assert dist < 1e-12
    assert abs(abs(np.vdot(best.amplitudes, junk)) - 1) < 1e-12


def test_min_dist_over_junk_beats_grid_search():
    # Oracle: brute-force search over single-qubit junk states on a Bloch grid;
    # the junk's global phase is optimized in closed form.
    rng = np.random.default_rng(5)
    target = StateVector(np.array([1, 0, 0, 1]) / math.sqrt(2), (2, 2))
    v = StateVector(random_unit_vector(8, rng), (2, 2, 2))
    dist, _ = min_dist_over_junk(v, target, [1, 2])
    best = math.inf
    for th in np.linspace(0, math.pi, 181):
        for ph in np.linspace(0, 2 * math.pi, 361):
            j = np.array([math.cos(th / 2), np.exp(1j * ph) * math.sin(th / 2)])
            overlap = abs(np.vdot(np.kron(j, target.amplitudes), v.amplitudes))
            best = min(best, math.sqrt(max(2 - 2 * overlap, 0.0)))
    assert dist <= best + 1e-12
    assert best - dist < 1e-3


def test_min_dist_over_junk_validates_subsystems():
    v = StateVector(np.ones(8), (2, 2, 2))
    with pytest.raises(ValueError):
        min_dist_over_junk(v, StateVector(np.ones(3), (3,)), [0])
    with pytest.raises(ValueError):
        min_dist_over_junk(v, StateVector(np.ones(4), (2, 2)), [0, 0])


def test_balancing_pads_and_preserves_state_mass():
    r = np.diag([1, 1, 1, -1]).astype(complex)
    psi = StateVector(np.ones(8) / math.sqrt(8), (4, 2))
    r2, psi2 = balance_and_extend(r, psi, side=0)
    assert r2.shape == (6, 6)
    assert is_balanced(r2) and is_reflection(r2)
    assert psi2.dims == (6, 2)
    assert psi2.norm() == pytest.approx(1.0)
    assert expectation(psi2, r2) == pytest.approx(expectation(psi, r))


def test_balancing_padding_common_to_all():
    r1 = np.diag([1, 1, 1]).astype(complex)
    r2 = np.diag([1, -1, -1]).astype(complex)
    pad = balancing_padding([r1, r2])
    assert pad == 3
    for r in (r1, r2):
        assert is_balanced(extend_reflection(r, pad))


def test_pad_state_bob_side():
    psi = StateVector(np.ones(4) / 2, (2, 2))
    out = pad_state(psi, 1, 2)
    assert out.dims == (2, 4)
    assert np.allclose(out.tensor()[:, 2:], 0)


@settings(max_examples=40, deadline=None)
@given(dim=st.integers(1, 7), seed=st.integers(0, 2**31 - 1))
def test_random_reflection_properties(dim, seed):
    rng = np.random.default_rng(seed)
    plus = int(rng.integers(0, dim + 1))
    r = random_reflection(dim, rng, plus=plus)
    assert is_reflection(r)
    assert eigen_counts(r) == (plus, dim - plus)
    assert is_balanced(extend_reflection(r, balancing_padding([r])))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_sign_is_reflection_commuting_with_input(seed):
    rng = np.random.default_rng(seed)
    h = random_hermitian(5, rng)
    s = sign_regularized(h)
    assert is_reflection(s)
    assert np.linalg.norm(s @ h - h @ s) < 1e-10
