import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qganlab import qsim
from qganlab.qsim import (DegenerateProjectionError, ResourceLimitError, StateVector, apply_cz,
                          apply_ry, from_amplitudes, init_zero, postselect, probabilities,
                          sample_counts)

from conftest import random_real_state, random_state


def dense_ry(theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]])


def dense_on_qubit(gate, n, q):
    """Kron product with qubit 0 as the least significant factor (rightmost)."""
    out = np.eye(1)
    for k in reversed(range(n)):
        out = np.kron(out, gate if k == q else np.eye(2))
    return out


def test_init_zero():
    s = init_zero(3)
    assert s.amplitudes[0] == 1 and np.count_nonzero(s.amplitudes) == 1


def test_resource_cap():
    with pytest.raises(ResourceLimitError):
        init_zero(25)
    with pytest.raises(ResourceLimitError):
        init_zero(4, max_qubits=3)


def test_from_amplitudes_requires_normalized():
    with pytest.raises(ValueError):
        from_amplitudes([1.0, 1.0])
    s = from_amplitudes([1.0, 1.0], normalize=True)
    assert np.allclose(s.amplitudes, [2**-0.5, 2**-0.5])


def test_ry_pi_flips():
    s = apply_ry(init_zero(1), 0, np.pi)
    assert np.allclose(np.abs(s.amplitudes), [0, 1], atol=1e-15)


def test_ry_half_rotation():
    s = apply_ry(init_zero(1), 0, np.pi / 2)
    assert np.allclose(s.amplitudes, [2**-0.5, 2**-0.5], atol=1e-15)


def test_ry_encodes_045():
    s = apply_ry(init_zero(1), 0, 2 * np.arccos(np.sqrt(0.45)))
    assert probabilities(s)[0] == pytest.approx(0.45, abs=1e-14)


def test_ry_index_errors():
    with pytest.raises(IndexError):
        apply_ry(init_zero(2), 2, 0.1)
    with pytest.raises(IndexError):
        apply_ry(init_zero(2), -1, 0.1)


def test_ry_matches_dense_matrix(rng):
    s = random_state(rng, 3)
    for q in range(3):
        out = apply_ry(s, q, 0.7)
        ref = dense_on_qubit(dense_ry(0.7), 3, q) @ s.amplitudes
        assert np.allclose(out.amplitudes, ref, atol=1e-13)


def test_cz_examples():
    s11 = StateVector(2, [0, 0, 0, 1])
    assert np.allclose(apply_cz(s11, 0, 1).amplitudes, [0, 0, 0, -1])
    s10 = StateVector(2, [0, 0, 1, 0])
    assert np.allclose(apply_cz(s10, 0, 1).amplitudes, s10.amplitudes)


def test_cz_errors():
    with pytest.raises(ValueError):
        apply_cz(init_zero(2), 1, 1)
    with pytest.raises(IndexError):
        apply_cz(init_zero(2), 0, 2)


def test_probabilities_examples(rng):
    assert np.allclose(probabilities(init_zero(1)), [1, 0])
    assert np.allclose(probabilities(StateVector(1, [2**-0.5, 2**-0.5])), [0.5, 0.5])
    s = random_state(rng, 3)
    ref = [abs(a) ** 2 for a in s.amplitudes]
    assert np.allclose(probabilities(s), ref, atol=1e-15)
    assert probabilities(s).sum() == pytest.approx(1, abs=1e-10)


def test_states_are_immutable():
    s = init_zero(2)
    with pytest.raises(ValueError):
        s.amplitudes[0] = 0
    apply_ry(s, 0, 1.0)
    assert s.amplitudes[0] == 1


def test_sample_counts_point_mass():
    counts = sample_counts([1.0, 0.0], 100, np.random.default_rng(0))
    assert counts.tolist() == [100, 0]


def test_sample_counts_binomial_bound():
    counts = sample_counts([0.5, 0.5], 3000, np.random.default_rng(3))
    sigma = np.sqrt(0.25 / 3000)
    assert abs(counts[0] / 3000 - 0.5) < 5 * sigma


def test_sample_counts_deterministic():
    a = sample_counts([0.2, 0.3, 0.5], 1000, np.random.default_rng(9))
    b = sample_counts([0.2, 0.3, 0.5], 1000, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_sample_counts_errors():
    with pytest.raises(ValueError):
        sample_counts([1.1, -0.1], 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_counts([0.5, 0.4], 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_counts([1.0, 0.0], 0, np.random.default_rng(0))


def test_sample_counts_chi_square():
    # chi-square critical value at p=1e-4 with 7 degrees of freedom
    crit = 30.0
    rng = np.random.default_rng(2024)
    for seed in range(3):
        p = random_state(np.random.default_rng(seed), 3)
        probs = probabilities(p)
        counts = sample_counts(probs, 10**5, rng)
        expected = probs * 10**5
        assert ((counts - expected) ** 2 / expected).sum() < crit


def test_postselect_examples():
    post, p = postselect(init_zero(2), [1], "0")
    assert p == pytest.approx(1.0)
    assert np.allclose(post.amplitudes, [1, 0])
    bell = StateVector(2, [2**-0.5, 0, 0, 2**-0.5])
    post, p = postselect(bell, [1], "0")
    assert p == pytest.approx(0.5)
    assert np.allclose(post.amplitudes, [1, 0])


def test_postselect_matches_dense_projector(rng):
    s = random_state(rng, 3)
    proj = dense_on_qubit(np.diag([1.0, 0.0]), 3, 2)
    v = proj @ s.amplitudes
    p_ref = np.vdot(v, v).real
    post, p = postselect(s, [2], "0")
    assert p == pytest.approx(p_ref, abs=1e-12)
    # qubit 2 is the MSB, so the surviving amplitudes are the first four
    assert np.allclose(post.amplitudes, v[:4] / np.sqrt(p_ref), atol=1e-12)


def test_postselect_middle_qubit_keeps_order(rng):
    s = random_state(rng, 3)
    post, p = postselect(s, [1], [1])
    idx = [0b010, 0b011, 0b110, 0b111]
    ref = s.amplitudes[idx]
    assert p == pytest.approx(np.sum(np.abs(ref) ** 2))
    assert np.allclose(post.amplitudes, ref / np.sqrt(p))


def test_postselect_errors():
    s = init_zero(2)
    with pytest.raises(DegenerateProjectionError):
        postselect(s, [0], "1")
    with pytest.raises(ValueError):
        postselect(s, [0, 0], "00")
    with pytest.raises(ValueError):
        postselect(s, [0], "01")
    with pytest.raises(ValueError):
        postselect(s, [0, 1], "00")


def test_product_state_batch_matches_gates():
    angles = np.array([[0.3, np.nan, 1.9]])
    row = qsim.product_state_batch(angles)[0]
    s = apply_ry(apply_ry(init_zero(3), 0, 0.3), 2, 1.9)
    assert np.allclose(row, s.amplitudes.real)


angles = st.floats(-2 * np.pi, 2 * np.pi, allow_nan=False)
seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=50, deadline=None)
@given(seeds, st.lists(st.tuples(st.integers(0, 3), angles, st.integers(0, 3)), max_size=12))
def test_norm_preserved(seed, gates):
    s = random_state(np.random.default_rng(seed), 4)
    for q, a, t in gates:
        s = apply_ry(s, q, a)
        if t != q:
            s = apply_cz(s, q, t)
    assert abs(s.norm() - 1) < 1e-10


@settings(max_examples=50, deadline=None)
@given(seeds, st.integers(0, 2), st.integers(0, 2))
def test_cz_involution_and_symmetry(seed, a, b):
    if a == b:
        return
    s = random_state(np.random.default_rng(seed), 3)
    assert np.allclose(apply_cz(apply_cz(s, a, b), a, b).amplitudes, s.amplitudes, atol=1e-12)
    assert np.allclose(apply_cz(s, a, b).amplitudes, apply_cz(s, b, a).amplitudes, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seeds, st.integers(0, 2), angles, angles)
def test_ry_composition(seed, q, a, b):
    s = random_state(np.random.default_rng(seed), 3)
    two = apply_ry(apply_ry(s, q, a), q, b)
    one = apply_ry(s, q, a + b)
    assert np.allclose(two.amplitudes, one.amplitudes, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seeds, st.sets(st.integers(0, 3), min_size=1, max_size=3))
def test_postselect_outcomes_sum_to_one(seed, qubits):
    s = random_real_state(np.random.default_rng(seed), 4)
    qubits = sorted(qubits)
    total = 0.0
    for k in range(2 ** len(qubits)):
        bits = [(k >> i) & 1 for i in range(len(qubits))]
        try:
            total += postselect(s, qubits, bits)[1]
        except DegenerateProjectionError as err:
            total += err.probability
    assert total == pytest.approx(1.0, abs=1e-10)
