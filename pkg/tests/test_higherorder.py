import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qboxdec.channels import apply_channel, cptp_from_rng, is_cptp, kraus_from_choi, random_cptp, unitary_channel
from qboxdec.higherorder import (
    DimensionBoundError,
    DiscardEffect,
    HigherOrderMap,
    HigherOrderType,
    NSChannel,
    PROCESS_MATRIX,
    SignallingInputError,
    apply_effect,
    apply_supermap,
    apply_supermap_batch,
    as_state,
    comb_supermap,
    compose_supermaps,
    decompose_nonsignalling,
    determinism_violation,
    identity_supermap,
    is_deterministic_supermap,
    is_nonsignalling,
    is_process_matrix,
    local_cptp_basis,
    ns_basis_array,
    ns_violation,
    prep_discard,
    random_deterministic_supermap,
    random_nonsignalling_state,
    reconstruct,
    reduced_state,
    sample_discard,
    sequential_comb_effect,
    state_as_supermap,
    state_from_array,
    state_type,
    supermap_as_state,
    supermap_from_action,
    tensor_states,
    tensor_supermaps,
    tp_violation,
    transpose_supermap,
    verify_no_superluminal,
)
from qboxdec.tensorcore import density_from_rng, random_density, rng_for

Q = HigherOrderType((2,))
QQ = HigherOrderType((2, 2))
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def kraus_of(state):
    return kraus_from_choi(state).operators


def comb_oracle(pre, g, post, memory, rho):
    """post o (g (x) id_M) o pre applied to rho, via Kraus operators only."""
    sigma = sum(k @ rho @ k.conj().T for k in kraus_of(pre))
    big = [np.kron(k, np.eye(memory)) for k in kraus_of(g)]
    tau = sum(k @ sigma @ k.conj().T for k in big)
    return sum(k @ tau @ k.conj().T for k in kraus_of(post))


def random_local_state(d, seed):
    return as_state(random_cptp(d, d, 2, seed))


def cnot_state():
    return state_from_array(unitary_channel(CNOT).matrix, QQ)


def test_type_json_and_wires():
    t = HigherOrderType((2, 3))
    assert HigherOrderType.from_json(t.to_json()) == t
    assert t.wires().labels == ("b0", "b1", "t0", "t1")
    assert (Q @ Q) == QQ
    assert HigherOrderType((1,)).is_trivial
    with pytest.raises(ValueError):
        HigherOrderType(())
    with pytest.raises(ValueError):
        HigherOrderType.from_json([[2, 3]])


def test_identity_supermap_acts_trivially():
    s = random_nonsignalling_state(QQ, 1)
    assert np.allclose(apply_supermap(identity_supermap(QQ), s).matrix, s.matrix)


def test_supermap_from_action_identity_matches_closed_form():
    assert np.allclose(supermap_from_action(lambda x: x, Q, Q).matrix, identity_supermap(Q).matrix)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_comb_supermap_matches_direct_composition(seed, memory):
    rng = rng_for(seed)
    pre = cptp_from_rng(2, 2 * memory, 2, rng)
    post = cptp_from_rng(2 * memory, 2, 2, rng)
    s = comb_supermap(pre, post, Q, Q, memory)
    g = random_local_state(2, seed + 1)
    rho = random_density(2, seed + 2).data
    out = apply_supermap(s, g)
    got = apply_channel(out.with_labels(["x0"], ["y0"]), rho).data
    assert np.allclose(got, comb_oracle(pre, g, post, memory, rho), atol=1e-12)


def test_compose_supermaps_matches_sequential_application():
    s = random_deterministic_supermap(Q, Q, 3)
    t = random_deterministic_supermap(Q, Q, 4)
    g = random_local_state(2, 5)
    direct = apply_supermap(t, apply_supermap(s, g))
    assert np.allclose(apply_supermap(compose_supermaps(t, s), g).matrix, direct.matrix)


def test_compose_supermaps_type_mismatch():
    with pytest.raises(ValueError):
        compose_supermaps(identity_supermap(QQ), identity_supermap(Q))


def test_tensor_supermaps_on_product_states():
    s = random_deterministic_supermap(Q, Q, 6)
    t = random_deterministic_supermap(Q, Q, 7)
    a = random_local_state(2, 8)
    b = random_local_state(2, 9)
    lhs = apply_supermap(tensor_supermaps(s, t), tensor_states(a, b))
    rhs = tensor_states(apply_supermap(s, a), apply_supermap(t, b))
    assert np.allclose(lhs.matrix, rhs.matrix)


def test_state_supermap_round_trip():
    s = random_nonsignalling_state(QQ, 10)
    m = state_as_supermap(s)
    assert m.source.is_trivial
    assert np.array_equal(supermap_as_state(m).matrix, s.matrix)
    with pytest.raises(ValueError):
        supermap_as_state(identity_supermap(Q))


def test_supermap_json_round_trip():
    s = random_deterministic_supermap(Q, Q, 11)
    back = HigherOrderMap.from_json(s.to_json())
    assert back.source == s.source and np.array_equal(back.matrix, s.matrix)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_random_nonsignalling_states_are_valid(seed):
    s = random_nonsignalling_state(QQ, seed)
    assert is_cptp(s)
    assert is_nonsignalling(s, QQ.parties())
    assert ns_violation(s.matrix[None], QQ.dims)[0] < 1e-12
    assert tp_violation(s.matrix[None], QQ.dims)[0] < 1e-12


def test_cnot_is_signalling():
    s = cnot_state()
    assert not is_nonsignalling(s, QQ.parties())
    assert ns_violation(s.matrix[None], QQ.dims)[0] > 0.1
    with pytest.raises(SignallingInputError):
        NSChannel.from_state(s)


def test_partition_must_cover_wires():
    with pytest.raises(ValueError):
        is_nonsignalling(cnot_state(), [("b0", "t0")])


@pytest.mark.parametrize("d,size", [(2, 13), (3, 73)])
def test_local_basis_spans_affine_hull(d, size):
    basis = local_cptp_basis(d)
    assert basis.shape[0] == size == d ** 4 - d ** 2 + 1
    diffs = (basis[1:] - basis[0]).reshape(size - 1, -1)
    assert np.linalg.matrix_rank(diffs, tol=1e-8) == size - 1
    for j in basis:
        assert np.allclose(j, j.conj().T)
        assert np.linalg.eigvalsh(j)[0] > -1e-12
        assert np.allclose(np.einsum("iaja->ij", j.reshape(d, d, d, d)), np.eye(d))


def test_ns_basis_elements_are_nonsignalling():
    basis = ns_basis_array(QQ.dims)
    assert basis.shape[0] == 13 ** 2
    assert np.max(ns_violation(basis, QQ.dims)) < 1e-12
    assert np.max(tp_violation(basis, QQ.dims)) < 1e-12


def test_dimension_bound():
    with pytest.raises(DimensionBoundError):
        ns_basis_array((3, 3))
    with pytest.raises(DimensionBoundError):
        ns_basis_array((2, 2), max_dim=8)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_decomposition_reconstructs(seed):
    s = random_nonsignalling_state(QQ, seed)
    terms = decompose_nonsignalling(NSChannel.from_state(s))
    assert abs(sum(c for c, _ in terms) - 1) < 1e-9
    assert np.linalg.norm(reconstruct(terms) - s.matrix) < 1e-8
    for _, ch in terms:
        assert is_cptp(ch)


def test_decomposition_single_pair():
    s = random_local_state(3, 12)
    terms = decompose_nonsignalling(NSChannel.from_state(s))
    assert np.linalg.norm(reconstruct(terms) - s.matrix) < 1e-8


def test_prep_discard_is_process_matrix():
    w = prep_discard(random_density(4, 13).data, QQ)
    assert is_process_matrix(w.matrix, QQ)


@pytest.mark.parametrize("order", [(0, 1), (1, 0)])
def test_sequential_comb_is_process_matrix(order):
    w = sequential_comb_effect(QQ, order, rng_for(14))
    assert is_process_matrix(w.matrix, QQ)


def test_unnormalised_effect_is_not_a_process_matrix():
    rho = density_from_rng(4, rng_for(15))
    bad = prep_discard(rho, QQ).matrix.scaled(1.1)
    assert not is_process_matrix(bad, QQ)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_sampled_process_matrices_are_normalised_on_states(seed):
    w = sample_discard(QQ, PROCESS_MATRIX, seed)
    assert is_process_matrix(w.matrix, QQ)
    assert abs(apply_effect(random_nonsignalling_state(QQ, seed + 1), w) - 1) < 1e-12


def test_discard_effect_json_round_trip():
    w = sample_discard(QQ, PROCESS_MATRIX, 16)
    back = DiscardEffect.from_json(w.to_json())
    assert back.family == w.family and np.array_equal(back.matrix.data, w.matrix.data)


def test_no_superluminal_signalling():
    typ = HigherOrderType((2, 2, 2))
    s = random_nonsignalling_state(typ, 17)
    w1 = sample_discard(QQ, PROCESS_MATRIX, 18)
    w2 = sample_discard(QQ, PROCESS_MATRIX, 19)
    assert verify_no_superluminal(s, w1, w2, [0, 2]) < 1e-12
    r = reduced_state(s, w1, [0, 2])
    assert state_type(r) == Q and is_cptp(r)


def test_reduced_state_errors():
    s = random_nonsignalling_state(QQ, 20)
    w = sample_discard(Q, PROCESS_MATRIX, 21)
    with pytest.raises(ValueError):
        reduced_state(s, w, [0, 0])
    with pytest.raises(ValueError):
        reduced_state(s, w, [2])


def test_batch_application_matches_single():
    s = random_deterministic_supermap(QQ, QQ, 22)
    states = [random_nonsignalling_state(QQ, k) for k in range(3)]
    batch = np.array([x.matrix for x in states])
    out = apply_supermap_batch(s, batch)
    for x, y in zip(states, out):
        assert np.allclose(apply_supermap(s, x).matrix, y)


@pytest.mark.parametrize("src,tgt", [((2,), (2,)), ((2,), (3,)), ((2, 2), (2, 2))])
def test_random_deterministic_supermaps_are_deterministic(src, tgt):
    s = random_deterministic_supermap(HigherOrderType(src), HigherOrderType(tgt), 23)
    assert is_deterministic_supermap(s)


def test_identity_supermap_is_deterministic():
    assert is_deterministic_supermap(identity_supermap(QQ))


def test_transpose_is_not_deterministic():
    s = transpose_supermap(Q)
    assert not is_deterministic_supermap(s)
    assert determinism_violation(s) > 0.1


def test_signalling_output_is_not_deterministic():
    # always outputs the CNOT state: positive but not non-signalling
    cnot = cnot_state().matrix
    s = supermap_from_action(lambda x: np.trace(x) / 4 * cnot, QQ, QQ)
    assert not is_deterministic_supermap(s)
