import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qboxdec.channels import (
    Channel,
    apply_channel,
    default_in,
    default_out,
    depolarizing_channel,
    random_cptp,
    unitary_channel,
)
from qboxdec.higherorder import (
    HigherOrderType,
    apply_supermap,
    as_state,
    identity_supermap,
    is_deterministic_supermap,
    random_deterministic_supermap,
    random_nonsignalling_state,
    state_from_array,
    supermap_from_action,
)
from qboxdec.hyperdec import (
    FAIL,
    PASS,
    VACUOUS,
    SplitMorphism,
    apply_hypdec,
    bottom_unitary_supermap,
    channel_distance,
    check_purity_copreservation,
    equivalence_residuals,
    functor_F,
    functor_G,
    hypdec_from_action,
    hypdec_map,
    maximally_mixed_state,
    pure_preparation_instance,
    purity_search,
    random_hyperdecohered,
    split_hom_check,
    strictness_residual,
    verify_equivalence_roundtrip,
    verify_idempotent,
    verify_maxmix_preserved,
    verify_no_backwards_signalling,
)
from qboxdec.tensorcore import ComplexMatrix, haar_unitary, random_density, rng_for

TYPES = [HigherOrderType((2,)), HigherOrderType((3,)), HigherOrderType((2, 2))]
Q = HigherOrderType((2,))


def type_id(typ):
    return "x".join(map(str, typ.dims))


def state_on(typ, seed):
    return random_nonsignalling_state(typ, seed) if typ.n > 1 else as_state(random_cptp(typ.dim, typ.dim, 2, seed))


def run_state(state, rho):
    """Apply a state's channel (bottoms -> tops) to an input matrix."""
    d_in = state.in_sys.dim
    d_out = state.out_sys.dim
    return np.einsum("ij,iajb->ab", rho, state.matrix.reshape(d_in, d_out, d_in, d_out))


def prepare_state(rho, typ_dim, src):
    """The state that discards its bottom and prepares ``rho``."""
    return state_from_array(np.kron(np.eye(typ_dim), rho), src)


@pytest.mark.parametrize("typ", TYPES, ids=type_id)
def test_closed_form_matches_action_route(typ):
    assert np.allclose(hypdec_map(typ).matrix, hypdec_from_action(typ).matrix)


@pytest.mark.parametrize("typ", TYPES, ids=type_id)
def test_hypdec_applied_is_g_after_depolariser(typ):
    g = state_on(typ, 1)
    via_supermap = apply_supermap(hypdec_map(typ).underlying, g)
    assert np.allclose(via_supermap.matrix, apply_hypdec(g).matrix)
    rho = random_density(typ.dim, 2).data
    expected = run_state(g, np.eye(typ.dim) / typ.dim)
    assert np.allclose(run_state(via_supermap, rho), expected)


@pytest.mark.parametrize("typ", TYPES, ids=type_id)
def test_idempotent(typ):
    assert verify_idempotent(hypdec_map(typ)) < 1e-10


@pytest.mark.parametrize("typ", TYPES, ids=type_id)
def test_hypdec_is_deterministic(typ):
    assert is_deterministic_supermap(hypdec_map(typ).underlying)


@pytest.mark.parametrize("typ", TYPES, ids=type_id)
def test_strictness(typ):
    assert strictness_residual(typ) > 0.5


def test_trivial_type_hypdec_is_identity():
    assert strictness_residual(HigherOrderType((1,))) < 1e-12


@pytest.mark.parametrize("typ", [Q, HigherOrderType((2, 2))], ids=type_id)
def test_no_backwards_signalling(typ):
    assert verify_no_backwards_signalling(hypdec_map(typ), 20, 3) < 1e-9


def test_identity_supermap_signals_backwards():
    # pulling a comb back through the identity leaves a comb, not a prep-discard
    assert verify_no_backwards_signalling(identity_supermap(HigherOrderType((2, 2))), 5, 4) > 1e-3


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_functor_G_matches_its_action(seed):
    f = random_cptp(2, 2, 2, seed)

    def action(x):
        image = np.einsum("iaib->ab", x.reshape(2, 2, 2, 2)) / 2
        return np.kron(np.eye(2), apply_channel(f, image).data)

    oracle = supermap_from_action(action, Q, Q)
    assert np.allclose(functor_G(f).map.matrix, oracle.matrix)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_functor_F_matches_its_action(seed):
    s = random_hyperdecohered(Q, Q, seed)
    rho = random_density(2, seed + 1).data
    out = apply_supermap(s, prepare_state(rho, 2, Q))
    expected = run_state(out, np.eye(2) / 2)
    assert np.allclose(apply_channel(functor_F(s), rho).data, expected)


def test_functor_G_rejects_non_cptp():
    f = random_cptp(2, 2, 2, 5)
    bad = Channel(ComplexMatrix(2 * f.matrix, f.choi.system), f.in_sys, f.out_sys)
    with pytest.raises(ValueError):
        functor_G(bad)


def test_split_morphism_rejects_non_invariant_maps():
    t = random_deterministic_supermap(Q, Q, 6)
    assert not split_hom_check(t)
    with pytest.raises(ValueError):
        SplitMorphism.of(t)
    assert split_hom_check(random_hyperdecohered(Q, Q, 6))


@pytest.mark.parametrize("typ", TYPES, ids=type_id)
def test_round_trips(typ):
    f = random_cptp(typ.dim, typ.dim, 2, 7)
    f = Channel(ComplexMatrix(f.matrix, default_in(typ.dims) + default_out(typ.dims)),
                default_in(typ.dims), default_out(typ.dims))
    assert channel_distance(functor_F(functor_G(f)), f) < 1e-9
    s = random_hyperdecohered(typ, typ, 8)
    assert np.linalg.norm(functor_G(functor_F(s)).map.matrix - s.matrix) < 1e-9


def test_F_of_hypdec_is_identity_channel():
    f = functor_F(hypdec_map(Q).underlying)
    rho = random_density(2, 9).data
    assert np.allclose(apply_channel(f, rho).data, rho)


def test_bottom_unitary_supermap_precomposes():
    u = haar_unitary(2, rng_for(10))
    g = state_on(Q, 11)
    out = apply_supermap(bottom_unitary_supermap(Q, u), g)
    rho = random_density(2, 12).data
    assert np.allclose(run_state(out, rho), run_state(g, u @ rho @ u.conj().T))


def test_equivalence_residuals_small():
    res = equivalence_residuals(3, (2,), 13)
    gap = res.pop("faithfulness probe distinct inputs")
    assert gap > 1e-3
    assert max(res.values()) < 1e-9
    assert verify_equivalence_roundtrip(2, (2,), 14) < 1e-9


@pytest.mark.parametrize("typ", TYPES, ids=type_id)
def test_maximally_mixed_state_preserved(typ):
    m = maximally_mixed_state(typ)
    rho = random_density(typ.dim, 15).data
    assert np.allclose(run_state(m, rho), np.eye(typ.dim) / typ.dim)
    r1, r2 = verify_maxmix_preserved(typ)
    assert r1 < 1e-12 and r2 < 1e-12


@pytest.mark.parametrize("d", [2, 3])
def test_pure_preparation_passes(d):
    phi = haar_unitary(d, rng_for(d))[:, 0]
    g = pure_preparation_instance(phi, d)
    assert check_purity_copreservation(g) == PASS


def test_mixed_images_are_vacuous():
    assert check_purity_copreservation(unitary_channel(haar_unitary(2, rng_for(16)))) == VACUOUS
    assert check_purity_copreservation(depolarizing_channel(3)) == VACUOUS


def test_purity_search_finds_no_failures():
    counts = purity_search(60, 17)
    assert counts[FAIL] == 0
    assert counts[PASS] == 20
    assert sum(counts.values()) == 60
