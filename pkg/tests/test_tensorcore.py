import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qboxdec.tensorcore import (
    ComplexMatrix,
    WireSystem,
    derive_seeds,
    frobenius_distance,
    haar_unitary,
    identity,
    is_hermitian,
    is_psd,
    link,
    partial_trace,
    permute_systems,
    random_density,
    rng_for,
    tensor_product,
)


def rand_matrix(dims, labels, seed):
    rng = rng_for(seed)
    n = int(np.prod(dims))
    return ComplexMatrix(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)), WireSystem(dims, labels))


def test_wire_system_validation():
    with pytest.raises(ValueError):
        WireSystem((2, 2), ("a", "a"))
    with pytest.raises(ValueError):
        WireSystem((2,), ("a", "b"))
    with pytest.raises(ValueError):
        WireSystem((0,), ("a",))
    s = WireSystem((2, 3), ("a", "b"))
    assert s.dim == 6
    assert s.dim_of("b") == 3
    with pytest.raises(KeyError):
        s.index("c")


def test_complex_matrix_rejects_bad_shapes_and_nan():
    with pytest.raises(ValueError):
        ComplexMatrix(np.eye(3), WireSystem((2,), ("a",)))
    bad = np.eye(2)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        ComplexMatrix(bad, WireSystem((2,), ("a",)))


def test_matrix_is_read_only():
    m = identity(WireSystem((2,), ("a",)))
    with pytest.raises(ValueError):
        m.data[0, 0] = 3


def test_partial_trace_against_loops():
    m = rand_matrix((2, 3, 2), ("a", "b", "c"), 1)
    t = m.tensor()
    expected = np.zeros((4, 4), dtype=complex)
    for i in range(2):
        for k in range(2):
            for j in range(2):
                for l in range(2):
                    expected[i * 2 + k, j * 2 + l] = sum(t[i, b, k, j, b, l] for b in range(3))
    out = partial_trace(m, ["b"])
    assert out.labels == ("a", "c")
    assert np.allclose(out.data, expected)


def test_partial_trace_of_product():
    a = random_density(2, 1, "a")
    b = random_density(3, 2, "b")
    assert np.allclose(partial_trace(tensor_product(a, b), ["a"]).data, b.data)
    assert np.allclose(partial_trace(tensor_product(a, b), ["b"]).data, a.data)


def test_tensor_product_label_collision():
    a = identity(WireSystem((2,), ("a",)))
    with pytest.raises(ValueError):
        tensor_product(a, a)


def test_permute_systems_swaps_kron_factors():
    a = rand_matrix((2,), ("a",), 3)
    b = rand_matrix((3,), ("b",), 4)
    ab = tensor_product(a, b)
    ba = permute_systems(ab, ["b", "a"])
    assert np.allclose(ba.data, np.kron(b.data, a.data))
    with pytest.raises(ValueError):
        permute_systems(ab, ["a"])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_link_matches_choi_composition(seed):
    # link over a single wire: sum a[x c''; x' c] b[c'' y; c y']
    a = rand_matrix((2, 3), ("x", "c"), seed)
    b = rand_matrix((3, 2), ("c", "y"), seed + 1)
    ta = a.tensor()
    tb = b.tensor()
    expected = np.einsum("xpXq,pyqY->xyXY", ta, tb).reshape(4, 4)
    out = link(a, b, ["c"])
    assert out.labels == ("x", "y")
    assert np.allclose(out.data, expected)


def test_link_without_common_wires_is_tensor_product():
    a = rand_matrix((2,), ("a",), 5)
    b = rand_matrix((2,), ("b",), 6)
    assert np.allclose(link(a, b, []).data, tensor_product(a, b).data)


def test_link_full_contraction_is_elementwise_pairing():
    a = rand_matrix((2, 2), ("a", "b"), 7)
    b = rand_matrix((2, 2), ("b", "a"), 8)
    full = link(a, b, ["a", "b"])
    b_same = permute_systems(b, ["a", "b"])
    assert full.data.shape == (1, 1)
    assert np.isclose(full.data[0, 0], np.sum(a.data * b_same.data))


def test_link_errors():
    a = rand_matrix((2, 2), ("a", "b"), 9)
    b = rand_matrix((3, 2), ("a", "b"), 10)
    with pytest.raises(ValueError):
        link(a, b, ["a", "b"])
    c = rand_matrix((2, 2), ("a", "b"), 11)
    with pytest.raises(ValueError):
        link(a, c, ["a"])


def test_link_is_associative():
    a = rand_matrix((2, 2), ("x", "c"), 12)
    b = rand_matrix((2, 2), ("c", "e"), 13)
    c = rand_matrix((2, 2), ("e", "y"), 14)
    left = link(link(a, b, ["c"]), c, ["e"])
    right = link(a, link(b, c, ["e"]), ["c"])
    assert np.allclose(left.data, right.data)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_haar_unitary_is_unitary(d, seed):
    u = haar_unitary(d, rng_for(seed))
    assert np.allclose(u.conj().T @ u, np.eye(d), atol=1e-12)


def test_random_density_is_state():
    rho = random_density(4, 3)
    assert is_psd(rho)
    assert np.isclose(rho.trace(), 1)


def test_seeded_sampling_is_reproducible():
    assert np.array_equal(random_density(3, 5).data, random_density(3, 5).data)
    assert derive_seeds(3, 4) == derive_seeds(3, 4)
    assert derive_seeds(3, 4, 1) != derive_seeds(3, 4, 2)


def test_hermitian_and_psd_checks():
    s = WireSystem((2,), ("a",))
    assert is_hermitian(identity(s))
    assert not is_hermitian(ComplexMatrix([[0, 1], [0, 0]], s))
    assert not is_psd(ComplexMatrix(np.diag([1.0, -1e-6]), s))
    assert is_psd(ComplexMatrix(np.diag([1.0, -1e-12]), s))


def test_json_round_trip():
    m = rand_matrix((2, 3), ("a", "b"), 15)
    back = ComplexMatrix.from_json(m.to_json())
    assert back.system == m.system
    assert frobenius_distance(back, m) == 0.0
