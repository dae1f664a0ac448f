"""
Tests for bond projector generation and reduction.
"""
import numpy as np
import pytest

from frustra.projectors import (
    BondProjector,
    ChainSpec,
    LocalTermSpectrum,
    _orthonormalize_rows,
    projector_matrix,
    reduce_to_projector,
    sample_bond_projector,
    sample_chain,
    spectrum_from_hamiltonian,
    structured_bond_vectors,
    structured_chain,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def test_chain_spec_rejects_rank_above_two_site_dimension():
    with pytest.raises(ValueError):
        ChainSpec(n_sites=4, local_dim=2, rank=5)


def test_chain_spec_needs_a_bond():
    with pytest.raises(ValueError):
        ChainSpec(n_sites=1, local_dim=2, rank=1)


def test_chain_spec_counts():
    chain = ChainSpec(n_sites=5, local_dim=3, rank=2, seed=9)
    assert chain.n_bonds == 4
    assert chain.hilbert_dim == 243


@pytest.mark.parametrize("d,r", [(2, 1), (2, 3), (3, 4), (4, 8), (4, 16), (6, 30)])
def test_sampled_rows_are_orthonormal(rng, d, r):
    bond = sample_bond_projector(d, r, rng)
    gram = bond.vectors @ bond.vectors.conj().T
    assert np.max(np.abs(gram - np.eye(r))) < 1e-12

    p = projector_matrix(bond)
    assert np.max(np.abs(p @ p - p)) < 1e-10
    assert np.max(np.abs(p - p.conj().T)) < 1e-10
    assert abs(np.trace(p).real - r) < 1e-10


def test_full_rank_projector_is_identity(rng):
    bond = sample_bond_projector(2, 4, rng)
    assert np.allclose(projector_matrix(bond), np.eye(4), atol=1e-10)


def test_different_seeds_give_different_vectors():
    a = sample_bond_projector(2, 1, np.random.default_rng(1))
    b = sample_bond_projector(2, 1, np.random.default_rng(2))
    assert abs(np.vdot(a.vectors[0], b.vectors[0])) < 1 - 1e-6


@pytest.mark.parametrize("d,r", [(0, 1), (2, 0), (2, 5)])
def test_sample_rejects_rank_out_of_range(rng, d, r):
    with pytest.raises(ValueError):
        sample_bond_projector(d, r, rng)


def test_real_field_draws_real_vectors(rng):
    bond = sample_bond_projector(3, 2, rng, field="real")
    assert np.all(bond.vectors.imag == 0)


def test_sample_chain_is_reproducible_and_bonds_are_independent():
    chain = ChainSpec(n_sites=4, local_dim=3, rank=2, seed=42)
    first = sample_chain(chain)
    second = sample_chain(chain)
    assert [b.bond_index for b in first] == [1, 2, 3]
    for a, b in zip(first, second):
        assert np.array_equal(a.vectors, b.vectors)
    assert not np.allclose(first[0].vectors, first[1].vectors)


def test_bond_projector_rejects_non_orthonormal_rows():
    with pytest.raises(ValueError):
        BondProjector(vectors=np.array([[1.0, 1.0, 0.0, 0.0]]))


def test_bond_projector_orthonormality_tolerance():
    row = np.array([1.0, 0.0, 0.0, 0.0])
    BondProjector(vectors=[row * (1 + 1e-14)])
    with pytest.raises(ValueError):
        BondProjector(vectors=[row * (1 + 1e-11)])


def test_bond_projector_rejects_non_square_width():
    with pytest.raises(ValueError):
        BondProjector(vectors=np.eye(3)[:1])


def test_structured_single_slot():
    bond = structured_bond_vectors(2, 1)
    expected = np.zeros(4)
    expected[1] = 1.0  # |i_k = lower, i_{k+1} = upper>
    assert np.array_equal(bond.vectors[0], expected)


def test_structured_slots_are_lexicographic():
    bond = structured_bond_vectors(4, 4)
    assert [int(np.argmax(np.abs(v))) for v in bond.vectors] == [2, 3, 6, 7]


def test_structured_odd_dimension_uses_floor_split():
    bond = structured_bond_vectors(3, 2)
    assert [int(np.argmax(np.abs(v))) for v in bond.vectors] == [1, 2]
    with pytest.raises(ValueError):
        structured_bond_vectors(3, 3)


def test_structured_construction_is_deterministic():
    assert np.array_equal(structured_bond_vectors(6, 9).vectors, structured_bond_vectors(6, 9).vectors)
    chain = ChainSpec(n_sites=3, local_dim=4, rank=3)
    assert [b.bond_index for b in structured_chain(chain)] == [1, 2]


def test_reduce_single_excited_level(rng):
    w = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    w /= np.linalg.norm(w)
    term = np.outer(w, w.conj())
    spectrum = spectrum_from_hamiltonian(term)
    assert len(spectrum.energies) == 2

    bond = reduce_to_projector(spectrum)
    assert bond.rank == 1
    assert np.allclose(projector_matrix(bond), term, atol=1e-9)


def test_reduce_ferromagnetic_exchange_gives_singlet_projector():
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    y = np.array([[0, -1j], [1j, 0]])
    z = np.diag([1.0, -1.0]).astype(complex)
    term = -(np.kron(x, x) + np.kron(y, y) + np.kron(z, z))
    singlet = np.array([0, 1, -1, 0]) / np.sqrt(2)

    bond = reduce_to_projector(spectrum_from_hamiltonian(term))
    assert bond.rank == 1
    assert np.allclose(projector_matrix(bond), np.outer(singlet, singlet), atol=1e-9)


def test_reduced_projector_annihilates_ground_space(rng):
    a = rng.standard_normal((9, 9)) + 1j * rng.standard_normal((9, 9))
    u, _ = np.linalg.qr(a)
    levels = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 2.5, 2.5, 2.5, 4.0])
    term = u @ np.diag(levels) @ u.conj().T
    spectrum = spectrum_from_hamiltonian(term)
    bond = reduce_to_projector(spectrum)
    assert bond.rank == 6

    p = projector_matrix(bond)
    ground = u[:, :3]
    assert np.max(np.abs(p @ ground)) < 1e-10
    assert np.allclose(p, sum(spectrum.projectors[1:]), atol=1e-9)


def test_reduce_rejects_identity_term():
    with pytest.raises(ValueError):
        reduce_to_projector(spectrum_from_hamiltonian(np.eye(4) * 3.0))


def test_spectrum_requires_ascending_levels():
    p = np.diag([1.0, 0.0])
    with pytest.raises(ValueError):
        LocalTermSpectrum(energies=(1.0, 0.0), projectors=(p, np.eye(2) - p))


def test_projector_matrix_of_basis_vector():
    p = projector_matrix(structured_bond_vectors(2, 1))
    expected = np.zeros((4, 4))
    expected[1, 1] = 1.0
    assert np.array_equal(p.real, expected)


def test_projector_matrix_eigenvalues(rng):
    p = projector_matrix(sample_bond_projector(3, 4, rng))
    eigenvalues = np.linalg.eigvalsh(p)
    assert np.allclose(eigenvalues, [0.0] * 5 + [1.0] * 4, atol=1e-10)


def test_orthonormalize_rows_spans_the_same_rows(rng):
    a = rng.standard_normal((3, 9)) + 1j * rng.standard_normal((3, 9))
    q = _orthonormalize_rows(a)
    assert np.max(np.abs(q @ q.conj().T - np.eye(3))) < 1e-13
    # each row of a is recovered from its components in the span of q
    assert np.allclose((a @ q.conj().T) @ q, a, atol=1e-12)
    with pytest.raises(ValueError):
        _orthonormalize_rows(np.vstack([a[0], 2 * a[0]]))
