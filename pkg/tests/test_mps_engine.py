"""
Tests for Vidal-form MPS operations and imaginary-time TEBD.
"""
import numpy as np
import pytest
import scipy.linalg

from frustra.dense_oracle import build_dense_hamiltonian, dense_imaginary_evolution, ground_energy
from frustra.mps_engine import (
    MpsState,
    StopRule,
    TauSchedule,
    apply_gate_and_truncate,
    bond_entropies,
    canonicalize,
    energy,
    energy_terms,
    ground_search,
    mps_from_dense,
    product_state_mps,
    sweep,
    to_dense,
    two_site_imaginary_gate,
    uniform_initial_state,
)
from frustra.projectors import ChainSpec, projector_matrix, sample_chain


def _random_vector(rng, size):
    v = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    return v / np.linalg.norm(v)


def _phase_aligned_distance(a, b):
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    overlap = np.vdot(a, b)
    return np.linalg.norm(a * (overlap / abs(overlap)) - b)


@pytest.fixture
def qubit_chain():
    chain = ChainSpec(n_sites=6, local_dim=2, rank=1, seed=3)
    return chain, sample_chain(chain)


def test_uniform_state_is_uniform():
    chain = ChainSpec(n_sites=4, local_dim=3, rank=2)
    state = uniform_initial_state(chain)
    assert state.bond_dims() == [1, 1, 1]
    assert np.allclose(to_dense(state), np.full(81, 1 / 9))
    assert state.vidal_invariants_ok()


def test_dense_round_trip():
    rng = np.random.default_rng(0)
    vector = _random_vector(rng, 3**5)
    state = mps_from_dense(vector, 3, 5)
    assert state.vidal_invariants_ok()
    assert state.bond_dims() == [3, 9, 9, 3]
    assert np.linalg.norm(to_dense(state) - vector) < 1e-10


def test_dense_round_trip_rejects_wrong_length():
    with pytest.raises(ValueError):
        mps_from_dense(np.ones(10), 2, 3)


def test_canonicalize_normalizes_and_preserves_direction():
    rng = np.random.default_rng(1)
    vector = _random_vector(rng, 2**6)
    state = mps_from_dense(vector, 2, 6)
    state.gammas[2] = state.gammas[2] * 3.0
    before = to_dense(state)

    norm = canonicalize(state)
    assert norm == pytest.approx(np.linalg.norm(before))
    assert state.vidal_invariants_ok()
    assert np.linalg.norm(to_dense(state) - before / norm) < 1e-10


def test_mps_state_requires_matching_bonds():
    with pytest.raises(ValueError):
        MpsState([np.ones((1, 2, 1))] * 3, [np.ones(1)])


def test_gate_at_zero_tau_is_identity(qubit_chain):
    _, bonds = qubit_chain
    assert np.allclose(two_site_imaginary_gate(bonds[0], 0.0), np.eye(4))


def test_gate_at_large_tau_projects_out(qubit_chain):
    _, bonds = qubit_chain
    gate = two_site_imaginary_gate(bonds[0], 60.0)
    assert np.allclose(gate, np.eye(4) - projector_matrix(bonds[0]), atol=1e-12)
    with pytest.raises(ValueError):
        two_site_imaginary_gate(bonds[0], -1.0)


@pytest.mark.parametrize("tau", [0.01, 0.3, 2.0])
@pytest.mark.parametrize("d,r", [(2, 1), (3, 4), (4, 9)])
def test_gate_matches_matrix_exponential(d, r, tau):
    chain = ChainSpec(n_sites=2, local_dim=d, rank=r, seed=13)
    bond = sample_chain(chain)[0]
    expected = scipy.linalg.expm(-tau * projector_matrix(bond))
    assert np.max(np.abs(two_site_imaginary_gate(bond, tau) - expected)) < 1e-12


def test_gate_spectrum_is_one_and_decay(qubit_chain):
    _, bonds = qubit_chain
    eigenvalues = np.linalg.eigvalsh(two_site_imaginary_gate(bonds[0], 0.3))
    assert np.allclose(np.sort(eigenvalues), [np.exp(-0.3), 1.0, 1.0, 1.0], atol=1e-12)


def test_large_tau_gate_on_product_state(qubit_chain):
    _, bonds = qubit_chain
    rng = np.random.default_rng(2)
    a, b = _random_vector(rng, 2), _random_vector(rng, 2)
    state = product_state_mps([a, b])
    apply_gate_and_truncate(state, 1, two_site_imaginary_gate(bonds[0], 60.0))
    expected = (np.eye(4) - projector_matrix(bonds[0])) @ np.kron(a, b)
    assert _phase_aligned_distance(to_dense(state), expected) < 1e-10


def test_truncation_to_one_schmidt_value():
    rng = np.random.default_rng(4)
    state = mps_from_dense(_random_vector(rng, 16), 2, 4)
    gate = np.eye(4, dtype=complex)
    _, error = apply_gate_and_truncate(state, 2, gate, chi_max=1)
    assert state.lambdas[1].shape == (1,)
    assert 0.0 < error < 1.0
    assert state.lambdas[1][0] == pytest.approx(1.0)


def test_gate_rejects_bad_bond_index(qubit_chain):
    chain, bonds = qubit_chain
    state = uniform_initial_state(chain)
    with pytest.raises(ValueError):
        apply_gate_and_truncate(state, 6, two_site_imaginary_gate(bonds[0], 0.1))


def test_energy_matches_dense_expectation(qubit_chain):
    chain, bonds = qubit_chain
    rng = np.random.default_rng(5)
    vector = _random_vector(rng, 2**6)
    h = build_dense_hamiltonian(chain, bonds)
    assert energy(mps_from_dense(vector, 2, 6), bonds) == pytest.approx(h.expectation(vector), abs=1e-10)


def test_energy_of_full_rank_chain_counts_bonds():
    chain = ChainSpec(n_sites=5, local_dim=2, rank=4, seed=0)
    bonds = sample_chain(chain)
    assert energy(uniform_initial_state(chain), bonds) == pytest.approx(4.0, abs=1e-10)


def test_energy_terms_of_embedded_projector_vector(qubit_chain):
    _, bonds = qubit_chain
    # ket of <v^1| on bond 1, the other sites fixed
    ket = bonds[0].vectors[0].conj()
    state = mps_from_dense(np.kron(ket, np.array([1.0, 0.0])), 2, 3)
    terms = energy_terms(state, bonds[:2])
    assert terms[0] == pytest.approx(1.0, abs=1e-10)


def test_bond_entropies_of_product_state_vanish():
    state = product_state_mps([np.array([1.0, 1.0]), np.array([0.0, 1.0]), np.array([1.0, 0.0])])
    assert bond_entropies(state) == [0.0, 0.0]


def test_bond_entropy_of_bell_pair():
    state = mps_from_dense(np.array([1.0, 0.0, 0.0, 1.0]), 2, 2)
    assert bond_entropies(state)[0] == pytest.approx(np.log(2))


def test_sweep_at_zero_tau_leaves_state(qubit_chain):
    chain, bonds = qubit_chain
    rng = np.random.default_rng(6)
    vector = _random_vector(rng, 2**6)
    state = mps_from_dense(vector, 2, 6)
    state, row = sweep(state, bonds, 0.0)
    assert np.linalg.norm(to_dense(state) - vector) < 1e-10
    assert row.trunc_err < 1e-20


@pytest.mark.parametrize("rank", [1, 2])
def test_mps_matches_dense_trotter_evolution(rank):
    chain = ChainSpec(n_sites=6, local_dim=2, rank=rank, seed=10 + rank)
    bonds = sample_chain(chain)
    state = uniform_initial_state(chain)
    for index in range(1, 51):
        state, _ = sweep(state, bonds, 0.1, chi_max=None, sweep_index=index)
    reference = dense_imaginary_evolution(build_dense_hamiltonian(chain, bonds), 0.1, 50, trotterized=True)
    assert _phase_aligned_distance(to_dense(state), reference.vector) < 1e-8


def test_second_order_sweep_matches_dense():
    chain = ChainSpec(n_sites=5, local_dim=2, rank=2, seed=21)
    bonds = sample_chain(chain)
    state = uniform_initial_state(chain)
    for _ in range(20):
        state, _ = sweep(state, bonds, 0.2, second_order=True)
    reference = dense_imaginary_evolution(
        build_dense_hamiltonian(chain, bonds), 0.2, 20, trotterized=True, second_order=True
    )
    assert _phase_aligned_distance(to_dense(state), reference.vector) < 1e-8


def test_energy_is_nonincreasing_without_truncation(qubit_chain):
    chain, bonds = qubit_chain
    state = uniform_initial_state(chain)
    energies = [energy(state, bonds)]
    for index in range(1, 41):
        state, row = sweep(state, bonds, 0.05, sweep_index=index)
        energies.append(row.energy)
    assert all(b <= a + 1e-10 for a, b in zip(energies, energies[1:]))
    assert min(energies) >= -1e-9


def test_ground_search_finds_zero_energy_state():
    chain = ChainSpec(n_sites=8, local_dim=2, rank=1, seed=2)
    bonds = sample_chain(chain)
    state, trace = ground_search(chain, bonds, schedule=TauSchedule(taus=(0.5,)), chi_max=16)
    assert trace.final_energy < 1e-8
    assert trace.rows[0].sweep == 0
    assert all(row.energy >= -1e-9 for row in trace.rows)
    assert state.vidal_invariants_ok()


def test_ground_search_is_variational_on_frustrated_chain():
    chain = ChainSpec(n_sites=4, local_dim=2, rank=2, seed=7)
    bonds = sample_chain(chain)
    _, trace = ground_search(chain, bonds, schedule=TauSchedule(taus=(0.2, 0.05)), chi_max=4, stop=StopRule(max_sweeps=400))
    reference = ground_energy(build_dense_hamiltonian(chain, bonds))
    assert reference > 1e-6
    assert trace.final_energy >= reference - 1e-9
    assert trace.final_energy < trace.rows[0].energy


def test_ground_search_is_deterministic():
    chain = ChainSpec(n_sites=6, local_dim=3, rank=4, seed=5)
    bonds = sample_chain(chain)
    stop = StopRule(max_sweeps=30)
    _, first = ground_search(chain, bonds, chi_max=4, stop=stop)
    _, second = ground_search(chain, bonds, chi_max=4, stop=stop)
    assert first.model_dump() == second.model_dump()


def test_ground_search_reports_sweep_limit():
    chain = ChainSpec(n_sites=5, local_dim=3, rank=6, seed=1)
    _, trace = ground_search(chain, sample_chain(chain), chi_max=4, stop=StopRule(max_sweeps=3))
    assert not trace.converged
    assert trace.reason == "max_sweeps"
    assert len(trace.rows) == 4


def test_schedule_validation():
    with pytest.raises(ValueError):
        TauSchedule(taus=())
    with pytest.raises(ValueError):
        TauSchedule(taus=(0.1, -0.1))


def _final_energy(rank, chi, seed=7):
    chain = ChainSpec(n_sites=20, local_dim=4, rank=rank, seed=seed)
    _, trace = ground_search(chain, sample_chain(chain), chi_max=chi)
    return trace.final_energy


@pytest.mark.slow
def test_rank_two_chain_reaches_zero_energy_at_small_bond_dimension():
    assert _final_energy(2, 8) < 1e-6


@pytest.mark.slow
def test_frustrated_chain_plateaus():
    e16, e32 = _final_energy(6, 16), _final_energy(6, 32)
    assert e16 > 1e-2 and e32 > 1e-2
    assert abs(e16 - e32) / e32 < 0.01


@pytest.mark.slow
def test_final_energy_grows_with_rank():
    assert _final_energy(2, 8) < _final_energy(4, 8) < _final_energy(6, 8)
