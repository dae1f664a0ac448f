"""
Brute-force reference for small chains: the full Hamiltonian, its kernel dimension and
ground energy, and dense imaginary-time evolution.
"""
import logging
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict

from .projectors import BondProjector, ChainSpec, projector_matrix

logger = logging.getLogger(__name__)

DEFAULT_MAX_DIM = 2**14
MATRIX_FREE_MAX_DIM = 2**20
DEFAULT_KERNEL_TOL = 1e-8


class DenseHamiltonian:
    """
    H = sum_k I ⊗ P_k ⊗ I on the d^N product basis, site 1 most significant.

    The dense matrix is only formed when `dimension` is within `max_dim`; `apply` and
    `expectation` work bond by bond on the reshaped vector and never need it.
    """

    def __init__(self, local_dim: int, n_sites: int, bond_matrices: Sequence[np.ndarray], max_dim: int = DEFAULT_MAX_DIM):
        self.local_dim = local_dim
        self.n_sites = n_sites
        self.bond_matrices = [np.asarray(p, dtype=np.complex128) for p in bond_matrices]
        self.max_dim = max_dim
        self._matrix: Optional[np.ndarray] = None
        self._spectrum: Optional[tuple[np.ndarray, np.ndarray]] = None

    @property
    def dimension(self) -> int:
        return self.local_dim**self.n_sites

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            if self.dimension > self.max_dim:
                raise ValueError(f"dense matrix of dimension {self.dimension} exceeds cap {self.max_dim}")
            d, n = self.local_dim, self.n_sites
            total = sp.csr_matrix((self.dimension, self.dimension), dtype=np.complex128)
            for k, p in enumerate(self.bond_matrices):
                left = sp.identity(d**k, dtype=np.complex128, format="csr")
                right = sp.identity(d ** (n - k - 2), dtype=np.complex128, format="csr")
                total = total + sp.kron(sp.kron(left, sp.csr_matrix(p)), right, format="csr")
            self._matrix = total.toarray()
        return self._matrix

    def _bond_view(self, vector: np.ndarray, k: int) -> np.ndarray:
        d = self.local_dim
        return vector.reshape(d**k, d * d, d ** (self.n_sites - k - 2))

    def apply_bond(self, operator: np.ndarray, vector: np.ndarray, k: int) -> np.ndarray:
        """Apply a d²×d² operator on sites (k, k+1), k 0-based."""
        return np.einsum("ab,xby->xay", operator, self._bond_view(vector, k)).reshape(-1)

    def apply(self, vector: np.ndarray) -> np.ndarray:
        vector = np.asarray(vector, dtype=np.complex128)
        if vector.size != self.dimension:
            raise ValueError(f"vector has length {vector.size}, expected {self.dimension}")
        out = np.zeros(self.dimension, dtype=np.complex128)
        for k, p in enumerate(self.bond_matrices):
            out += self.apply_bond(p, vector, k)
        return out

    def expectation(self, vector: np.ndarray) -> float:
        """<v|H|v> / <v|v>."""
        vector = np.asarray(vector, dtype=np.complex128)
        return float(np.vdot(vector, self.apply(vector)).real / np.vdot(vector, vector).real)

    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        """Ascending eigenvalues and eigenvectors (cached)."""
        if self._spectrum is None:
            self._spectrum = scipy.linalg.eigh(self.matrix)
        return self._spectrum


def build_dense_hamiltonian(
    chain: ChainSpec,
    bonds: Sequence[BondProjector],
    max_dim: int = DEFAULT_MAX_DIM,
    matrix_free: bool = False,
) -> DenseHamiltonian:
    """
    Hamiltonian of the instance.

    With matrix_free the cap rises to 2^20 amplitudes, but only apply/expectation
    and trotterized evolution are available.

    Raises:
        ValueError: If d^N exceeds the cap or the bond count does not match the chain
    """
    if len(bonds) != chain.n_bonds:
        raise ValueError(f"expected {chain.n_bonds} bonds, got {len(bonds)}")
    cap = MATRIX_FREE_MAX_DIM if matrix_free else max_dim
    if chain.hilbert_dim > cap:
        raise ValueError(f"Hilbert space dimension {chain.hilbert_dim} exceeds cap {cap}")
    return DenseHamiltonian(chain.local_dim, chain.n_sites, [projector_matrix(b) for b in bonds], max_dim=max_dim)


def kernel_dimension(h: DenseHamiltonian, tol: float = DEFAULT_KERNEL_TOL) -> int:
    """Number of eigenvalues below tol; eigenvalues in [tol, 100·tol] are logged as an ambiguous gap."""
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    eigenvalues, _ = h.spectrum()
    ambiguous = int(np.count_nonzero((eigenvalues >= tol) & (eigenvalues <= 100 * tol)))
    if ambiguous:
        logger.warning("%d eigenvalues lie in the ambiguous band [%.1e, %.1e]", ambiguous, tol, 100 * tol)
    return int(np.count_nonzero(eigenvalues < tol))


def ground_energy(h: DenseHamiltonian) -> float:
    eigenvalues, _ = h.spectrum()
    return float(eigenvalues[0])


class EvolutionResult(BaseModel):
    """Final normalized state and the energy after every step (entry 0 is the initial state)."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    vector: np.ndarray
    energies: list[float]


def dense_imaginary_evolution(
    h: DenseHamiltonian,
    tau: float,
    steps: int,
    trotterized: bool,
    initial: Optional[np.ndarray] = None,
    second_order: bool = False,
) -> EvolutionResult:
    """
    Evolve with exp(-tau·H) per step and normalize.

    Trotterized mode applies the same gate sequence as one TEBD sweep: bonds 1, 3, 5, ...
    then bonds 2, 4, ... (odd half steps around the even step with second_order).
    Exact mode uses the eigendecomposition of H and needs the dense matrix.
    """
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if initial is None:
        vector = np.full(h.dimension, 1 / np.sqrt(h.dimension), dtype=np.complex128)
    else:
        vector = np.asarray(initial, dtype=np.complex128)
        vector = vector / np.linalg.norm(vector)
    energies = [h.expectation(vector)]

    if trotterized:
        n_bonds = len(h.bond_matrices)
        odd = list(range(0, n_bonds, 2))
        even = list(range(1, n_bonds, 2))
        layers = [(odd, tau / 2), (even, tau), (odd, tau / 2)] if second_order else [(odd, tau), (even, tau)]
        eye = np.eye(h.local_dim**2, dtype=np.complex128)
        gates = [
            (layer, [eye + np.expm1(-step) * h.bond_matrices[k] for k in layer]) for layer, step in layers
        ]
        for _ in range(steps):
            for layer, layer_gates in gates:
                for k, gate in zip(layer, layer_gates):
                    vector = h.apply_bond(gate, vector, k)
            vector = vector / np.linalg.norm(vector)
            energies.append(h.expectation(vector))
    else:
        eigenvalues, eigenvectors = h.spectrum()
        decay = np.exp(-tau * eigenvalues)
        for _ in range(steps):
            vector = eigenvectors @ (decay * (eigenvectors.conj().T @ vector))
            vector = vector / np.linalg.norm(vector)
            energies.append(h.expectation(vector))

    return EvolutionResult(vector=vector, energies=energies)
