"""
Local projector interaction terms: instance descriptor, random and structured bond projectors,
and the reduction of a general two-site term to the projector onto its excited space.
"""
import logging
import math
from typing import Literal

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

ORTHONORMALITY_TOL = 1e-12
PROJECTOR_TOL = 1e-10
DEFAULT_DEGENERACY_TOL = 1e-9


class ChainSpec(BaseModel):
    """
    Problem instance: N sites of local dimension d, one random rank-r projector per bond.

    Bond k draws its vectors from a substream derived from (seed, k), so instances are
    reproducible and bonds are independent of each other.
    """
    model_config = ConfigDict(frozen=True)

    n_sites: int = Field(ge=2)
    local_dim: int = Field(ge=2)
    rank: int = Field(ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    field: Literal["complex", "real"] = "complex"

    @model_validator(mode="after")
    def _rank_fits_two_site_space(self) -> "ChainSpec":
        if self.rank > self.local_dim**2:
            raise ValueError(f"rank {self.rank} exceeds two-site dimension {self.local_dim**2}")
        return self

    @property
    def n_bonds(self) -> int:
        return self.n_sites - 1

    @property
    def hilbert_dim(self) -> int:
        return self.local_dim**self.n_sites

    def bond_rng(self, bond_index: int) -> np.random.Generator:
        """Random stream for bond `bond_index` (1-based)."""
        return np.random.default_rng(np.random.SeedSequence([self.seed, bond_index]))


class BondProjector(BaseModel):
    """
    r orthonormal vectors on the d²-dimensional space of sites (k, k+1).

    Row p of `vectors` holds the bra <v^p| in the product basis |i_k i_{k+1}> (row-major,
    i_k major), so the projector is V†V and a two-site vector x is annihilated iff V x = 0.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    bond_index: int = Field(default=1, ge=1)
    vectors: np.ndarray

    @field_validator("vectors", mode="before")
    @classmethod
    def _orthonormal_rows(cls, value) -> np.ndarray:
        vectors = np.array(value, dtype=np.complex128)
        if vectors.ndim != 2:
            raise ValueError(f"vectors must be a matrix, got shape {vectors.shape}")
        rank, two_site_dim = vectors.shape
        local_dim = math.isqrt(two_site_dim)
        if local_dim < 2 or local_dim * local_dim != two_site_dim:
            raise ValueError(f"row length {two_site_dim} is not d² for an integer d >= 2")
        if not 1 <= rank <= two_site_dim:
            raise ValueError(f"rank {rank} outside 1..{two_site_dim}")
        gram = vectors @ vectors.conj().T
        deviation = np.max(np.abs(gram - np.eye(rank)))
        if deviation > ORTHONORMALITY_TOL:
            raise ValueError(f"rows are not orthonormal (max deviation {deviation:.3e})")
        vectors.setflags(write=False)
        return vectors

    @property
    def rank(self) -> int:
        return self.vectors.shape[0]

    @property
    def local_dim(self) -> int:
        return math.isqrt(self.vectors.shape[1])

    def as_tensor(self) -> np.ndarray:
        """Vectors reshaped to (r, d, d) with axes (p, i_k, i_{k+1})."""
        d = self.local_dim
        return self.vectors.reshape(self.rank, d, d)


class LocalTermSpectrum(BaseModel):
    """Spectral decomposition of one two-site term: ascending levels and their eigenprojectors."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    energies: tuple[float, ...]
    projectors: tuple[np.ndarray, ...]

    @model_validator(mode="after")
    def _resolution_of_identity(self) -> "LocalTermSpectrum":
        if not self.energies or len(self.energies) != len(self.projectors):
            raise ValueError("energies and projectors must be non-empty and of equal length")
        if any(b <= a for a, b in zip(self.energies, self.energies[1:])):
            raise ValueError("energies must be strictly ascending")
        dim = self.projectors[0].shape[0]
        total = np.zeros((dim, dim), dtype=np.complex128)
        for p, proj in enumerate(self.projectors):
            if proj.shape != (dim, dim):
                raise ValueError(f"projector {p} has shape {proj.shape}, expected {(dim, dim)}")
            if np.max(np.abs(proj - proj.conj().T)) > PROJECTOR_TOL:
                raise ValueError(f"projector {p} is not Hermitian")
            if np.max(np.abs(proj @ proj - proj)) > PROJECTOR_TOL:
                raise ValueError(f"projector {p} is not idempotent")
            for q in range(p):
                if np.max(np.abs(proj @ self.projectors[q])) > PROJECTOR_TOL:
                    raise ValueError(f"projectors {q} and {p} are not orthogonal")
            total += proj
        if np.max(np.abs(total - np.eye(dim))) > PROJECTOR_TOL:
            raise ValueError("projectors do not sum to the identity")
        return self


def _orthonormalize_rows(matrix: np.ndarray) -> np.ndarray:
    """
    Gram-Schmidt over the rows with a second re-orthogonalization pass.

    Raises:
        ValueError: If the rows are numerically linearly dependent
    """
    basis = np.zeros(matrix.shape, dtype=np.complex128)
    for p, row in enumerate(np.asarray(matrix, dtype=np.complex128)):
        v = row.copy()
        for _ in range(2):
            v -= basis[:p].T @ (basis[:p].conj() @ v)
        norm = np.linalg.norm(v)
        if norm < 1e-12 * max(1.0, np.linalg.norm(row)):
            raise ValueError(f"row {p} is linearly dependent on the previous rows")
        basis[p] = v / norm
    return basis


def sample_bond_projector(
    d: int,
    r: int,
    rng: np.random.Generator,
    field: Literal["complex", "real"] = "complex",
    bond_index: int = 1,
) -> BondProjector:
    """
    Draw a Haar-random rank-r projector on the two-site space.

    Args:
        d: Local dimension
        r: Projector rank, 1 <= r <= d²
        rng: Random stream (one substream per bond)
        field: "complex" for standard complex Gaussian entries, "real" for real ones
        bond_index: Bond position k recorded on the result

    Returns:
        BondProjector with orthonormal rows

    Raises:
        ValueError: If r is outside 1..d²
    """
    if not 1 <= r <= d * d:
        raise ValueError(f"rank must be in 1..{d * d}, got {r}")
    shape = (r, d * d)
    gaussian = rng.standard_normal(shape)
    if field == "complex":
        gaussian = gaussian + 1j * rng.standard_normal(shape)
    elif field != "real":
        raise ValueError(f"Unsupported field: {field}")
    return BondProjector(bond_index=bond_index, vectors=_orthonormalize_rows(gaussian))


def structured_bond_vectors(d: int, r: int, bond_index: int = 1) -> BondProjector:
    """
    Deterministic vectors supported on |i_k i_{k+1}> with i_k in the lower half and
    i_{k+1} in the upper half of the local basis.

    The lower half holds the first floor(d/2) states. The first r allowed slots are used
    in lexicographic order, each as a standard basis vector.

    Raises:
        ValueError: If r is outside 1..floor(d/2)·(d - floor(d/2))
    """
    half = d // 2
    slots = [i * d + j for i in range(half) for j in range(half, d)]
    if not 1 <= r <= len(slots):
        raise ValueError(f"rank must be in 1..{len(slots)} for the structured construction with d={d}, got {r}")
    vectors = np.zeros((r, d * d), dtype=np.complex128)
    vectors[np.arange(r), slots[:r]] = 1.0
    return BondProjector(bond_index=bond_index, vectors=vectors)


def sample_chain(chain: ChainSpec) -> list[BondProjector]:
    """Random projectors for every bond of the instance, bond k from substream (seed, k)."""
    return [
        sample_bond_projector(chain.local_dim, chain.rank, chain.bond_rng(k), field=chain.field, bond_index=k)
        for k in range(1, chain.n_sites)
    ]


def structured_chain(chain: ChainSpec) -> list[BondProjector]:
    """The structured construction placed on every bond of the instance."""
    return [structured_bond_vectors(chain.local_dim, chain.rank, bond_index=k) for k in range(1, chain.n_sites)]


def spectrum_from_hamiltonian(term: np.ndarray, degeneracy_tol: float = DEFAULT_DEGENERACY_TOL) -> LocalTermSpectrum:
    """
    Diagonalize a Hermitian two-site term and group its eigenvalues into levels.

    Eigenvalues within degeneracy_tol·max(1, |E|) of the first eigenvalue of a level join that level.
    """
    term = np.asarray(term, dtype=np.complex128)
    if np.max(np.abs(term - term.conj().T)) > PROJECTOR_TOL:
        raise ValueError("term is not Hermitian")
    eigenvalues, eigenvectors = scipy.linalg.eigh(term)

    groups: list[list[int]] = []
    for idx, value in enumerate(eigenvalues):
        if groups:
            start = eigenvalues[groups[-1][0]]
            if abs(value - start) <= degeneracy_tol * max(1.0, abs(start)):
                groups[-1].append(idx)
                continue
        groups.append([idx])

    energies = tuple(float(np.mean(eigenvalues[g])) for g in groups)
    projectors = tuple(eigenvectors[:, g] @ eigenvectors[:, g].conj().T for g in groups)
    return LocalTermSpectrum(energies=energies, projectors=projectors)


def reduce_to_projector(
    spectrum: LocalTermSpectrum,
    degeneracy_tol: float = DEFAULT_DEGENERACY_TOL,
    bond_index: int = 1,
) -> BondProjector:
    """
    Projector onto every level strictly above the ground level.

    Levels with |E_p - E_0| <= degeneracy_tol·max(1, |E_0|) are merged into the ground level.

    Raises:
        ValueError: If degeneracy_tol is not positive, or no excited level remains
            (the term is a multiple of the identity and imposes no constraint)
    """
    if degeneracy_tol <= 0:
        raise ValueError("degeneracy_tol must be positive")
    ground = spectrum.energies[0]
    excited = [
        proj
        for energy, proj in zip(spectrum.energies, spectrum.projectors)
        if abs(energy - ground) > degeneracy_tol * max(1.0, abs(ground))
    ]
    if not excited:
        raise ValueError("excited projector has rank 0: the term is a multiple of the identity")

    excited_projector = sum(excited)
    weights, basis = scipy.linalg.eigh(excited_projector)
    vectors = basis[:, weights > 0.5].conj().T
    logger.debug("Reduced term with %d levels to rank-%d projector", len(spectrum.energies), vectors.shape[0])
    return BondProjector(bond_index=bond_index, vectors=vectors)


def projector_matrix(bp: BondProjector) -> np.ndarray:
    """Dense d² x d² projector V†V."""
    return bp.vectors.conj().T @ bp.vectors
