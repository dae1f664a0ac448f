"""
Vidal-form matrix product states and imaginary-time TEBD for projector chains.

A state is psi = Gamma^{[1]} lambda^{[1]} Gamma^{[2]} ... lambda^{[N-1]} Gamma^{[N]} with site
tensors of shape (chi_{k-1}, d, chi_k) and Schmidt weight vectors on the N-1 bonds.
"""
import logging
import math
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from pydantic import BaseModel, Field, field_validator

from .projectors import BondProjector, ChainSpec, projector_matrix

logger = logging.getLogger(__name__)

SCHMIDT_CUTOFF = 1e-12
INVERSE_GUARD = 1e-12


class TraceRow(BaseModel):
    sweep: int
    tau: float
    energy: float
    trunc_err: float
    s_min: float
    s_max: float


class ConvergenceTrace(BaseModel):
    rows: list[TraceRow] = []
    converged: bool = False
    reason: str = ""

    @property
    def final_energy(self) -> float:
        return self.rows[-1].energy


class TauSchedule(BaseModel):
    """Staged imaginary time steps; the next stage starts when the relative energy gain per sweep drops below advance_tol."""
    taus: tuple[float, ...] = (0.5, 0.1, 0.02)
    advance_tol: float = Field(default=1e-3, gt=0)

    @field_validator("taus")
    @classmethod
    def _positive_steps(cls, taus: tuple[float, ...]) -> tuple[float, ...]:
        if not taus or any(t <= 0 for t in taus):
            raise ValueError("tau schedule needs at least one positive step")
        return taus


class StopRule(BaseModel):
    """
    Stop after `patience` consecutive sweeps in the last stage with relative energy change
    below rel_tol, once the energy drops below abs_tol, or after max_sweeps.
    """
    rel_tol: float = Field(default=1e-9, gt=0)
    patience: int = Field(default=10, ge=1)
    max_sweeps: int = Field(default=5000, ge=1)
    abs_tol: float = Field(default=1e-12, ge=0)


class MpsState:
    """Vidal-form MPS. Mutated in place by gate applications and sweeps."""

    def __init__(self, gammas: Sequence[np.ndarray], lambdas: Sequence[np.ndarray], chi_max: Optional[int] = None):
        if len(lambdas) != len(gammas) - 1:
            raise ValueError(f"{len(gammas)} site tensors need {len(gammas) - 1} bond weight vectors, got {len(lambdas)}")
        self.gammas = [np.asarray(g, dtype=np.complex128) for g in gammas]
        self.lambdas = [np.asarray(l, dtype=np.float64) for l in lambdas]
        self.chi_max = chi_max

    @property
    def n_sites(self) -> int:
        return len(self.gammas)

    @property
    def local_dim(self) -> int:
        return self.gammas[0].shape[1]

    def bond_dims(self) -> list[int]:
        return [l.size for l in self.lambdas]

    def copy(self) -> "MpsState":
        return MpsState([g.copy() for g in self.gammas], [l.copy() for l in self.lambdas], self.chi_max)

    def vidal_invariants_ok(self, tol: float = 1e-10) -> bool:
        """Weights sorted descending, nonnegative, unit squared sum; bond dimensions within chi_max."""
        for lam in self.lambdas:
            if np.any(lam < 0) or np.any(np.diff(lam) > tol) or abs(np.sum(lam**2) - 1.0) > tol:
                return False
            if self.chi_max is not None and lam.size > self.chi_max:
                return False
        return True


def _guarded_inverse(weights: np.ndarray) -> np.ndarray:
    inverse = np.zeros_like(weights)
    mask = weights > INVERSE_GUARD
    inverse[mask] = 1.0 / weights[mask]
    return inverse


def _site_matrices(state: MpsState) -> list[np.ndarray]:
    """Tensors M_k = Gamma_k lambda_k (last site unchanged), so psi = M_1 M_2 ... M_N."""
    return [g * state.lambdas[k][None, None, :] for k, g in enumerate(state.gammas[:-1])] + [state.gammas[-1]]


def product_state_mps(vectors: Sequence[np.ndarray], chi_max: Optional[int] = None) -> MpsState:
    """Bond-dimension-one MPS of a product of normalized site vectors."""
    gammas = [(np.asarray(v, dtype=np.complex128) / np.linalg.norm(v)).reshape(1, -1, 1) for v in vectors]
    return MpsState(gammas, [np.ones(1) for _ in range(len(vectors) - 1)], chi_max)


def uniform_initial_state(chain: ChainSpec, chi_max: Optional[int] = None) -> MpsState:
    """Uniform superposition of all basis states: every site vector is (1/sqrt(d), ..., 1/sqrt(d))."""
    d = chain.local_dim
    return product_state_mps([np.full(d, 1 / math.sqrt(d)) for _ in range(chain.n_sites)], chi_max)


def mps_from_dense(vector: np.ndarray, d: int, n_sites: int, chi_max: Optional[int] = None) -> MpsState:
    """Exact Vidal decomposition of a dense state by successive SVDs (normalizes the input)."""
    vector = np.asarray(vector, dtype=np.complex128)
    if vector.size != d**n_sites:
        raise ValueError(f"vector of length {vector.size} is not a state of {n_sites} sites with d={d}")
    rest = (vector / np.linalg.norm(vector)).reshape(1, -1)
    left_lambda = np.ones(1)
    gammas, lambdas = [], []
    for _ in range(n_sites - 1):
        chi_l = rest.shape[0]
        u, s, vh = scipy.linalg.svd(rest.reshape(chi_l * d, -1), full_matrices=False)
        keep = max(1, int(np.count_nonzero(s > SCHMIDT_CUTOFF * s[0])))
        if chi_max is not None:
            keep = min(keep, chi_max)
        u, s, vh = u[:, :keep], s[:keep] / np.linalg.norm(s[:keep]), vh[:keep]
        gammas.append(u.reshape(chi_l, d, keep) * _guarded_inverse(left_lambda)[:, None, None])
        lambdas.append(s)
        rest = s[:, None] * vh
        left_lambda = s
    gammas.append(rest.reshape(rest.shape[0], d, 1) * _guarded_inverse(left_lambda)[:, None, None])
    return MpsState(gammas, lambdas, chi_max)


def to_dense(state: MpsState) -> np.ndarray:
    """Full state vector of length d^N (small chains only)."""
    matrices = _site_matrices(state)
    psi = matrices[0].reshape(-1, matrices[0].shape[2])
    for m in matrices[1:]:
        psi = (psi @ m.reshape(m.shape[0], -1)).reshape(-1, m.shape[2])
    return psi.reshape(-1)


def canonicalize(state: MpsState) -> float:
    """
    Restore exact Vidal canonical form in place and normalize the state.

    A left QR sweep moves the norm onto the last site, a right SVD sweep extracts the
    Schmidt weights. Weights below the cutoff are dropped.

    Returns:
        Norm of the state before normalization

    Raises:
        ValueError: If the state has zero norm
    """
    ms = _site_matrices(state)
    n = len(ms)
    for k in range(n - 1):
        chi_l, d, chi_r = ms[k].shape
        q, r = scipy.linalg.qr(ms[k].reshape(chi_l * d, chi_r), mode="economic")
        ms[k] = q.reshape(chi_l, d, q.shape[1])
        ms[k + 1] = np.tensordot(r, ms[k + 1], axes=(1, 0))
    norm = float(np.linalg.norm(ms[-1]))
    if norm == 0.0:
        raise ValueError("state has zero norm")
    ms[-1] = ms[-1] / norm

    gammas: list[np.ndarray] = [None] * n
    lambdas: list[np.ndarray] = [None] * (n - 1)
    right_lambda = np.ones(1)
    for k in range(n - 1, 0, -1):
        chi_l, d, chi_r = ms[k].shape
        u, s, vh = scipy.linalg.svd(ms[k].reshape(chi_l, d * chi_r), full_matrices=False)
        keep = max(1, int(np.count_nonzero(s > SCHMIDT_CUTOFF * s[0])))
        u, s, vh = u[:, :keep], s[:keep] / np.linalg.norm(s[:keep]), vh[:keep]
        gammas[k] = vh.reshape(keep, d, chi_r) * _guarded_inverse(right_lambda)[None, None, :]
        lambdas[k - 1] = s
        ms[k - 1] = np.tensordot(ms[k - 1], u * s[None, :], axes=(2, 0))
        right_lambda = s
    gammas[0] = ms[0] * _guarded_inverse(right_lambda)[None, None, :]

    state.gammas = gammas
    state.lambdas = lambdas
    return norm


def two_site_imaginary_gate(bond: BondProjector, tau: float) -> np.ndarray:
    """exp(-tau·P) = I + (e^{-tau} - 1)·P from idempotence of P."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    p = projector_matrix(bond)
    return np.eye(p.shape[0], dtype=np.complex128) + np.expm1(-tau) * p


def apply_gate_and_truncate(
    state: MpsState,
    bond_index: int,
    gate: np.ndarray,
    chi_max: Optional[int] = None,
) -> tuple[MpsState, float]:
    """
    Apply a two-site gate on bond `bond_index` (sites k, k+1, 1-based) and re-split by SVD.

    At most chi_max Schmidt values are kept and renormalized; the neighbouring weights are
    divided back out with a guard that maps weights below 1e-12 to zero.

    Returns:
        The updated state (same object) and the discarded squared Schmidt weight,
        relative to the total weight of the gated two-site tensor

    Raises:
        ValueError: If bond_index is out of range or the gate annihilates the two-site tensor
    """
    n = state.n_sites
    if not 1 <= bond_index <= n - 1:
        raise ValueError(f"bond_index must be in 1..{n - 1}, got {bond_index}")
    b = bond_index - 1
    lam_left = state.lambdas[b - 1] if b > 0 else np.ones(1)
    lam_right = state.lambdas[b + 1] if b + 1 < n - 1 else np.ones(1)
    d = state.local_dim

    theta = np.einsum(
        "a,aib,b,bjc,c->aijc",
        lam_left,
        state.gammas[b],
        state.lambdas[b],
        state.gammas[b + 1],
        lam_right,
    )
    theta = np.einsum("klij,aijc->aklc", gate.reshape(d, d, d, d), theta)
    chi_l, chi_r = theta.shape[0], theta.shape[3]

    u, s, vh = scipy.linalg.svd(theta.reshape(chi_l * d, d * chi_r), full_matrices=False)
    total = float(np.sum(s**2))
    if total == 0.0:
        raise ValueError(f"gate on bond {bond_index} annihilated the two-site tensor")
    keep = max(1, int(np.count_nonzero(s > SCHMIDT_CUTOFF * s[0])))
    if chi_max is not None:
        keep = min(keep, chi_max)
    truncation_error = float(np.sum(s[keep:] ** 2)) / total

    kept = s[:keep]
    state.lambdas[b] = kept / np.linalg.norm(kept)
    state.gammas[b] = u[:, :keep].reshape(chi_l, d, keep) * _guarded_inverse(lam_left)[:, None, None]
    state.gammas[b + 1] = vh[:keep].reshape(keep, d, chi_r) * _guarded_inverse(lam_right)[None, None, :]
    return state, truncation_error


def energy_terms(state: MpsState, bonds: Sequence[BondProjector]) -> np.ndarray:
    """
    <psi|P_k|psi> / <psi|psi> for every bond, from left and right environments.

    Does not assume canonical form; cost is polynomial in chi and d.
    """
    ms = _site_matrices(state)
    n = len(ms)
    if len(bonds) != n - 1:
        raise ValueError(f"expected {n - 1} bonds, got {len(bonds)}")

    left = [np.ones((1, 1), dtype=np.complex128)]
    for m in ms[:-1]:
        left.append(np.einsum("ab,aic,bid->cd", left[-1], m.conj(), m))
    right = [np.ones((1, 1), dtype=np.complex128)]
    for m in reversed(ms[2:]):
        right.append(np.einsum("aic,bid,cd->ab", m.conj(), m, right[-1]))
    right.reverse()  # right[k] contracts sites k+2 .. N-1 (0-based)

    norm = np.einsum("ab,aic,bid,cd->", left[-1], ms[-1].conj(), ms[-1], np.ones((1, 1))).real
    terms = np.zeros(n - 1, dtype=np.complex128)
    for k, bond in enumerate(bonds):
        two_site = np.einsum("aib,bjc->aijc", ms[k], ms[k + 1])
        overlaps = np.einsum("pij,aijc->pac", bond.as_tensor(), two_site)
        terms[k] = np.einsum("ab,pac,pbd,cd->", left[k], overlaps.conj(), overlaps, right[k])
    terms = terms / norm

    residue = float(np.max(np.abs(terms.imag))) if terms.size else 0.0
    if residue > 1e-10:
        logger.debug("energy terms carry an imaginary residue of %.3e", residue)
    return terms.real


def energy(state: MpsState, bonds: Sequence[BondProjector]) -> float:
    """Sum of bond projector expectations, clipped at zero."""
    return max(float(np.sum(energy_terms(state, bonds))), 0.0)


def bond_entropies(state: MpsState) -> list[float]:
    """S_k = -sum lambda² ln lambda² on every bond."""
    entropies = []
    for lam in state.lambdas:
        p = lam**2
        p = p[p > 0]
        entropies.append(float(-np.sum(p * np.log(p))))
    return entropies


def sweep(
    state: MpsState,
    bonds: Sequence[BondProjector],
    tau: float,
    chi_max: Optional[int] = None,
    second_order: bool = False,
    sweep_index: int = 0,
) -> tuple[MpsState, TraceRow]:
    """
    One Trotter step: gates on bonds 1, 3, 5, ... then on bonds 2, 4, ...; the state is then
    normalized and brought back to canonical form.

    With second_order the odd bonds get two half steps around the even full step.
    """
    odd = list(range(1, len(bonds) + 1, 2))
    even = list(range(2, len(bonds) + 1, 2))
    if second_order:
        schedule = [(odd, tau / 2), (even, tau), (odd, tau / 2)]
    else:
        schedule = [(odd, tau), (even, tau)]

    max_error = 0.0
    for layer, step in schedule:
        for k in layer:
            gate = two_site_imaginary_gate(bonds[k - 1], step)
            _, error = apply_gate_and_truncate(state, k, gate, chi_max)
            max_error = max(max_error, error)
    canonicalize(state)

    entropies = bond_entropies(state)
    row = TraceRow(
        sweep=sweep_index,
        tau=tau,
        energy=energy(state, bonds),
        trunc_err=max_error,
        s_min=min(entropies, default=0.0),
        s_max=max(entropies, default=0.0),
    )
    return state, row


def ground_search(
    chain: ChainSpec,
    bonds: Sequence[BondProjector],
    schedule: Optional[TauSchedule] = None,
    chi_max: int = 16,
    stop: Optional[StopRule] = None,
    initial: Optional[MpsState] = None,
    second_order: bool = False,
) -> tuple[MpsState, ConvergenceTrace]:
    """
    Imaginary-time evolution from the uniform superposition (or `initial`) under a staged
    tau schedule until the stop rule fires.

    Returns:
        Final state and the trace; row 0 is the starting state. Hitting max_sweeps is
        reported through `converged=False`, not raised.
    """
    schedule = schedule or TauSchedule()
    stop = stop or StopRule()
    state = initial.copy() if initial is not None else uniform_initial_state(chain, chi_max)
    state.chi_max = chi_max

    entropies = bond_entropies(state)
    previous = energy(state, bonds)
    trace = ConvergenceTrace(
        rows=[TraceRow(sweep=0, tau=0.0, energy=previous, trunc_err=0.0, s_min=min(entropies, default=0.0), s_max=max(entropies, default=0.0))]
    )

    stage, quiet = 0, 0
    last_stage = len(schedule.taus) - 1
    for index in range(1, stop.max_sweeps + 1):
        tau = schedule.taus[stage]
        state, row = sweep(state, bonds, tau, chi_max, second_order=second_order, sweep_index=index)
        trace.rows.append(row)

        if row.energy <= stop.abs_tol:
            trace.converged, trace.reason = True, "energy_floor"
            break
        change = (previous - row.energy) / max(abs(previous), 1e-300)
        previous = row.energy
        if stage < last_stage:
            if change < schedule.advance_tol:
                stage += 1
                logger.debug("sweep %d: advancing to tau=%g", index, schedule.taus[stage])
            continue
        quiet = quiet + 1 if abs(change) < stop.rel_tol else 0
        if quiet >= stop.patience:
            trace.converged, trace.reason = True, "stalled"
            break
    else:
        trace.reason = "max_sweeps"
        logger.warning("ground search stopped at max_sweeps=%d with energy %.6e", stop.max_sweeps, previous)

    return state, trace
