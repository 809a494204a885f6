"""Quantum Fisher information and precision bounds for network states."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space

import config
from netgraph import Hypergraph, QubitLabel, SignalLayout, influence_or_isolated
from qcore import (
    Channel,
    LabeledState,
    Observable,
    SupportMismatch,
    TooLarge,
    UnknownQubit,
    apply_matrix,
    assemble_network_state,
    check_size,
    layout_generators,
    local_z_generator,
    min_eigenvalue,
    permute,
    reduce_density,
    tensor,
    trace_distance,
    variance,
)

logger = logging.getLogger(__name__)


class NotProductInput(ValueError):
    pass


class NotNetworkForm(ValueError):
    pass


@dataclass(frozen=True)
class QfiMatrix:
    matrix: np.ndarray = field(compare=False)
    basis: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        matrix = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", matrix)
        if not self.basis:
            object.__setattr__(self, "basis", tuple(range(matrix.shape[0])))

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))


@dataclass(frozen=True)
class CovMatrix:
    matrix: np.ndarray = field(compare=False)

    @property
    def real(self) -> np.ndarray:
        return self.matrix.real


@dataclass
class CovDecomposition:
    """Υ^(k) for every subsystem k of a product state."""

    parts: Dict[int, np.ndarray]
    trivial: Dict[int, Tuple[int, ...]] = field(default_factory=dict)

    def total(self) -> np.ndarray:
        return sum(self.parts.values())

    def violations(self, cov: CovMatrix, tol: config.Tolerances = config.TOLERANCES) -> List[str]:
        problems = []
        defect = float(np.max(np.abs(self.total() - cov.matrix), initial=0.0))
        if defect > tol.cov_sum:
            problems.append(f"parts sum differs from covariance by {defect:.3e}")
        for k, part in self.parts.items():
            eig = min_eigenvalue(part) if part.size else 0.0
            if eig < -tol.cov_psd:
                problems.append(f"part {k} has eigenvalue {eig:.3e}")
            for i in self.trivial.get(k, ()):
                leak = max(np.max(np.abs(part[i, :])), np.max(np.abs(part[:, i])))
                if leak > tol.zero_block:
                    problems.append(f"part {k} row {i} should vanish, found {leak:.3e}")
        return problems


@dataclass
class TDecomposition:
    parts: Dict[int, np.ndarray]
    projectors: Dict[int, Tuple[int, ...]]
    qfi_gap: float = math.nan
    qfi_gap_hermitian: float = math.nan
    diag_defect: float = math.nan
    block_defect: float = math.nan
    min_part_eig: float = math.nan

    @property
    def holds(self) -> bool:
        tol = config.TOLERANCES
        return (
            self.qfi_gap >= -tol.psd
            and self.diag_defect <= tol.psd
            and self.block_defect <= tol.zero_block
            and self.min_part_eig >= -tol.psd
        )

    def summary(self) -> Dict[str, Any]:
        return {
            "holds": self.holds,
            "qfi_gap_min_eig": self.qfi_gap,
            "qfi_gap_min_eig_hermitian": self.qfi_gap_hermitian,
            "diag_defect": self.diag_defect,
            "block_defect": self.block_defect,
            "min_part_eig": self.min_part_eig,
            "projectors": {str(e): list(idx) for e, idx in sorted(self.projectors.items())},
            "parts": {str(e): part for e, part in sorted(self.parts.items())},
        }


@dataclass
class BoundCertificate:
    bound: float
    qfi_trace: float
    gap_min_eig: float
    k_values: List[int]
    variances: List[float]
    holds: bool
    scaling_floor: float

    def to_json(self) -> Dict[str, Any]:
        return {
            "bound": self.bound,
            "qfi_trace": self.qfi_trace,
            "gap_min_eig": self.gap_min_eig,
            "k_values": list(self.k_values),
            "variances": list(self.variances),
            "holds": self.holds,
            "scaling_floor": self.scaling_floor,
        }


# --- QFI ----------------------------------------------------------------------------


def _positions(state: LabeledState, obs: Observable) -> List[int]:
    try:
        return state.positions(obs.support)
    except UnknownQubit as exc:
        raise SupportMismatch(str(exc)) from None


def _columns(state: LabeledState) -> np.ndarray:
    """X with ρ = X X†: the vector itself, or eigenvectors scaled by √λ."""
    if state.is_pure:
        return state.data.reshape(-1, 1)
    check_size(state.num_qubits, mixed=True)
    evals, evecs = np.linalg.eigh((state.data + state.data.conj().T) / 2)
    keep = evals > config.TOLERANCES.qfi_rank
    return evecs[:, keep] * np.sqrt(evals[keep])


def _apply_all(state: LabeledState, columns: np.ndarray, generators: Sequence[Observable]) -> List[np.ndarray]:
    return [apply_matrix(columns, state.num_qubits, _positions(state, h), h.matrix) for h in generators]


def qfi_matrix(rho: LabeledState, generators: Sequence[Observable]) -> QfiMatrix:
    """QFI matrix of ρ_θ = e^{-iΣθH} ρ e^{iΣθH} at θ = 0."""
    tol = config.TOLERANCES
    m = len(generators)
    if rho.is_pure:
        psi = rho.data
        applied = [w.reshape(-1) for w in _apply_all(rho, psi.reshape(-1, 1), generators)]
        means = np.array([np.vdot(psi, w).real for w in applied])
        gram = np.array([[np.vdot(a, b) for b in applied] for a in applied]).reshape(m, m)
        return QfiMatrix(4 * (gram.real - np.outer(means, means)))

    check_size(rho.num_qubits, mixed=True)
    evals, evecs = np.linalg.eigh((rho.data + rho.data.conj().T) / 2)
    evals = np.clip(evals, 0.0, None)
    sums = evals[:, None] + evals[None, :]
    diffs = evals[:, None] - evals[None, :]
    weights = np.where(sums > tol.qfi_rank, diffs ** 2 / np.where(sums > tol.qfi_rank, sums, 1.0), 0.0)
    blocks = np.array([evecs.conj().T @ w for w in _apply_all(rho, evecs, generators)])
    matrix = 2 * np.einsum("kl,skl,tkl->st", weights, blocks, blocks.conj()).real
    return QfiMatrix((matrix + matrix.T) / 2)


def symmetric_log_derivative(rho: LabeledState, generator: Observable) -> np.ndarray:
    """L solving ∂ρ = (Lρ + ρL)/2 for ∂ρ = -i[H, ρ], on the support of ρ."""
    tol = config.TOLERANCES
    density = rho.density()
    evals, evecs = np.linalg.eigh((density + density.conj().T) / 2)
    evals = np.clip(evals, 0.0, None)
    applied = apply_matrix(evecs, rho.num_qubits, _positions(rho, generator), generator.matrix)
    block = evecs.conj().T @ applied
    sums = evals[:, None] + evals[None, :]
    deriv = -1j * (evals[None, :] - evals[:, None]) * block
    sld = np.where(sums > tol.qfi_rank, 2 * deriv / np.where(sums > tol.qfi_rank, sums, 1.0), 0.0)
    return evecs @ sld @ evecs.conj().T


def variances(rho: LabeledState, generators: Sequence[Observable]) -> List[float]:
    return [variance(rho, h) for h in generators]


def _generators(layout: SignalLayout, rho: LabeledState, generators: Optional[Sequence[Observable]]) -> List[Observable]:
    if generators is not None:
        if len(generators) != layout.M:
            raise SupportMismatch(f"Expected {layout.M} generators, got {len(generators)}")
        return list(generators)
    return layout_generators(layout, rho.register)


# --- deterministic-protocol bounds --------------------------------------------------


def theorem1_lower_bound(
    g: Hypergraph,
    layout: SignalLayout,
    rho: LabeledState,
    nu: int = 1,
    generators: Optional[Sequence[Observable]] = None,
) -> float:
    """Σ_s α_s² / (4 ν k_s Var(ρ, H_s)); math.inf when a weighted signal is invisible."""
    if nu < 1:
        raise ValueError(f"Repetition count must be >= 1, got {nu}")
    hs = _generators(layout, rho, generators)
    total = 0.0
    for s, (alpha, h) in enumerate(zip(layout.weights, hs)):
        if alpha == 0:
            continue
        var = variance(rho, h)
        if var <= config.TOLERANCES.hermitian:
            logger.warning(f"Signal {s} has zero variance with weight {alpha}; the bound is infinite.")
            return math.inf
        total += alpha ** 2 / (4 * nu * influence_or_isolated(g, layout, s) * var)
    return total


def qfi_diag_bound(
    g: Hypergraph, layout: SignalLayout, rho: LabeledState, generators: Optional[Sequence[Observable]] = None
) -> QfiMatrix:
    hs = _generators(layout, rho, generators)
    entries = [4 * influence_or_isolated(g, layout, s) * variance(rho, h) for s, h in enumerate(hs)]
    return QfiMatrix(np.diag(entries))


def scaling_floor(
    g: Hypergraph, layout: SignalLayout, nu: int, generators: Sequence[Observable]
) -> float:
    """1/(4 ν M k_max h_max²), the state-independent floor for estimating the mean."""
    h_max = max((h.norm() for h in generators), default=0.0)
    k_max = max(influence_or_isolated(g, layout, s) for s in range(layout.M))
    if h_max == 0:
        return math.inf
    return 1.0 / (4 * nu * layout.M * k_max * h_max ** 2)


def weighted_qfi(qfi: QfiMatrix, alpha: Sequence[float]) -> float:
    a = np.asarray(alpha, dtype=float)
    return float(a @ qfi.matrix @ a)


def weighted_check(
    g: Hypergraph, layout: SignalLayout, rho: LabeledState, generators: Optional[Sequence[Observable]] = None
) -> Tuple[float, float]:
    """(αᵀ𝓕α, 4 Σ_s k_s α_s² Var_s); the first never exceeds the second for network states."""
    hs = _generators(layout, rho, generators)
    lhs = weighted_qfi(qfi_matrix(rho, hs), layout.weights)
    rhs = sum(
        4 * influence_or_isolated(g, layout, s) * alpha ** 2 * variance(rho, h)
        for s, (alpha, h) in enumerate(zip(layout.weights, hs))
    )
    return lhs, rhs


def verify_qfi_bound(
    g: Hypergraph,
    layout: SignalLayout,
    rho: LabeledState,
    nu: int = 1,
    generators: Optional[Sequence[Observable]] = None,
) -> BoundCertificate:
    if rho.num_qubits > config.MAX_MIXED_QUBITS:
        raise TooLarge(f"QFI check needs <= {config.MAX_MIXED_QUBITS} qubits, got {rho.num_qubits}")
    hs = _generators(layout, rho, generators)
    qfi = qfi_matrix(rho, hs)
    ks = [influence_or_isolated(g, layout, s) for s in range(layout.M)]
    vs = variances(rho, hs)
    gap = min_eigenvalue(np.diag([4 * k * v for k, v in zip(ks, vs)]) - qfi.matrix)
    holds = gap >= -config.TOLERANCES.psd
    if not holds:
        logger.warning(f"QFI exceeds the network bound: gap eigenvalue {gap:.3e}.")
    return BoundCertificate(
        bound=theorem1_lower_bound(g, layout, rho, nu, hs),
        qfi_trace=qfi.trace,
        gap_min_eig=gap,
        k_values=ks,
        variances=vs,
        holds=holds,
        scaling_floor=scaling_floor(g, layout, nu, hs),
    )


def mixture_check(
    g: Hypergraph, layout: SignalLayout, branches: Sequence[Tuple[float, LabeledState]]
) -> Dict[str, Any]:
    """Checks a classical mixture of network states: bound on the mixture and QFI convexity."""
    if not branches:
        raise ValueError("A mixture needs at least one branch")
    register = branches[0][1].register
    rho = np.zeros((2 ** len(register),) * 2, dtype=complex)
    convex = np.zeros((layout.M, layout.M))
    for p, state in branches:
        state = permute(state, register)
        rho = rho + p * state.density()
        convex = convex + p * qfi_matrix(state, layout_generators(layout, register)).matrix
    mixed = LabeledState(register, rho)
    cert = verify_qfi_bound(g, layout, mixed)
    qfi = qfi_matrix(mixed, layout_generators(layout, register))
    return {
        "certificate": cert,
        "convexity_gap_min_eig": min_eigenvalue(convex - qfi.matrix),
    }


def matrix_crb(qfi: QfiMatrix, nu: int, alpha: Sequence[float]) -> float:
    """(1/ν) αᵀ 𝓕⁻¹ α, falling back to the pseudo-inverse for singular 𝓕."""
    if nu < 1:
        raise ValueError(f"Repetition count must be >= 1, got {nu}")
    a = np.asarray(alpha, dtype=float)
    matrix = qfi.matrix
    evals = np.linalg.eigvalsh(matrix)
    scale = max(1.0, float(np.max(np.abs(evals), initial=0.0)))
    if evals.size == 0 or evals[0] <= config.TOLERANCES.qfi_rank * scale:
        logger.warning(f"QFI matrix is singular (min eigenvalue {evals[0] if evals.size else 0:.3e}); using pseudo-inverse.")
        inv = np.linalg.pinv(matrix, rcond=config.TOLERANCES.qfi_rank, hermitian=True)
        return float(a @ inv @ a) / nu
    return float(a @ np.linalg.solve(matrix, a)) / nu


# --- covariance decompositions ------------------------------------------------------


def cov_matrix(rho: LabeledState, observables: Sequence[Observable]) -> CovMatrix:
    columns = _columns(rho)
    applied = _apply_all(rho, columns, observables)
    means = np.array([np.vdot(columns, w).real for w in applied])
    gram = np.array([[np.vdot(a, b) for b in applied] for a in applied]).reshape(len(applied), len(applied))
    return CovMatrix(gram - np.outer(means, means))


def split_product(state: LabeledState, groups: Sequence[Sequence[QubitLabel]]) -> List[LabeledState]:
    """Factor `state` into reduced states on `groups`; NotProductInput if it is not their product."""
    labels = [label for group in groups for label in group]
    if sorted(labels) != sorted(state.register):
        raise NotProductInput("Groups must partition the register")
    density = state.to_mixed().data
    positions = [state.positions(group) for group in groups]
    factors = [
        LabeledState(tuple(group), reduce_density(density, state.num_qubits, pos))
        for group, pos in zip(groups, positions)
    ]
    rebuilt = permute(tensor(*factors), state.register).density()
    distance = trace_distance(rebuilt, density)
    if distance > config.TOLERANCES.support:
        raise NotProductInput(f"State is not a product over the given groups (distance {distance:.3e})")
    return factors


def cov_decompose(product_state: Sequence[LabeledState], observables: Sequence[Observable]) -> CovDecomposition:
    """Υ^(k)_ij = tr[(A_i^(k-1) - 1⊗A_i^(k))(A_j^(k-1) - 1⊗A_j^(k)) ρ_{k→}], A^(k) = tr_{≤k}(A ρ_{≤k})."""
    if not product_state:
        raise NotProductInput("A product state needs at least one factor")
    register = [label for part in product_state for label in part.register]
    if len(set(register)) != len(register):
        raise NotProductInput("Product factors share qubit labels")
    check_size(len(register), mixed=True)
    factors = [part.density() for part in product_state]
    dims = [f.shape[0] for f in factors]
    current = [obs.full_matrix(register) for obs in observables]
    trivial = {
        k: tuple(i for i, obs in enumerate(observables) if not set(obs.support) & set(part.register))
        for k, part in enumerate(product_state)
    }
    parts: Dict[int, np.ndarray] = {}
    for k, rho_k in enumerate(factors):
        d = dims[k]
        rest = int(np.prod(dims[k + 1:], dtype=int))
        tail = factors[k]
        for later in factors[k + 1:]:
            tail = np.kron(tail, later)
        reduced = [np.einsum("aicj,ca->ij", a.reshape(d, rest, d, rest), rho_k) for a in current]
        residuals = [a - np.kron(np.eye(d), r) for a, r in zip(current, reduced)]
        weighted = [b @ tail for b in residuals]
        parts[k] = np.array([[np.einsum("ij,ji->", bi, wj) for wj in weighted] for bi in residuals]).reshape(
            len(observables), len(observables)
        )
        current = reduced
    return CovDecomposition(parts, trivial)


# --- T-matrix certificate ----------------------------------------------------------


def _dilation_unitary(channel: Channel) -> Tuple[np.ndarray, int]:
    """Unitary on system ⊗ environment whose |0⟩-environment columns realize the Kraus map."""
    count = len(channel.kraus)
    env_qubits = max(1, math.ceil(math.log2(count)))
    env_dim = 2 ** env_qubits
    d = channel.kraus[0].shape[0]
    isometry = np.zeros((d * env_dim, d), dtype=complex)
    for a, k in enumerate(channel.kraus):
        isometry[a::env_dim, :] = k
    complement = null_space(isometry.conj().T)
    unitary = np.zeros((d * env_dim, d * env_dim), dtype=complex)
    used = 0
    for col in range(d * env_dim):
        system, env = divmod(col, env_dim)
        if env == 0:
            unitary[:, col] = isometry[:, system]
        else:
            unitary[:, col] = complement[:, used]
            used += 1
    return unitary, env_qubits


def _network_generators(
    g: Hypergraph, layout: SignalLayout, register: Sequence[QubitLabel], generators: Optional[Sequence[Observable]]
) -> List[Observable]:
    covered = {v for e in g.hyperedges for v in e}
    for s, signal in enumerate(layout.signals):
        if signal - covered:
            raise NotNetworkForm(f"Signal {s} touches vertices {sorted(signal - covered)} that hold no source qubit")
    if generators is None:
        return [local_z_generator(register, signal) for signal in layout.signals]
    for s, (signal, h) in enumerate(zip(layout.signals, generators)):
        for label in h.support:
            if label.kind != "source" or label.vertex not in signal:
                raise NotNetworkForm(f"Generator {s} acts on {label}, outside the qubits of its signal")
    return list(generators)


def t_decompose(
    g: Hypergraph,
    layout: SignalLayout,
    sources: Mapping[int, LabeledState],
    channels: Optional[Mapping[int, Channel]] = None,
    generators: Optional[Sequence[Observable]] = None,
) -> TDecomposition:
    """T^(e) = Υ^(e) + Σ_{v∈e} Υ^(v)/c_v over the dilated product of sources and channel ancillas."""
    channels = dict(channels or {})
    layout.check_against(g)
    rho = assemble_network_state(g, sources, channels)
    register = list(rho.register)
    hs = _network_generators(g, layout, register, generators)
    for v in channels:
        if not g.qubits_at(v):
            raise NotNetworkForm(f"Channel on vertex {v}, which holds no source qubit")

    factors: List[LabeledState] = [
        permute(sources[idx], [QubitLabel.source(idx, v) for v in sorted(g.hyperedges[idx])])
        for idx in range(len(g.hyperedges))
    ]
    owner: List[Tuple[str, int]] = [("edge", idx) for idx in range(len(g.hyperedges))]
    dilated_register = list(register)
    unitaries: List[Tuple[List[QubitLabel], np.ndarray]] = []
    for v in sorted(channels):
        channel = channels[v]
        if channel.is_unitary:
            unitaries.append((g.qubits_at(v), channel.kraus[0]))
            continue
        unitary, env_qubits = _dilation_unitary(channel)
        env = [QubitLabel.ancilla(v, slot) for slot in range(env_qubits)]
        zero = np.zeros(2 ** env_qubits, dtype=complex)
        zero[0] = 1.0
        factors.append(LabeledState(tuple(env), zero))
        owner.append(("vertex", v))
        dilated_register.extend(env)
        unitaries.append((g.qubits_at(v) + env, unitary))
    check_size(len(dilated_register), mixed=True)

    n = len(dilated_register)
    full_u = np.eye(2 ** n, dtype=complex)
    for labels, unitary in unitaries:
        positions = [dilated_register.index(label) for label in labels]
        full_u = apply_matrix(full_u, n, positions, unitary)
    lifted = [
        Observable(tuple(dilated_register), full_u.conj().T @ h.full_matrix(dilated_register) @ full_u)
        for h in hs
    ]

    decomposition = cov_decompose(factors, lifted)
    parts: Dict[int, np.ndarray] = {idx: np.array(decomposition.parts[idx]) for idx in range(len(g.hyperedges))}
    for k, (kind, v) in enumerate(owner):
        if kind != "vertex":
            continue
        incident = g.incident_edges(v)
        for idx in incident:
            parts[idx] = parts[idx] + decomposition.parts[k] / len(incident)

    projectors = {
        idx: tuple(s for s, signal in enumerate(layout.signals) if signal & edge)
        for idx, edge in enumerate(g.hyperedges)
    }
    result = TDecomposition(parts, projectors)
    _certify(result, rho, hs)
    return result


def _certify(result: TDecomposition, rho: LabeledState, generators: Sequence[Observable]) -> None:
    total = sum(result.parts.values())
    qfi = qfi_matrix(rho, generators).matrix
    result.qfi_gap = min_eigenvalue(total.real - qfi / 4)
    result.qfi_gap_hermitian = min_eigenvalue(total - qfi / 4)
    result.diag_defect = float(np.max(np.abs(np.diag(total).real - np.array(variances(rho, generators)))))
    block = 0.0
    min_eig = math.inf
    for idx, part in result.parts.items():
        outside = [s for s in range(part.shape[0]) if s not in result.projectors[idx]]
        if outside:
            block = max(block, float(np.max(np.abs(part[outside, :]))), float(np.max(np.abs(part[:, outside]))))
        min_eig = min(min_eig, min_eigenvalue(part))
    result.block_defect = block
    result.min_part_eig = min_eig
    if not result.holds:
        logger.warning(
            f"T-decomposition certificate failed: qfi gap {result.qfi_gap:.3e}, diag defect "
            f"{result.diag_defect:.3e}, block defect {result.block_defect:.3e}, min eig {result.min_part_eig:.3e}."
        )
