"""Witness bounds for spin models and light-cone QFI bounds for shallow circuits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import expm
from scipy.stats import unitary_group

import config
from metro import NotProductInput, qfi_matrix, split_product
from netgraph import QubitLabel
from qcore import (
    Z,
    LabeledState,
    Observable,
    TooLarge,
    apply_matrix,
    conjugate_by,
    fidelity,
    variance,
)

logger = logging.getLogger(__name__)

ISING_CRITICAL_EPS = 0.7302
GEOMETRIES = ("generic", "chain-1d", "lattice-2d")


class UnsupportedGeometry(ValueError):
    pass


class NotSeparableInput(ValueError):
    pass


def site_register(n_sites: int) -> Tuple[QubitLabel, ...]:
    """One qubit per chain site, labeled (site, 0)."""
    return tuple(QubitLabel.ancilla(site, 0) for site in range(n_sites))


def site_observable(site: int, matrix: np.ndarray, n_sites: int) -> Observable:
    return Observable((site_register(n_sites)[site],), matrix)


# --- spin chains ----------------------------------------------------------------------


@dataclass(frozen=True)
class SpinChainSpec:
    M: int
    r: int = 1
    nu: int = 1
    tau: int = 2
    variances: Union[float, Tuple[float, ...]] = 0.25
    alpha: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.M < 2 or self.r < 1 or self.tau < 1 or self.nu < 1:
            raise ValueError(f"Need M >= 2, r >= 1, tau >= 1, nu >= 1; got {self}")
        if not isinstance(self.variances, (int, float)):
            object.__setattr__(self, "variances", tuple(float(v) for v in self.variances))
            if len(self.variances) != self.M:
                raise ValueError(f"Expected {self.M} variances, got {len(self.variances)}")
        if self.alpha is not None:
            object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
            if len(self.alpha) != self.M:
                raise ValueError(f"Expected {self.M} weights, got {len(self.alpha)}")

    def term_variances(self) -> List[float]:
        if isinstance(self.variances, tuple):
            return list(self.variances)
        return [float(self.variances)] * self.M

    def weights(self) -> List[float]:
        return list(self.alpha) if self.alpha is not None else [1.0 / self.M] * self.M


def spin_chain_mse_bound(spec: SpinChainSpec) -> float:
    """Σ_i α_i² / (4 ν τ r Var_i).

    With τ = 2 this is the nearest-neighbour chain bound Σ α²/(8νr Var); for
    uniform weights and variances it reduces to 1/(4ντrM Var).
    """
    total = 0.0
    for i, (alpha, var) in enumerate(zip(spec.weights(), spec.term_variances())):
        if alpha == 0:
            continue
        if var <= 0:
            logger.warning(f"Term {i} has zero variance with weight {alpha}; the bound is infinite.")
            return math.inf
        total += alpha ** 2 / (4 * spec.nu * spec.tau * spec.r * var)
    return total


@dataclass(frozen=True)
class IsingComparison:
    M: int
    eps: float
    r: int
    ours: float
    separable_small_eps: float
    separable_large_eps: float
    large_eps_regime: bool

    def to_json(self) -> Dict[str, Any]:
        return {
            "model": "ising",
            "M": self.M,
            "eps": self.eps,
            "r": self.r,
            "our_bound": self.ours,
            "reference_values": {
                "separable_small_eps": self.separable_small_eps,
                "separable_large_eps": self.separable_large_eps,
            },
            "regime_flags": {"large_eps": self.large_eps_regime},
        }


def ising_bound_compare(M: int, eps: float, r: int = 1) -> IsingComparison:
    """QFI ceiling M·r·(2 + 2ε + ε²/2) next to the separable-state references."""
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    large = eps > ISING_CRITICAL_EPS
    if not large:
        logger.debug(f"eps={eps} is below {ISING_CRITICAL_EPS}; the large-eps reference is out of regime.")
    return IsingComparison(
        M=M,
        eps=eps,
        r=r,
        ours=M * r * (2 + 2 * eps + eps ** 2 / 2),
        separable_small_eps=M * (1 + 5 * eps ** 2 / 4),
        separable_large_eps=M * (0.5 + eps + eps ** 2 / 2),
        large_eps_regime=large,
    )


def ising_terms(M: int, eps: float, periodic: bool = False) -> List[Observable]:
    """H_i = Z_i/2 + (ε/4) Z_i Z_{i+1} on a chain of M sites."""
    register = site_register(M)
    terms = []
    for i in range(M):
        j = i + 1
        if j == M and not periodic:
            terms.append(Observable((register[i],), Z / 2))
            continue
        j %= M
        if j == i:
            terms.append(Observable((register[i],), Z / 2 + eps / 4 * np.eye(2)))
            continue
        matrix = np.kron(Z / 2, np.eye(2)) + eps / 4 * np.kron(Z, Z)
        terms.append(Observable((register[i], register[j]), matrix))
    return terms


def network_entanglement_witness(rho: LabeledState, terms: Sequence[Observable], r: int = 1) -> Dict[str, Any]:
    """Compare 𝓕_Q(ρ, Σ H_i) with what r-party sources can reach.

    Exceeding `state_bound` = 8 r Σ Var(ρ, H_i) certifies genuine network
    (r+1)-entanglement.
    """
    qfi = float(np.sum(qfi_matrix(rho, terms).matrix))
    state_bound = 8 * r * sum(variance(rho, h) for h in terms)
    norm_bound = 8 * r * sum(h.norm() ** 2 for h in terms)
    return {
        "qfi": qfi,
        "state_bound": state_bound,
        "norm_bound": norm_bound,
        "certified": qfi > state_bound + config.TOLERANCES.psd,
    }


# --- circuits ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gate:
    """W on `sites`; with a generator the gate is e^{-iθH} W."""

    sites: Tuple[int, ...]
    unitary: np.ndarray = field(compare=False)
    generator: Optional[np.ndarray] = field(default=None, compare=False)

    def at(self, theta: float) -> np.ndarray:
        if self.generator is None or theta == 0:
            return self.unitary
        return expm(-1j * theta * self.generator) @ self.unitary


@dataclass(frozen=True)
class CircuitSpec:
    geometry: str
    depth: int
    n_sites: int = 0
    gate_locality: int = 2
    ham_locality: int = 1
    layers: Tuple[Tuple[Gate, ...], ...] = ()

    def __post_init__(self) -> None:
        if self.geometry not in GEOMETRIES:
            raise UnsupportedGeometry(f"Unknown geometry {self.geometry!r}; expected one of {GEOMETRIES}")
        if self.depth < 0:
            raise ValueError(f"Depth must be non-negative, got {self.depth}")
        if self.layers and len(self.layers) != self.depth:
            raise ValueError(f"Depth {self.depth} does not match {len(self.layers)} explicit layers")
        for j, layer in enumerate(self.layers):
            seen: set = set()
            for gate in layer:
                if seen & set(gate.sites):
                    raise ValueError(f"Gates in layer {j} overlap on sites {sorted(seen & set(gate.sites))}")
                seen.update(gate.sites)
                if any(not 0 <= s < self.n_sites for s in gate.sites):
                    raise ValueError(f"Gate on {gate.sites} is outside the {self.n_sites} sites")
                if len(gate.sites) > self.gate_locality:
                    raise ValueError(f"Gate on {gate.sites} exceeds locality {self.gate_locality}")
                dim = 2 ** len(gate.sites)
                if np.shape(gate.unitary) != (dim, dim):
                    raise ValueError(f"Gate on {gate.sites} needs a {dim}x{dim} matrix")

    @property
    def explicit(self) -> bool:
        return bool(self.layers) or self.depth == 0

    @property
    def has_generators(self) -> bool:
        return any(gate.generator is not None for layer in self.layers for gate in layer)


def light_cone_q(spec: CircuitSpec) -> int:
    """Locality bound for U†HU under the spec's geometry."""
    D, p = spec.depth, spec.ham_locality
    if D == 0:
        return p
    if spec.geometry == "generic":
        return spec.gate_locality ** D * p
    if spec.geometry == "chain-1d":
        if spec.gate_locality != 2:
            raise UnsupportedGeometry("The chain light cone assumes nearest-neighbour two-site gates")
        return 2 * D + p
    if spec.geometry == "lattice-2d":
        if p != 1:
            raise UnsupportedGeometry("The lattice light cone is only defined for single-site terms")
        return D ** 2 + (D + 1) ** 2
    raise UnsupportedGeometry(spec.geometry)


def brickwork_circuit(
    n_sites: int,
    depth: int,
    seed: int,
    with_generators: bool = False,
) -> CircuitSpec:
    """Random brickwork chain: layer j pairs (i, i+1) starting at offset j % 2."""
    rng = np.random.default_rng(seed)
    layers = []
    for j in range(depth):
        layer = []
        for i in range(j % 2, n_sites - 1, 2):
            gate = unitary_group.rvs(4, random_state=rng)
            generator = None
            if with_generators:
                raw = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
                generator = (raw + raw.conj().T) / 4
            layer.append(Gate((i, i + 1), gate, generator))
        layers.append(tuple(layer))
    return CircuitSpec("chain-1d", depth, n_sites, 2, 1, tuple(layers))


def _require_explicit(spec: CircuitSpec) -> None:
    if not spec.explicit:
        raise ValueError("This check needs explicit circuit layers")
    if spec.n_sites > config.MAX_MIXED_QUBITS:
        raise TooLarge(f"{spec.n_sites} sites exceed the operator limit of {config.MAX_MIXED_QUBITS}")


def conjugate_through(spec: CircuitSpec, operator: np.ndarray, upto: Optional[int] = None, theta: float = 0.0) -> np.ndarray:
    """U_{≤j}† O U_{≤j}, with U_{≤j} the first `upto` layers (all of them by default)."""
    n = spec.n_sites
    upto = spec.depth if upto is None else upto
    result = operator
    for layer in reversed(spec.layers[:upto]):
        for gate in layer:
            result = conjugate_by(result, n, list(gate.sites), gate.at(theta).conj().T)
    return result


def evolve(spec: CircuitSpec, state: LabeledState, theta: float = 0.0) -> LabeledState:
    n = spec.n_sites
    data = state.data
    for layer in spec.layers:
        for gate in layer:
            unitary = gate.at(theta)
            if state.is_pure:
                data = apply_matrix(data, n, list(gate.sites), unitary)
            else:
                data = conjugate_by(data, n, list(gate.sites), unitary)
    return LabeledState(state.register, data)


def operator_support(operator: np.ndarray, n: int, tol: float = config.TOLERANCES.support) -> List[int]:
    """Sites where ‖O - 1_j ⊗ tr_j(O)/2‖_F exceeds `tol`."""
    tensor = operator.reshape((2,) * (2 * n))
    support = []
    for j in range(n):
        moved = np.moveaxis(tensor, [j, n + j], [0, 1])
        reduced = (moved[0, 0] + moved[1, 1]) / 2
        deviation = math.sqrt(
            np.linalg.norm(moved[0, 0] - reduced) ** 2
            + np.linalg.norm(moved[1, 1] - reduced) ** 2
            + np.linalg.norm(moved[0, 1]) ** 2
            + np.linalg.norm(moved[1, 0]) ** 2
        )
        if deviation > tol:
            support.append(j)
    return support


def _default_terms(n_sites: int) -> List[Observable]:
    return [site_observable(i, Z, n_sites) for i in range(n_sites)]


def exact_lightcone_check(spec: CircuitSpec, terms: Optional[Sequence[Observable]] = None) -> int:
    """Largest support of U†H_iU over the given terms (single-site Z by default)."""
    _require_explicit(spec)
    register = site_register(spec.n_sites)
    terms = list(terms) if terms is not None else _default_terms(spec.n_sites)
    largest = 0
    for term in terms:
        conjugated = conjugate_through(spec, term.full_matrix(register))
        size = len(operator_support(conjugated, spec.n_sites))
        largest = max(largest, size)
    logger.debug(f"Light cone of depth {spec.depth} on {spec.n_sites} sites: max support {largest}.")
    return largest


def _check_product(rho_in: LabeledState) -> None:
    try:
        split_product(rho_in, [[label] for label in rho_in.register])
    except NotProductInput as exc:
        raise NotSeparableInput(f"Input state is not a product over sites: {exc}") from exc


@dataclass(frozen=True)
class ShallowBound:
    bound: float
    exact_qfi: Optional[float]
    q: int

    def to_json(self) -> Dict[str, Any]:
        return {"bound": self.bound, "exact_qfi": self.exact_qfi, "q": self.q}


def shallow_qfi_bound(
    rho_in: LabeledState, spec: CircuitSpec, terms: Optional[Sequence[Observable]] = None
) -> ShallowBound:
    """4 q Σ_i Var(ρ, U†H_iU), with the exact 𝓕_Q(UρU†, Σ H_i) alongside."""
    _require_explicit(spec)
    _check_product(rho_in)
    register = site_register(spec.n_sites)
    if rho_in.register != register:
        raise ValueError("Input state must live on the circuit's site register")
    terms = list(terms) if terms is not None else [site_observable(i, Z / 2, spec.n_sites) for i in range(spec.n_sites)]
    q = light_cone_q(spec)
    lifted = [Observable(register, conjugate_through(spec, term.full_matrix(register))) for term in terms]
    bound = 4 * q * sum(variance(rho_in, h) for h in lifted)
    exact = float(np.sum(qfi_matrix(rho_in, lifted).matrix)) if lifted else 0.0
    return ShallowBound(bound, exact, q)


def finite_difference_qfi(
    family: Callable[[float], LabeledState], theta: float = 0.0, delta: float = 1e-4
) -> float:
    """𝓕 ≈ 8(1 - F(σ(θ), σ(θ±δ)))/δ², averaged over both sides and Richardson-extrapolated."""
    centre = family(theta)

    def estimate(step: float) -> float:
        ahead = fidelity(centre, family(theta + step))
        behind = fidelity(centre, family(theta - step))
        return 4 * (2 - ahead - behind) / step ** 2

    coarse = estimate(delta)
    fine = estimate(delta / 2)
    refined = (4 * fine - coarse) / 3
    if abs(refined - fine) > 1e-3 * max(1.0, abs(refined)):
        logger.warning(f"Finite-difference QFI unstable: {coarse:.6g} vs {fine:.6g} (delta={delta}).")
    return refined


@dataclass(frozen=True)
class EmbeddedBound:
    bound: float
    exact_qfi: float
    finite_difference_qfi: Optional[float]

    def to_json(self) -> Dict[str, Any]:
        return {
            "bound": self.bound,
            "exact_qfi": self.exact_qfi,
            "finite_difference_qfi": self.finite_difference_qfi,
        }


def embedded_param_qfi_bound(
    rho_in: LabeledState, spec: CircuitSpec, theta: float = 0.0, with_oracle: bool = True
) -> EmbeddedBound:
    """4 Σ_j D(2j+D+4) Σ_α Var(ρ, H̃_{j,α}) with H̃_{j,α} = U_{≤j}† H_{j,α} U_{≤j}.

    Every gate is e^{-iθH_{j,α}} W_{j,α}; the QFI is with respect to the
    shared θ of σ(θ) = U(θ)ρU(θ)†.
    """
    if spec.geometry != "chain-1d":
        raise UnsupportedGeometry("The embedded-parameter bound is only derived for the 1-d chain")
    _require_explicit(spec)
    register = site_register(spec.n_sites)
    if rho_in.register != register:
        raise ValueError("Input state must live on the circuit's site register")
    D = spec.depth
    bound = 0.0
    lifted: List[Observable] = []
    for j, layer in enumerate(spec.layers, start=1):
        layer_sum = 0.0
        for gate in layer:
            if gate.generator is None:
                continue
            local = Observable(tuple(register[s] for s in gate.sites), gate.generator)
            tilde = Observable(register, conjugate_through(spec, local.full_matrix(register), upto=j, theta=theta))
            lifted.append(tilde)
            layer_sum += variance(rho_in, tilde)
        bound += 4 * D * (2 * j + D + 4) * layer_sum
    exact = float(np.sum(qfi_matrix(rho_in, lifted).matrix)) if lifted else 0.0
    oracle = None
    if with_oracle:
        oracle = finite_difference_qfi(lambda t: evolve(spec, rho_in, t), theta) if lifted else 0.0
    return EmbeddedBound(bound, exact, oracle)
