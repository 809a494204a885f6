"""Dense simulation of labeled multi-qubit states.

States are pure (amplitude vector) until a channel or a partial trace forces a
density matrix. Every operation returns a new value; nothing is mutated in place.
Qubit order inside a vector follows the register, first label = most
significant bit.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import sqrtm

import config
from netgraph import GeneratorSpec, Hypergraph, QubitLabel, SignalLayout

logger = logging.getLogger(__name__)

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)


class InvalidSize(ValueError):
    pass


class LabelMismatch(ValueError):
    pass


class BadDistribution(ValueError):
    pass


class UnknownQubit(ValueError):
    pass


class SupportMismatch(ValueError):
    pass


class InvalidState(ValueError):
    pass


class ZeroProbability(RuntimeError):
    """A post-selection branch that cannot occur."""


class TooLarge(RuntimeError):
    """The requested dense computation exceeds the configured qubit limits."""


def check_size(num_qubits: int, *, mixed: bool) -> None:
    limit = config.MAX_MIXED_QUBITS if mixed else config.MAX_PURE_QUBITS
    if num_qubits > limit:
        kind = "density-matrix" if mixed else "state-vector"
        raise TooLarge(f"{num_qubits} qubits exceed the {kind} limit of {limit}")


# --- raw array kernels ----------------------------------------------------------


def apply_matrix(array: np.ndarray, num_qubits: int, positions: Sequence[int], matrix: np.ndarray) -> np.ndarray:
    """Apply `matrix` to the qubits at `positions` of the leading 2^n axis of `array`.

    Trailing axes of `array` are carried along untouched, so a density matrix
    gets left-multiplied and a batch of column vectors is transformed at once.
    """
    positions = list(positions)
    k = len(positions)
    if k == 0:
        return array * matrix.reshape(()) if np.size(matrix) == 1 else array.copy()
    batch_shape = array.shape[1:]
    tensor = array.reshape((2,) * num_qubits + batch_shape)
    op = np.asarray(matrix, dtype=complex).reshape((2,) * (2 * k))
    moved = np.tensordot(op, tensor, axes=(list(range(k, 2 * k)), positions))
    moved = np.moveaxis(moved, list(range(k)), positions)
    return moved.reshape(array.shape)


def conjugate_by(rho: np.ndarray, num_qubits: int, positions: Sequence[int], matrix: np.ndarray) -> np.ndarray:
    """K ρ K† for K on `positions`."""
    left = apply_matrix(rho, num_qubits, positions, matrix)
    return apply_matrix(left.conj().T, num_qubits, positions, matrix).conj().T


def embed(matrix: np.ndarray, num_qubits: int, positions: Sequence[int]) -> np.ndarray:
    """Full 2^n x 2^n operator of `matrix` acting on `positions`."""
    return apply_matrix(np.eye(2 ** num_qubits, dtype=complex), num_qubits, positions, matrix)


def reduced_density_matrix(vector: np.ndarray, num_qubits: int, keep: Sequence[int]) -> np.ndarray:
    """Reduced density matrix of a (possibly unnormalized) vector on `keep`, in that order."""
    keep = list(keep)
    rest = [q for q in range(num_qubits) if q not in keep]
    tensor = vector.reshape((2,) * num_qubits).transpose(keep + rest)
    amps = tensor.reshape(2 ** len(keep), 2 ** len(rest))
    return amps @ amps.conj().T


def reduce_density(rho: np.ndarray, num_qubits: int, keep: Sequence[int]) -> np.ndarray:
    keep = list(keep)
    rest = [q for q in range(num_qubits) if q not in keep]
    tensor = rho.reshape((2,) * (2 * num_qubits))
    order = keep + rest + [num_qubits + q for q in keep] + [num_qubits + q for q in rest]
    dk, dr = 2 ** len(keep), 2 ** len(rest)
    return np.einsum("iaja->ij", tensor.transpose(order).reshape(dk, dr, dk, dr))


def postselect(vector: np.ndarray, num_qubits: int, positions: Sequence[int], ket: np.ndarray) -> Tuple[float, np.ndarray]:
    """Project the qubits at `positions` onto `ket` and drop them.

    Returns ‖rest‖² and the unnormalized amplitudes `rest` of the remaining
    qubits, in register order. For an unnormalized input carrying a branch
    weight, ‖rest‖² is the joint probability of that branch and this outcome.
    """
    positions = list(positions)
    k = len(positions)
    tensor = vector.reshape((2,) * num_qubits)
    bra = np.asarray(ket, dtype=complex).conj().reshape((2,) * k)
    rest = np.tensordot(bra, tensor, axes=(list(range(k)), positions)).reshape(-1)
    prob = float(np.vdot(rest, rest).real)
    return prob, rest


def ghz_vector(n: int, phase: float = 0.0) -> np.ndarray:
    if n < 1:
        raise InvalidSize(f"A GHZ state needs at least one qubit, got {n}")
    vec = np.zeros(2 ** n, dtype=complex)
    vec[0] = 1 / math.sqrt(2)
    vec[-1] = np.exp(1j * phase) / math.sqrt(2)
    return vec


def phase_gate(theta: float, sign: int = 1) -> np.ndarray:
    """e^{-iθZ/2}, or X e^{-iθZ/2} X for sign -1."""
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    half = sign * theta / 2
    return np.diag([np.exp(-1j * half), np.exp(1j * half)])


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    diff = np.asarray(a) - np.asarray(b)
    diff = (diff + diff.conj().T) / 2
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))


def min_eigenvalue(matrix: np.ndarray) -> float:
    herm = (np.asarray(matrix) + np.asarray(matrix).conj().T) / 2
    return float(np.linalg.eigvalsh(herm)[0])


# --- labeled values -----------------------------------------------------------


@dataclass(frozen=True)
class LabeledState:
    register: Tuple[QubitLabel, ...]
    data: np.ndarray = field(compare=False)

    def __post_init__(self) -> None:
        register = tuple(self.register)
        if len(set(register)) != len(register):
            raise LabelMismatch(f"Duplicate labels in register: {[str(q) for q in register]}")
        data = np.asarray(self.data, dtype=complex)
        dim = 2 ** len(register)
        if data.shape not in {(dim,), (dim, dim)}:
            raise InvalidState(f"Data of shape {data.shape} does not fit a {len(register)}-qubit register")
        object.__setattr__(self, "register", register)
        object.__setattr__(self, "data", data)

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    @property
    def num_qubits(self) -> int:
        return len(self.register)

    def index_of(self, label: QubitLabel) -> int:
        try:
            return self.register.index(label)
        except ValueError:
            raise UnknownQubit(f"Qubit {label} is not in the register") from None

    def positions(self, labels: Iterable[QubitLabel]) -> List[int]:
        return [self.index_of(label) for label in labels]

    def density(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return self.data

    def to_mixed(self) -> "LabeledState":
        if not self.is_pure:
            return self
        check_size(self.num_qubits, mixed=True)
        return LabeledState(self.register, self.density())

    def validate(self, tol: config.Tolerances = config.TOLERANCES) -> "LabeledState":
        if self.is_pure:
            norm = np.linalg.norm(self.data)
            if abs(norm - 1) > tol.norm:
                raise InvalidState(f"State vector norm {norm} deviates from 1")
            return self
        rho = self.data
        if abs(np.trace(rho) - 1) > tol.trace:
            raise InvalidState(f"Density matrix trace {np.trace(rho)} deviates from 1")
        if np.max(np.abs(rho - rho.conj().T)) > tol.hermitian:
            raise InvalidState("Density matrix is not Hermitian")
        if min_eigenvalue(rho) < -tol.psd_state:
            raise InvalidState(f"Density matrix has negative eigenvalue {min_eigenvalue(rho)}")
        return self

    def to_json(self) -> Dict[str, Any]:
        flat = self.data.reshape(-1)
        return {
            "register": [label.to_json() for label in self.register],
            "pure": self.is_pure,
            "entries": [[float(z.real), float(z.imag)] for z in flat],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())


@dataclass(frozen=True)
class Channel:
    kraus: Tuple[np.ndarray, ...] = field(compare=False)

    def __post_init__(self) -> None:
        kraus = tuple(np.asarray(k, dtype=complex) for k in self.kraus)
        if not kraus:
            raise ValueError("A channel needs at least one Kraus operator")
        dim = kraus[0].shape[0]
        for k in kraus:
            if k.shape != (dim, dim):
                raise ValueError(f"Kraus operators must all be {dim}x{dim}, got {k.shape}")
        total = sum(k.conj().T @ k for k in kraus)
        defect = np.max(np.abs(total - np.eye(dim)))
        if defect > config.TOLERANCES.kraus:
            raise ValueError(f"Kraus completeness defect {defect:.3e} exceeds tolerance")
        object.__setattr__(self, "kraus", kraus)

    @property
    def num_qubits(self) -> int:
        return int(round(math.log2(self.kraus[0].shape[0])))

    @property
    def is_unitary(self) -> bool:
        return len(self.kraus) == 1


@dataclass(frozen=True)
class Observable:
    support: Tuple[QubitLabel, ...]
    matrix: np.ndarray = field(compare=False)

    def __post_init__(self) -> None:
        support = tuple(self.support)
        matrix = np.asarray(self.matrix, dtype=complex)
        dim = 2 ** len(support)
        if matrix.shape != (dim, dim):
            raise SupportMismatch(f"Observable matrix {matrix.shape} does not match {len(support)} qubits")
        if np.max(np.abs(matrix - matrix.conj().T), initial=0.0) > config.TOLERANCES.hermitian:
            raise ValueError("Observable matrix is not Hermitian")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "matrix", matrix)

    def norm(self) -> float:
        """Operator norm; the largest of these over the signals is h_max."""
        return float(np.max(np.abs(np.linalg.eigvalsh(self.matrix)), initial=0.0))

    def scaled(self, factor: float) -> "Observable":
        return Observable(self.support, factor * self.matrix)

    def shifted(self, offset: float) -> "Observable":
        return Observable(self.support, self.matrix + offset * np.eye(self.matrix.shape[0]))

    def full_matrix(self, register: Sequence[QubitLabel]) -> np.ndarray:
        register = list(register)
        try:
            positions = [register.index(label) for label in self.support]
        except ValueError:
            raise SupportMismatch(f"Observable support {[str(q) for q in self.support]} is outside the register") from None
        return embed(self.matrix, len(register), positions)


# --- constructors -----------------------------------------------------------------


def default_register(n: int, vertex: int = 0) -> Tuple[QubitLabel, ...]:
    return tuple(QubitLabel.ancilla(vertex, slot) for slot in range(n))


def ghz_state(n: int, phase: float = 0.0, register: Optional[Sequence[QubitLabel]] = None) -> LabeledState:
    vec = ghz_vector(n, phase)
    return LabeledState(tuple(register) if register is not None else default_register(n), vec)


def plus_state(register: Optional[Sequence[QubitLabel]] = None, n: int = 1) -> LabeledState:
    register = tuple(register) if register is not None else default_register(n)
    vec = np.ones(2 ** len(register), dtype=complex) / math.sqrt(2 ** len(register))
    return LabeledState(register, vec)


def basis_state(bits: Sequence[int], register: Optional[Sequence[QubitLabel]] = None) -> LabeledState:
    register = tuple(register) if register is not None else default_register(len(bits))
    vec = np.zeros(2 ** len(bits), dtype=complex)
    vec[int("".join(str(int(b)) for b in bits), 2) if bits else 0] = 1.0
    return LabeledState(register, vec)


def relabel(state: LabeledState, register: Sequence[QubitLabel]) -> LabeledState:
    register = tuple(register)
    if len(register) != state.num_qubits:
        raise LabelMismatch(f"Cannot relabel {state.num_qubits} qubits with {len(register)} labels")
    return LabeledState(register, state.data)


def source_state(g: Hypergraph, edge: int, data: np.ndarray) -> LabeledState:
    """A source σ_e labeled [e, v] for v in e (ascending)."""
    register = tuple(QubitLabel.source(edge, v) for v in sorted(g.hyperedges[edge]))
    return LabeledState(register, data)


def depolarizing_channel(p: float) -> Channel:
    """Single-qubit depolarizing channel; p = 1 is fully depolarizing."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"Depolarizing strength must be in [0, 1], got {p}")
    return Channel((math.sqrt(1 - 3 * p / 4) * I2, math.sqrt(p / 4) * X, math.sqrt(p / 4) * Y, math.sqrt(p / 4) * Z))


def unitary_channel(unitary: np.ndarray) -> Channel:
    return Channel((np.asarray(unitary, dtype=complex),))


def random_pure_vector(num_qubits: int, rng: np.random.Generator) -> np.ndarray:
    vec = rng.normal(size=2 ** num_qubits) + 1j * rng.normal(size=2 ** num_qubits)
    return vec / np.linalg.norm(vec)


def random_channel(num_qubits: int, num_kraus: int, rng: np.random.Generator) -> Channel:
    """Random CPTP map from a Haar-like isometry cut into Kraus blocks."""
    dim = 2 ** num_qubits
    gauss = rng.normal(size=(num_kraus * dim, dim)) + 1j * rng.normal(size=(num_kraus * dim, dim))
    isometry, _ = np.linalg.qr(gauss)
    return Channel(tuple(isometry[a * dim:(a + 1) * dim, :] for a in range(num_kraus)))


def tensor(*states: LabeledState) -> LabeledState:
    """Concatenate registers; the result is pure iff every factor is pure."""
    register: List[QubitLabel] = []
    for state in states:
        register.extend(state.register)
    if all(state.is_pure for state in states):
        check_size(len(register), mixed=False)
        data = np.array([1.0 + 0j])
        for state in states:
            data = np.kron(data, state.data)
    else:
        check_size(len(register), mixed=True)
        data = np.array([[1.0 + 0j]])
        for state in states:
            data = np.kron(data, state.density())
    return LabeledState(tuple(register), data)


def permute(state: LabeledState, register: Sequence[QubitLabel]) -> LabeledState:
    """Reorder the register (same label set) and the data accordingly."""
    register = tuple(register)
    if set(register) != set(state.register) or len(register) != state.num_qubits:
        raise LabelMismatch("Permutation must use exactly the state's labels")
    n = state.num_qubits
    order = state.positions(register)
    if state.is_pure:
        data = state.data.reshape((2,) * n).transpose(order).reshape(-1)
    else:
        data = state.data.reshape((2,) * (2 * n)).transpose(order + [n + q for q in order]).reshape(2 ** n, 2 ** n)
    return LabeledState(register, data)


# --- operations -------------------------------------------------------------------


def apply_unitary(state: LabeledState, labels: Sequence[QubitLabel], unitary: np.ndarray) -> LabeledState:
    positions = state.positions(labels)
    if state.is_pure:
        return LabeledState(state.register, apply_matrix(state.data, state.num_qubits, positions, unitary))
    return LabeledState(state.register, conjugate_by(state.data, state.num_qubits, positions, unitary))


def apply_channel(state: LabeledState, labels: Sequence[QubitLabel], channel: Channel) -> LabeledState:
    if channel.num_qubits != len(labels):
        raise SupportMismatch(f"Channel acts on {channel.num_qubits} qubits, {len(labels)} labels given")
    if channel.is_unitary:
        return apply_unitary(state, labels, channel.kraus[0])
    positions = state.positions(labels)
    mixed = state.to_mixed()
    rho = sum(conjugate_by(mixed.data, state.num_qubits, positions, k) for k in channel.kraus)
    return LabeledState(state.register, rho)


def apply_phase(state: LabeledState, qubit: QubitLabel, theta: float, sign: int = 1) -> LabeledState:
    """e^{-iθZ/2} on `qubit`, X-conjugated when sign is -1."""
    return apply_unitary(state, [qubit], phase_gate(theta, sign))


def partial_trace(state: LabeledState, keep: Iterable[QubitLabel]) -> LabeledState:
    keep_set = set(keep)
    positions = [idx for idx, label in enumerate(state.register) if label in keep_set]
    if len(positions) != len(keep_set):
        missing = keep_set - set(state.register)
        raise UnknownQubit(f"Qubits {[str(q) for q in sorted(missing)]} are not in the register")
    check_size(len(positions), mixed=True)
    register = tuple(state.register[idx] for idx in positions)
    if state.is_pure:
        rho = reduced_density_matrix(state.data, state.num_qubits, positions)
    else:
        rho = reduce_density(state.data, state.num_qubits, positions)
    return LabeledState(register, rho)


def _support_density(state: LabeledState, support: Sequence[QubitLabel]) -> np.ndarray:
    try:
        positions = state.positions(support)
    except UnknownQubit as exc:
        raise SupportMismatch(str(exc)) from None
    if state.is_pure:
        return reduced_density_matrix(state.data, state.num_qubits, positions)
    return reduce_density(state.data, state.num_qubits, positions)


def expectation(state: LabeledState, obs: Observable) -> float:
    rho = _support_density(state, obs.support)
    return float(np.trace(rho @ obs.matrix).real)


def variance(state: LabeledState, obs: Observable) -> float:
    rho = _support_density(state, obs.support)
    mean = np.trace(rho @ obs.matrix).real
    second = np.trace(rho @ obs.matrix @ obs.matrix).real
    var = float(second - mean ** 2)
    if -config.TOLERANCES.hermitian <= var < 0:
        var = 0.0
    return var


def project_and_renormalize(
    state: LabeledState, projector: Observable, tolerance: float = config.TOLERANCES.projection
) -> Tuple[float, LabeledState]:
    """(Tr ΠρΠ, ΠρΠ / Tr ΠρΠ) for a projector on part of the register."""
    if np.max(np.abs(projector.matrix @ projector.matrix - projector.matrix)) > config.TOLERANCES.kraus:
        raise ValueError("Observable passed as projector is not idempotent")
    try:
        positions = state.positions(projector.support)
    except UnknownQubit as exc:
        raise SupportMismatch(str(exc)) from None
    if state.is_pure:
        projected = apply_matrix(state.data, state.num_qubits, positions, projector.matrix)
        prob = float(np.vdot(projected, projected).real)
        if prob < tolerance:
            raise ZeroProbability(f"Post-selection probability {prob:.3e} is below {tolerance:.1e}")
        return prob, LabeledState(state.register, projected / math.sqrt(prob))
    projected = conjugate_by(state.data, state.num_qubits, positions, projector.matrix)
    prob = float(np.trace(projected).real)
    if prob < tolerance:
        raise ZeroProbability(f"Post-selection probability {prob:.3e} is below {tolerance:.1e}")
    return prob, LabeledState(state.register, projected / prob)


def ghz_projector(support: Sequence[QubitLabel]) -> Observable:
    vec = ghz_vector(len(support))
    return Observable(tuple(support), np.outer(vec, vec.conj()))


def fidelity(a: LabeledState, b: LabeledState) -> float:
    """Root fidelity; registers must hold the same labels."""
    if a.register != b.register:
        b = permute(b, a.register)
    if a.is_pure and b.is_pure:
        return float(abs(np.vdot(a.data, b.data)))
    if a.is_pure or b.is_pure:
        ket, rho = (a, b) if a.is_pure else (b, a)
        return float(math.sqrt(max(np.vdot(ket.data, rho.data @ ket.data).real, 0.0)))
    root = sqrtm(a.data)
    inner = sqrtm(root @ b.data @ root)
    return float(np.trace(inner).real)


def same_up_to_phase(a: LabeledState, b: LabeledState, tol: float = config.TOLERANCES.overlap) -> bool:
    return abs(fidelity(a, b) - 1.0) <= tol


# --- network states -----------------------------------------------------------------


def _check_sources(g: Hypergraph, sources: Mapping[int, LabeledState]) -> None:
    if set(sources) != set(range(len(g.hyperedges))):
        raise LabelMismatch(f"Expected sources for edges {list(range(len(g.hyperedges)))}, got {sorted(sources)}")
    for idx, state in sources.items():
        expected = {QubitLabel.source(idx, v) for v in g.hyperedges[idx]}
        if set(state.register) != expected:
            raise LabelMismatch(
                f"Source {idx} register {[str(q) for q in state.register]} does not match "
                f"{[str(q) for q in sorted(expected)]}"
            )


def _apply_assignment(state: LabeledState, g: Hypergraph, assignment: Mapping[int, Channel]) -> LabeledState:
    for v in sorted(assignment):
        labels = g.qubits_at(v)
        if not labels:
            logger.warning(f"Channel on vertex {v} ignored: the vertex holds no qubits.")
            continue
        state = apply_channel(state, labels, assignment[v])
    return state


def assemble_network_state(
    g: Hypergraph,
    sources: Mapping[int, LabeledState],
    local_channels: Optional[Mapping[int, Channel]] = None,
    mixing: Optional[Sequence[Tuple[float, Mapping[int, Channel]]]] = None,
) -> LabeledState:
    """ρ = Σ_λ p_λ (⊗_v Φ_v^(λ)) (⊗_e σ_e) on the canonical register.

    `local_channels` apply in every branch before the branch-specific channels
    of `mixing`.
    """
    _check_sources(g, sources)
    product = tensor(*(sources[idx] for idx in range(len(g.hyperedges))))
    product = permute(product, g.source_labels())
    base = _apply_assignment(product, g, local_channels or {})
    if not mixing:
        return base
    total = sum(p for p, _ in mixing)
    if abs(total - 1.0) > 1e-10 or any(p < 0 for p, _ in mixing):
        raise BadDistribution(f"Mixing probabilities must be non-negative and sum to 1, got {total}")
    if len(mixing) == 1:
        return _apply_assignment(base, g, mixing[0][1])
    rho = np.zeros((2 ** base.num_qubits,) * 2, dtype=complex)
    for p, assignment in mixing:
        if p == 0:
            continue
        rho = rho + p * _apply_assignment(base, g, assignment).to_mixed().data
    return LabeledState(base.register, rho)


def local_z_generator(register: Sequence[QubitLabel], vertices: Iterable[int]) -> Observable:
    """Σ Z/2 over every qubit of `register` held by `vertices`."""
    vertices = set(vertices)
    support = tuple(label for label in register if label.vertex in vertices)
    dim = 2 ** len(support)
    diag = np.zeros(dim)
    for idx in range(len(support)):
        bits = (np.arange(dim) >> (len(support) - 1 - idx)) & 1
        diag += 0.5 * (1 - 2 * bits)
    return Observable(support, np.diag(diag).astype(complex))


def layout_generators(layout: SignalLayout, register: Sequence[QubitLabel]) -> List[Observable]:
    """Concrete H_s for every signal; defaults to local Z/2 sums."""
    generators = []
    for signal, spec in zip(layout.signals, layout.generators):
        if spec is None:
            generators.append(local_z_generator(register, signal))
        else:
            generators.append(generator_from_spec(spec))
    return generators


def generator_from_spec(spec: GeneratorSpec) -> Observable:
    return Observable(spec.support, spec.matrix)
