"""Probabilistic estimation of a weighted global phase over a network of GHZ sources.

Every source distributes a GHZ state over its hyperedge. Each non-center sensor
imprints its signal on |α̃_v| plus states and projects all of its local qubits
onto a GHZ state. On success the accumulated phase Σ α̃_j θ_j ends up on the
center's qubits, where a final GHZ measurement reads it out.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

import config
from netgraph import (
    Hypergraph,
    InvalidHypergraph,
    QubitLabel,
    from_json as graph_from_json,
    is_connected,
    is_cut_vertex,
    to_json as graph_to_json,
)
from qcore import (
    LabeledState,
    TooLarge,
    ZeroProbability,
    apply_matrix,
    apply_phase,
    ghz_vector,
    phase_gate,
    plus_state,
    postselect,
    reduced_density_matrix,
    source_state,
    tensor,
    trace_distance,
)

logger = logging.getLogger(__name__)

FD_STEP = 1e-5


class ZeroWeight(ValueError):
    pass


class CutVertexCenter(ValueError):
    """The center is a cut vertex, so the phase cannot reach it from every sensor."""


class NotConvergent(RuntimeError):
    pass


class InvalidOrder(ValueError):
    pass


class DegenerateP(RuntimeError):
    """The outcome probability sits at 0 or 1, where the Fisher information is undefined."""


def normalize_weights(raw: Mapping[int, Union[int, float, str, Fraction]]) -> Tuple[Dict[int, int], int]:
    """Scale rational weights by the smallest L̃ that makes them all integers."""
    fractions: Dict[int, Fraction] = {}
    for v, w in raw.items():
        value = Fraction(w).limit_denominator(10 ** 6) if isinstance(w, float) else Fraction(w)
        if value == 0:
            raise ZeroWeight(f"Weight of vertex {v} is zero")
        fractions[int(v)] = value
    scale = reduce(math.lcm, (f.denominator for f in fractions.values()), 1)
    return {v: int(f * scale) for v, f in fractions.items()}, scale


@dataclass(frozen=True)
class ProtocolConfig:
    g: Hypergraph
    center: int
    alpha: Dict[int, int]
    theta: Dict[int, float]
    L: int = 0
    mode: str = "exact"
    seed: Optional[int] = None
    shots: Optional[int] = None
    weight_scale: int = 1

    def __post_init__(self) -> None:
        g = self.g
        if g.K < 2:
            raise InvalidHypergraph("The protocol needs at least two sensors")
        g._check_vertex(self.center)
        if not is_connected(g):
            raise InvalidHypergraph("The network must be connected")
        if is_cut_vertex(g, self.center):
            raise CutVertexCenter(f"Center {self.center} is a cut vertex")
        alpha = {int(v): int(a) for v, a in self.alpha.items()}
        theta = {int(v): float(t) for v, t in self.theta.items()}
        if set(alpha) != set(g.vertices):
            raise ValueError(f"Weights must cover vertices {list(g.vertices)}, got {sorted(alpha)}")
        if set(theta) != set(g.vertices):
            raise ValueError(f"Signals must cover vertices {list(g.vertices)}, got {sorted(theta)}")
        for v, a in alpha.items():
            if a == 0:
                raise ZeroWeight(f"Weight of vertex {v} is zero")
        L = self.L or max(abs(a) for a in alpha.values())
        if any(abs(a) > L for a in alpha.values()):
            raise ValueError(f"Every |weight| must be at most L={L}")
        if self.mode not in {"exact", "sampled"}:
            raise ValueError(f"Unknown mode {self.mode!r}")
        if self.mode == "sampled" and (self.seed is None or not self.shots or self.shots < 1):
            raise ValueError("Sampled mode needs a seed and a positive shot count")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "L", L)

    @property
    def M(self) -> int:
        return self.g.K

    @property
    def sensors(self) -> List[int]:
        """Non-center vertices in ascending order."""
        return [v for v in self.g.vertices if v != self.center]

    def theta_alpha(self) -> float:
        """θ(α) = (1/M) Σ α̃_j θ_j."""
        return sum(self.alpha[v] * self.theta[v] for v in self.g.vertices) / self.M

    def num_qubits(self) -> int:
        return sum(len(e) for e in self.g.hyperedges) + sum(abs(self.alpha[v]) for v in self.sensors)

    def with_theta(self, theta: Mapping[int, float]) -> "ProtocolConfig":
        return ProtocolConfig(
            self.g, self.center, self.alpha, dict(theta), self.L, self.mode, self.seed, self.shots, self.weight_scale
        )

    def to_json(self) -> Dict[str, Any]:
        payload = graph_to_json(self.g)
        payload.update({
            "center": self.center,
            "alpha": {str(v): a for v, a in sorted(self.alpha.items())},
            "theta": {str(v): t for v, t in sorted(self.theta.items())},
            "L": self.L,
            "mode": {"kind": self.mode, "seed": self.seed, "shots": self.shots},
        })
        return payload

    @classmethod
    def from_json(cls, payload: Mapping[str, Any]) -> "ProtocolConfig":
        """Netgraph document plus {"center", "alpha", "theta", "L", "mode"}.

        Non-integer weights (numbers or "p/q" strings) are scaled to integers;
        the estimate then targets L̃·θ(α).
        """
        g, _ = graph_from_json(dict(payload))
        try:
            raw_alpha = {int(v): a for v, a in payload["alpha"].items()}
            theta = {int(v): float(t) for v, t in payload["theta"].items()}
            center = int(payload["center"])
        except (KeyError, AttributeError, TypeError, ValueError) as exc:
            raise ValueError(f"Malformed protocol document: {exc}") from exc
        alpha, scale = normalize_weights(raw_alpha)
        mode = payload.get("mode") or {}
        if isinstance(mode, str):
            mode = {"kind": mode}
        return cls(
            g,
            center,
            alpha,
            theta,
            int(payload.get("L") or 0),
            mode.get("kind", "exact"),
            mode.get("seed"),
            mode.get("shots"),
            scale,
        )


def queries_per_run(cfg: ProtocolConfig) -> int:
    """Signal queries per run: M sensors times L plus states each."""
    return cfg.M * cfg.L


def success_prob_lower_bound(cfg: ProtocolConfig) -> float:
    """2^-(Σ_{v≠v*} |α̃_v| + Σ_e |e| - |𝒠(v*)|)."""
    exponent = (
        sum(abs(cfg.alpha[v]) for v in cfg.sensors)
        + sum(len(e) for e in cfg.g.hyperedges)
        - cfg.g.degree(cfg.center)
    )
    return 2.0 ** (-exponent)


# --- signal-state bookkeeping ---------------------------------------------------------


@dataclass(frozen=True)
class SignalStep:
    vertex: int
    measured: FrozenSet[int]
    frontier: FrozenSet[int]
    qubits: Tuple[QubitLabel, ...]
    phase: float

    def to_json(self) -> Dict[str, Any]:
        return {
            "vertex": self.vertex,
            "S": sorted(self.measured),
            "S_tilde": sorted(self.frontier),
            "Q": [str(q) for q in self.qubits],
            "phase": self.phase,
        }


def frontier_order(cfg: ProtocolConfig) -> List[int]:
    """Lowest non-center id first, then always the lowest unmeasured frontier vertex."""
    g = cfg.g
    order = [cfg.sensors[0]]
    measured = {order[0]}
    frontier = set(g.neighbors(order[0]))
    while len(order) < len(cfg.sensors):
        candidates = sorted(frontier - {cfg.center})
        if not candidates:
            raise NotConvergent(f"Frontier exhausted after {order}; the center separates the network")
        v = candidates[0]
        order.append(v)
        measured.add(v)
        frontier = (frontier - {v}) | (set(g.neighbors(v)) - measured)
    return order


def _signal_qubits(g: Hypergraph, measured: FrozenSet[int], frontier: FrozenSet[int]) -> Tuple[QubitLabel, ...]:
    qubits = [
        QubitLabel.source(idx, w)
        for idx, e in enumerate(g.hyperedges)
        if e & measured
        for w in sorted(e & frontier)
    ]
    return tuple(sorted(qubits, key=QubitLabel.sort_key))


def signal_state_predict(cfg: ProtocolConfig, order: Optional[Sequence[int]] = None) -> List[SignalStep]:
    """Predicted signal state |Ψ(Q_{S,S̃}, S)⟩ after each post-selected measurement."""
    g = cfg.g
    order = list(order) if order is not None else frontier_order(cfg)
    if sorted(order) != cfg.sensors:
        raise InvalidOrder(f"Order {order} must list every non-center sensor exactly once")
    steps: List[SignalStep] = []
    measured: FrozenSet[int] = frozenset()
    frontier: FrozenSet[int] = frozenset()
    phase = 0.0
    for position, v in enumerate(order):
        if position > 0 and v not in frontier:
            raise InvalidOrder(f"Vertex {v} is not adjacent to the sensors measured so far {sorted(measured)}")
        measured = measured | {v}
        frontier = (frontier - {v}) | (frozenset(g.neighbors(v)) - measured)
        phase += cfg.alpha[v] * cfg.theta[v]
        steps.append(SignalStep(v, measured, frontier, _signal_qubits(g, measured, frontier), phase))
        logger.debug(f"After {v}: S={sorted(measured)}, S~={sorted(frontier)}, phase={phase:.6g}")
    if measured != frozenset(cfg.sensors) or frontier != {cfg.center}:
        raise NotConvergent(f"Signal state ended on S~={sorted(frontier)} instead of the center {cfg.center}")
    return steps


def _follows_frontier(g: Hypergraph, order: Sequence[int]) -> bool:
    measured: set = set()
    frontier: set = set()
    for position, v in enumerate(order):
        if position > 0 and v not in frontier:
            return False
        measured.add(v)
        frontier = (frontier - {v}) | (set(g.neighbors(v)) - measured)
    return True


# --- exact simulation -------------------------------------------------------------------


def _prepared_state(cfg: ProtocolConfig) -> LabeledState:
    """GHZ sources followed by the signal-carrying plus states of every non-center sensor."""
    if cfg.num_qubits() > config.MAX_PURE_QUBITS:
        raise TooLarge(f"Protocol needs {cfg.num_qubits()} qubits, limit is {config.MAX_PURE_QUBITS}")
    g = cfg.g
    parts = [source_state(g, idx, ghz_vector(len(e))) for idx, e in enumerate(g.hyperedges)]
    for v in cfg.sensors:
        labels = [QubitLabel.ancilla(v, slot) for slot in range(abs(cfg.alpha[v]))]
        parts.append(plus_state(labels))
    state = tensor(*parts)
    for v in cfg.sensors:
        sign = 1 if cfg.alpha[v] > 0 else -1
        for slot in range(abs(cfg.alpha[v])):
            state = apply_phase(state, QubitLabel.ancilla(v, slot), cfg.theta[v], sign)
    return state


def _center_signal(cfg: ProtocolConfig) -> np.ndarray:
    a = cfg.alpha[cfg.center]
    return phase_gate(abs(a) * cfg.theta[cfg.center], 1 if a > 0 else -1)


@dataclass
class StepRecord:
    vertex: int
    probability: float
    joint_probability: float
    predicted: Optional[SignalStep] = None
    overlap: Optional[float] = None

    def to_json(self) -> Dict[str, Any]:
        return {
            "vertex": self.vertex,
            "probability": self.probability,
            "joint_probability": self.joint_probability,
            "predicted": None if self.predicted is None else self.predicted.to_json(),
            "overlap": self.overlap,
        }


@dataclass
class ProtocolTrace:
    order: List[int]
    steps: List[StepRecord]
    success: bool
    success_probability: float
    center_state: Optional[LabeledState]
    center_probability: float
    theta_alpha: float
    lower_bound: float = field(default=math.nan)

    def to_json(self) -> Dict[str, Any]:
        return {
            "order": list(self.order),
            "steps": [step.to_json() for step in self.steps],
            "success": self.success,
            "success_probability": self.success_probability,
            "success_prob_lower_bound": self.lower_bound,
            "center_probability": self.center_probability,
            "theta_alpha": self.theta_alpha,
            "center_state": None if self.center_state is None else self.center_state.to_json(),
        }


def run_exact(cfg: ProtocolConfig, order: Optional[Sequence[int]] = None) -> ProtocolTrace:
    """Post-select every non-center sensor on its GHZ outcome, then read out the center."""
    g = cfg.g
    order = list(order) if order is not None else frontier_order(cfg)
    if sorted(order) != cfg.sensors:
        raise InvalidOrder(f"Order {order} must list every non-center sensor exactly once")
    predicted = signal_state_predict(cfg, order) if _follows_frontier(g, order) else None

    state = _prepared_state(cfg)
    register = list(state.register)
    vector = state.data
    joint = 1.0
    steps: List[StepRecord] = []
    for idx, v in enumerate(order):
        positions = [pos for pos, label in enumerate(register) if label.vertex == v]
        prob, vector = postselect(vector, len(register), positions, ghz_vector(len(positions)))
        if prob < config.TOLERANCES.projection:
            raise ZeroProbability(f"Sensor {v} cannot succeed on this branch")
        dropped = set(positions)
        register = [label for pos, label in enumerate(register) if pos not in dropped]
        record = StepRecord(v, prob / joint, prob)
        joint = prob
        if predicted is not None:
            record.predicted = predicted[idx]
            record.overlap = _signal_overlap(vector, register, predicted[idx])
        steps.append(record)
        logger.debug(f"Sensor {v}: success probability {record.probability:.6g}, joint {joint:.6g}")

    center_vec = vector / math.sqrt(joint)
    center_state = LabeledState(tuple(register), center_vec)
    phased = apply_matrix(center_vec, len(register), [0], _center_signal(cfg))
    overlap = np.vdot(ghz_vector(len(register)), phased)
    return ProtocolTrace(
        order=order,
        steps=steps,
        success=True,
        success_probability=joint,
        center_state=center_state,
        center_probability=float(abs(overlap) ** 2),
        theta_alpha=cfg.theta_alpha(),
        lower_bound=success_prob_lower_bound(cfg),
    )


def _signal_overlap(vector: np.ndarray, register: List[QubitLabel], step: SignalStep) -> float:
    positions = [register.index(label) for label in step.qubits]
    rho = reduced_density_matrix(vector, len(register), positions)
    rho = rho / np.trace(rho).real
    target = ghz_vector(len(positions), step.phase)
    return float(np.vdot(target, rho @ target).real)


class BranchTree:
    """Unnormalized post-measurement vectors for every success/failure pattern.

    Outcomes follow `order`; measured qubits stay in the register so the
    failure projector 1 - Π can be applied alongside Π.
    """

    def __init__(self, cfg: ProtocolConfig, order: Optional[Sequence[int]] = None) -> None:
        self.cfg = cfg
        self.order = list(order) if order is not None else list(cfg.sensors)
        state = _prepared_state(cfg)
        self.register = list(state.register)
        self.n = len(self.register)
        self._positions = {
            v: [pos for pos, label in enumerate(self.register) if label.vertex == v] for v in cfg.g.vertices
        }
        self._projectors = {}
        for v in self.order:
            ket = ghz_vector(len(self._positions[v]))
            self._projectors[v] = np.outer(ket, ket.conj())
        self._cache: Dict[Tuple[bool, ...], np.ndarray] = {(): state.data}

    def vector(self, outcomes: Tuple[bool, ...]) -> np.ndarray:
        if outcomes in self._cache:
            return self._cache[outcomes]
        parent = self.vector(outcomes[:-1])
        v = self.order[len(outcomes) - 1]
        projected = apply_matrix(parent, self.n, self._positions[v], self._projectors[v])
        result = projected if outcomes[-1] else parent - projected
        self._cache[outcomes] = result
        return result

    def probability(self, outcomes: Tuple[bool, ...]) -> float:
        vec = self.vector(outcomes)
        return float(np.vdot(vec, vec).real)

    def conditional_success(self, prefix: Tuple[bool, ...]) -> float:
        parent = self.probability(prefix)
        if parent <= 0:
            return 0.0
        return min(1.0, self.probability(prefix + (True,)) / parent)

    def center_state(self, outcomes: Tuple[bool, ...]) -> np.ndarray:
        """Unnormalized center density matrix ρ(S) after the center's own signal."""
        positions = self._positions[self.cfg.center]
        phased = apply_matrix(self.vector(outcomes), self.n, positions[:1], _center_signal(self.cfg))
        return reduced_density_matrix(phased, self.n, positions)

    def center_probability(self, outcomes: Tuple[bool, ...]) -> float:
        rho = self.center_state(outcomes)
        weight = np.trace(rho).real
        if weight <= 0:
            return 0.0
        ket = ghz_vector(rho.shape[0].bit_length() - 1)
        return float(np.vdot(ket, rho @ ket).real / weight)


# --- sampling ------------------------------------------------------------------------------


@dataclass
class SampledTrace:
    shots: int
    seed: int
    success_count: int
    center_success_count: int
    outcome_counts: Dict[str, int]

    @property
    def success_frequency(self) -> float:
        return self.success_count / self.shots

    @property
    def center_frequency(self) -> float:
        return self.center_success_count / self.success_count if self.success_count else math.nan

    def to_json(self) -> Dict[str, Any]:
        return {
            "shots": self.shots,
            "seed": self.seed,
            "success_count": self.success_count,
            "center_success_count": self.center_success_count,
            "success_frequency": self.success_frequency,
            "center_frequency": self.center_frequency,
            "outcome_counts": dict(sorted(self.outcome_counts.items())),
        }


def run_sampled(cfg: ProtocolConfig, shots: Optional[int] = None, seed: Optional[int] = None) -> SampledTrace:
    """Monte-Carlo runs of the full measurement tree.

    Streams come from SeedSequence(seed).spawn(K): child v drives the
    outcomes of vertex v, including the center's final readout.
    """
    shots = shots if shots is not None else cfg.shots
    seed = seed if seed is not None else cfg.seed
    if seed is None or not shots or shots < 1:
        raise ValueError("Sampling needs a seed and a positive shot count")
    tree = BranchTree(cfg)
    streams = {v: np.random.default_rng(child) for v, child in zip(cfg.g.vertices, np.random.SeedSequence(seed).spawn(cfg.M))}

    codes = np.zeros(shots, dtype=np.int64)
    for depth, v in enumerate(tree.order):
        table = np.array([
            tree.conditional_success(tuple(bool(b) for b in prefix))
            for prefix in itertools.product((False, True), repeat=depth)
        ])
        draws = streams[v].random(shots)
        codes = codes * 2 + (draws < table[codes])
    full = 2 ** len(tree.order) - 1
    successes = codes == full
    readout = streams[cfg.center].random(shots) < tree.center_probability((True,) * len(tree.order))
    counts = np.bincount(codes, minlength=full + 1)
    width = len(tree.order)
    return SampledTrace(
        shots=int(shots),
        seed=int(seed),
        success_count=int(successes.sum()),
        center_success_count=int((successes & readout).sum()),
        outcome_counts={format(code, f"0{width}b") if width else "": int(c) for code, c in enumerate(counts) if c},
    )


# --- estimation ----------------------------------------------------------------------------


def _direction(cfg: ProtocolConfig) -> Dict[int, float]:
    """u with (1/M) Σ α̃_j u_j = 1: moving θ along u shifts θ(α) one-for-one."""
    norm = sum(a * a for a in cfg.alpha.values())
    return {v: cfg.M * a / norm for v, a in cfg.alpha.items()}


def fisher_information_of_estimate(cfg: ProtocolConfig, at: Optional[float] = None) -> float:
    """Classical FI of the center's GHZ outcome with respect to θ(α).

    `at` moves the signals to θ_j = at·u_j so that θ(α) = at; otherwise the
    configured signals are used.
    """
    u = _direction(cfg)
    base = {v: at * u[v] for v in cfg.g.vertices} if at is not None else dict(cfg.theta)

    def prob(shift: float) -> float:
        return run_exact(cfg.with_theta({v: base[v] + shift * u[v] for v in base})).center_probability

    p = prob(0.0)
    if p < 1e-9 or p > 1 - 1e-9:
        raise DegenerateP(f"Outcome probability {p:.3e} is at an extremum; shift θ")

    def slope(step: float) -> float:
        return (prob(step) - prob(-step)) / (2 * step)

    coarse = slope(FD_STEP)
    fine = slope(FD_STEP / 2)
    derivative = (4 * fine - coarse) / 3
    if abs(fine - coarse) > 1e-4 * max(1.0, abs(derivative)):
        logger.warning(f"Outcome-probability derivative unstable: {coarse:.6g} vs {fine:.6g}.")
    return derivative ** 2 / (p * (1 - p))


# --- privacy audit ---------------------------------------------------------------------------


@dataclass
class PrivacyReport:
    subsets: List[Dict[str, Any]]
    positive_control: Optional[float]
    passed: bool
    tolerance: float

    @property
    def max_same_group_distance(self) -> float:
        return max((row["same_theta_alpha_distance"] for row in self.subsets), default=0.0)

    def to_json(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "max_same_theta_alpha_distance": self.max_same_group_distance,
            "positive_control_distance": self.positive_control,
            "subsets": self.subsets,
        }


def _max_pairwise(items: Sequence[np.ndarray], metric) -> float:
    return max((metric(a, b) for a, b in itertools.combinations(items, 2)), default=0.0)


def privacy_audit(cfg: ProtocolConfig, probes: Sequence[Mapping[int, float]]) -> PrivacyReport:
    """Compare the center's unnormalized state ρ(S) across signal probes for every success set S.

    Asserted: ρ(S) agrees across probes sharing θ(α); tr ρ(S) and the diagonal
    of ρ(S) agree across all probes. The full distance across all probes is
    reported only, since every ρ(S) carries θ(α) through its coherences.
    """
    if len(probes) < 2:
        raise ValueError("A privacy audit needs at least two probes")
    tol = config.TOLERANCES.privacy
    cfgs = [cfg.with_theta(probe) for probe in probes]
    trees = [BranchTree(c) for c in cfgs]
    groups: Dict[float, List[int]] = {}
    for idx, c in enumerate(cfgs):
        groups.setdefault(round(c.theta_alpha(), 9), []).append(idx)

    sensors = trees[0].order
    rows: List[Dict[str, Any]] = []
    passed = True
    positive: Optional[float] = None
    for outcomes in itertools.product((True, False), repeat=len(sensors)):
        states = [tree.center_state(outcomes) for tree in trees]
        same = max(_max_pairwise([states[i] for i in members], trace_distance) for members in groups.values())
        diag = _max_pairwise([np.diag(s).real for s in states], lambda a, b: float(np.max(np.abs(a - b))))
        traces = _max_pairwise([np.trace(s).real for s in states], lambda a, b: float(abs(a - b)))
        across = _max_pairwise(states, trace_distance)
        ok = same <= tol and diag <= tol and traces <= tol
        passed = passed and ok
        success_set = [v for v, hit in zip(sensors, outcomes) if hit]
        rows.append({
            "S": success_set,
            "probability": float(np.trace(states[0]).real),
            "same_theta_alpha_distance": same,
            "diagonal_difference": diag,
            "probability_difference": traces,
            "all_probes_distance": across,
            "ok": ok,
        })
        if all(outcomes) and len(groups) > 1:
            reps = [states[members[0]] for members in groups.values()]
            positive = _max_pairwise(reps, trace_distance)
    if not passed:
        logger.warning("Privacy audit failed: the center state depends on more than θ(α).")
    return PrivacyReport(rows, positive, passed, tol)
