"""Hypergraph topology of a sensor network and its combinatorial quantities."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

logger = logging.getLogger(__name__)


class InvalidHypergraph(ValueError):
    pass


class UnknownVertex(ValueError):
    pass


class NoIncidentEdge(ValueError):
    """The signal touches no hyperedge, i.e. it sits on an isolated sensor."""


@dataclass(frozen=True, order=True)
class QubitLabel:
    """A qubit of the network register.

    Source qubits are `[e, v]` (kind "source", edge index, vertex id); locally
    prepared plus states are `(v, slot)` (kind "ancilla", vertex id, slot).
    """

    kind: str
    first: int
    second: int

    @classmethod
    def source(cls, edge: int, vertex: int) -> "QubitLabel":
        return cls("source", edge, vertex)

    @classmethod
    def ancilla(cls, vertex: int, slot: int) -> "QubitLabel":
        return cls("ancilla", vertex, slot)

    @property
    def vertex(self) -> int:
        return self.second if self.kind == "source" else self.first

    @property
    def edge(self) -> Optional[int]:
        return self.first if self.kind == "source" else None

    def sort_key(self) -> Tuple[int, int, int]:
        # sources first (edge, vertex), ancillas last (vertex, slot)
        return (0 if self.kind == "source" else 1, self.first, self.second)

    def to_json(self) -> List[Any]:
        return [self.kind, self.first, self.second]

    @classmethod
    def from_json(cls, raw: Sequence[Any]) -> "QubitLabel":
        kind, first, second = raw
        if kind not in {"source", "ancilla"}:
            raise ValueError(f"Unknown qubit kind {kind!r}")
        return cls(str(kind), int(first), int(second))

    def __str__(self) -> str:
        if self.kind == "source":
            return f"[{self.first},{self.second}]"
        return f"({self.first},{self.second})"


@dataclass(frozen=True)
class Hypergraph:
    vertices: Tuple[int, ...]
    hyperedges: Tuple[frozenset, ...]

    def __post_init__(self) -> None:
        vertices = tuple(int(v) for v in self.vertices)
        if vertices != tuple(range(len(vertices))):
            raise InvalidHypergraph(f"Vertex ids must be dense 0..K-1, got {list(vertices)}")
        edges = tuple(frozenset(int(v) for v in e) for e in self.hyperedges)
        seen = set()
        for idx, edge in enumerate(edges):
            if len(edge) < 2:
                raise InvalidHypergraph(f"Hyperedge {idx} has fewer than 2 vertices: {sorted(edge)}")
            if not edge <= set(vertices):
                raise InvalidHypergraph(f"Hyperedge {idx} references unknown vertices: {sorted(edge - set(vertices))}")
            if edge in seen:
                raise InvalidHypergraph(f"Duplicate hyperedge {sorted(edge)}")
            seen.add(edge)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "hyperedges", edges)

    @classmethod
    def build(cls, num_vertices: int, edges: Iterable[Iterable[int]]) -> "Hypergraph":
        return cls(tuple(range(num_vertices)), tuple(frozenset(e) for e in edges))

    @property
    def K(self) -> int:
        return len(self.vertices)

    def _check_vertex(self, v: int) -> None:
        if v not in range(self.K):
            raise UnknownVertex(f"Vertex {v} is not in the hypergraph (K={self.K})")

    def incident_edges(self, v: int) -> List[int]:
        """Indices of hyperedges containing v, i.e. 𝒠(v)."""
        self._check_vertex(v)
        return [idx for idx, e in enumerate(self.hyperedges) if v in e]

    def degree(self, v: int) -> int:
        """c_v, the number of hyperedges containing v."""
        return len(self.incident_edges(v))

    def neighbors(self, v: int) -> List[int]:
        found = set()
        for idx in self.incident_edges(v):
            found.update(self.hyperedges[idx])
        found.discard(v)
        return sorted(found)

    def source_labels(self) -> List[QubitLabel]:
        """All source qubits in canonical order (edge index, then vertex id)."""
        return [QubitLabel.source(idx, v) for idx, e in enumerate(self.hyperedges) for v in sorted(e)]

    def qubits_at(self, v: int) -> List[QubitLabel]:
        return [QubitLabel.source(idx, v) for idx in self.incident_edges(v)]


@dataclass(frozen=True)
class GeneratorSpec:
    """H_s given explicitly: the labeled qubits it acts on and its matrix."""

    support: Tuple[QubitLabel, ...]
    matrix: np.ndarray = field(compare=False)


@dataclass(frozen=True)
class SignalLayout:
    """The signal sets 𝒮 with their weights α and optional explicit generators.

    A signal without an explicit generator uses Σ Z/2 over every qubit held
    by the signal's vertices.
    """

    signals: Tuple[frozenset, ...]
    weights: Tuple[float, ...]
    generators: Tuple[Optional[GeneratorSpec], ...] = ()

    def __post_init__(self) -> None:
        signals = tuple(frozenset(int(v) for v in s) for s in self.signals)
        if not signals:
            raise InvalidHypergraph("A signal layout needs at least one signal (M >= 1)")
        for idx, s in enumerate(signals):
            if not s:
                raise InvalidHypergraph(f"Signal {idx} is empty")
        weights = tuple(float(w) for w in self.weights)
        if len(weights) != len(signals):
            raise InvalidHypergraph(f"Expected {len(signals)} weights, got {len(weights)}")
        generators = tuple(self.generators) or (None,) * len(signals)
        if len(generators) != len(signals):
            raise InvalidHypergraph(f"Expected {len(signals)} generator specs, got {len(generators)}")
        object.__setattr__(self, "signals", signals)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "generators", generators)

    @property
    def M(self) -> int:
        return len(self.signals)

    def check_against(self, g: Hypergraph) -> None:
        for idx, s in enumerate(self.signals):
            if not s <= set(g.vertices):
                raise InvalidHypergraph(f"Signal {idx} uses vertices outside the hypergraph: {sorted(s - set(g.vertices))}")


def singleton_layout(g: Hypergraph, weights: Optional[Sequence[float]] = None) -> SignalLayout:
    """One singleton signal per vertex; uniform weights 1/M by default."""
    if weights is None:
        weights = [1.0 / g.K] * g.K
    return SignalLayout(tuple(frozenset({v}) for v in g.vertices), tuple(weights))


def influence(g: Hypergraph, layout: SignalLayout, s: int) -> int:
    """k_s: max over hyperedges touching s of the number of signals touching that edge."""
    if not 0 <= s < layout.M:
        raise IndexError(f"Signal index {s} out of range (M={layout.M})")
    signal = layout.signals[s]
    best = 0
    for edge in g.hyperedges:
        if not edge & signal:
            continue
        touching = sum(1 for t in layout.signals if t & edge)
        best = max(best, touching)
    if best == 0:
        raise NoIncidentEdge(f"Signal {s} ({sorted(signal)}) intersects no hyperedge")
    return best


def influence_or_isolated(g: Hypergraph, layout: SignalLayout, s: int) -> int:
    """influence() with the isolated-sensor fallback k_s = 1."""
    try:
        return influence(g, layout, s)
    except NoIncidentEdge as exc:
        logger.warning(f"{exc}; using k_s = 1 for an isolated sensor.")
        return 1


def max_influence(g: Hypergraph, layout: SignalLayout) -> int:
    return max(influence(g, layout, s) for s in range(layout.M))


def influences(g: Hypergraph, layout: SignalLayout) -> List[int]:
    return [influence_or_isolated(g, layout, s) for s in range(layout.M)]


def _clique_expansion(g: Hypergraph, vertices: Optional[Iterable[int]] = None) -> nx.Graph:
    graph = nx.Graph()
    graph.add_nodes_from(g.vertices if vertices is None else vertices)
    for edge in g.hyperedges:
        members = sorted(edge)
        for i, a in enumerate(members):
            for b in members[i + 1:]:
                graph.add_edge(a, b)
    return graph


def is_connected(g: Hypergraph) -> bool:
    """True iff the vertex/hyperedge incidence structure connects all vertices."""
    if g.K == 0:
        return False
    incidence = nx.Graph()
    incidence.add_nodes_from(("v", v) for v in g.vertices)
    for idx, edge in enumerate(g.hyperedges):
        incidence.add_edges_from((("e", idx), ("v", v)) for v in edge)
    return nx.is_connected(incidence)


def is_cut_vertex(g: Hypergraph, v: int) -> bool:
    """Whether removing v (shrinking its hyperedges) disconnects the other vertices.

    A shrunk hyperedge keeps connecting its remaining members, so this is an
    articulation point of the clique expansion.
    """
    g._check_vertex(v)
    if g.K <= 2:
        return False
    return v in set(nx.articulation_points(_clique_expansion(g)))


def remaining_connected(g: Hypergraph, v: int) -> bool:
    """Brute-force check that g without v stays connected (residual hyperedges kept)."""
    g._check_vertex(v)
    rest = [u for u in g.vertices if u != v]
    if len(rest) <= 1:
        return True
    graph = nx.Graph()
    graph.add_nodes_from(rest)
    for edge in g.hyperedges:
        residual = sorted(edge - {v})
        if len(residual) < 2:
            continue
        graph.add_edges_from((residual[0], u) for u in residual[1:])
    return nx.is_connected(graph)


# --- fixtures ---------------------------------------------------------------


def triangle() -> Hypergraph:
    return Hypergraph.build(3, [(0, 1), (1, 2), (0, 2)])


def cycle(M: int) -> Hypergraph:
    """Ring of M Bell edges; two sensors share a single edge."""
    if M < 2:
        raise InvalidHypergraph(f"A cycle needs at least 2 vertices, got {M}")
    if M == 2:
        return path(2)
    return Hypergraph.build(M, [(j, (j + 1) % M) for j in range(M)])


def path(n: int) -> Hypergraph:
    if n < 2:
        raise InvalidHypergraph(f"A path needs at least 2 vertices, got {n}")
    return Hypergraph.build(n, [(j, j + 1) for j in range(n - 1)])


def complete_graph(n: int) -> Hypergraph:
    return Hypergraph.build(n, [(a, b) for a in range(n) for b in range(a + 1, n)])


def sun(M: int) -> Hypergraph:
    """Hub hyperedge over vertices 0..M-1, pendant edge (j, M+j) for each hub vertex."""
    if M < 2:
        raise InvalidHypergraph(f"The sun network needs M >= 2, got {M}")
    edges: List[Tuple[int, ...]] = [tuple(range(M))]
    edges.extend((j, M + j) for j in range(M))
    return Hypergraph.build(2 * M, edges)


# --- JSON ---------------------------------------------------------------------


def to_json(g: Hypergraph, layout: Optional[SignalLayout] = None) -> Dict[str, Any]:
    payload: Dict[str, Any] = {
        "vertices": list(g.vertices),
        "edges": [sorted(e) for e in g.hyperedges],
    }
    if layout is not None:
        payload["signals"] = [sorted(s) for s in layout.signals]
        payload["weights"] = list(layout.weights)
        if any(spec is not None for spec in layout.generators):
            payload["generators"] = [
                None if spec is None else {
                    "support": [label.to_json() for label in spec.support],
                    "matrix": [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(spec.matrix)],
                }
                for spec in layout.generators
            ]
    return payload


def _generator_from_json(raw: Any) -> Optional[GeneratorSpec]:
    if raw is None:
        return None
    support = tuple(QubitLabel.from_json(item) for item in raw["support"])
    matrix = np.array([[complex(re, im) for re, im in row] for row in raw["matrix"]], dtype=complex)
    dim = 2 ** len(support)
    if matrix.shape != (dim, dim):
        raise InvalidHypergraph(f"Generator matrix must be {dim}x{dim} for {len(support)} qubits, got {matrix.shape}")
    return GeneratorSpec(support, matrix)


def from_json(payload: Dict[str, Any]) -> Tuple[Hypergraph, Optional[SignalLayout]]:
    """Parse {"vertices", "edges", "signals", "weights"[, "generators"]}."""
    try:
        g = Hypergraph(tuple(payload["vertices"]), tuple(frozenset(e) for e in payload.get("edges", [])))
    except (KeyError, TypeError) as exc:
        raise InvalidHypergraph(f"Malformed hypergraph document: {exc}") from exc
    if "signals" not in payload:
        return g, None
    signals = tuple(frozenset(s) for s in payload["signals"])
    weights = payload.get("weights")
    if weights is None:
        weights = [1.0 / len(signals)] * len(signals)
    generators = tuple(_generator_from_json(item) for item in payload.get("generators", []))
    layout = SignalLayout(signals, tuple(weights), generators)
    layout.check_against(g)
    return g, layout


def loads(text: str) -> Tuple[Hypergraph, Optional[SignalLayout]]:
    return from_json(json.loads(text))
