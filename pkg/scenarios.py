"""Scenario documents for the command line: validation, sweeps and object construction."""

from __future__ import annotations

import itertools
import json
import logging
import math
from functools import reduce
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator

import netgraph
from netgraph import Hypergraph, QubitLabel, SignalLayout
from qcore import (
    I2,
    X,
    Y,
    Z,
    Channel,
    LabeledState,
    Observable,
    depolarizing_channel,
    ghz_vector,
    random_channel,
    random_pure_vector,
    source_state,
)

logger = logging.getLogger(__name__)

SWEEP_KEYS = {"M": int, "eps": float, "depth": int, "r": int, "nu": int}
PAULIS = {"I": I2, "X": X, "Y": Y, "Z": Z}


class ScenarioError(ValueError):
    pass


class OutputSpec(BaseModel):
    format: Literal["json", "csv"] = "json"


class NetworkPayload(BaseModel):
    """A hypergraph either spelled out (`network`) or taken from a named family."""

    network: Optional[Dict[str, Any]] = None
    family: Optional[Literal["triangle", "cycle", "path", "complete", "sun"]] = None
    M: Optional[int] = Field(default=None, ge=2)

    def build_network(self) -> Tuple[Hypergraph, Optional[SignalLayout]]:
        if self.network is not None:
            return netgraph.from_json(self.network)
        if self.family is None:
            raise ScenarioError("Give either 'network' or 'family'")
        if self.family == "triangle":
            return netgraph.triangle(), None
        if self.M is None:
            raise ScenarioError(f"Family {self.family!r} needs M")
        builders = {
            "cycle": netgraph.cycle,
            "path": netgraph.path,
            "complete": netgraph.complete_graph,
            "sun": netgraph.sun,
        }
        return builders[self.family](self.M), None


class BoundPayload(NetworkPayload):
    source: Literal["ghz", "plus", "random"] = "ghz"
    depolarizing: float = Field(default=0.0, ge=0.0, le=1.0)
    nu: int = Field(default=1, ge=1)
    seed: int = 0


class WitnessPayload(BaseModel):
    model: Literal["ising", "spin_chain"] = "ising"
    M: int = Field(default=10, ge=1)
    eps: float = Field(default=0.0, ge=0.0)
    r: int = Field(default=1, ge=1)
    nu: int = Field(default=1, ge=1)
    tau: int = Field(default=2, ge=1)
    variance: float = Field(default=0.25, ge=0.0)


class ProtocolPayload(NetworkPayload):
    center: int = 0
    alpha: Optional[Dict[str, Union[int, float, str]]] = None
    theta: Dict[str, float] = Field(default_factory=dict)
    L: int = Field(default=0, ge=0)
    mode: Literal["exact", "sampled"] = "exact"
    seed: Optional[int] = None
    shots: Optional[int] = Field(default=None, ge=1)
    audit_probes: List[Dict[str, float]] = Field(default_factory=list)
    fisher_at: Optional[float] = None

    def document(self) -> Dict[str, Any]:
        g, _ = self.build_network()
        doc = netgraph.to_json(g)
        alpha = self.alpha or {str(v): 1 for v in g.vertices}
        theta = self.theta or {str(v): 0.0 for v in g.vertices}
        doc.update({
            "center": self.center,
            "alpha": alpha,
            "theta": theta,
            "L": self.L,
            "mode": {"kind": self.mode, "seed": self.seed, "shots": self.shots},
        })
        return doc


class DecomposePayload(NetworkPayload):
    mode: Literal["cov", "t"] = "cov"
    source: Literal["ghz", "plus", "random"] = "ghz"
    noise: Literal["none", "random"] = "none"
    factors: List[str] = Field(default_factory=list)
    observables: List[str] = Field(default_factory=list)
    seed: int = 0

    @field_validator("factors")
    @classmethod
    def known_factors(cls, value: List[str]) -> List[str]:
        for name in value:
            if name not in FACTOR_STATES:
                raise ValueError(f"Unknown factor state {name!r}; expected one of {sorted(FACTOR_STATES)}")
        return value

    @field_validator("observables")
    @classmethod
    def pauli_strings(cls, value: List[str]) -> List[str]:
        for word in value:
            if not word or set(word) - set(PAULIS):
                raise ValueError(f"Observable {word!r} must be a non-empty Pauli string")
        return value


class LightconePayload(BaseModel):
    geometry: Literal["generic", "chain-1d", "lattice-2d"] = "chain-1d"
    depth: int = Field(default=1, ge=0)
    n_sites: int = Field(default=6, ge=2)
    gate_locality: int = Field(default=2, ge=1)
    ham_locality: int = Field(default=1, ge=1)
    seed: int = 0
    exact: bool = True
    shallow: bool = False
    embedded: bool = False


PAYLOADS = {
    "bound": BoundPayload,
    "witness": WitnessPayload,
    "protocol": ProtocolPayload,
    "decompose": DecomposePayload,
    "lightcone": LightconePayload,
}


class Scenario(BaseModel):
    kind: Literal["bound", "witness", "protocol", "decompose", "lightcone"]
    payload: Dict[str, Any] = Field(default_factory=dict)
    output: OutputSpec = Field(default_factory=OutputSpec)

    def typed_payload(self) -> BaseModel:
        return PAYLOADS[self.kind].model_validate(self.payload)


def load_scenario(path: Path) -> Scenario:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScenarioError(f"Cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"Scenario {path} is not valid JSON: {exc}") from exc
    scenario = Scenario.model_validate(raw)
    scenario.typed_payload()
    return scenario


# --- sweeps -------------------------------------------------------------------------------


def parse_sweep(text: str) -> Tuple[str, List[Union[int, float]]]:
    """`key=start:stop:step` into an inclusive, ordered grid."""
    try:
        key, spec = text.split("=", 1)
        start, stop, step = (float(part) for part in spec.split(":"))
    except ValueError as exc:
        raise ScenarioError(f"Sweep {text!r} is not of the form key=start:stop:step") from exc
    key = key.strip()
    if key not in SWEEP_KEYS:
        raise ScenarioError(f"Cannot sweep {key!r}; supported keys are {sorted(SWEEP_KEYS)}")
    if step <= 0 or stop < start:
        raise ScenarioError(f"Sweep {text!r} needs step > 0 and stop >= start")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    cast = SWEEP_KEYS[key]
    values = [cast(round(start + i * step, 12)) for i in range(count)]
    return key, values


def with_value(scenario: Scenario, key: str, value: Union[int, float]) -> Scenario:
    model = PAYLOADS[scenario.kind]
    if key not in model.model_fields:
        raise ScenarioError(f"Scenario kind {scenario.kind!r} has no {key!r} to sweep")
    payload = dict(scenario.payload)
    payload[key] = value
    updated = scenario.model_copy(update={"payload": payload})
    updated.typed_payload()
    return updated


# --- object construction -------------------------------------------------------------------


FACTOR_STATES = {
    "zero": lambda rng: np.array([1, 0], dtype=complex),
    "one": lambda rng: np.array([0, 1], dtype=complex),
    "plus": lambda rng: np.array([1, 1], dtype=complex) / math.sqrt(2),
    "bell": lambda rng: ghz_vector(2),
    "ghz3": lambda rng: ghz_vector(3),
    "random1": lambda rng: random_pure_vector(1, rng),
    "random2": lambda rng: random_pure_vector(2, rng),
}


def build_sources(g: Hypergraph, kind: str, rng: np.random.Generator) -> Dict[int, LabeledState]:
    sources = {}
    for idx, edge in enumerate(g.hyperedges):
        n = len(edge)
        if kind == "ghz":
            data = ghz_vector(n)
        elif kind == "plus":
            data = np.ones(2 ** n, dtype=complex) / math.sqrt(2 ** n)
        else:
            data = random_pure_vector(n, rng)
        sources[idx] = source_state(g, idx, data)
    return sources


def local_depolarizing(num_qubits: int, p: float) -> Channel:
    """Independent single-qubit depolarizing noise on every qubit of a vertex."""
    single = depolarizing_channel(p).kraus
    kraus = [reduce(np.kron, combo) for combo in itertools.product(single, repeat=num_qubits)]
    return Channel(tuple(kraus))


def build_channels(g: Hypergraph, p: float) -> Dict[int, Channel]:
    if p == 0:
        return {}
    return {v: local_depolarizing(g.degree(v), p) for v in g.vertices if g.degree(v)}


def build_product(factors: List[str], rng: np.random.Generator) -> List[LabeledState]:
    states = []
    for k, name in enumerate(factors):
        data = FACTOR_STATES[name](rng)
        n = int(round(math.log2(data.shape[0])))
        states.append(LabeledState(tuple(QubitLabel.ancilla(k, i) for i in range(n)), data))
    return states


def pauli_observable(word: str, register: List[QubitLabel]) -> Observable:
    if len(word) != len(register):
        raise ScenarioError(f"Observable {word!r} has {len(word)} letters for {len(register)} qubits")
    support = tuple(label for label, letter in zip(register, word) if letter != "I")
    matrix = reduce(np.kron, [PAULIS[letter] for letter in word if letter != "I"], np.eye(1, dtype=complex))
    return Observable(support, matrix)


def random_channels(g: Hypergraph, rng: np.random.Generator, max_kraus: int = 2) -> Dict[int, Channel]:
    return {
        v: random_channel(g.degree(v), int(rng.integers(1, max_kraus + 1)), rng)
        for v in g.vertices
        if g.degree(v)
    }
