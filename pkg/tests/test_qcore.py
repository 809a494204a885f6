import math

import numpy as np
import pytest

import config
import netgraph
from netgraph import GeneratorSpec, Hypergraph, QubitLabel, SignalLayout
from qcore import (
    I2,
    X,
    Z,
    BadDistribution,
    Channel,
    InvalidSize,
    InvalidState,
    LabelMismatch,
    LabeledState,
    Observable,
    SupportMismatch,
    TooLarge,
    UnknownQubit,
    ZeroProbability,
    apply_channel,
    apply_phase,
    assemble_network_state,
    basis_state,
    depolarizing_channel,
    expectation,
    fidelity,
    ghz_projector,
    ghz_state,
    ghz_vector,
    layout_generators,
    local_z_generator,
    partial_trace,
    permute,
    plus_state,
    project_and_renormalize,
    random_channel,
    random_pure_vector,
    relabel,
    same_up_to_phase,
    source_state,
    tensor,
    unitary_channel,
    variance,
)

BELL = ghz_vector(2)


def _bell_sources(g):
    return {idx: source_state(g, idx, BELL) for idx in range(len(g.hyperedges))}


def test_ghz_vector():
    assert np.allclose(ghz_vector(1), [1 / math.sqrt(2), 1 / math.sqrt(2)])
    vec = ghz_vector(3, phase=math.pi)
    assert vec[0] == pytest.approx(1 / math.sqrt(2))
    assert vec[7] == pytest.approx(-1 / math.sqrt(2))
    with pytest.raises(InvalidSize):
        ghz_vector(0)


def test_state_validation():
    label = QubitLabel.ancilla(0, 0)
    with pytest.raises(LabelMismatch):
        LabeledState((label, label), np.ones(4) / 2)
    with pytest.raises(InvalidState):
        LabeledState((label,), np.ones(4) / 2)
    with pytest.raises(InvalidState):
        LabeledState((label,), np.diag([1.2, -0.2])).validate()
    with pytest.raises(InvalidState):
        LabeledState((label,), np.array([1.0, 1.0])).validate()
    plus_state().validate()


def test_triangle_of_bell_pairs_is_pure_and_canonical():
    g = netgraph.triangle()
    rho = assemble_network_state(g, _bell_sources(g))
    assert rho.is_pure
    assert list(rho.register) == g.source_labels()
    pair = partial_trace(rho, [QubitLabel.source(2, 0), QubitLabel.source(2, 2)])
    assert np.allclose(pair.data, np.outer(BELL, BELL.conj()))


def test_full_depolarization_leaves_maximally_mixed_pair():
    g = netgraph.path(2)
    rho = assemble_network_state(g, _bell_sources(g), {0: depolarizing_channel(1.0)})
    assert not rho.is_pure
    rho.validate()
    assert np.allclose(rho.data, np.eye(4) / 4)


def test_mixing_with_global_phase_changes_nothing():
    g = Hypergraph.build(4, [(0, 1), (2, 3)])
    sources = _bell_sources(g)
    pure = assemble_network_state(g, sources)
    phase = unitary_channel(np.exp(0.7j) * I2)
    mixed = assemble_network_state(g, sources, mixing=[(0.5, {}), (0.5, {0: phase})])
    assert np.allclose(mixed.data, pure.density())


def test_mixing_must_be_a_distribution():
    g = netgraph.path(2)
    with pytest.raises(BadDistribution):
        assemble_network_state(g, _bell_sources(g), mixing=[(0.6, {}), (0.6, {})])


def test_sources_must_cover_every_edge():
    g = netgraph.triangle()
    sources = _bell_sources(g)
    del sources[1]
    with pytest.raises(LabelMismatch):
        assemble_network_state(g, sources)


def test_apply_phase_on_plus():
    theta = 0.8
    out = apply_phase(plus_state(), QubitLabel.ancilla(0, 0), theta)
    expected = LabeledState(out.register, np.array([1, np.exp(1j * theta)]) / math.sqrt(2))
    assert same_up_to_phase(out, expected)
    flipped = apply_phase(plus_state(), QubitLabel.ancilla(0, 0), theta, sign=-1)
    expected = LabeledState(out.register, np.array([1, np.exp(-1j * theta)]) / math.sqrt(2))
    assert same_up_to_phase(flipped, expected)


def test_apply_phase_unknown_qubit():
    with pytest.raises(UnknownQubit):
        apply_phase(plus_state(), QubitLabel.ancilla(5, 0), 0.1)


def test_partial_trace_of_a_product():
    a = LabeledState((QubitLabel.ancilla(0, 0),), np.diag([0.3, 0.7]))
    b = plus_state([QubitLabel.ancilla(1, 0)])
    joint = tensor(a, b)
    assert np.allclose(partial_trace(joint, a.register).data, a.data)
    with pytest.raises(UnknownQubit):
        partial_trace(joint, [QubitLabel.ancilla(2, 0)])


def test_expectation_and_variance():
    zero = basis_state([0])
    z = Observable(zero.register, Z)
    assert expectation(zero, z) == pytest.approx(1.0)
    assert variance(zero, z) == pytest.approx(0.0)
    assert variance(plus_state(), z) == pytest.approx(1.0)
    ghz = ghz_state(4)
    total = local_z_generator(ghz.register, {0})
    assert variance(ghz, total) == pytest.approx(4.0)
    with pytest.raises(SupportMismatch):
        expectation(zero, Observable((QubitLabel.ancilla(3, 0),), Z))


def test_projection_onto_zero():
    prob, post = project_and_renormalize(plus_state(), Observable(plus_state().register, np.diag([1.0, 0.0])))
    assert prob == pytest.approx(0.5)
    assert np.allclose(post.data, [1, 0])


def test_projection_of_impossible_outcome():
    ghz = ghz_state(2)
    with pytest.raises(ZeroProbability):
        project_and_renormalize(ghz, Observable(ghz.register, np.diag([0.0, 1.0, 0.0, 0.0])))


@pytest.mark.parametrize("theta", [0.0, 0.4, 2.0])
def test_ghz_projection_of_phased_plus_pair(theta):
    state = apply_phase(plus_state(n=2), QubitLabel.ancilla(0, 0), theta)
    prob, _ = project_and_renormalize(state, ghz_projector(state.register))
    assert prob == pytest.approx((1 + math.cos(theta)) / 4)


def test_projector_and_complement_exhaust_probability():
    rng = np.random.default_rng(3)
    register = tuple(QubitLabel.ancilla(0, slot) for slot in range(3))
    state = LabeledState(register, random_pure_vector(3, rng))
    proj = ghz_projector(register[:2])
    complement = Observable(proj.support, np.eye(4) - proj.matrix)
    p_in, _ = project_and_renormalize(state, proj)
    p_out, _ = project_and_renormalize(state, complement)
    assert p_in + p_out == pytest.approx(1.0)


def test_random_channel_is_trace_preserving():
    rng = np.random.default_rng(11)
    register = tuple(QubitLabel.ancilla(0, slot) for slot in range(2))
    state = LabeledState(register, random_pure_vector(2, rng))
    out = apply_channel(state, register, random_channel(2, 3, rng))
    out.validate()
    assert np.trace(out.data).real == pytest.approx(1.0)


def test_channel_rejects_incomplete_kraus():
    with pytest.raises(ValueError):
        Channel((0.5 * I2,))


def test_channel_support_must_match():
    with pytest.raises(SupportMismatch):
        apply_channel(plus_state(n=2), plus_state(n=2).register, depolarizing_channel(0.1))


def test_size_limits(monkeypatch):
    monkeypatch.setattr(config, "MAX_PURE_QUBITS", 3)
    with pytest.raises(TooLarge):
        tensor(plus_state(n=2), plus_state([QubitLabel.ancilla(1, 0), QubitLabel.ancilla(1, 1)]))


def test_permute_and_relabel():
    state = basis_state([1, 0])
    swapped = permute(state, tuple(reversed(state.register)))
    assert np.allclose(swapped.data, [0, 1, 0, 0])
    with pytest.raises(LabelMismatch):
        relabel(state, state.register[:1])


def test_fidelity_pure_against_mixed():
    ghz = ghz_state(2)
    assert fidelity(ghz, ghz.to_mixed()) == pytest.approx(1.0)
    assert fidelity(ghz, basis_state([0, 1])) == pytest.approx(0.0)


def test_layout_generators_prefer_explicit_specs():
    g = netgraph.path(2)
    label = QubitLabel.source(0, 0)
    layout = SignalLayout(
        (frozenset({0}), frozenset({1})),
        (1.0, 1.0),
        (GeneratorSpec((label,), X / 2), None),
    )
    hs = layout_generators(layout, g.source_labels())
    assert hs[0].support == (label,)
    assert np.allclose(hs[0].matrix, X / 2)
    assert hs[1].support == (QubitLabel.source(0, 1),)
    assert np.allclose(hs[1].matrix, Z / 2)
