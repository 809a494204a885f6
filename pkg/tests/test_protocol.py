import math

import numpy as np
import pytest

import config
import netgraph
from protocol import (
    BranchTree,
    CutVertexCenter,
    DegenerateP,
    InvalidOrder,
    ProtocolConfig,
    ZeroWeight,
    fisher_information_of_estimate,
    frontier_order,
    normalize_weights,
    privacy_audit,
    queries_per_run,
    run_exact,
    run_sampled,
    signal_state_predict,
    success_prob_lower_bound,
)
from netgraph import QubitLabel
from qcore import TooLarge, apply_matrix, ghz_vector, phase_gate, same_up_to_phase

THETA = {0: 0.3, 1: 0.5, 2: -0.2}


def _unit(g, theta=None, center=None, **kwargs):
    center = g.K - 1 if center is None else center
    theta = theta or {v: 0.0 for v in g.vertices}
    return ProtocolConfig(g, center, {v: 1 for v in g.vertices}, theta, **kwargs)


def test_normalize_weights():
    assert normalize_weights({0: 0.5, 1: "1/3", 2: 1}) == ({0: 3, 1: 2, 2: 6}, 6)
    assert normalize_weights({0: -0.5, 1: 0.5}) == ({0: -1, 1: 1}, 2)
    assert normalize_weights({0: 2, 1: -3}) == ({0: 2, 1: -3}, 1)
    with pytest.raises(ZeroWeight):
        normalize_weights({0: 1, 1: 0.0})


def test_config_from_json_scales_rational_weights():
    doc = netgraph.to_json(netgraph.triangle())
    doc.update({"center": 2, "alpha": {"0": "1/2", "1": "1/3", "2": 1}, "theta": {"0": 0.1, "1": 0.2, "2": 0.3}})
    cfg = ProtocolConfig.from_json(doc)
    assert cfg.alpha == {0: 3, 1: 2, 2: 6}
    assert cfg.weight_scale == 6
    assert cfg.L == 6
    assert queries_per_run(cfg) == 18


def test_config_validation():
    with pytest.raises(CutVertexCenter):
        _unit(netgraph.path(3), center=1)
    with pytest.raises(ValueError):
        ProtocolConfig(netgraph.triangle(), 0, {0: 1, 1: 1}, {0: 0.0, 1: 0.0, 2: 0.0})
    with pytest.raises(ValueError):
        ProtocolConfig(netgraph.triangle(), 0, {0: 3, 1: 1, 2: 1}, {0: 0.0, 1: 0.0, 2: 0.0}, L=2)
    with pytest.raises(ValueError):
        _unit(netgraph.triangle(), mode="sampled")
    with pytest.raises(netgraph.InvalidHypergraph):
        _unit(netgraph.Hypergraph.build(4, [(0, 1), (2, 3)]), center=0)


def test_cycle_of_three_reads_out_the_total_phase():
    cfg = _unit(netgraph.cycle(3), THETA)
    trace = run_exact(cfg)
    assert cfg.theta_alpha() == pytest.approx(0.2)
    assert trace.center_probability == pytest.approx(math.cos(0.3) ** 2)
    assert trace.success_probability == pytest.approx(2 ** -6)
    assert trace.lower_bound == pytest.approx(2 ** -6)
    assert queries_per_run(cfg) == 3


def test_zero_signal_gives_certain_readout():
    trace = run_exact(_unit(netgraph.cycle(3)))
    assert trace.center_probability == pytest.approx(1.0)


@pytest.mark.parametrize("M", [3, 4, 5])
def test_cycle_success_probability_meets_the_bound(M):
    rng = np.random.default_rng(M)
    theta = {v: float(t) for v, t in enumerate(rng.uniform(-1, 1, size=M))}
    cfg = _unit(netgraph.cycle(M), theta)
    trace = run_exact(cfg)
    assert success_prob_lower_bound(cfg) == pytest.approx(2.0 ** -(3 * M - 3))
    assert trace.success_probability == pytest.approx(2.0 ** -(3 * M - 3), abs=1e-12)
    assert trace.center_probability == pytest.approx(math.cos(sum(theta.values()) / 2) ** 2)


def test_success_probability_does_not_depend_on_the_signals():
    g = netgraph.cycle(4)
    a = run_exact(_unit(g, {0: 0.1, 1: 0.2, 2: 0.3, 3: 0.4}))
    b = run_exact(_unit(g, {0: -1.0, 1: 2.0, 2: 0.0, 3: 0.7}))
    assert a.success_probability == pytest.approx(b.success_probability)


def test_signed_and_repeated_weights():
    g = netgraph.cycle(3)
    cfg = ProtocolConfig(g, 2, {0: 2, 1: -1, 2: 1}, THETA)
    trace = run_exact(cfg)
    assert trace.center_probability == pytest.approx(math.cos((2 * 0.3 - 0.5 - 0.2) / 2) ** 2)
    assert trace.success_probability >= success_prob_lower_bound(cfg) * (1 - 1e-9)
    assert cfg.L == 2


def test_center_at_the_end_of_a_path():
    cfg = _unit(netgraph.path(3), {0: 0.2, 1: 0.4, 2: 0.1}, center=0)
    trace = run_exact(cfg)
    assert trace.center_probability == pytest.approx(math.cos(0.35) ** 2)
    assert trace.success_probability >= success_prob_lower_bound(cfg) * (1 - 1e-9)


def test_sun_network_with_a_hub_hyperedge():
    g = netgraph.sun(3)
    theta = {v: 0.1 * (v + 1) for v in g.vertices}
    cfg = _unit(g, theta, center=3)
    assert frontier_order(cfg) == [0, 1, 2, 4, 5]
    trace = run_exact(cfg)
    assert trace.center_probability == pytest.approx(math.cos(sum(theta.values()) / 2) ** 2)
    assert trace.success_probability >= success_prob_lower_bound(cfg) * (1 - 1e-9)
    assert all(step.overlap == pytest.approx(1.0) for step in trace.steps)


def test_signal_state_prediction_on_the_triangle():
    cfg = _unit(netgraph.cycle(3), THETA)
    steps = signal_state_predict(cfg, [0, 1])
    assert steps[0].frontier == {1, 2}
    assert steps[0].qubits == (QubitLabel.source(0, 1), QubitLabel.source(2, 2))
    assert steps[0].phase == pytest.approx(0.3)
    assert steps[1].frontier == {2}
    assert steps[1].qubits == (QubitLabel.source(1, 2), QubitLabel.source(2, 2))
    assert steps[1].phase == pytest.approx(0.8)


def test_predicted_signal_states_match_the_simulation():
    cfg = _unit(netgraph.cycle(4), {0: 0.3, 1: -0.4, 2: 0.9, 3: 0.2}, center=0)
    trace = run_exact(cfg)
    assert trace.order == [1, 2, 3]
    for step in trace.steps:
        assert step.predicted is not None
        assert step.overlap == pytest.approx(1.0, abs=1e-9)


def test_order_must_follow_the_frontier():
    cfg = _unit(netgraph.cycle(4), center=0)
    with pytest.raises(InvalidOrder):
        signal_state_predict(cfg, [1, 3, 2])
    with pytest.raises(InvalidOrder):
        run_exact(cfg, [1, 2])


def test_measurement_order_does_not_matter():
    cfg = _unit(netgraph.cycle(4), {0: 0.3, 1: -0.4, 2: 0.9, 3: 0.2}, center=0)
    a = run_exact(cfg, [1, 2, 3])
    b = run_exact(cfg, [3, 1, 2])
    assert all(step.predicted is None for step in b.steps)
    assert a.success_probability == pytest.approx(b.success_probability)
    assert a.center_probability == pytest.approx(b.center_probability)
    assert same_up_to_phase(a.center_state, b.center_state)


def test_signal_can_sit_on_any_center_qubit():
    cfg = _unit(netgraph.cycle(3), THETA)
    trace = run_exact(cfg)
    state = trace.center_state
    gate = phase_gate(cfg.theta[2])
    ket = ghz_vector(state.num_qubits)
    first = abs(np.vdot(ket, apply_matrix(state.data, state.num_qubits, [0], gate))) ** 2
    second = abs(np.vdot(ket, apply_matrix(state.data, state.num_qubits, [1], gate))) ** 2
    assert first == pytest.approx(second)
    assert first == pytest.approx(trace.center_probability)


def test_branch_tree_agrees_with_the_exact_run():
    cfg = _unit(netgraph.cycle(3), THETA)
    tree = BranchTree(cfg)
    trace = run_exact(cfg)
    assert tree.probability((True, True)) == pytest.approx(trace.success_probability)
    assert tree.center_probability((True, True)) == pytest.approx(trace.center_probability)
    total = sum(tree.probability(o) for o in [(True, True), (True, False), (False, True), (False, False)])
    assert total == pytest.approx(1.0)
    assert tree.conditional_success(()) == pytest.approx(tree.probability((True,)))


def test_sampling_is_reproducible():
    cfg = _unit(netgraph.cycle(3), THETA, mode="sampled", seed=7, shots=2000)
    assert run_sampled(cfg).to_json() == run_sampled(cfg).to_json()
    assert run_sampled(cfg, seed=8).to_json() != run_sampled(cfg).to_json()


def test_sampling_needs_a_seed():
    with pytest.raises(ValueError):
        run_sampled(_unit(netgraph.cycle(3)), shots=10)


def test_sampled_frequencies_converge():
    cfg = _unit(netgraph.cycle(3), THETA, mode="sampled", seed=2024, shots=20000)
    sampled = run_sampled(cfg)
    p = 2 ** -6
    assert abs(sampled.success_frequency - p) <= 5 * math.sqrt(p * (1 - p) / sampled.shots)
    q = math.cos(0.3) ** 2
    assert abs(sampled.center_frequency - q) <= 5 * math.sqrt(q * (1 - q) / sampled.success_count)
    assert sum(sampled.outcome_counts.values()) == sampled.shots


def test_sampled_readout_is_certain_without_signal():
    cfg = _unit(netgraph.cycle(3), mode="sampled", seed=1, shots=5000)
    sampled = run_sampled(cfg)
    assert sampled.success_count > 0
    assert sampled.center_success_count == sampled.success_count


def test_fisher_information_is_heisenberg_scaled():
    values = {}
    for M in [2, 3, 4, 5]:
        values[M] = fisher_information_of_estimate(_unit(netgraph.cycle(M)), at=0.1)
    for M, fi in values.items():
        assert fi == pytest.approx(M ** 2, rel=1e-5)
    slope, _ = np.polyfit(np.log(list(values)), np.log(list(values.values())), 1)
    assert slope == pytest.approx(2.0, abs=1e-3)


def test_fisher_information_is_undefined_at_certain_outcomes():
    with pytest.raises(DegenerateP):
        fisher_information_of_estimate(_unit(netgraph.cycle(3)), at=0.0)


def test_privacy_audit_on_the_triangle():
    cfg = _unit(netgraph.cycle(3), THETA)
    probes = [
        {0: 0.3, 1: 0.5, 2: -0.2},
        {0: 0.6, 1: 0.2, 2: -0.2},
        {0: 1.0, 1: -0.4, 2: 0.0},
        {0: 0.1, 1: 0.1, 2: 0.1},
        {0: 2.0, 1: -1.0, 2: 0.5},
    ]
    report = privacy_audit(cfg, probes)
    assert report.passed
    assert len(report.subsets) == 4
    assert report.max_same_group_distance <= 1e-9
    assert report.positive_control > 1e-3
    assert all(row["probability_difference"] <= 1e-9 for row in report.subsets)


def test_privacy_audit_needs_two_probes():
    with pytest.raises(ValueError):
        privacy_audit(_unit(netgraph.cycle(3)), [THETA])


def test_protocol_refuses_oversized_networks(monkeypatch):
    monkeypatch.setattr(config, "MAX_PURE_QUBITS", 5)
    with pytest.raises(TooLarge):
        run_exact(_unit(netgraph.cycle(3)))
