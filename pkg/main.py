from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

import config
import metro
import reports
import witness
from netgraph import singleton_layout
from protocol import (
    ProtocolConfig,
    fisher_information_of_estimate,
    privacy_audit,
    queries_per_run,
    run_exact,
    run_sampled,
)
from qcore import TooLarge, assemble_network_state, min_eigenvalue, plus_state, tensor
from scenarios import (
    Scenario,
    ScenarioError,
    build_channels,
    build_product,
    build_sources,
    load_scenario,
    parse_sweep,
    pauli_observable,
    random_channels,
    with_value,
)

logging.basicConfig(
    level=getattr(logging, config.LOG_LEVEL, logging.INFO),
    format='%(asctime)s - %(levelname)s - %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S'
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_TOO_LARGE = 3
EXIT_VIOLATION = 4


@dataclass
class CommandResult:
    report: Dict[str, Any]
    row: Dict[str, Any]
    violations: List[str] = field(default_factory=list)


def _seed(args: argparse.Namespace, fallback: Optional[int]) -> Optional[int]:
    return args.seed if args.seed is not None else fallback


def cmd_bound(scenario: Scenario, args: argparse.Namespace) -> CommandResult:
    payload = scenario.typed_payload()
    g, layout = payload.build_network()
    layout = layout or singleton_layout(g)
    rng = np.random.default_rng(_seed(args, payload.seed))
    rho = assemble_network_state(g, build_sources(g, payload.source, rng), build_channels(g, payload.depolarizing))
    cert = metro.verify_qfi_bound(g, layout, rho, payload.nu)
    report = {"M": layout.M, "nu": payload.nu, **cert.to_json()}
    row = {key: value for key, value in report.items() if key not in {"k_values", "variances"}}
    row["k_max"] = max(cert.k_values)
    violations = [] if cert.holds else [f"QFI exceeds the network bound (gap {cert.gap_min_eig:.3e})"]
    return CommandResult(report, row, violations)


def cmd_witness(scenario: Scenario, args: argparse.Namespace) -> CommandResult:
    payload = scenario.typed_payload()
    if payload.model == "ising":
        comparison = witness.ising_bound_compare(payload.M, payload.eps, payload.r)
        report = comparison.to_json()
        row = {
            "model": "ising",
            "M": payload.M,
            "eps": payload.eps,
            "r": payload.r,
            "our_bound": comparison.ours,
            "separable_small_eps": comparison.separable_small_eps,
            "separable_large_eps": comparison.separable_large_eps,
            "large_eps": comparison.large_eps_regime,
        }
        return CommandResult(report, row)
    spec = witness.SpinChainSpec(payload.M, payload.r, payload.nu, payload.tau, payload.variance)
    bound = witness.spin_chain_mse_bound(spec)
    row = {"model": "spin_chain", "M": payload.M, "r": payload.r, "nu": payload.nu, "tau": payload.tau, "mse_bound": bound}
    return CommandResult(dict(row), row)


def cmd_lightcone(scenario: Scenario, args: argparse.Namespace) -> CommandResult:
    payload = scenario.typed_payload()
    seed = _seed(args, payload.seed)
    if payload.geometry == "chain-1d" and payload.gate_locality == 2:
        spec = witness.brickwork_circuit(payload.n_sites, payload.depth, seed, with_generators=payload.embedded)
    else:
        spec = witness.CircuitSpec(payload.geometry, payload.depth, payload.n_sites, payload.gate_locality, payload.ham_locality)
    q = witness.light_cone_q(spec)
    row: Dict[str, Any] = {"geometry": payload.geometry, "depth": payload.depth, "n_sites": payload.n_sites, "q": q}
    violations = []
    tol = config.TOLERANCES.psd
    if spec.explicit and payload.exact:
        support = witness.exact_lightcone_check(spec)
        row["exact_support"] = support
        if support > q:
            violations.append(f"Conjugated support {support} exceeds the light cone {q}")
    if spec.explicit and (payload.shallow or payload.embedded):
        register = witness.site_register(spec.n_sites)
        plus = plus_state(register)
        if payload.shallow:
            shallow = witness.shallow_qfi_bound(plus, spec)
            row["shallow_bound"] = shallow.bound
            row["shallow_exact_qfi"] = shallow.exact_qfi
            if shallow.bound < shallow.exact_qfi - tol:
                violations.append(f"Shallow bound {shallow.bound:.6g} below exact QFI {shallow.exact_qfi:.6g}")
        if payload.embedded:
            embedded = witness.embedded_param_qfi_bound(plus, spec)
            row["embedded_bound"] = embedded.bound
            row["embedded_exact_qfi"] = embedded.exact_qfi
            row["embedded_fd_qfi"] = embedded.finite_difference_qfi
            if embedded.bound < embedded.exact_qfi - tol:
                violations.append(f"Embedded bound {embedded.bound:.6g} below exact QFI {embedded.exact_qfi:.6g}")
    return CommandResult(dict(row), row, violations)


def cmd_decompose(scenario: Scenario, args: argparse.Namespace) -> CommandResult:
    payload = scenario.typed_payload()
    if payload.mode == "cov":
        factors = build_product(payload.factors, np.random.default_rng(payload.seed))
        register = [label for part in factors for label in part.register]
        observables = [pauli_observable(word, register) for word in payload.observables]
        decomposition = metro.cov_decompose(factors, observables)
        cov = metro.cov_matrix(tensor(*factors), observables)
        violations = decomposition.violations(cov)
        parts = {
            str(k): {"matrix": part, "psd": min_eigenvalue(part) >= -config.TOLERANCES.cov_psd}
            for k, part in decomposition.parts.items()
        }
        report = {"mode": "cov", "covariance": cov.matrix, "parts": parts, "violations": violations}
        row = {"mode": "cov", "subsystems": len(factors), "observables": len(observables), "ok": not violations}
        return CommandResult(report, row, violations)

    g, layout = payload.build_network()
    layout = layout or singleton_layout(g)
    rng = np.random.default_rng(payload.seed)
    sources = build_sources(g, payload.source, rng)
    channels = random_channels(g, rng) if payload.noise == "random" else {}
    result = metro.t_decompose(g, layout, sources, channels)
    report = {"mode": "t", **result.summary()}
    row = {"mode": "t", "M": layout.M, "holds": result.holds, "qfi_gap_min_eig": result.qfi_gap}
    violations = [] if result.holds else ["T-decomposition conditions violated"]
    return CommandResult(report, row, violations)


def cmd_protocol(scenario: Scenario, args: argparse.Namespace) -> CommandResult:
    payload = scenario.typed_payload()
    document = payload.document()
    if args.seed is not None:
        document["mode"]["seed"] = args.seed
    if args.shots is not None:
        document["mode"]["shots"] = args.shots
    cfg = ProtocolConfig.from_json(document)
    report: Dict[str, Any] = {"config": cfg.to_json(), "queries_per_run": queries_per_run(cfg)}
    row: Dict[str, Any] = {"M": cfg.M, "theta_alpha": cfg.theta_alpha()}
    violations: List[str] = []

    if cfg.mode == "sampled":
        sampled = run_sampled(cfg)
        report["sampled"] = sampled.to_json()
        row.update({
            "shots": sampled.shots,
            "success_count": sampled.success_count,
            "center_success_count": sampled.center_success_count,
        })
        return CommandResult(report, row, violations)

    trace = run_exact(cfg)
    report["trace"] = trace.to_json()
    row.update({
        "success_probability": trace.success_probability,
        "success_prob_lower_bound": trace.lower_bound,
        "center_probability": trace.center_probability,
    })
    if trace.success_probability < trace.lower_bound * (1 - 1e-9):
        violations.append(f"Success probability {trace.success_probability:.6g} below {trace.lower_bound:.6g}")
    if payload.fisher_at is not None:
        fisher = fisher_information_of_estimate(cfg, payload.fisher_at)
        report["fisher_information"] = fisher
        row["fisher_information"] = fisher
    if payload.audit_probes:
        probes = [{int(v): t for v, t in probe.items()} for probe in payload.audit_probes]
        audit = privacy_audit(cfg, probes)
        report["privacy"] = audit.to_json()
        row["privacy_passed"] = audit.passed
        if not audit.passed:
            violations.append("Privacy audit failed")
    return CommandResult(report, row, violations)


COMMANDS: Dict[str, Callable[[Scenario, argparse.Namespace], CommandResult]] = {
    "bound": cmd_bound,
    "witness": cmd_witness,
    "protocol": cmd_protocol,
    "decompose": cmd_decompose,
    "lightcone": cmd_lightcone,
}


def _fisher_slope(rows: Sequence[Dict[str, Any]]) -> Optional[float]:
    points = [(row["M"], row["fisher_information"]) for row in rows if row.get("fisher_information")]
    if len(points) < 2:
        return None
    ms, fis = zip(*points)
    slope, _ = np.polyfit(np.log(ms), np.log(fis), 1)
    return float(slope)


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Precision bounds and probabilistic protocols for quantum sensor networks.")
    parser.add_argument("--scenario", required=True, type=Path, help="Scenario JSON file")
    parser.add_argument("--out", required=True, type=Path, help="Report path")
    parser.add_argument("--format", choices=("json", "csv"), default=None, help="Overrides the scenario's output format")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--shots", type=int, default=None)
    parser.add_argument("--sweep", default=None, help="key=start:stop:step over M, eps, depth, r or nu")
    return parser.parse_args(argv)


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
        fmt = args.format or scenario.output.format
        if args.sweep:
            key, values = parse_sweep(args.sweep)
            grid = [with_value(scenario, key, value) for value in values]
        else:
            key, grid = None, [scenario]
        logger.info(f"--- Running {scenario.kind} on {len(grid)} point(s) ---")
        results = [COMMANDS[point.kind](point, args) for point in grid]
    except (ScenarioError, ValidationError, ValueError) as exc:
        logger.error(f"Invalid scenario: {exc}")
        return EXIT_VALIDATION
    except TooLarge as exc:
        logger.error(f"Computation infeasible: {exc}")
        return EXIT_TOO_LARGE
    except RuntimeError as exc:
        logger.error(f"Scenario cannot be evaluated: {exc}")
        return EXIT_VALIDATION

    rows = [result.row for result in results]
    if key is not None:
        for value, row in zip(values, rows):
            row.setdefault(key, value)
        slope = _fisher_slope(rows) if scenario.kind == "protocol" else None
        if slope is not None:
            logger.info(f"Fisher information vs M log-log slope: {slope:.4f}")
            for row in rows:
                row["fisher_slope"] = slope

    if fmt == "csv":
        path = reports.write_csv(args.out, rows)
    elif key is None:
        path = reports.write_json(args.out, results[0].report)
    else:
        path = reports.write_json(args.out, {"sweep": key, "points": [result.report for result in results], "rows": rows})
    logger.info(f"Report written to {path}")
    reports.upload_report(path)

    violations = [message for result in results for message in result.violations]
    if violations:
        message = f"Invariant violation in {scenario.kind} scenario {args.scenario.name}: " + "; ".join(violations)
        logger.error(message)
        reports.send_alert(message)
        return EXIT_VIOLATION
    logger.info("--- Finished ---")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(run())
