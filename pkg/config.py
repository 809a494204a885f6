from __future__ import annotations

import logging
import os
from dataclasses import dataclass, fields, replace
from typing import Any

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

load_dotenv()


class ConfigError(ValueError):
    pass


def _is_truthy(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if value is None:
        return False
    return str(value).strip().lower() in {"1", "true", "yes", "on"}


@dataclass(frozen=True)
class Tolerances:
    """Numerical thresholds shared by every module."""

    norm: float = 1e-10
    trace: float = 1e-10
    hermitian: float = 1e-12
    psd_state: float = 1e-10
    kraus: float = 1e-10
    psd: float = 1e-8
    cov_psd: float = 1e-9
    cov_sum: float = 1e-9
    zero_block: float = 1e-10
    qfi_rank: float = 1e-12
    projection: float = 1e-14
    support: float = 1e-10
    overlap: float = 1e-9
    privacy: float = 1e-9


def parse_tolerances(raw: str, base: Tolerances | None = None) -> Tolerances:
    """Apply `name=value` overrides (comma separated) on top of `base`."""
    base = base or Tolerances()
    if not raw or not raw.strip():
        return base
    known = {f.name for f in fields(Tolerances)}
    overrides: dict[str, float] = {}
    for chunk in raw.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" not in chunk:
            raise ConfigError(f"QNM_TOL entry '{chunk}' is not of the form name=value")
        name, value = (part.strip() for part in chunk.split("=", 1))
        if name not in known:
            logger.warning(f"Ignoring unknown tolerance '{name}' in QNM_TOL.")
            continue
        try:
            overrides[name] = float(value)
        except ValueError as exc:
            raise ConfigError(f"QNM_TOL value for '{name}' is not a number: {value!r}") from exc
        if overrides[name] <= 0:
            raise ConfigError(f"QNM_TOL value for '{name}' must be positive, got {value}")
    return replace(base, **overrides)


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from exc


TOLERANCES = parse_tolerances(os.getenv("QNM_TOL", ""))

MAX_PURE_QUBITS = _int_env("QNM_MAX_PURE_QUBITS", 20)
MAX_MIXED_QUBITS = _int_env("QNM_MAX_MIXED_QUBITS", 12)

LOG_LEVEL = os.getenv("QNM_LOG_LEVEL", "INFO").strip().upper() or "INFO"

REPORT_BUCKET = os.getenv("QNM_REPORT_BUCKET", "").strip()
REPORT_PREFIX = os.getenv("QNM_REPORT_PREFIX", "qnm/reports").strip().strip("/")
UPLOAD_REPORTS = _is_truthy(os.getenv("QNM_UPLOAD_REPORTS", "true")) and bool(REPORT_BUCKET)
