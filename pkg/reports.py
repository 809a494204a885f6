from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

import config

logger = logging.getLogger(__name__)

try:
    from google.cloud import storage
except ImportError:  # pragma: no cover - optional for local runs
    storage = None  # type: ignore


def format_float(value: float) -> str:
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, ".12g")


def _round(value: float) -> Any:
    if math.isnan(value) or math.isinf(value):
        return format_float(value)
    return float(format(value, ".12g"))


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types with floats cut to 12 significant digits."""
    if hasattr(obj, "to_json") and callable(obj.to_json):
        return to_jsonable(obj.to_json())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable({f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)})
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (frozenset, set)):
        return [to_jsonable(v) for v in sorted(obj)]
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        if abs(obj.imag) == 0:
            return _round(float(obj.real))
        return [_round(float(obj.real)), _round(float(obj.imag))]
    if isinstance(obj, (float, np.floating)):
        return _round(float(obj))
    return obj


def render_json(payload: Any) -> str:
    return json.dumps(to_jsonable(payload), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def render_csv(rows: Sequence[Dict[str, Any]], columns: Optional[List[str]] = None) -> str:
    """CSV with a fixed column order: `columns`, or first-seen key order."""
    if columns is None:
        columns = []
        for row in rows:
            for key in row:
                if key not in columns:
                    columns.append(key)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_csv_cell(row.get(col)) for col in columns])
    return buffer.getvalue()


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    if isinstance(value, (list, tuple, dict)):
        return json.dumps(to_jsonable(value), sort_keys=True)
    return str(value)


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_json(payload), encoding="utf-8")
    return path


def write_csv(path: Path, rows: Sequence[Dict[str, Any]], columns: Optional[List[str]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_csv(rows, columns), encoding="utf-8")
    return path


def upload_report(path: Path) -> None:
    """Copy a written report to the configured bucket; errors are logged only."""
    if not config.UPLOAD_REPORTS or storage is None:
        return
    path = Path(path)
    try:
        client = storage.Client()
        bucket = client.bucket(config.REPORT_BUCKET)
        bucket.blob(f"{config.REPORT_PREFIX}/{path.name}").upload_from_filename(str(path))
        logger.info(f"Uploaded {path.name} to gs://{config.REPORT_BUCKET}/{config.REPORT_PREFIX}/")
    except Exception as exc:  # pragma: no cover - network access
        logger.error(f"Error uploading report to GCS ({path.name}): {exc}")


def send_alert(message: str) -> None:
    """Push an invariant-violation alarm to Telegram when credentials are set."""
    import requests

    token = os.getenv("TELEGRAM_BOT_TOKEN")
    chat_id = os.getenv("TELEGRAM_CHAT_ID")
    if not token or not chat_id:
        logger.warning("Telegram credentials not found. Skipping alert.")
        return

    url = f"https://api.telegram.org/bot{token}/sendMessage"
    try:
        response = requests.post(url, json={"chat_id": chat_id, "text": message}, timeout=10)
        if response.status_code == 200:
            logger.info("Alert sent to Telegram.")
        else:
            logger.error(f"Failed to send Telegram alert: {response.status_code} {response.text}")
    except Exception as exc:
        logger.error(f"An error occurred while sending Telegram alert: {exc}")
