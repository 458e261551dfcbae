from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from app.services.estimation_service import CalibrationTable, CountTable, EstimateResult
from app.services.protocol_service import OUTCOMES, PhasePair
from app.utils.logger import get_logger

logger = get_logger(__name__)

CALIBRATION_HEADER = ["theta1_deg", "theta2_deg", "p_DH", "p_DV", "p_AH", "p_AV"]


def fmt(x: float) -> str:
    """Shortest round-trippable text for a float; inf/nan spelled out."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.17g}"


def sidecar_path(csv_path: Path) -> Path:
    return Path(csv_path).with_suffix(".meta.json")


# ---------- generic writers ----------

def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    logger.debug("wrote %s", path)
    return path


def read_csv(path: Path, header: Sequence[str]) -> List[Dict[str, str]]:
    """Rows as dicts; the header must match exactly."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            found = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: file is empty") from None
        if found != list(header):
            raise ValueError(f"{path}: expected header {','.join(header)}, got {','.join(found)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            rows.append(dict(zip(header, row), _line=str(lineno)))
    return rows


def write_json(path: Path, payload: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")
    logger.debug("wrote %s", path)
    return path


def read_json(path: Path) -> Dict[str, Any]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: not valid JSON ({e.msg} at line {e.lineno})") from None
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object at top level")
    return data


def _field(record: Mapping[str, Any], key: str, path: Path, cast=float):
    if key not in record:
        raise ValueError(f"{path}: missing field '{key}'")
    try:
        return cast(record[key])
    except (TypeError, ValueError):
        raise ValueError(f"{path}: field '{key}' has invalid value {record[key]!r}") from None


def _cell(row: Mapping[str, str], key: str, path: Path) -> float:
    try:
        return float(row[key])
    except ValueError:
        raise ValueError(f"{path}: row {row['_line']} field '{key}' is not a number: {row[key]!r}") from None


# ---------- calibration ----------

def write_calibration(cal: CalibrationTable, path: Path) -> Path:
    """CSV of node probabilities (degrees) plus a `.meta.json` sidecar."""
    rows = []
    for i, t1 in enumerate(cal.grid1):
        for j, t2 in enumerate(cal.grid2):
            rows.append([math.degrees(t1), math.degrees(t2), *cal.probs[i, j].tolist()])
    write_csv(path, CALIBRATION_HEADER, rows)
    write_json(
        sidecar_path(path),
        {"K": cal.K, "shots_per_node": cal.shots_per_node, "model": cal.model, "seed": cal.seed},
    )
    return Path(path)


def read_calibration(path: Path) -> CalibrationTable:
    path = Path(path)
    meta_file = sidecar_path(path)
    if not meta_file.exists():
        raise ValueError(f"{path}: calibration metadata {meta_file} not found")
    meta = read_json(meta_file)
    K = _field(meta, "K", meta_file)
    shots = meta.get("shots_per_node")
    model = meta.get("model", "ideal")
    if model not in ("ideal", "optics"):
        raise ValueError(f"{meta_file}: field 'model' must be 'ideal' or 'optics', got {model!r}")

    rows = read_csv(path, CALIBRATION_HEADER)
    if not rows:
        raise ValueError(f"{path}: no calibration rows")
    nodes = {}
    for row in rows:
        key = (_cell(row, "theta1_deg", path), _cell(row, "theta2_deg", path))
        if key in nodes:
            raise ValueError(f"{path}: row {row['_line']} repeats node {key}")
        nodes[key] = [_cell(row, f"p_{o}", path) for o in OUTCOMES]

    g1 = sorted({k[0] for k in nodes})
    g2 = sorted({k[1] for k in nodes})
    if len(nodes) != len(g1) * len(g2):
        raise ValueError(f"{path}: nodes do not form a full {len(g1)}x{len(g2)} grid")
    probs = np.array([[nodes[(a, b)] for b in g2] for a in g1])
    return CalibrationTable(
        np.deg2rad(g1),
        np.deg2rad(g2),
        probs,
        K,
        shots_per_node=None if shots is None else int(shots),
        model=model,
        seed=meta.get("seed"),
    )


# ---------- counts ----------

def counts_record(counts: CountTable) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        "K": counts.K,
        "shots": counts.shots,
        "counts": counts.as_dict(),
        "seed": counts.seed,
    }
    if counts.truth is not None:
        record["theta1_deg"], record["theta2_deg"] = counts.truth.degrees
    return record


def write_counts(counts: CountTable, path: Path) -> Path:
    return write_json(path, counts_record(counts))


def read_counts(path: Path) -> CountTable:
    path = Path(path)
    record = read_json(path)
    K = _field(record, "K", path)
    raw = record.get("counts")
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: field 'counts' must be an object keyed by {', '.join(OUTCOMES)}")
    values = []
    for o in OUTCOMES:
        if o not in raw:
            raise ValueError(f"{path}: missing field 'counts.{o}'")
        v = raw[o]
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise ValueError(f"{path}: field 'counts.{o}' must be a non-negative integer, got {v!r}")
        values.append(v)
    if "shots" in record and int(record["shots"]) != sum(values):
        raise ValueError(f"{path}: field 'shots'={record['shots']} does not equal the sum of counts {sum(values)}")

    truth: Optional[PhasePair] = None
    if "theta1_deg" in record and "theta2_deg" in record:
        truth = PhasePair.from_degrees(_field(record, "theta1_deg", path), _field(record, "theta2_deg", path))
    return CountTable(np.array(values), K, truth=truth, seed=record.get("seed"))


# ---------- estimates ----------

def estimate_record(result: EstimateResult) -> Dict[str, Any]:
    t1, t2 = result.degrees
    return {
        "theta1_deg": t1,
        "theta2_deg": t2,
        "covariance_rad2": np.asarray(result.covariance).tolist(),
        "objective": result.objective,
        "objective_value": result.objective_value,
        "degenerate": result.degenerate_flag,
        "bootstrap_replicas": result.bootstrap_replicas,
    }


def write_estimate(result: EstimateResult, path: Path) -> Path:
    return write_json(path, estimate_record(result))
