"""CSV datasets and reports, JSON scenario configs."""

from __future__ import annotations

import csv
import json
import math
from decimal import ROUND_DOWN, Decimal
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dist_core import Alphabet, ConditionalJoint, new_conditional_joint
from .errors import ConfigError, ParseError, SchemaViolation
from .estimators import SampleSet
from .fixtures import FIXTURES

DATASET_HEADER = ("period", "x", "y1", "y2")
SCHEMA_VERSION = "1"
SIG_DIGITS = 15


# ---------------------------------------------------------------------------
# number formatting
# ---------------------------------------------------------------------------

def fmt(value) -> str:
    """Render a report cell: 15 significant digits for reals, lowercase booleans."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        text = format(v, f".{SIG_DIGITS}g")
        if math.isfinite(v) and not math.isfinite(float(text)):
            # rounding to nearest crossed the float maximum; truncate instead
            text = format(Decimal(v).quantize(Decimal(f"1e{int(math.log10(abs(v))) - SIG_DIGITS + 1}"),
                                              rounding=ROUND_DOWN).normalize(), "g")
        return text
    return str(value)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def _parse_outcome(text: str, line: int, column: str):
    if text == "":
        return None
    try:
        v = float(text)
    except ValueError:
        raise ParseError(line, f"{column} value {text!r} is not a number") from None
    if not math.isfinite(v):
        raise ParseError(line, f"{column} value {text!r} is not finite")
    return v


def _check_pattern(period: int, y1, y2, line: int) -> None:
    if period == -2:
        if y1 is None or y2 is None:
            raise SchemaViolation(line, "period -2 rows need both y1 and y2")
    elif period == -1:
        if y2 is not None:
            raise SchemaViolation(line, "y2 present in period -1")
        if y1 is None:
            raise SchemaViolation(line, "period -1 rows need y1")
    elif period == 0:
        if y1 is not None or y2 is not None:
            raise SchemaViolation(line, "period 0 rows carry covariates only")
    else:
        raise SchemaViolation(line, f"period {period} is not one of -2, -1, 0")


def load_dataset(path) -> SampleSet:
    """Read a ``period,x,y1,y2`` CSV; empty y fields mean unobserved.

    Line numbers in errors count the header as line 1.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaViolation(1, "empty file; expected header period,x,y1,y2")
        if tuple(h.strip() for h in header) != DATASET_HEADER:
            raise SchemaViolation(1, f"header must be period,x,y1,y2, got {','.join(header)}")
        for record in reader:
            line = reader.line_num
            if not record:
                continue
            if len(record) != 4:
                raise ParseError(line, f"expected 4 fields, got {len(record)}")
            p_text, x, y1_text, y2_text = record
            try:
                period = int(p_text)
            except ValueError:
                raise ParseError(line, f"period {p_text!r} is not an integer") from None
            y1 = _parse_outcome(y1_text, line, "y1")
            y2 = _parse_outcome(y2_text, line, "y2")
            _check_pattern(period, y1, y2, line)
            rows.append((period, x, y1, y2))
    return SampleSet.from_rows(rows)


def save_dataset(samples: SampleSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DATASET_HEADER)
        for period, x, y1, y2 in samples.rows():
            writer.writerow([period, x, fmt(y1), fmt(y2)])


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def write_report(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sidecar_path(out) -> Path:
    return Path(str(out) + ".json")


def write_sidecar(out, config: dict) -> Path:
    path = sidecar_path(out)
    with open(path, "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    version = str(raw.get("schema_version", SCHEMA_VERSION))
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION!r}")
    return raw


def joint_from_config(spec: dict) -> ConditionalJoint:
    """Build a joint from ``{"fixture": name, "params": {...}}`` or explicit arrays."""
    if not isinstance(spec, dict):
        raise ConfigError("joint must be an object")
    if "fixture" in spec:
        name = spec["fixture"]
        if name not in FIXTURES:
            raise ConfigError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}")
        params = spec.get("params", {})
        try:
            return FIXTURES[name](**params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for fixture {name!r}: {exc}") from None
    try:
        alphabet = Alphabet(
            tuple(spec["x_labels"]),
            tuple(spec["y1_levels"]),
            tuple(spec["y2_levels"]),
            spec.get("y1_values"),
            spec.get("y2_values"),
        )
        return new_conditional_joint(alphabet, spec["px"], spec["table"])
    except KeyError as exc:
        raise ConfigError(f"explicit joint is missing {exc.args[0]!r}") from None
