"""Data ingestion, model persistence and config handling for the CLI.

Model files are versioned, self-describing JSON: they embed the knot grid,
so every density is reproducible without the original data, and floats go
through ``repr`` (shortest round-trip form), so loading reproduces the model
bit for bit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import SplineBasis, build_basis
from .densities import NormalDensity, NormalMixtureDensity, SplineDensity
from .hmm import HmmModel

MODEL_FORMAT = "splinehmm-model"
MODEL_VERSION = 1

MISSING_TOKENS = {"", "NA"}


class ConfigError(ValueError):
    """Bad user input: unusable files, malformed configs, invalid options."""


@dataclass(frozen=True)
class DataSet:
    """An ordered series of observations; missing entries are NaN."""

    values: np.ndarray
    source: dict

    def __post_init__(self):
        x = np.asarray(self.values, dtype=float)
        if x.size < 2:
            raise ConfigError("series must contain at least two observations")
        if not np.isfinite(x).any():
            raise ConfigError("series is entirely missing")
        if np.any(np.isinf(x)):
            raise ConfigError("series contains non-finite values")
        object.__setattr__(self, "values", x)

    @property
    def n_missing(self) -> int:
        return int((~np.isfinite(self.values)).sum())


def _parse_cell(cell: str) -> float:
    cell = cell.strip()
    if cell in MISSING_TOKENS:
        return np.nan
    return float(cell)


def ingest(
    path,
    column=None,
    transform: str = "none",
    delimiter: str = ",",
    header: str | bool = "auto",
) -> DataSet:
    """Read one numeric column from a delimited text file.

    ``column`` is a 1-based index or a header name; a single-column file
    needs no column spec.  Blank cells and ``NA`` are missing.  The
    ``log-absolute`` transform maps x to log|x| and flags zeros as missing.
    """
    if transform not in ("none", "log-absolute"):
        raise ConfigError(f"unknown transform {transform!r}")
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    rows = [row for row in csv.reader(text.splitlines(), delimiter=delimiter) if row]
    if not rows:
        raise ConfigError(f"{path} is empty")

    width = max(len(r) for r in rows)
    names = None
    first_numeric = all(_is_number_or_missing(c) for c in rows[0])
    has_header = (header is True) or (header == "auto" and not first_numeric)
    if has_header:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            raise ConfigError(f"{path} has a header but no data rows")

    if column is None:
        if width != 1:
            raise ConfigError(f"{path} has {width} columns; specify one with --column")
        col_idx = 0
    elif isinstance(column, int) or (isinstance(column, str) and column.isdigit()):
        col_idx = int(column) - 1
        if not 0 <= col_idx < width:
            raise ConfigError(f"column {column} out of range (file has {width} columns)")
    else:
        if names is None or column not in names:
            raise ConfigError(f"no column named {column!r} in {path}")
        col_idx = names.index(column)

    values = np.empty(len(rows))
    bad_rows = []
    for i, row in enumerate(rows):
        cell = row[col_idx] if col_idx < len(row) else ""
        try:
            values[i] = _parse_cell(cell)
        except ValueError:
            bad_rows.append(i + 1 + int(has_header))
            values[i] = np.nan
    if bad_rows:
        shown = ", ".join(str(r) for r in bad_rows[:10])
        more = f" (+{len(bad_rows) - 10} more)" if len(bad_rows) > 10 else ""
        raise ConfigError(f"non-numeric cells in {path} at rows {shown}{more}")

    if transform == "log-absolute":
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.where(values == 0.0, np.nan, np.log(np.abs(values)))

    return DataSet(
        values=values,
        source={"path": str(path), "column": column, "transform": transform},
    )


def _is_number_or_missing(cell: str) -> bool:
    cell = cell.strip()
    if cell in MISSING_TOKENS:
        return True
    try:
        float(cell)
        return True
    except ValueError:
        return False


# --- model files ---------------------------------------------------------


def _emission_to_dict(dens) -> dict:
    if isinstance(dens, SplineDensity):
        return {
            "family": "spline",
            "K": dens.basis.K,
            "knot_lower": dens.basis.grid.lower,
            "knot_upper": dens.basis.grid.upper,
            "logits": dens.logits.tolist(),
        }
    if isinstance(dens, NormalDensity):
        return {"family": "normal", "loc": dens.loc, "scale": dens.scale}
    if isinstance(dens, NormalMixtureDensity):
        return {
            "family": "normal-mixture",
            "loc1": dens.loc1, "scale1": dens.scale1,
            "loc2": dens.loc2, "scale2": dens.scale2,
            "weight": dens.weight,
        }
    raise TypeError(f"cannot serialize emission of type {type(dens).__name__}")


def _emission_from_dict(spec: dict):
    family = spec.get("family")
    if family == "spline":
        basis = build_basis(spec["knot_lower"], spec["knot_upper"], spec["K"])
        return SplineDensity(basis, np.asarray(spec["logits"], dtype=float))
    if family == "normal":
        return NormalDensity(spec["loc"], spec["scale"])
    if family == "normal-mixture":
        return NormalMixtureDensity(
            spec["loc1"], spec["scale1"], spec["loc2"], spec["scale2"], spec["weight"]
        )
    raise ConfigError(f"unknown emission family {family!r} in model file")


def save_model(path, model: HmmModel, lam=None, penalty_order: int = 2, fit_info: dict | None = None):
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "n_states": model.n_states,
        "tpm": model.gamma.tolist(),
        "stationary": model.stationary,
        "delta": model.delta.tolist(),
        "lam": list(np.atleast_1d(lam)) if lam is not None else None,
        "penalty_order": penalty_order,
        "emissions": [_emission_to_dict(d) for d in model.emissions],
        "fit": fit_info or {},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_model(path):
    """Returns (model, metadata) where metadata holds lam, penalty order and
    fit diagnostics."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model file {path}: {exc}") from exc
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigError(f"{path} is not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise ConfigError(f"unsupported model file version {doc.get('version')}")
    emissions = tuple(_emission_from_dict(e) for e in doc["emissions"])
    delta = None if doc.get("stationary", True) else np.asarray(doc["delta"], dtype=float)
    model = HmmModel(gamma=np.asarray(doc["tpm"], dtype=float), emissions=emissions, delta=delta)
    meta = {
        "lam": doc.get("lam"),
        "penalty_order": doc.get("penalty_order", 2),
        "fit": doc.get("fit", {}),
    }
    return model, meta


# --- plot-data emission ----------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(path, payload: dict):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# --- config files -----------------------------------------------------------


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


def validate_config(doc: dict, schema: dict, prefix: str = ""):
    """Reject unknown keys and type mismatches, reporting field paths.

    ``schema`` maps each allowed key to a type, a tuple of types, or a
    nested schema dict; list values are validated elementwise when the
    schema value is ``[elem_types]``.
    """
    for key, value in doc.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key {path!r}")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            validate_config(value, expected, prefix=f"{path}.")
        elif isinstance(expected, list):
            if not isinstance(value, list):
                raise ConfigError(f"config key {path!r} must be a list")
            for i, item in enumerate(value):
                if isinstance(item, bool) or not isinstance(item, tuple(expected)):
                    raise ConfigError(f"config key {path!r}[{i}] has the wrong type")
        else:
            allowed = expected if isinstance(expected, tuple) else (expected,)
            if isinstance(value, bool) and bool not in allowed:
                raise ConfigError(f"config key {path!r} has the wrong type")
            if not isinstance(value, allowed):
                raise ConfigError(f"config key {path!r} has the wrong type")
    return doc
