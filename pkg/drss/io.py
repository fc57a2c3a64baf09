"""
CSV ingestion against a JSON data schema, and JSON report output.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .core import SampleMode, SemiSupervisedSample, validate_sample
from .errors import ConfigError, ParseError, SchemaViolation

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DataSchema:
    """Column roles of an input CSV.

    ``label_col`` is the labeling indicator in missing-data mode and the
    treatment indicator in causal mode. Categorical columns are one-hot
    encoded over their declared levels with the first level dropped.
    """

    outcome_col: str
    label_col: str
    covariate_cols: List[str]
    stratum_col: Optional[str] = None
    categorical_cols: Dict[str, List[Any]] = field(default_factory=dict)
    mode: SampleMode = SampleMode.MISSING_DATA

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "DataSchema":
        known = {"outcome", "label", "treatment", "covariates", "stratum", "categorical", "mode"}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown schema keys: {sorted(unknown)}")
        label = payload.get("treatment") or payload.get("label")
        if not payload.get("outcome") or not label or not payload.get("covariates"):
            raise ConfigError("schema needs 'outcome', 'label' (or 'treatment') and 'covariates'")
        mode = payload.get("mode") or ("causal" if "treatment" in payload else "missing-data")
        categorical = payload.get("categorical") or {}
        for column, levels in categorical.items():
            if column not in payload["covariates"]:
                raise ConfigError(f"categorical column '{column}' is not a covariate")
            if len(levels) < 2 or len(set(levels)) != len(levels):
                raise ConfigError(f"categorical column '{column}' needs at least two distinct levels")
        try:
            mode = SampleMode(mode)
        except ValueError as exc:
            raise ConfigError(f"schema mode must be 'missing-data' or 'causal', got '{mode}'") from exc
        return cls(
            str(payload["outcome"]), str(label), [str(c) for c in payload["covariates"]],
            payload.get("stratum"), {str(k): list(v) for k, v in categorical.items()}, mode,
        )

    @classmethod
    def from_json(cls, path) -> "DataSchema":
        try:
            with open(path, "r", encoding="utf-8") as handle:
                payload = json.load(handle)
        except FileNotFoundError as exc:
            raise ConfigError(f"schema file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"schema file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(payload)

    @property
    def required_columns(self) -> List[str]:
        columns = [self.outcome_col, self.label_col] + list(self.covariate_cols)
        if self.stratum_col:
            columns.append(self.stratum_col)
        return columns

    def feature_names(self) -> List[str]:
        names = []
        for column in self.covariate_cols:
            if column in self.categorical_cols:
                names.extend(f"{column}_{level}" for level in self.categorical_cols[column][1:])
            else:
                names.append(column)
        return names


def _numeric(frame: pd.DataFrame, column: str) -> np.ndarray:
    raw = frame[column]
    values = pd.to_numeric(raw, errors="coerce")
    bad = np.flatnonzero(values.isna().to_numpy() & raw.notna().to_numpy())
    if bad.size:
        raise ParseError(f"non-numeric value {raw.iloc[bad[0]]!r}", row=int(bad[0]), column=column)
    return values.to_numpy(dtype=float)


def _indicator(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = _numeric(frame, column)
    bad = np.flatnonzero(~np.isin(values, (0.0, 1.0)))
    if bad.size:
        raise SchemaViolation(f"indicator must be 0/1, got {values[bad[0]]}", row=int(bad[0]), column=column)
    return values.astype(np.int8)


def _one_hot(frame: pd.DataFrame, column: str, levels: Sequence[Any]) -> np.ndarray:
    raw = frame[column]
    as_text = raw.astype(str).str.strip()
    level_text = [str(level) for level in levels]
    numeric = pd.to_numeric(raw, errors="coerce")
    codes = np.full(len(frame), -1)
    for j, (level, text) in enumerate(zip(levels, level_text)):
        hit = as_text.to_numpy() == text
        if isinstance(level, (int, float)) and not isinstance(level, bool):
            hit |= numeric.to_numpy() == float(level)
        codes[hit & (codes < 0)] = j
    bad = np.flatnonzero((codes < 0) | raw.isna().to_numpy())
    if bad.size:
        raise SchemaViolation(
            f"value {raw.iloc[bad[0]]!r} not among declared levels {list(levels)}", row=int(bad[0]), column=column
        )
    return (codes[:, None] == np.arange(1, len(levels))[None, :]).astype(float)


def load_frame(frame: pd.DataFrame, schema: DataSchema) -> SemiSupervisedSample:
    """Apply the schema to a raw frame (rows are 0-based data rows)."""
    missing = [c for c in schema.required_columns if c not in frame.columns]
    if missing:
        raise SchemaViolation(f"missing columns {missing}", column=missing[0])

    R = _indicator(frame, schema.label_col)
    blocks = []
    for column in schema.covariate_cols:
        if column in schema.categorical_cols:
            blocks.append(_one_hot(frame, column, schema.categorical_cols[column]))
            continue
        values = _numeric(frame, column)
        absent = np.flatnonzero(np.isnan(values))
        if absent.size:
            raise SchemaViolation("missing covariate value", row=int(absent[0]), column=column)
        blocks.append(values[:, None])
    X = np.hstack(blocks) if blocks else np.empty((len(frame), 0))

    Y = _numeric(frame, schema.outcome_col)
    required = np.ones(len(frame), dtype=bool) if schema.mode is SampleMode.CAUSAL else R == 1
    absent = np.flatnonzero(required & np.isnan(Y))
    if absent.size:
        raise SchemaViolation("missing outcome on a row that requires one", row=int(absent[0]), column=schema.outcome_col)

    delta = _indicator(frame, schema.stratum_col) if schema.stratum_col else None
    return validate_sample(X, R, Y, delta, schema.mode, schema.feature_names())


def load_csv(path, schema: DataSchema) -> SemiSupervisedSample:
    try:
        frame = pd.read_csv(path, encoding="utf-8", skipinitialspace=True)
    except FileNotFoundError as exc:
        raise ConfigError(f"input file not found: {path}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot parse {path}: {exc}") from exc
    sample = load_frame(frame, schema)
    expanded = [c for c in schema.covariate_cols if c in schema.categorical_cols]
    logger.info(
        "loaded %s: %d rows, %d labeled, %d features (one-hot: %s)",
        Path(path).name, sample.n, sample.n_labeled, sample.p, ", ".join(expanded) or "none",
    )
    return sample


def jsonable(value: Any) -> Any:
    """Plain JSON types; NaN and infinities become null."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json_report(path, payload: Dict[str, Any]) -> None:
    text = json.dumps(jsonable(payload), indent=2, sort_keys=True, allow_nan=False)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(text + "\n")
