"""Tabular ingestion: delimited-text loading, encoding, stratified splits and a planted generator.

The planted generator stands in for real federated tabular data. Each
client draws one proxy feature whose mean depends on the sensitive group
and a handful of group-independent features; labels come from a shared
logistic rule with a client-specific intercept. The proxy shift is tuned
so that the thresholded ground-truth rule has the requested demographic
parity gap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import expit
from scipy.stats import norm

from .model import ClientShard

log = logging.getLogger(__name__)

MISSING_CATEGORY = "__missing__"
NA_TOKENS = ("", "?", "NA", "N/A", "nan", "NaN")


class SchemaError(ValueError):
    """A declared column is absent or the schema contradicts itself."""

    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class DataFormatError(ValueError):
    pass


def _matchers(value) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(str(v).strip() for v in value)
    return (str(value).strip(),)


@dataclass(frozen=True)
class TableSchema:
    label_column: str
    sensitive_column: str
    positive_label_value: object = "1"
    positive_sensitive_value: object = "1"
    categorical_columns: tuple = ()
    numeric_columns: tuple = ()
    client_key_column: str | None = None
    include_sensitive: bool = False

    def __post_init__(self):
        object.__setattr__(self, "categorical_columns", tuple(self.categorical_columns))
        object.__setattr__(self, "numeric_columns", tuple(self.numeric_columns))
        feats = self.categorical_columns + self.numeric_columns
        if len(set(feats)) != len(feats):
            raise SchemaError("feature column names must be unique")
        for col in (self.label_column, self.sensitive_column):
            if col in feats:
                raise SchemaError(f"column {col!r} is the label or sensitive column and cannot be a feature", col)
        if self.label_column == self.sensitive_column:
            raise SchemaError("label and sensitive columns must differ", self.label_column)

    @property
    def feature_columns(self) -> tuple:
        return self.categorical_columns + self.numeric_columns

    def required_columns(self) -> list:
        cols = [self.label_column, self.sensitive_column, *self.feature_columns]
        if self.client_key_column and self.client_key_column not in cols:
            cols.append(self.client_key_column)
        return cols

    def label_of(self, values) -> np.ndarray:
        return pd.Series(values).astype(str).str.strip().isin(_matchers(self.positive_label_value)).to_numpy(int)

    def sensitive_of(self, values) -> np.ndarray:
        return pd.Series(values).astype(str).str.strip().isin(_matchers(self.positive_sensitive_value)).to_numpy(int)


@dataclass
class RawTable:
    frame: pd.DataFrame
    dropped_rows: int = 0


@dataclass(frozen=True)
class EncodingStats:
    """Training-split statistics reused to encode any other split."""

    means: dict
    stds: dict
    categories: dict  # column -> categories in first-appearance order


@dataclass
class EncodedDataset:
    features: np.ndarray
    label: np.ndarray
    sensitive: np.ndarray
    feature_names: list
    normalization_stats: EncodingStats
    source_index: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.source_index is None:
            self.source_index = np.arange(self.features.shape[0])
        if np.isnan(self.features).any():
            raise ValueError("encoded features contain missing values")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx) -> "EncodedDataset":
        idx = np.asarray(idx, dtype=int)
        return EncodedDataset(
            self.features[idx], self.label[idx], self.sensitive[idx], list(self.feature_names),
            self.normalization_stats, self.source_index[idx],
        )

    def to_shard(self, client_id: str) -> ClientShard:
        return ClientShard(self.features, self.label, self.sensitive, str(client_id))


def load_table(path, schema: TableSchema, sep: str = ",") -> RawTable:
    """Read a delimited file with a header row and impute missing feature cells."""
    try:
        frame = pd.read_csv(path, sep=sep, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"cannot parse {path}: {exc}") from exc
    frame.columns = [str(c).strip() for c in frame.columns]
    for col in schema.required_columns():
        if col not in frame.columns:
            raise SchemaError(f"declared column {col!r} not found in {path}", col)
    frame = frame.apply(lambda s: s.str.strip())
    frame = frame.replace(list(NA_TOKENS), np.nan)

    keep = frame[schema.label_column].notna() & frame[schema.sensitive_column].notna()
    dropped = int((~keep).sum())
    if dropped:
        log.warning("dropped %d rows with missing label or sensitive value", dropped)
    frame = frame.loc[keep].reset_index(drop=True)

    for col in schema.numeric_columns:
        raw = frame[col]
        values = pd.to_numeric(raw, errors="coerce")
        bad = int((raw.notna() & values.isna()).sum())
        if bad:
            log.warning("column %r: %d non-numeric cells treated as missing", col, bad)
        if values.isna().any():
            median = values.median()
            values = values.fillna(0.0 if np.isnan(median) else median)
        frame[col] = values.astype(float)
    for col in schema.categorical_columns:
        frame[col] = frame[col].fillna(MISSING_CATEGORY).astype(str)
    return RawTable(frame, dropped)


def fit_stats(frame: pd.DataFrame, schema: TableSchema) -> EncodingStats:
    means, stds, cats = {}, {}, {}
    for col in schema.numeric_columns:
        v = frame[col].to_numpy(float)
        means[col] = float(v.mean()) if v.size else 0.0
        stds[col] = float(v.std()) if v.size else 0.0
    for col in schema.categorical_columns:
        cats[col] = list(dict.fromkeys(frame[col].astype(str)))
    if schema.include_sensitive:
        cats[schema.sensitive_column] = list(dict.fromkeys(frame[schema.sensitive_column].astype(str)))
    return EncodingStats(means, stds, cats)


def encode(raw, schema: TableSchema, stats: EncodingStats | None = None) -> EncodedDataset:
    """One-hot categoricals and z-score numerics; pass ``stats`` to reuse training statistics."""
    frame = raw.frame if isinstance(raw, RawTable) else raw
    for col in schema.feature_columns + (schema.label_column, schema.sensitive_column):
        if col not in frame.columns:
            raise SchemaError(f"declared column {col!r} missing from table", col)
    if stats is None:
        stats = fit_stats(frame, schema)
    blocks, names = [], []
    cat_cols = list(schema.categorical_columns) + ([schema.sensitive_column] if schema.include_sensitive else [])
    for col in cat_cols:
        values = frame[col].astype(str).to_numpy()
        cats = stats.categories[col]
        block = (values[:, None] == np.asarray(cats, dtype=object)[None, :]).astype(float)
        unseen = int((block.sum(axis=1) == 0).sum())
        if unseen:
            log.warning("column %r: %d rows with categories unseen in training encoded as zeros", col, unseen)
        blocks.append(block)
        names += [f"{col}={c}" for c in cats]
    for col in schema.numeric_columns:
        v = frame[col].to_numpy(float)
        sd = stats.stds[col]
        if sd > 0:
            blocks.append(((v - stats.means[col]) / sd)[:, None])
        else:
            log.warning("column %r is constant in training data; encoded as zeros", col)
            blocks.append(np.zeros((v.size, 1)))
        names.append(col)
    n = len(frame)
    X = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return EncodedDataset(
        X, schema.label_of(frame[schema.label_column]), schema.sensitive_of(frame[schema.sensitive_column]),
        names, stats,
    )


def decode_categories(dataset: EncodedDataset, column: str) -> list:
    """Recover the category of each row from its one-hot block (None for an all-zero row)."""
    cats = dataset.normalization_stats.categories[column]
    idx = [i for i, name in enumerate(dataset.feature_names) if name.startswith(f"{column}=")]
    block = dataset.features[:, idx]
    return [cats[int(np.argmax(row))] if row.any() else None for row in block]


def stratified_indices(label, sensitive, test_fraction: float, seed: int):
    """Seeded split of row indices stratified by (label, sensitive) -> (train_idx, test_idx)."""
    if not 0 < test_fraction < 1:
        raise ValueError("split fraction must lie in (0, 1)")
    label = np.asarray(label)
    sensitive = np.asarray(sensitive)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for y in (0, 1):
        for a in (0, 1):
            cell = np.flatnonzero((label == y) & (sensitive == a))
            if cell.size == 0:
                continue
            cell = rng.permutation(cell)
            if cell.size < 2:
                log.warning("stratum (label=%d, sensitive=%d) has one row; kept in training", y, a)
                train.append(cell)
                continue
            k = min(max(int(round(test_fraction * cell.size)), 1), cell.size - 1)
            test.append(cell[:k])
            train.append(cell[k:])
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=int)  # noqa: E731
    return cat(train), cat(test)


def train_test_split(dataset: EncodedDataset, test_fraction: float, seed: int):
    train_idx, test_idx = stratified_indices(dataset.label, dataset.sensitive, test_fraction, seed)
    return dataset.subset(train_idx), dataset.subset(test_idx)


# planted generator

PROXY_WEIGHT = 1.0
OTHER_WEIGHTS = (3.0, -2.25, 1.5, 0.75)


@dataclass(frozen=True)
class PlantedSpec:
    base_rates: tuple
    strengths: tuple
    sample_counts: tuple
    seed: int = 0
    group_fraction: float = 0.5

    def __post_init__(self):
        n = len(self.base_rates)
        if n < 1 or len(self.strengths) != n or len(self.sample_counts) != n:
            raise ValueError("base_rates, strengths and sample_counts need one entry per client")
        for r in self.base_rates:
            if not 0 < r < 1:
                raise ValueError("base rates must lie in (0, 1)")
        for s in self.strengths:
            if not 0 <= s < 0.9:
                raise ValueError("disparity strengths must lie in [0, 0.9)")
        for c in self.sample_counts:
            if c < 4:
                raise ValueError("each client needs at least 4 samples")
        if not 0 < self.group_fraction < 1:
            raise ValueError("group_fraction must lie in (0, 1)")

    @property
    def num_clients(self) -> int:
        return len(self.base_rates)


def _true_weights() -> np.ndarray:
    return np.array((PROXY_WEIGHT,) + OTHER_WEIGHTS)


def _rule_rates(shift: float, intercept: float, q: float = 0.5):
    """Positive rates of the rule ``w.x + b > 0`` in groups A=0 and A=1 for proxy shift ``shift``."""
    s = float(np.linalg.norm(_true_weights()))
    half = PROXY_WEIGHT * shift
    r1 = norm.cdf((intercept + half * (1 - q)) / s)
    r0 = norm.cdf((intercept - half * q) / s)
    return r0, r1


def _intercept_for(base_rate: float, shift: float, q: float) -> float:
    def gap(b):
        r0, r1 = _rule_rates(shift, b, q)
        return q * r1 + (1 - q) * r0 - base_rate

    return brentq(gap, -50.0, 50.0, xtol=1e-12)


def planted_parameters(base_rate: float, strength: float, q: float = 0.5):
    """(proxy shift, intercept) giving the requested base rate and ground-truth parity gap."""
    if strength == 0:
        return 0.0, _intercept_for(base_rate, 0.0, q)

    def gap(shift):
        b = _intercept_for(base_rate, shift, q)
        r0, r1 = _rule_rates(shift, b, q)
        return (r1 - r0) - strength

    shift = brentq(gap, 0.0, 40.0, xtol=1e-12)
    return shift, _intercept_for(base_rate, shift, q)


def generate_planted(spec: PlantedSpec) -> list:
    """One :class:`ClientShard` per client with the planted disparities."""
    rng = np.random.default_rng(spec.seed)
    w = _true_weights()
    shards = []
    for k in range(spec.num_clients):
        shift, b = planted_parameters(spec.base_rates[k], spec.strengths[k], spec.group_fraction)
        n = int(spec.sample_counts[k])
        a = (rng.random(n) < spec.group_fraction).astype(int)
        if a.min() == a.max():
            a[0] = 1 - a[0]
        X = rng.standard_normal((n, w.size))
        X[:, 0] += shift * (a - spec.group_fraction)
        y = (rng.random(n) < expit(X @ w + b)).astype(int)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        shards.append(ClientShard(X, y, a, str(k)))
    return shards
