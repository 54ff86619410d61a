"""Dataset ingestion: CSV loading, cleaning, label/categorical encoding and
standardization."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ArgumentError, ConfigError, EmptyDatasetError, MappingError, ParseError, ShapeError
from .storage import hash_arrays

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
LABEL = "label"

SCHEMAS = ("kdd", "malmem", "generic")

KDD_FEATURES = (
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes", "land",
    "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in", "num_compromised",
    "root_shell", "su_attempted", "num_root", "num_file_creations", "num_shells",
    "num_access_files", "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate",
    "same_srv_rate", "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
    "dst_host_srv_count", "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate", "dst_host_srv_rerror_rate",
)
KDD_CATEGORICAL = ("protocol_type", "service", "flag")
KDD_OUTCOME = "outcome"

MALMEM_WIDTH = 57
MALMEM_FAMILY = "Category"
MALMEM_CLASS = "Class"

# KDD'99 attack subcategory -> top-level category.
KDD_SUBCATEGORIES: dict[str, str] = {
    "back": "dos", "land": "dos", "neptune": "dos", "pod": "dos", "smurf": "dos", "teardrop": "dos",
    "buffer_overflow": "u2r", "loadmodule": "u2r", "perl": "u2r", "rootkit": "u2r",
    "ftp_write": "r2l", "guess_passwd": "r2l", "imap": "r2l", "multihop": "r2l", "phf": "r2l",
    "spy": "r2l", "warezclient": "r2l", "warezmaster": "r2l",
    "ipsweep": "probe", "nmap": "probe", "portsweep": "probe", "satan": "probe",
    "normal": "normal",
}
KDD_CATEGORY_NAMES = {"dos": "DoS", "normal": "Normal", "probe": "Probe", "r2l": "R2L", "u2r": "U2R"}


@dataclass(frozen=True)
class Column:
    name: str
    kind: str


@dataclass(frozen=True)
class RawTable:
    """Columnar table: numeric columns hold float64, the rest hold str."""

    frame: pd.DataFrame
    columns: tuple[Column, ...]
    source: str = ""

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ShapeError("column names must be unique")
        if list(self.frame.columns) != names:
            raise ShapeError("frame columns do not match column metadata")

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def kind(self, name: str) -> str:
        for c in self.columns:
            if c.name == name:
                return c.kind
        raise KeyError(name)

    def with_frame(self, frame: pd.DataFrame, columns: Sequence[Column] | None = None) -> RawTable:
        return RawTable(frame.reset_index(drop=True), tuple(columns or self.columns), self.source)


@dataclass(frozen=True)
class ColumnStats:
    mean: np.ndarray
    std: np.ndarray
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        shapes = {a.shape for a in (self.mean, self.std, self.min, self.max)}
        if len(shapes) != 1:
            raise ShapeError("column stats vectors differ in length")
        if np.any(self.std < 0):
            raise ShapeError("std must be non-negative")

    def __len__(self) -> int:
        return len(self.mean)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("mean", "std", "min", "max")}

    @classmethod
    def from_dict(cls, d: Mapping) -> ColumnStats:
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("mean", "std", "min", "max")))

    @classmethod
    def identity(cls, d: int) -> ColumnStats:
        return cls(np.zeros(d), np.ones(d), np.full(d, -np.inf), np.full(d, np.inf))


@dataclass(frozen=True)
class LabelMap:
    """Injective category -> code map with codes 0..n-1."""

    pairs: tuple[tuple[str, int], ...]

    def __post_init__(self):
        names = [p[0] for p in self.pairs]
        codes = sorted(p[1] for p in self.pairs)
        if len(set(names)) != len(names):
            raise MappingError("label map is not injective")
        if codes != list(range(len(codes))):
            raise MappingError("label codes must be 0..n-1 without gaps")

    @classmethod
    def from_categories(cls, categories: Iterable[str]) -> LabelMap:
        """Lexicographic code assignment over the distinct values."""
        return cls(tuple((name, i) for i, name in enumerate(sorted(set(categories)))))

    @property
    def names(self) -> list[str]:
        return [name for name, _ in sorted(self.pairs, key=lambda p: p[1])]

    def as_dict(self) -> dict[str, int]:
        return dict(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def decode(self, codes: Iterable[int]) -> list[str]:
        names = self.names
        return [names[int(c)] for c in codes]


@dataclass(frozen=True)
class Dataset:
    """Immutable numeric feature matrix with integer labels."""

    x: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    class_names: tuple[str, ...]
    stats: ColumnStats | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64, copy=True)
        y = np.array(self.y, dtype=np.int64, copy=True)
        if x.ndim != 2:
            raise ShapeError("x must be two-dimensional")
        if x.shape[0] == 0:
            raise EmptyDatasetError("dataset has no rows")
        if x.shape[1] == 0:
            raise ShapeError("dataset has no features")
        if y.shape != (x.shape[0],):
            raise ShapeError("y length does not match x")
        if len(self.feature_names) != x.shape[1]:
            raise ShapeError("feature_names length does not match x")
        if not np.all(np.isfinite(x)):
            raise ShapeError("x contains NaN or infinite cells")
        if y.min() < 0 or y.max() >= len(self.class_names):
            raise ShapeError("labels outside [0, n_classes)")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n_rows(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def is_balanced(self) -> bool:
        counts = self.class_counts()
        return bool(np.all(counts == counts[0]))

    def take(self, rows: np.ndarray) -> Dataset:
        return replace(self, x=self.x[rows], y=self.y[rows])

    def select_features(self, features: Sequence[int]) -> Dataset:
        features = list(features)
        stats = None
        if self.stats is not None:
            stats = ColumnStats(*(getattr(self.stats, k)[features] for k in ("mean", "std", "min", "max")))
        return replace(
            self,
            x=self.x[:, features],
            feature_names=tuple(self.feature_names[j] for j in features),
            stats=stats,
        )

    def content_hash(self) -> str:
        return hash_arrays(self.x, self.y)


# --------------------------------------------------------------------------- loading


def _column_widths(path: Path, expected: int, skip_header: bool) -> int:
    """Validate every record has ``expected`` cells; return the record count."""
    n = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if skip_header and lineno == 1:
                continue
            if not row:
                continue
            if len(row) != expected:
                raise ParseError(f"expected {expected} cells, found {len(row)}", row=lineno)
            n += 1
    return n


def _read_header(path: Path) -> list[str]:
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            return [c.strip() for c in row]
    raise ParseError(f"{path} is empty")


def _to_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return np.nan


def _numeric(series: pd.Series) -> pd.Series:
    """Parse text cells to float64, unparseable cells to NaN.

    ``pd.to_numeric`` uses a fast parser that can be off by one ulp, so the
    exact ``astype`` path is tried first.
    """
    try:
        return series.astype(np.float64)
    except ValueError:
        lookup = {u: _to_float(u) for u in pd.unique(series)}
        return series.map(lookup).astype(np.float64)


def load_csv(path: str | Path, schema: str = "generic") -> RawTable:
    """Load a dataset CSV under one of the known schemas.

    ``kdd`` is headerless with 41 features and an outcome column; ``malmem``
    has a 57-column header including ``Category`` and ``Class``; ``generic``
    has a header and uses the last column as the label.
    """
    if schema not in SCHEMAS:
        raise ConfigError(f"unknown schema {schema!r}; expected one of {SCHEMAS}", path="dataset.kind")
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path} does not exist")

    if schema == "kdd":
        names = list(KDD_FEATURES) + [KDD_OUTCOME]
        n = _column_widths(path, len(names), skip_header=False)
        if n == 0:
            raise ParseError(f"{path} contains no records")
        frame = pd.read_csv(path, header=None, names=names, dtype=str, keep_default_na=False)
        kinds = {name: NUMERIC for name in KDD_FEATURES}
        kinds.update({name: CATEGORICAL for name in KDD_CATEGORICAL})
        kinds[KDD_OUTCOME] = LABEL
    else:
        header = _read_header(path)
        if schema == "malmem":
            if len(header) != MALMEM_WIDTH:
                raise ParseError(f"MalMem header has {len(header)} columns, expected {MALMEM_WIDTH}", row=1)
            missing = {MALMEM_FAMILY, MALMEM_CLASS} - set(header)
            if missing:
                raise ParseError(f"MalMem header lacks {sorted(missing)}", row=1)
        n = _column_widths(path, len(header), skip_header=True)
        if n == 0:
            raise ParseError(f"{path} contains no records")
        frame = pd.read_csv(path, header=0, names=header, dtype=str, keep_default_na=False)
        if schema == "malmem":
            kinds = {name: NUMERIC for name in header}
            kinds[MALMEM_FAMILY] = LABEL
            kinds[MALMEM_CLASS] = LABEL
        else:
            kinds = {}
            for name in header[:-1]:
                parsed = _numeric(frame[name].str.strip())
                # a column is categorical when some non-empty cell is not a number
                text = frame[name].str.strip()
                bad = parsed.isna() & ~text.str.lower().isin(["", "nan", "inf", "-inf", "+inf", "?"])
                kinds[name] = CATEGORICAL if bad.any() else NUMERIC
            kinds[header[-1]] = LABEL

    columns = tuple(Column(name, kinds[name]) for name in frame.columns)
    out = {}
    for col in columns:
        values = frame[col.name].str.strip()
        out[col.name] = _numeric(values) if col.kind == NUMERIC else values
    logger.info("loaded %d rows x %d columns from %s", len(frame), len(columns), path)
    return RawTable(pd.DataFrame(out), columns, str(path))


# --------------------------------------------------------------------------- cleaning


def clean(table: RawTable) -> RawTable:
    """Drop rows with NaN/inf numeric cells, then exact duplicate rows."""
    frame = table.frame
    numeric = [c.name for c in table.columns if c.kind == NUMERIC]
    if numeric:
        values = frame[numeric].to_numpy(dtype=np.float64)
        keep = np.isfinite(values).all(axis=1)
    else:
        keep = np.ones(len(frame), dtype=bool)
    frame = frame[keep]
    frame = frame[~frame.duplicated(keep="first")]
    if len(frame) == 0:
        raise EmptyDatasetError(f"cleaning removed every row of {table.source or 'table'}")
    dropped = len(table) - len(frame)
    if dropped:
        logger.info("clean: dropped %d of %d rows", dropped, len(table))
    return table.with_frame(frame)


# --------------------------------------------------------------------------- encoding


def map_subcategories(outcome: str) -> str:
    """Map a KDD'99 outcome string (e.g. ``"smurf."``) to its category."""
    key = outcome.strip().rstrip(".").lower()
    try:
        return KDD_SUBCATEGORIES[key]
    except KeyError:
        raise MappingError(f"unknown KDD subcategory {outcome!r}") from None


def encode_labels(categories: Sequence[str], label_map: LabelMap) -> np.ndarray:
    lookup = label_map.as_dict()
    out = np.empty(len(categories), dtype=np.int64)
    for i, cat in enumerate(categories):
        try:
            out[i] = lookup[cat]
        except KeyError:
            raise MappingError(f"category {cat!r} is not in the label map") from None
    return out


def encode_categoricals(table: RawTable) -> tuple[RawTable, dict[str, dict[str, int]]]:
    """Replace categorical feature columns with lexicographic integer codes."""
    frame = table.frame.copy()
    maps: dict[str, dict[str, int]] = {}
    columns = []
    for col in table.columns:
        if col.kind == CATEGORICAL:
            levels = sorted(set(frame[col.name]))
            code = {v: i for i, v in enumerate(levels)}
            frame[col.name] = frame[col.name].map(code).astype(np.float64)
            maps[col.name] = code
            columns.append(Column(col.name, NUMERIC))
        else:
            columns.append(col)
    return table.with_frame(frame, columns), maps


def standardize(x: np.ndarray) -> tuple[np.ndarray, ColumnStats]:
    """Column-wise z-scores with population std; constant columns map to 0."""
    x = np.asarray(x, dtype=np.float64)
    stats = ColumnStats(x.mean(axis=0), x.std(axis=0), x.min(axis=0), x.max(axis=0))
    return apply_stats(x, stats), stats


def apply_stats(x: np.ndarray, stats: ColumnStats) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != len(stats):
        raise ShapeError(f"matrix has {x.shape[-1]} columns, stats cover {len(stats)}")
    constant = stats.std == 0
    safe_std = np.where(constant, 1.0, stats.std)
    out = (x - stats.mean) / safe_std
    out[:, constant] = 0.0
    return out


def scale_dataset(data: Dataset, stats: ColumnStats | None = None) -> Dataset:
    """Standardize ``data`` with fresh stats or the ones supplied."""
    if stats is None:
        x, stats = standardize(data.x)
    else:
        x = apply_stats(data.x, stats)
    return replace(data, x=x, stats=stats)


# --------------------------------------------------------------------------- preparation


def label_column(table: RawTable, task: str) -> list[str]:
    """Category text per row for the requested task."""
    names = table.names
    if KDD_OUTCOME in names and table.kind(KDD_OUTCOME) == LABEL:
        cats = [map_subcategories(o) for o in table.frame[KDD_OUTCOME]]
        if task == "binary":
            return ["Normal" if c == "normal" else "Attack" for c in cats]
        if task == "multilabel":
            return [KDD_CATEGORY_NAMES[c] for c in cats]
        raise ConfigError(f"unknown task {task!r}", path="task")
    if MALMEM_CLASS in names and table.kind(MALMEM_CLASS) == LABEL:
        if task != "binary":
            raise ConfigError("CIC-MalMem-2022 supports only the binary task", path="task")
        return list(table.frame[MALMEM_CLASS])
    labels = [c.name for c in table.columns if c.kind == LABEL]
    if len(labels) != 1:
        raise ShapeError("generic tables need exactly one label column")
    return list(table.frame[labels[0]])


def prepare(table: RawTable, task: str = "binary") -> tuple[Dataset, dict]:
    """Clean, encode and assemble an unscaled Dataset plus encoding metadata."""
    table = clean(table)
    categories = label_column(table, task)
    label_map = LabelMap.from_categories(categories)
    y = encode_labels(categories, label_map)
    encoded, code_maps = encode_categoricals(table)
    feature_cols = [c.name for c in encoded.columns if c.kind == NUMERIC]
    x = encoded.frame[feature_cols].to_numpy(dtype=np.float64)
    meta = {
        "source": table.source,
        "task": task,
        "label_map": dict(label_map.pairs),
        "category_codes": code_maps,
        "column_kinds": {c.name: c.kind for c in table.columns},
        "rows_after_clean": len(table),
    }
    return Dataset(x, y, tuple(feature_cols), tuple(label_map.names), meta=meta), meta


def stratified_sample(data: Dataset, n_rows: int, seed: int) -> Dataset:
    """Class-proportional subsample of ``n_rows`` rows; file order is kept."""
    if n_rows <= 0:
        raise ArgumentError("sample size must be positive")
    if n_rows >= data.n_rows:
        return data
    rng = np.random.default_rng(seed)
    counts = data.class_counts()
    quota = np.floor(counts * n_rows / data.n_rows).astype(np.int64)
    # largest remainders get the leftover rows; keep at least 2 per present class
    remainder = counts * n_rows / data.n_rows - quota
    for c in np.argsort(-remainder, kind="stable")[: n_rows - quota.sum()]:
        quota[c] += 1
    quota = np.minimum(np.maximum(quota, np.minimum(counts, 2)), counts)
    picked = []
    for c in range(data.n_classes):
        rows = np.flatnonzero(data.y == c)
        if quota[c]:
            picked.append(rng.choice(rows, size=quota[c], replace=False))
    return data.take(np.sort(np.concatenate(picked)))
