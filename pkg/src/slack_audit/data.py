"""Datasets of (features, group, label) records, CSV ingestion, and
deterministic label realization."""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from slack_audit.errors import SchemaError, SizeError, ValidationError

GROUPS = (1, 2)


class Record(NamedTuple):
    features: np.ndarray
    group: int
    label: int


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of records; arrays are read-only copies."""

    features: np.ndarray
    groups: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] < 1:
            raise ValidationError(f"features must be a 2-D array with d >= 1, got shape {x.shape}")
        g = np.asarray(self.groups)
        y = np.asarray(self.labels)
        n = x.shape[0]
        if g.shape != (n,) or y.shape != (n,):
            raise ValidationError(
                f"groups {g.shape} and labels {y.shape} must both have shape ({n},)"
            )
        if not np.all(np.isfinite(x)):
            raise ValidationError("features contain non-finite values")
        bad_g = ~np.isin(g, GROUPS)
        if bad_g.any():
            raise ValidationError(f"group value {g[bad_g][0]!r} is not 1 or 2")
        bad_y = ~np.isin(y, (0, 1))
        if bad_y.any():
            raise ValidationError(f"label value {y[bad_y][0]!r} is not 0 or 1")
        for gid in GROUPS:
            if not np.any(g == gid):
                raise ValidationError(f"group {gid} is empty")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "groups", _frozen(g.astype(np.int64)))
        object.__setattr__(self, "labels", _frozen(y.astype(np.int64)))

    def __len__(self) -> int:
        return self.features.shape[0]

    def __iter__(self) -> Iterator[Record]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Record:
        return Record(self.features[i], int(self.groups[i]), int(self.labels[i]))

    @property
    def n(self) -> int:
        return len(self)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def mask(self, group: int) -> np.ndarray:
        return self.groups == group

    def count(self, group: int) -> int:
        return int(np.count_nonzero(self.groups == group))

    def swap_groups(self) -> "Dataset":
        return Dataset(self.features, 3 - self.groups, self.labels)

    def fingerprint(self) -> str:
        """SHA-256 over the raw array bytes; stable across runs and platforms
        with the same endianness."""
        h = hashlib.sha256()
        h.update(np.int64(self.n).tobytes())
        h.update(np.int64(self.dim).tobytes())
        h.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.groups, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()

    def to_csv(self, path: str | Path | None = None, feature_names: Sequence[str] | None = None) -> str:
        """Serialize with columns ``x0..x{d-1},group,label``. Floats use 17
        significant digits so a reload is bit-exact."""
        names = list(feature_names) if feature_names else [f"x{j}" for j in range(self.dim)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*names, "group", "label"])
        for row, g, y in zip(self.features, self.groups, self.labels):
            w.writerow([*(format(v, ".17g") for v in row), int(g), int(y)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


@dataclass(frozen=True)
class Schema:
    """Column mapping for :func:`load_csv`.

    ``feature_columns=None`` means every column other than the group and
    label columns. Encodings map raw (trimmed) strings to group ids and
    labels.
    """

    feature_columns: tuple[str, ...] | None = None
    group_column: str = "group"
    label_column: str = "label"
    group_encoding: Mapping[str, int] = field(default_factory=lambda: {"1": 1, "2": 2})
    label_encoding: Mapping[str, int] = field(default_factory=lambda: {"0": 0, "1": 1})

    @classmethod
    def from_file(cls, path: str | Path) -> "Schema":
        """Read a ``key = value`` file.

        Recognized keys: ``features`` (comma list), ``group_column``,
        ``label_column``, ``group_1`` / ``group_2`` (comma lists of raw values
        mapped to each group) and ``label_1`` / ``label_0`` likewise.
        Blank lines and ``#`` comments are ignored.
        """
        return cls.from_mapping(parse_key_values(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def from_mapping(cls, kv: Mapping[str, str]) -> "Schema":
        known = {"features", "group_column", "label_column", "group_1", "group_2", "label_0", "label_1"}
        unknown = set(kv) - known
        if unknown:
            raise SchemaError(f"unknown schema key(s): {', '.join(sorted(unknown))}")

        def items(key):
            return [v.strip() for v in kv[key].split(",") if v.strip()]

        kw: dict = {}
        if "features" in kv:
            kw["feature_columns"] = tuple(items("features"))
        if "group_column" in kv:
            kw["group_column"] = kv["group_column"].strip()
        if "label_column" in kv:
            kw["label_column"] = kv["label_column"].strip()
        if "group_1" in kv or "group_2" in kv:
            kw["group_encoding"] = {
                **{v: 1 for v in (items("group_1") if "group_1" in kv else [])},
                **{v: 2 for v in (items("group_2") if "group_2" in kv else [])},
            }
        if "label_0" in kv or "label_1" in kv:
            kw["label_encoding"] = {
                **{v: 0 for v in (items("label_0") if "label_0" in kv else [])},
                **{v: 1 for v in (items("label_1") if "label_1" in kv else [])},
            }
        return cls(**kw)

    def as_dict(self) -> dict:
        return {
            "features": None if self.feature_columns is None else list(self.feature_columns),
            "group_column": self.group_column,
            "label_column": self.label_column,
            "group_encoding": dict(sorted(self.group_encoding.items())),
            "label_encoding": dict(sorted(self.label_encoding.items())),
        }


def parse_key_values(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"line {lineno}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_csv(path: str | Path, schema: Schema | None = None) -> Dataset:
    """Read a plain comma-separated file with a header row into a Dataset.

    Row order is preserved. Raises SchemaError for missing columns and
    ValidationError for unparseable or out-of-encoding values.
    """
    schema = schema or Schema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        rows = [[c.strip() for c in r] for r in reader if any(c.strip() for c in r)]

    index = {name: j for j, name in enumerate(header)}
    for col in (schema.group_column, schema.label_column):
        if col not in index:
            raise SchemaError(f"{path}: column {col!r} not in header {header}")
    if schema.feature_columns is None:
        feat_cols = [h for h in header if h not in (schema.group_column, schema.label_column)]
    else:
        feat_cols = list(schema.feature_columns)
        missing = [c for c in feat_cols if c not in index]
        if missing:
            raise SchemaError(f"{path}: feature column(s) {missing} not in header {header}")
    if not feat_cols:
        raise SchemaError(f"{path}: no feature columns")

    n = len(rows)
    x = np.empty((n, len(feat_cols)), dtype=np.float64)
    g = np.empty(n, dtype=np.int64)
    y = np.empty(n, dtype=np.int64)
    fj = [index[c] for c in feat_cols]
    gj, yj = index[schema.group_column], index[schema.label_column]
    for i, row in enumerate(rows):
        line = i + 2
        if len(row) != len(header):
            raise ValidationError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        try:
            x[i] = [float(row[j]) for j in fj]
        except ValueError as e:
            raise ValidationError(f"{path}:{line}: {e}") from None
        raw_g = row[gj]
        if raw_g not in schema.group_encoding:
            raise ValidationError(f"{path}:{line}: group value {raw_g!r} outside encoding")
        g[i] = schema.group_encoding[raw_g]
        raw_y = row[yj]
        if raw_y not in schema.label_encoding:
            raise ValidationError(f"{path}:{line}: label value {raw_y!r} is not binary under the encoding")
        y[i] = schema.label_encoding[raw_y]
    if n == 0:
        raise ValidationError(f"{path}: no data rows")
    return Dataset(x, g, y)


def stratified_binary_sample(n: int, p: float) -> np.ndarray:
    """Exactly ``round(n*p)`` ones (half rounds up), spread evenly.

    The k-th one sits where the running count ``i*k/n`` crosses an integer;
    crossings are taken by ceiling when p >= 0.5 (so slot 0 is positive) and
    by floor otherwise.
    """
    if n < 1:
        raise SizeError(f"n must be >= 1, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    k = math.floor(n * p + 0.5)
    i = np.arange(n + 1, dtype=np.int64)
    if 2 * k >= n:
        marks = -((-i * k) // n)  # ceil(i*k/n)
    else:
        marks = (i * k) // n
    return np.diff(marks).astype(np.int64)


def random_dataset(rng: np.random.Generator, n: int, dim: int = 2, *, decimals: int = 1) -> Dataset:
    """Synthetic records for property tests and smoke runs.

    Features are standard normals rounded to ``decimals`` places (so ties
    occur), groups are fair coin flips, and labels follow a logistic model
    with a random weight vector and a group-dependent offset. Each group is
    forced to hold at least one record of each label, which keeps both bias
    notions defined.
    """
    if n < 4:
        raise SizeError(f"random_dataset needs n >= 4, got {n}")
    if dim < 1:
        raise SizeError(f"dim must be >= 1, got {dim}")
    x = np.round(rng.standard_normal((n, dim)), decimals)
    g = rng.integers(1, 3, size=n)
    w = rng.standard_normal(dim)
    shift = rng.normal(0.0, 0.75)
    logits = x @ w + np.where(g == 1, shift, -shift)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(np.int64)
    g[:4] = (1, 1, 2, 2)
    y[:4] = (0, 1, 0, 1)
    return Dataset(x, g, y)
