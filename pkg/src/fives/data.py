"""CSV ingestion, discretization, rare-value merging, encoding, splits, batches."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RARE = "__RARE__"
GRANULARITIES = (10, 100, 1000)
TABLE_FORMAT_VERSION = 1


class SchemaError(ValueError):
    pass


class LabelError(ValueError):
    pass


class ParseError(ValueError):
    pass


class EmptyTableError(ValueError):
    pass


class SplitError(ValueError):
    pass


class NumericDomainError(ValueError):
    pass


class UnseenCategoryError(KeyError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    granularity: int | None = None

    def __post_init__(self):
        if self.kind not in ("categorical", "numeric"):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "numeric" and self.granularity not in GRANULARITIES:
            raise SchemaError(
                f"numeric column {self.name!r} needs granularity in {GRANULARITIES}, got {self.granularity!r}"
            )
        if self.kind == "categorical" and self.granularity is not None:
            raise SchemaError(f"categorical column {self.name!r} cannot carry a granularity")


def check_schema(schema):
    names = [c.name for c in schema]
    dupes = sorted(n for n, k in Counter(names).items() if k > 1)
    if dupes:
        raise SchemaError(f"duplicate column names in schema: {dupes}")
    if not schema:
        raise SchemaError("schema has no feature columns")
    return list(schema)


def load_schema(path):
    """Read ``{"columns": [{name, kind, granularity?}, ...], "label_column": str}``."""
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise SchemaError(f"schema file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema file is not valid JSON: {exc}") from exc
    if isinstance(payload, list):
        raise SchemaError("schema must be an object with 'columns' and 'label_column'")
    try:
        columns = [ColumnSpec(c["name"], c["kind"], c.get("granularity")) for c in payload["columns"]]
        label = payload["label_column"]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed schema: {exc}") from exc
    return check_schema(columns), label


def dump_schema(schema, label_column):
    cols = []
    for c in schema:
        entry = {"name": c.name, "kind": c.kind}
        if c.granularity is not None:
            entry["granularity"] = c.granularity
        cols.append(entry)
    return {"columns": cols, "label_column": label_column}


@dataclass
class RawTable:
    """Columns as read from disk: numeric columns are float arrays, categorical ones lists of str."""

    schema: list
    columns: dict
    labels: np.ndarray

    @property
    def n_rows(self):
        return len(self.labels)


def _parse_label(text, row):
    t = text.strip()
    if t in ("0", "1"):
        return int(t)
    raise LabelError(f"row {row}: label must be 0 or 1, got {text!r}")


def load_csv(path, schema, label_column):
    schema = check_schema(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration as exc:
            raise EmptyTableError(f"{path}: no header row") from exc
        position = {name: i for i, name in enumerate(header)}
        missing = [c.name for c in schema if c.name not in position]
        if label_column not in position:
            missing.append(label_column)
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        cells = {c.name: [] for c in schema}
        labels = []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"row {row_no}: expected {len(header)} cells, got {len(row)}")
            for c in schema:
                cells[c.name].append(row[position[c.name]])
            labels.append(_parse_label(row[position[label_column]], row_no))
    if not labels:
        raise EmptyTableError(f"{path}: header only, no data rows")

    columns = {}
    for c in schema:
        if c.kind == "numeric":
            values = np.empty(len(labels))
            for i, text in enumerate(cells[c.name]):
                try:
                    values[i] = float(text)
                except ValueError:
                    raise ParseError(
                        f"row {i + 2}, column {c.name!r}: cannot parse {text!r} as a number"
                    ) from None
            columns[c.name] = values
        else:
            columns[c.name] = cells[c.name]
    return RawTable(schema, columns, np.asarray(labels, dtype=np.int64))


def bucket_bounds(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise EmptyTableError("cannot discretize an empty vector")
    if not np.all(np.isfinite(v)):
        raise NumericDomainError("numeric column contains NaN or infinite values")
    return float(v.min()), float(v.max())


def discretize_numeric(values, granularity, bounds=None):
    """Equal-width bucket ids in [0, granularity).

    ``bounds`` defaults to the min and max of ``values``. Values at the upper
    edge land in the last bucket; a constant column maps to bucket 0.
    """
    if granularity < 2:
        raise ValueError("granularity must be at least 2")
    v = np.asarray(values, dtype=np.float64)
    lo, hi = bucket_bounds(v) if bounds is None else bounds
    if not np.all(np.isfinite(v)):
        raise NumericDomainError("numeric column contains NaN or infinite values")
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.int64)
    ids = np.floor((v - lo) * granularity / (hi - lo))
    return np.clip(ids, 0, granularity - 1).astype(np.int64)


def merge_rare_values(column, min_freq):
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter(column)
    return [RARE if counts[v] < min_freq else v for v in column]


@dataclass
class EncodedTable:
    codes: np.ndarray  # (N, m) int64
    labels: np.ndarray  # (N,) int64
    cardinalities: tuple
    vocab_maps: list  # per column: dict raw token -> code
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.codes.ndim != 2:
            raise ValueError("codes must be a 2-D (rows x columns) array")
        self.cardinalities = tuple(int(c) for c in self.cardinalities)
        if not self.names:
            self.names = [f"f{i}" for i in range(self.codes.shape[1])]
        if len(self.names) != self.codes.shape[1] or len(self.cardinalities) != self.codes.shape[1]:
            raise ValueError("names / cardinalities do not match the number of columns")
        if len(self.labels) != len(self.codes):
            raise ValueError("labels and codes differ in length")

    @property
    def n_rows(self):
        return self.codes.shape[0]

    @property
    def n_features(self):
        return self.codes.shape[1]

    def column(self, i):
        return self.codes[:, i]

    def validate(self):
        if self.codes.size and (self.codes.min() < 0 or np.any(self.codes.max(axis=0) >= self.cardinalities)):
            raise ValueError("code out of range for its column")
        if not np.isin(self.labels, (0, 1)).all():
            raise LabelError("labels must be binary")
        return self

    def take(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return EncodedTable(self.codes[idx], self.labels[idx], self.cardinalities, self.vocab_maps, list(self.names))

    def decode(self):
        inverse = [{code: tok for tok, code in vm.items()} for vm in self.vocab_maps]
        return [[inverse[j][c] for c in self.codes[:, j]] for j in range(self.n_features)]

    def to_dict(self):
        return {
            "format_version": TABLE_FORMAT_VERSION,
            "names": list(self.names),
            "cardinalities": list(self.cardinalities),
            "vocab": [sorted(vm, key=vm.get) for vm in self.vocab_maps],
            "columns": self.codes.T.tolist(),
            "labels": self.labels.tolist(),
        }

    @classmethod
    def from_dict(cls, payload):
        version = payload.get("format_version")
        if version != TABLE_FORMAT_VERSION:
            raise ValueError(f"unsupported table format_version {version!r}")
        cols = payload["columns"]
        n = len(payload["labels"])
        codes = np.asarray(cols, dtype=np.int64).T if cols else np.zeros((n, 0), dtype=np.int64)
        vocab = [{tok: i for i, tok in enumerate(v)} for v in payload["vocab"]]
        return cls(codes.reshape(n, len(cols)), payload["labels"], payload["cardinalities"], vocab, payload["names"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def concat_tables(tables):
    first = tables[0]
    return EncodedTable(
        np.concatenate([t.codes for t in tables]),
        np.concatenate([t.labels for t in tables]),
        first.cardinalities,
        first.vocab_maps,
        list(first.names),
    )


def encode_column(values):
    vocab = {}
    codes = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        codes[i] = vocab.setdefault(v, len(vocab))
    return codes, vocab


def encode_categorical(columns, labels, names=None):
    """Dense first-appearance codes for every column.

    ``columns`` is a sequence of equal-length token lists (or a mapping
    name -> tokens, in which case names come from the keys).
    """
    if isinstance(columns, dict):
        names = list(columns) if names is None else names
        columns = [columns[n] for n in names]
    encoded = [encode_column(list(col)) for col in columns]
    n = len(labels)
    codes = np.stack([c for c, _ in encoded], axis=1) if encoded else np.zeros((n, 0), dtype=np.int64)
    return EncodedTable(codes, labels, [len(v) for _, v in encoded], [v for _, v in encoded], list(names or []))


class Preprocessor:
    """Discretize, merge rare values and encode a :class:`RawTable`.

    ``fit`` learns bucket bounds and vocabularies from a table;
    ``transform`` applies them to any table with the same schema, mapping
    categories never seen during ``fit`` to the rare token.
    """

    def __init__(self, schema, min_freq=5, multi_granularity=False):
        self.schema = check_schema(schema)
        self.min_freq = min_freq
        self.multi_granularity = multi_granularity

    def _expanded(self):
        out = []
        for c in self.schema:
            if c.kind == "numeric":
                grans = GRANULARITIES if self.multi_granularity else (c.granularity,)
                out.extend((f"{c.name}@{g}" if self.multi_granularity else c.name, c, g) for g in grans)
            else:
                out.append((c.name, c, None))
        return out

    def _tokens(self, raw):
        tokens = {}
        for name, spec, gran in self._expanded():
            col = raw.columns[spec.name]
            if spec.kind == "numeric":
                ids = discretize_numeric(col, gran, self.bounds_[spec.name])
                tokens[name] = [str(b) for b in ids]
            else:
                tokens[name] = list(col)
        return tokens

    def fit(self, raw):
        self.bounds_ = {c.name: bucket_bounds(raw.columns[c.name]) for c in self.schema if c.kind == "numeric"}
        tokens = self._tokens(raw)
        self.names_ = list(tokens)
        self.vocab_maps_ = [encode_column(merge_rare_values(tokens[n], self.min_freq))[1] for n in self.names_]
        return self

    def transform(self, raw):
        tokens = self._tokens(raw)
        codes = np.empty((raw.n_rows, len(self.names_)), dtype=np.int64)
        for j, name in enumerate(self.names_):
            vocab = self.vocab_maps_[j]
            rare = vocab.get(RARE)
            for i, tok in enumerate(tokens[name]):
                code = vocab.get(tok, rare)
                if code is None:
                    raise UnseenCategoryError(f"column {name!r}: unseen value {tok!r} and no rare bucket")
                codes[i, j] = code
        return EncodedTable(
            codes, raw.labels.copy(), [len(v) for v in self.vocab_maps_], self.vocab_maps_, list(self.names_)
        )

    def fit_transform(self, raw):
        return self.fit(raw).transform(raw)


def preprocess(raw, min_freq=5, multi_granularity=False):
    """Dataset-level preprocessing with statistics from every row of ``raw``."""
    return Preprocessor(raw.schema, min_freq, multi_granularity).fit_transform(raw)


def split_sizes(n, fractions):
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise SplitError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n_val = int(math.floor(n * fractions[1] + 1e-9))
    n_test = int(math.floor(n * fractions[2] + 1e-9))
    sizes = (n - n_val - n_test, n_val, n_test)
    if min(sizes) <= 0:
        raise SplitError(f"split sizes {sizes} at N={n}: every split must be non-empty")
    return sizes


def split_dataset(table, fractions, seed):
    """Random disjoint (train, val, test) partition; train takes the rounding remainder."""
    n_train, n_val, _ = split_sizes(table.n_rows, fractions)
    perm = np.random.default_rng(seed).permutation(table.n_rows)
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(table.take(np.sort(p)) for p in parts)


@dataclass
class Batch:
    indices: np.ndarray
    codes: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.indices)


def iter_batches(table, batch_size, shuffle=False, seed=0):
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng(seed).permutation(table.n_rows) if shuffle else np.arange(table.n_rows)
    for start in range(0, table.n_rows, batch_size):
        idx = order[start:start + batch_size]
        yield Batch(idx, table.codes[idx], table.labels[idx])


def full_batch(table):
    return Batch(np.arange(table.n_rows), table.codes, table.labels)
