"""Column-major datasets, validation and CSV I/O."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import UserError

CONTINUOUS = "continuous"
BINARY = "binary"
_KINDS = (CONTINUOUS, BINARY)


class DataParseError(UserError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class StructureError(UserError):
    pass


class DataValidationError(UserError):
    def __init__(self, violations):
        super().__init__("invalid dataset: " + "; ".join(violations))
        self.violations = list(violations)


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str = CONTINUOUS

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise UserError(f"unknown column kind {self.kind!r} for {self.name!r}")


def infer_kind(values: np.ndarray) -> str:
    """Binary iff every observed value is 0.0 or 1.0."""
    if values.size and np.all((values == 0.0) | (values == 1.0)):
        return BINARY
    return CONTINUOUS


def _readonly(a):
    if a is None:
        return None
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature columns stored as a ``(p, n)`` array, one contiguous row per feature.

    ``response`` and ``row_weights`` are optional length-``n`` vectors. Arrays
    are copied and made read-only on construction, so a Dataset can be shared
    freely between workers.
    """

    schema: tuple
    columns: np.ndarray
    response: np.ndarray | None = None
    row_weights: np.ndarray | None = None
    response_name: str | None = None
    weight_name: str | None = None

    def __post_init__(self):
        cols = np.array(self.columns, dtype=np.float64, copy=True, order="C")
        if cols.ndim == 1 and len(self.schema) == 0 and cols.size == 0:
            cols = cols.reshape(0, 0)
        if cols.ndim != 2 or cols.shape[0] != len(self.schema):
            raise StructureError(
                f"columns must have shape (p, n) with p={len(self.schema)}, got {cols.shape}"
            )
        cols.flags.writeable = False
        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "response", _readonly(self.response))
        object.__setattr__(self, "row_weights", _readonly(self.row_weights))
        for label, vec in (("response", self.response), ("row_weights", self.row_weights)):
            if vec is not None and vec.shape != (cols.shape[1],):
                raise StructureError(f"{label} has length {vec.shape}, expected {cols.shape[1]}")

    @classmethod
    def from_arrays(
        cls,
        features: Mapping[str, Sequence[float]] | np.ndarray,
        names: Sequence[str] | None = None,
        response=None,
        row_weights=None,
        kinds: Mapping[str, str] | None = None,
        response_name: str | None = "y",
        weight_name: str | None = None,
    ) -> "Dataset":
        """Build a dataset from a name->column mapping or an ``(n, p)`` matrix.

        Column kinds are inferred by value unless given in ``kinds``.
        """
        if isinstance(features, Mapping):
            names = list(features)
            cols = np.array([np.asarray(features[k], dtype=np.float64) for k in names])
        else:
            mat = np.asarray(features, dtype=np.float64)
            if mat.ndim == 1:
                mat = mat[:, None]
            cols = mat.T
            if names is None:
                names = [f"X{j + 1}" for j in range(cols.shape[0])]
        kinds = dict(kinds or {})
        schema = [ColumnSchema(nm, kinds.get(nm) or infer_kind(cols[j])) for j, nm in enumerate(names)]
        return cls(
            schema,
            cols.reshape(len(schema), -1),
            response,
            row_weights,
            response_name if response is not None else None,
            weight_name if row_weights is not None else None,
        )

    @property
    def n(self) -> int:
        return self.columns.shape[1]

    @property
    def p(self) -> int:
        return self.columns.shape[0]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.schema]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UserError(f"no column named {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.columns[self.index_of(name)]

    def select(self, names: Iterable[str]) -> "Dataset":
        """Keep only the named feature columns (response and weights are kept)."""
        idx = [self.index_of(nm) for nm in names]
        return Dataset(
            [self.schema[j] for j in idx],
            self.columns[idx],
            self.response,
            self.row_weights,
            self.response_name,
            self.weight_name,
        )

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.schema,
            self.columns[:, rows],
            None if self.response is None else self.response[rows],
            None if self.row_weights is None else self.row_weights[rows],
            self.response_name,
            self.weight_name,
        )

    def without_response(self) -> "Dataset":
        return Dataset(self.schema, self.columns, None, self.row_weights, None, self.weight_name)

    def identical(self, other: "Dataset") -> bool:
        """Bit-exact equality of schema, values, response and weights."""

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and a.tobytes() == b.tobytes()

        return (
            self.schema == other.schema
            and self.response_name == other.response_name
            and self.weight_name == other.weight_name
            and same(self.columns, other.columns)
            and same(self.response, other.response)
            and same(self.row_weights, other.row_weights)
        )

    def feature_matrix(self, names: Sequence[str]) -> np.ndarray:
        """``(len(names), n)`` array for the named columns, in that order.

        Raises :class:`UserError` when a name is missing (schema mismatch).
        """
        if list(names) == self.names:
            return self.columns
        missing = [nm for nm in names if nm not in self.names]
        if missing:
            raise UserError(f"schema mismatch: missing columns {missing}")
        return self.columns[[self.index_of(nm) for nm in names]]


def validate(d: Dataset) -> list[str]:
    """Return every invariant violation of ``d``; an empty list means valid."""
    problems = []
    names = [c.name for c in d.schema]
    dupes = sorted({nm for nm in names if names.count(nm) > 1})
    for nm in dupes:
        problems.append(f"duplicate column name {nm!r}")
    if d.n < 1:
        problems.append("dataset has no rows")
    for j, col in enumerate(d.schema):
        values = d.columns[j]
        bad = ~np.isfinite(values)
        if bad.any():
            i = int(np.argmax(bad))
            problems.append(f"non-finite value in column {j + 1} ({col.name!r}) at row {i + 1}")
        elif col.kind == BINARY and not np.all((values == 0.0) | (values == 1.0)):
            problems.append(f"binary column {j + 1} ({col.name!r}) has values outside {{0, 1}}")
    if d.response is not None:
        bad = ~np.isfinite(d.response)
        if bad.any():
            problems.append(f"non-finite response at row {int(np.argmax(bad)) + 1}")
    if d.row_weights is not None:
        w = d.row_weights
        bad = ~np.isfinite(w)
        if bad.any():
            problems.append(f"non-finite weight at row {int(np.argmax(bad)) + 1}")
        for i in np.flatnonzero(w < 0):
            problems.append(f"negative weight at row {int(i) + 1}")
        if np.isfinite(w).all() and (w >= 0).all() and not w.sum() > 0:
            problems.append("row weights sum to zero")
    return problems


def check(d: Dataset) -> Dataset:
    problems = validate(d)
    if problems:
        raise DataValidationError(problems)
    return d


def domain_labels(n_source: int, n_target: int) -> np.ndarray:
    """The 0/1 domain indicator: ``n_source`` zeros then ``n_target`` ones."""
    if n_source < 1 or n_target < 1:
        raise UserError("both domains need at least one row")
    return np.concatenate([np.zeros(n_source), np.ones(n_target)])


def parse_dataset(
    path,
    schema_hint: Sequence[ColumnSchema] | None = None,
    response: str | None = None,
    weights: str | None = None,
    allow_empty: bool = False,
) -> Dataset:
    """Read a numeric CSV with a header row.

    Parameters
    ----------
    path : path-like
        UTF-8 comma-separated file.
    schema_hint : sequence of ColumnSchema, optional
        Overrides the inferred kind of the named columns.
    response, weights : str, optional
        Names of the columns holding the response and per-row weights. They
        are removed from the feature set.
    allow_empty : bool
        Accept a header-only file (used by prediction).
    """
    path = Path(path)
    if not path.exists():
        raise UserError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise StructureError(f"{path}: empty file, header row required") from None
        rows = []
        for line_no, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise StructureError(
                    f"{path}: line {line_no} has {len(rec)} fields, header has {len(header)}"
                )
            vals = []
            for j, field_ in enumerate(rec):
                text = field_.strip()
                if text == "" or text.lower() in ("na", "nan"):
                    raise DataValidationError(
                        [f"missing value at line {line_no}, column {j + 1} ({header[j]!r})"]
                    )
                try:
                    vals.append(float(text))
                except ValueError:
                    raise DataParseError(
                        f"{path}: cannot parse {text!r} at line {line_no}, column {j + 1} ({header[j]!r})",
                        line=line_no,
                        column=j + 1,
                    ) from None
            rows.append(vals)
    if len(set(header)) != len(header):
        raise StructureError(f"{path}: duplicate column names in header")
    table = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    if not rows and not allow_empty:
        raise DataValidationError([f"{path}: no data rows"])

    special = {}
    for label, name in (("response", response), ("weights", weights)):
        if name is not None:
            if name not in header:
                raise UserError(f"{path}: {label} column {name!r} not in header")
            special[label] = table[:, header.index(name)]
    feat_names = [h for h in header if h not in (response, weights)]
    hints = {c.name: c.kind for c in (schema_hint or [])}
    cols = np.array([table[:, header.index(nm)] for nm in feat_names]).reshape(len(feat_names), len(rows))
    schema = [ColumnSchema(nm, hints.get(nm) or infer_kind(cols[j])) for j, nm in enumerate(feat_names)]
    d = Dataset(schema, cols, special.get("response"), special.get("weights"), response, weights)
    if rows:
        check(d)
    return d


def write_dataset(d: Dataset, path) -> None:
    """Write ``d`` as CSV with 17 significant digits (bit-exact round trip)."""
    header = list(d.names)
    parts = [d.columns]
    if d.response is not None:
        header.append(d.response_name or "y")
        parts.append(d.response[None, :])
    if d.row_weights is not None:
        header.append(d.weight_name or "weight")
        parts.append(d.row_weights[None, :])
    table = np.vstack(parts).T if d.n else np.empty((0, len(header)))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in table:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")
