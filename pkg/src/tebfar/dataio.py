"""CSV ingestion, standardization and train/test splitting."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyAfterFiltering, InvalidSize, MissingColumn, ParseError, ZeroVariance
from .gauss import make_rng

NA_TOKENS = {"", "na", "nan"}
_DECIMAL = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


@dataclass(frozen=True)
class Standardization:
    """Per-column means and standard deviations of a training set."""

    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: float
    y_sd: float

    def to_dict(self):
        return {"x_mean": self.x_mean.tolist(), "x_sd": self.x_sd.tolist(),
                "y_mean": self.y_mean, "y_sd": self.y_sd}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["x_mean"], float), np.asarray(d["x_sd"], float),
                   float(d["y_mean"]), float(d["y_sd"]))


@dataclass(frozen=True)
class Dataset:
    """Predictors ``X`` (n, p) and response ``y`` (n,).

    ``params`` is set once the data have been standardized, and records the
    transform that was applied.
    """

    X: np.ndarray
    y: np.ndarray
    columns: tuple = ()
    response: str = "y"
    params: Standardization | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError(f"X {X.shape} and y {y.shape} are inconsistent")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if not self.columns:
            object.__setattr__(self, "columns", tuple(f"x{j + 1}" for j in range(X.shape[1])))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(self, X=self.X[rows], y=self.y[rows])

    def joint(self) -> np.ndarray:
        """(n, p + 1) matrix with the response as the last column."""
        return np.column_stack([self.X, self.y])


def _parse(token, row, column):
    t = token.strip()
    if t.lower() in NA_TOKENS:
        return None
    if not _DECIMAL.match(t):
        raise ParseError(row, column, token)
    return float(t)


def load_table(path, columns=None, drop_incomplete: bool = True):
    """Read a headed CSV of decimal numbers.

    Parameters
    ----------
    columns : sequence of str, optional
        Columns to parse (all by default). Cells in other columns are ignored.
    drop_incomplete : bool
        Drop rows with a missing or unparseable cell in ``columns``;
        otherwise the first such cell raises :class:`ParseError`.

    Returns
    -------
    names : tuple of str
    table : ndarray (n, len(names))
    row_index : ndarray of int
        0-based data-row positions of the retained rows.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyAfterFiltering(f"{path} is empty") from None
        names = tuple(header) if columns is None else tuple(columns)
        for name in names:
            if name not in header:
                raise MissingColumn(f"column {name!r} not in {path}")
        idx = [header.index(name) for name in names]
        rows, kept = [], []
        for i, raw in enumerate(reader, start=1):
            if not raw:
                continue
            values, bad = [], None
            for j, name in zip(idx, names):
                token = raw[j] if j < len(raw) else ""
                try:
                    v = _parse(token, i, name)
                except ParseError as exc:
                    v, bad = None, bad or exc
                if v is None and bad is None:
                    bad = ParseError(i, name, token)
                values.append(v)
            if bad is not None:
                if not drop_incomplete:
                    raise bad
                continue
            rows.append(values)
            kept.append(i - 1)
    if not rows:
        raise EmptyAfterFiltering(f"no complete rows in {path}")
    return names, np.array(rows, dtype=float), np.array(kept, dtype=int)


def load_csv(path, response: str, drop_incomplete: bool = True) -> Dataset:
    """Load a dataset whose response column is named ``response``.

    All other columns are predictors, in file order. Row numbers in errors
    count data rows from 1.
    """
    names, table, kept = load_table(path, None, drop_incomplete)
    if response not in names:
        raise MissingColumn(f"response column {response!r} not in {path}")
    r = names.index(response)
    x_idx = [j for j in range(len(names)) if j != r]
    return Dataset(table[:, x_idx], table[:, r], tuple(names[j] for j in x_idx), response,
                   provenance={"source": str(path), "row_index": kept.tolist(),
                               "complete_case": bool(drop_incomplete)})


def write_csv(path, data: Dataset) -> None:
    """Write predictors then response, using round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(data.columns) + [data.response])
        for xrow, yv in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in xrow] + [repr(float(yv))])


def fit_standardization(data: Dataset) -> Standardization:
    x_mean = data.X.mean(axis=0)
    x_sd = data.X.std(axis=0)
    y_mean = float(data.y.mean())
    y_sd = float(data.y.std())
    for name, sd in zip(data.columns, x_sd):
        if not sd > 0:
            raise ZeroVariance(name)
    if not y_sd > 0:
        raise ZeroVariance(data.response)
    return Standardization(x_mean, x_sd, y_mean, y_sd)


def apply_standardization(params: Standardization, data: Dataset) -> Dataset:
    return replace(data, X=(data.X - params.x_mean) / params.x_sd,
                   y=(data.y - params.y_mean) / params.y_sd, params=params)


def standardize(data: Dataset) -> Dataset:
    """Z-score every column of ``data`` with its own mean and sd."""
    return apply_standardization(fit_standardization(data), data)


def unstandardize_predictions(params: Standardization, y_hat) -> np.ndarray:
    return np.asarray(y_hat, dtype=float) * params.y_sd + params.y_mean


def split(data: Dataset, n_train: int, seed: int):
    """Uniformly random partition into ``n_train`` training rows and the rest."""
    if not 1 <= n_train < data.n:
        raise InvalidSize(f"n_train must be in [1, {data.n - 1}], got {n_train}")
    perm = make_rng(seed).permutation(data.n)
    train, test = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return data.take(train), data.take(test)


def write_predictions(path, y_hat, row_index=None) -> None:
    y_hat = np.asarray(y_hat, dtype=float)
    idx = np.arange(len(y_hat)) if row_index is None else np.asarray(row_index)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_index", "y_hat"])
        for i, v in zip(idx, y_hat):
            w.writerow([int(i), repr(float(v))])


def read_predictions(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return np.array([float(r["y_hat"]) for r in reader])


RESULT_FIELDS = ("method", "ntrain", "seed", "mse")


def write_results(path, rows) -> None:
    """Long-format results: one ``(method, ntrain, seed, mse)`` row per fit."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_FIELDS)
        for r in rows:
            w.writerow([r["method"], int(r["ntrain"]), int(r["seed"]), repr(float(r["mse"]))])


def read_results(path):
    with open(path, newline="") as fh:
        return [{"method": r["method"], "ntrain": int(r["ntrain"]), "seed": int(r["seed"]),
                 "mse": float(r["mse"])} for r in csv.DictReader(fh)]
