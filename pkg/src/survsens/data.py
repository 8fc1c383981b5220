"""Right-censored datasets, CSV ingestion and cross-fitting folds."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or infeasible input data."""


@dataclass(frozen=True)
class Observation:
    y: float
    delta: int
    a: int
    w: tuple[float, ...]

    def __post_init__(self):
        if not (math.isfinite(self.y) and self.y >= 0):
            raise DataError(f"time must be finite and nonnegative, got {self.y}")
        if self.delta not in (0, 1) or self.a not in (0, 1):
            raise DataError("event and treatment must be 0 or 1")
        w = tuple(float(x) for x in self.w)
        if not all(math.isfinite(x) for x in w):
            raise DataError("covariates contain missing or non-finite values")
        object.__setattr__(self, "w", w)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of ``(Y, Delta, A, W)`` records.

    Arrays are copied and made read-only on construction so a dataset can be
    shared freely between workers.
    """

    time: np.ndarray
    event: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        time = np.array(self.time, dtype=float).ravel()
        event = np.array(self.event).ravel()
        trt = np.array(self.treatment).ravel()
        cov = np.array(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(time.size, -1) if time.size else cov.reshape(0, 0)
        n = time.size
        if n < 1:
            raise DataError("dataset must contain at least one observation")
        if event.size != n or trt.size != n or cov.shape[0] != n:
            raise DataError("time, event, treatment and covariates must have the same length")
        names = tuple(self.covariate_names) or tuple(f"W{j + 1}" for j in range(cov.shape[1]))
        if len(names) != cov.shape[1]:
            raise DataError(f"expected {cov.shape[1]} covariate names, got {len(names)}")
        if len(set(names)) != len(names):
            raise DataError("covariate names must be unique")
        if not np.all(np.isfinite(time)):
            raise DataError("time contains missing or non-finite values")
        if np.any(time < 0):
            raise DataError("negative time")
        if not np.all(np.isin(event, (0, 1))):
            raise DataError("event indicator must be 0 or 1")
        if not np.all(np.isin(trt, (0, 1))):
            raise DataError("treatment must be 0 or 1")
        if not np.all(np.isfinite(cov)):
            raise DataError("covariates contain missing or non-finite values")
        for name, arr in (("time", time), ("event", event.astype(int)), ("treatment", trt.astype(int)),
                          ("covariates", cov)):
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> Observation:
        return Observation(float(self.time[i]), int(self.event[i]), int(self.treatment[i]),
                           tuple(float(x) for x in self.covariates[i]))

    def __iter__(self) -> Iterator[Observation]:
        return (self[i] for i in range(self.n))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.covariate_names == other.covariate_names
                and np.array_equal(self.time, other.time)
                and np.array_equal(self.event, other.event)
                and np.array_equal(self.treatment, other.treatment)
                and np.array_equal(self.covariates, other.covariates))

    __hash__ = None

    @classmethod
    def from_observations(cls, observations: Sequence[Observation],
                          covariate_names: Sequence[str] = ()) -> "Dataset":
        if not observations:
            raise DataError("dataset must contain at least one observation")
        p = len(observations[0].w)
        if any(len(o.w) != p for o in observations):
            raise DataError("all observations must share the covariate dimension")
        return cls(np.array([o.y for o in observations], dtype=float),
                   np.array([o.delta for o in observations]),
                   np.array([o.a for o in observations]),
                   np.array([o.w for o in observations], dtype=float).reshape(len(observations), p),
                   tuple(covariate_names))

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.time[index], self.event[index], self.treatment[index],
                       self.covariates[index], self.covariate_names)

    def drop_covariates(self, names: Sequence[str]) -> "Dataset":
        unknown = set(names) - set(self.covariate_names)
        if unknown:
            raise DataError(f"unknown covariates: {sorted(unknown)}")
        keep = [j for j, nm in enumerate(self.covariate_names) if nm not in set(names)]
        return Dataset(self.time, self.event, self.treatment, self.covariates[:, keep],
                       tuple(self.covariate_names[j] for j in keep))

    def with_treatment(self, treatment) -> "Dataset":
        return Dataset(self.time, self.event, treatment, self.covariates, self.covariate_names)


@dataclass(frozen=True)
class CsvSchema:
    time: str = "time"
    event: str = "event"
    treatment: str = "treatment"
    covariates: tuple[str, ...] = ()


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read a dataset from a headed UTF-8 CSV file.

    Every problem found is reported with its 1-based data row number (the
    header is row 0) and column name.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    if not schema.covariates:
        raise DataError("schema must name at least one covariate")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        columns = [schema.time, schema.event, schema.treatment, *schema.covariates]
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataError(f"columns not found in header: {missing}")
        pos = [header.index(c) for c in columns]
        rows, problems = [], []
        for rownum, raw in enumerate(reader, start=1):
            if not raw or all(not c.strip() for c in raw):
                continue
            values = []
            for col, j in zip(columns, pos):
                cell = raw[j].strip() if j < len(raw) else ""
                if cell == "" or cell.lower() in ("na", "nan"):
                    problems.append(f"row {rownum}, column {col!r}: missing value")
                    values.append(math.nan)
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    problems.append(f"row {rownum}, column {col!r}: non-numeric value {cell!r}")
                    values.append(math.nan)
                    continue
            y, d, a = values[:3]
            if y < 0:
                problems.append(f"row {rownum}, column {schema.time!r}: negative time {y}")
            if not math.isnan(d) and d not in (0.0, 1.0):
                problems.append(f"row {rownum}, column {schema.event!r}: value {d:g} not in {{0,1}}")
            if not math.isnan(a) and a not in (0.0, 1.0):
                problems.append(f"row {rownum}, column {schema.treatment!r}: value {a:g} not in {{0,1}}")
            rows.append(values)
    if problems:
        raise DataError("invalid CSV input:\n  " + "\n  ".join(problems))
    if not rows:
        raise DataError(f"{path} has no data rows")
    arr = np.array(rows, dtype=float)
    return Dataset(arr[:, 0], arr[:, 1].astype(int), arr[:, 2].astype(int), arr[:, 3:],
                   tuple(schema.covariates))


def write_csv(data: Dataset, path, schema: CsvSchema | None = None) -> None:
    schema = schema or CsvSchema(covariates=data.covariate_names)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.time, schema.event, schema.treatment, *schema.covariates])
        for i in range(data.n):
            # repr round-trips floats exactly
            writer.writerow([repr(float(data.time[i])), int(data.event[i]), int(data.treatment[i]),
                             *(repr(float(x)) for x in data.covariates[i])])


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    k: int
    fold_of: np.ndarray
    seed: int

    def __post_init__(self):
        arr = np.ascontiguousarray(self.fold_of, dtype=np.int64)
        arr.setflags(write=False)
        object.__setattr__(self, "fold_of", arr)

    @property
    def n(self) -> int:
        return self.fold_of.size

    def eval_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.k + 1)[1:]

    def __iter__(self):
        for fold in range(1, self.k + 1):
            yield fold, self.train_index(fold), self.eval_index(fold)

    def __eq__(self, other) -> bool:
        return (isinstance(other, FoldAssignment) and self.k == other.k and self.seed == other.seed
                and np.array_equal(self.fold_of, other.fold_of))

    __hash__ = None


def make_folds(n: int, k: int, seed: int, dataset: Dataset | None = None) -> FoldAssignment:
    """Split ``range(n)`` into ``k`` folds of near-equal size.

    Units are shuffled with ``seed`` and dealt round-robin after grouping by
    treatment arm, so both fold sizes and per-arm counts differ by at most one
    across folds. When ``dataset`` is given every training complement is
    checked to contain both arms and at least one event in each arm.
    """
    if k < 2:
        raise DataError("need at least 2 folds")
    if k > n:
        raise DataError(f"cannot split {n} observations into {k} folds")
    if dataset is not None and dataset.n != n:
        raise DataError("n does not match the dataset size")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    if dataset is not None:
        order = order[np.argsort(dataset.treatment[order], kind="stable")]
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % k + 1
    folds = FoldAssignment(k, fold_of, seed)
    if dataset is not None:
        check_feasible(dataset, folds)
    return folds


def check_feasible(dataset: Dataset, folds: FoldAssignment) -> None:
    for fold, train, _ in folds:
        a = dataset.treatment[train]
        d = dataset.event[train]
        for arm in (0, 1):
            if not np.any(a == arm):
                raise DataError(f"training set for fold {fold} has no units with treatment={arm}; "
                                f"use fewer folds")
            if not np.any(d[a == arm] == 1):
                raise DataError(f"training set for fold {fold} has no observed events with "
                                f"treatment={arm}; use fewer folds")


def load_demo() -> Dataset:
    """The bundled synthetic dataset (1000 rows, covariates ``W1``, ``W2``)."""
    src = resources.files("survsens").joinpath("data/demo.csv")
    with resources.as_file(src) as path:
        return load_csv(path, CsvSchema(covariates=("W1", "W2")))
