"""Datasets, regrouping by distinct covariates, CSV loading, splits and synthetic data."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataLoadError, InvalidInputError, SchemaError
from .expfam import ExpFamilySpec, FamilyId


@dataclass(frozen=True)
class Dataset:
    """Observations (x_i, T(y_i)) for one exponential family.

    Parameters
    ----------
    x : ndarray, shape (N, n)
    t_y : ndarray, shape (N,)
        Sufficient statistic values; T(y) = y for the built-in families.
    family : ExpFamilySpec
    feature_names : tuple of str, optional
    """

    x: np.ndarray
    t_y: np.ndarray
    family: ExpFamilySpec
    feature_names: tuple = ()

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        t = np.array(self.t_y, dtype=float).reshape(-1)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or x.shape[0] < 1:
            raise InvalidInputError("x must be a non-empty N x n matrix")
        if t.shape[0] != x.shape[0]:
            raise InvalidInputError(f"x has {x.shape[0]} rows but t_y has {t.shape[0]} entries")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
            raise InvalidInputError("dataset contains non-finite values")
        if not self.family.valid_stat(t):
            raise SchemaError(f"t_y values are not valid sufficient statistics for {self.family.name}")
        x.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t_y", t)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def family_id(self) -> FamilyId:
        return self.family.family_id

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.t_y[idx], self.family, self.feature_names)


@dataclass(frozen=True)
class GroupedDataset:
    """Data regrouped by distinct covariate rows.

    Attributes
    ----------
    x_hat : ndarray, shape (C, n)
    counts : ndarray of int, shape (C,)
    t_mean : ndarray, shape (C,)
    p_hat : ndarray, shape (C,)
        ``counts / counts.sum()``.
    family : ExpFamilySpec
    """

    x_hat: np.ndarray
    counts: np.ndarray
    t_mean: np.ndarray
    p_hat: np.ndarray
    family: ExpFamilySpec

    @property
    def n_groups(self) -> int:
        return self.x_hat.shape[0]

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_arrays(cls, x_hat, counts, t_mean, family: ExpFamilySpec) -> "GroupedDataset":
        x_hat = np.atleast_2d(np.asarray(x_hat, dtype=float))
        counts = np.asarray(counts, dtype=np.int64).reshape(-1)
        t_mean = np.asarray(t_mean, dtype=float).reshape(-1)
        if not (x_hat.shape[0] == counts.shape[0] == t_mean.shape[0]):
            raise InvalidInputError("x_hat, counts and t_mean must agree on the number of groups")
        if np.any(counts < 1):
            raise InvalidInputError("group counts must be positive")
        return cls(x_hat, counts, t_mean, counts / counts.sum(), family)


def _group_ids(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.ascontiguousarray(x)
    keys = x.view(np.dtype((np.void, x.dtype.itemsize * x.shape[1]))).ravel()
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return rank[inverse.reshape(-1)], first[order]


def group(dataset: Dataset) -> GroupedDataset:
    """Regroup rows by exact (bitwise) equality of the covariates.

    Groups are ordered by first appearance.
    """
    gid, first = _group_ids(dataset.x)
    counts = np.bincount(gid, minlength=first.size)
    sums = np.bincount(gid, weights=dataset.t_y, minlength=first.size)
    return GroupedDataset.from_arrays(dataset.x[first], counts, sums / counts, dataset.family)


def group_index(dataset: Dataset) -> np.ndarray:
    """Group id of every row, consistent with :func:`group`."""
    return _group_ids(dataset.x)[0]


# Synthetic Poisson design


@dataclass(frozen=True)
class SyntheticPoissonSpec:
    """Finite-support Poisson regression design.

    Parameters
    ----------
    K : int
        Number of covariate support points.
    n : int
        Covariate dimension.
    seed : int
    N : int
        Sample size.
    """

    K: int = 100
    n: int = 10
    seed: int = 0
    N: int = 50

    def __post_init__(self):
        if self.K < 1 or self.N < 1 or self.n < 1:
            raise InvalidInputError("K, n and N must be >= 1")
        if self.seed < 0:
            raise InvalidInputError("seed must be non-negative")


@dataclass(frozen=True)
class TrueModel:
    """Data-generating law: X uniform over ``support`` with weights ``p``, Y|x ~ Poisson(exp(w0 @ x))."""

    support: np.ndarray
    p: np.ndarray
    w0: np.ndarray

    def rates(self) -> np.ndarray:
        return np.exp(self.support @ self.w0)


def make_true_model(K: int, n: int, rng: np.random.Generator) -> TrueModel:
    support = rng.standard_normal((K, n))
    m = rng.uniform(0.0, 10000.0, size=K)
    w_tilde = rng.standard_normal(n)
    return TrueModel(support, m / m.sum(), w_tilde / np.abs(w_tilde).sum())


def sample_dataset(model: TrueModel, N: int, rng: np.random.Generator) -> Dataset:
    idx = rng.choice(model.p.size, size=N, p=model.p)
    x = model.support[idx]
    y = rng.poisson(np.exp(x @ model.w0)).astype(float)
    return Dataset(x, y, ExpFamilySpec(FamilyId.POISSON))


def generate_synthetic_poisson(spec: SyntheticPoissonSpec) -> tuple[Dataset, TrueModel]:
    rng = np.random.default_rng(spec.seed)
    model = make_true_model(spec.K, spec.n, rng)
    return sample_dataset(model, spec.N, rng), model


# CSV input


@dataclass(frozen=True)
class CsvSchema:
    """Column typing for :func:`load_csv`.

    Parameters
    ----------
    label : str
        Name of the response column.
    family : str
        ``"bernoulli"``, ``"poisson"`` or ``"gaussian"``.
    features : tuple of str or None
        Feature columns; all non-label, non-dropped columns when None.
    drop : tuple of str
        Columns to ignore.
    """

    label: str
    family: str = "bernoulli"
    features: tuple | None = None
    drop: tuple = ()

    @classmethod
    def from_json(cls, source) -> "CsvSchema":
        if isinstance(source, (str, Path)):
            try:
                source = json.loads(Path(source).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise SchemaError(f"cannot read schema: {exc}") from None
        if not isinstance(source, dict) or "label" not in source:
            raise SchemaError("schema must be a JSON object with a 'label' key")
        unknown = set(source) - {"label", "family", "features", "drop"}
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        feats = source.get("features")
        return cls(
            label=str(source["label"]),
            family=str(source.get("family", "bernoulli")),
            features=None if feats is None else tuple(feats),
            drop=tuple(source.get("drop", ())),
        )


def _parse_float(cell: str, row: int, column: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataLoadError(f"cannot parse {cell!r} as a number", row=row, column=column) from None
    if not np.isfinite(v):
        raise DataLoadError(f"non-finite value {cell!r}", row=row, column=column)
    return v


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read a numeric CSV with a header row.

    Bernoulli labels may be any two distinct raw values; they are mapped to
    0 and 1 in sorted order (numeric order if both parse as numbers).
    """
    family = ExpFamilySpec.from_name(schema.family)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataLoadError(f"cannot open {path}: {exc}") from None
    rows = [r for r in rows if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise DataLoadError(f"{path} has no data rows")
    header = [h.strip() for h in rows[0]]
    if schema.label not in header:
        raise SchemaError(f"label column {schema.label!r} not in header")
    if schema.features is None:
        feats = [h for h in header if h != schema.label and h not in schema.drop]
    else:
        feats = list(schema.features)
        missing = [f for f in feats if f not in header]
        if missing:
            raise SchemaError(f"feature columns missing from header: {missing}")
    if not feats:
        raise SchemaError("no feature columns")
    fidx = [header.index(f) for f in feats]
    lidx = header.index(schema.label)

    x = np.empty((len(rows) - 1, len(feats)))
    raw_labels = []
    for i, r in enumerate(rows[1:], start=1):
        if len(r) != len(header):
            raise DataLoadError(f"expected {len(header)} fields, found {len(r)}", row=i)
        for j, (k, name) in enumerate(zip(fidx, feats)):
            x[i - 1, j] = _parse_float(r[k].strip(), i, name)
        raw_labels.append(r[lidx].strip())

    if family.family_id is FamilyId.BERNOULLI:
        classes = sorted(set(raw_labels))
        try:
            classes = sorted(classes, key=float)
        except ValueError:
            pass
        if len(classes) > 2:
            raise SchemaError(f"Bernoulli label column has {len(classes)} classes: {classes[:5]}")
        code = {c: float(k) for k, c in enumerate(classes)}
        t = np.array([code[v] for v in raw_labels])
    else:
        t = np.array([_parse_float(v, i, schema.label) for i, v in enumerate(raw_labels, start=1)])
        if not family.valid_stat(t):
            raise SchemaError(f"label values invalid for {family.name}")
    return Dataset(x, t, family, tuple(feats))


def split(dataset: Dataset, fractions=(0.5, 0.25, 0.25), seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffled three-way split.

    The first two parts get ``floor(f * N)`` rows; the last takes the rest.
    """
    f = np.asarray(fractions, dtype=float)
    if f.shape != (3,) or np.any(f < 0) or abs(f.sum() - 1.0) > 1e-9:
        raise InvalidInputError("fractions must be three non-negative numbers summing to 1")
    N = dataset.n_samples
    perm = np.random.default_rng(seed).permutation(N)
    n1 = int(np.floor(f[0] * N))
    n2 = int(np.floor(f[1] * N))
    parts = (perm[:n1], perm[n1 : n1 + n2], perm[n1 + n2 :])
    if any(p.size == 0 for p in parts):
        raise InvalidInputError(f"split of {N} rows by {tuple(f)} leaves an empty part")
    return tuple(dataset.subset(np.sort(p)) for p in parts)


def standardize(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Center and scale features with statistics from ``train``."""
    mu = train.x.mean(axis=0)
    sd = train.x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return tuple(Dataset((d.x - mu) / sd, d.t_y, d.family, d.feature_names) for d in (train, *others))


def add_intercept(dataset: Dataset) -> Dataset:
    x = np.hstack([np.ones((dataset.n_samples, 1)), dataset.x])
    names = ("intercept", *dataset.feature_names) if dataset.feature_names else ()
    return Dataset(x, dataset.t_y, dataset.family, names)
