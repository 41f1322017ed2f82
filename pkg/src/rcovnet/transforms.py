"""Preprocessing between raw covariance matrices and network tensors.

Four transform kinds are supported; each has an exact inverse that maps an
arbitrary real ``d x d`` network output back to a positive semidefinite
matrix:

========================  =================================  ====================================
kind                      forward                            inverse(M)
========================  =================================  ====================================
``none``                  S                                  (M + M') / 2
``cholesky``              chol(S)                            tril(M) tril(M)'
``sqrt``                  S^1/2                              O O with O = (M + M') / 2
``sqrt-cholesky``         chol(S^1/2)                        O O with O = tril(M) tril(M)'
========================  =================================  ====================================
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from rcovnet import linalg as la
from rcovnet.errors import DataError, DimensionMismatch, SeriesTooShort


class TransformKind(str, Enum):
    NONE = "none"
    CHOLESKY = "cholesky"
    SQRT = "sqrt"
    SQRT_CHOLESKY = "sqrt-cholesky"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"sqrt-then-cholesky": "sqrt-cholesky", "sqrtcholesky": "sqrt-cholesky", "chol": "cholesky"}
        return cls(aliases.get(key, key))


ALL_KINDS = tuple(TransformKind)


def forward_transform(sigma, kind):
    kind = TransformKind.parse(kind)
    s = la.symmetrize(sigma)
    if kind is TransformKind.NONE:
        return s
    if kind is TransformKind.CHOLESKY:
        return la.cholesky(s)
    root = la.spd_sqrt(s)
    if kind is TransformKind.SQRT:
        return root
    return la.cholesky(root)


def inverse_transform(out, kind):
    """Map a raw ``(d, d)`` or ``(n, d, d)`` network output back to covariance space."""
    kind = TransformKind.parse(kind)
    m = np.asarray(out, dtype=np.float64)
    mt = np.swapaxes(m, -1, -2)
    if kind is TransformKind.NONE:
        return 0.5 * (m + mt)
    if kind is TransformKind.SQRT:
        o = 0.5 * (m + mt)
        return o @ o
    low = np.tril(m)
    prod = low @ np.swapaxes(low, -1, -2)
    if kind is TransformKind.CHOLESKY:
        return prod
    return prod @ prod


def forward_many(matrices, kind):
    return np.stack([forward_transform(s, kind) for s in matrices])


@dataclass
class RCovSeries:
    """Daily covariance matrices with day labels and asset names."""

    matrices: np.ndarray
    labels: Sequence = None
    assets: Sequence[str] = None
    note: str = ""

    def __post_init__(self):
        m = np.ascontiguousarray(self.matrices, dtype=np.float64)
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise DimensionMismatch(f"expected (T, d, d) matrices, got {m.shape}")
        self.matrices = m
        T, d = m.shape[0], m.shape[1]
        self.labels = list(range(T)) if self.labels is None else list(self.labels)
        self.assets = [f"A{i}" for i in range(d)] if self.assets is None else [str(a) for a in self.assets]
        if len(self.labels) != T:
            raise DimensionMismatch(f"{len(self.labels)} labels for {T} days")
        if len(self.assets) != d:
            raise DimensionMismatch(f"{len(self.assets)} asset names for dimension {d}")
        if any(not (a < b) for a, b in zip(self.labels, self.labels[1:])):
            raise DataError("day labels must be strictly increasing")

    @property
    def T(self):
        return self.matrices.shape[0]

    @property
    def d(self):
        return self.matrices.shape[1]

    def __len__(self):
        return self.T

    def subset(self, index):
        index = range(*index.indices(self.T)) if isinstance(index, slice) else index
        idx = list(index)
        return RCovSeries(self.matrices[idx], [self.labels[i] for i in idx], self.assets, self.note)


class LagWindowSample(NamedTuple):
    input: np.ndarray   # (m, d, d), slice k is the transform of day t - k
    target: np.ndarray  # (d, d), transform of day t + 1
    day: int            # index of the target day


@dataclass
class WindowSet:
    """Lazily materialised lag windows over one transformed series.

    Window ``n`` predicts day ``target_days[n]`` from the ``lag`` days before
    it.  Inputs are built on demand, so memory stays O(T d^2).
    """

    transformed: np.ndarray
    raw: np.ndarray
    lag: int
    kind: TransformKind
    target_days: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.target_days is None:
            self.target_days = np.arange(self.lag, self.transformed.shape[0])

    def __len__(self):
        return len(self.target_days)

    def __iter__(self):
        for n in range(len(self)):
            yield self[n]

    def __getitem__(self, n):
        day = int(self.target_days[n])
        return LagWindowSample(self.inputs([n])[0], self.transformed[day].copy(), day)

    def restrict(self, days):
        """Windows whose target day lies in ``days``."""
        days = np.asarray(list(days))
        keep = np.isin(self.target_days, days)
        return WindowSet(self.transformed, self.raw, self.lag, self.kind, self.target_days[keep])

    def inputs(self, idx):
        """(len(idx), lag, d, d) stack, most recent day first."""
        days = self.target_days[np.asarray(idx)]
        offsets = np.arange(1, self.lag + 1)
        return self.transformed[days[:, None] - offsets[None, :]]

    def targets(self, idx):
        return self.transformed[self.target_days[np.asarray(idx)]]

    def raw_targets(self, idx):
        return self.raw[self.target_days[np.asarray(idx)]]


def make_windows(series, kind, lag):
    """All lag windows of a series; T - lag samples, none looking ahead."""
    matrices = series.matrices if isinstance(series, RCovSeries) else np.asarray(series, dtype=np.float64)
    T = matrices.shape[0]
    if lag < 1:
        raise ValueError("lag must be positive")
    if T <= lag:
        raise SeriesTooShort(f"need more than {lag} days for lag {lag}, got {T}")
    kind = TransformKind.parse(kind)
    return WindowSet(forward_many(matrices, kind), matrices, lag, kind)


@dataclass(frozen=True)
class Fractional:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2


@dataclass(frozen=True)
class TrailingDays:
    val: int = 252
    test: int = 252


class Split(NamedTuple):
    train: range
    val: range
    test: range

    def apply(self, series):
        return tuple(series.subset(r) for r in self)


def split_series(series, scheme, min_train=1):
    """Contiguous chronological train / validation / test day ranges."""
    T = len(series)
    if isinstance(scheme, Fractional):
        total = scheme.train + scheme.val + scheme.test
        n_train = int(round(T * scheme.train / total))
        n_val = int(round(T * scheme.val / total))
        n_test = T - n_train - n_val
        if min(n_val, n_test) < 1:
            raise SeriesTooShort(f"{T} days is too short for a fractional split")
    elif isinstance(scheme, TrailingDays):
        n_val, n_test = scheme.val, scheme.test
        n_train = T - n_val - n_test
    else:
        raise TypeError(f"unknown split scheme {scheme!r}")
    if n_train < max(min_train, 1):
        raise SeriesTooShort(f"training split would hold {n_train} days (< {max(min_train, 1)})")
    return Split(range(0, n_train), range(n_train, n_train + n_val), range(n_train + n_val, T))
