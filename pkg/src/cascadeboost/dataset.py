"""Weighted, optionally labeled, batches of visible points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Space
from .errors import BadParams, EmptyLabeledSet

UNLABELED = -1


@dataclass(frozen=True)
class Dataset:
    """Points in ``space`` with optional per-example weights and labels.

    Weights default to 1; they define the empirical distribution
    p_D(x_n) = w_n / sum(w). A label of -1 marks an unlabeled row.
    """

    points: np.ndarray
    space: Space
    weights: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = self.space.validate(self.points)
        if pts.shape[0] == 0:
            raise BadParams("dataset is empty")
        object.__setattr__(self, "points", pts)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (pts.shape[0],) or np.any(w < 0) or not np.all(np.isfinite(w)) or not np.any(w > 0):
                raise BadParams("weights must be finite, nonnegative, not all zero, one per point")
            object.__setattr__(self, "weights", w)
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (pts.shape[0],) or np.any(y != np.round(y)) or np.any(y < UNLABELED):
                raise BadParams("labels must be integers >= -1, one per point")
            object.__setattr__(self, "labels", y.astype(np.int64))

    @classmethod
    def from_array(cls, points, weights=None, labels=None, space: Space | None = None) -> "Dataset":
        arr = np.asarray(points)
        if space is None:
            if arr.ndim != 2:
                raise BadParams("cannot infer a space for non-2D points")
            binary = bool(np.all((arr == 0) | (arr == 1)))
            space = Space.binary(arr.shape[1]) if binary else Space.real(arr.shape[1])
        return cls(arr, space, weights, labels)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def effective_weights(self) -> np.ndarray:
        return np.ones(len(self)) if self.weights is None else self.weights

    @property
    def probabilities(self) -> np.ndarray:
        """Empirical distribution p_D over the rows."""
        w = self.effective_weights
        return w / w.sum()

    def with_weights(self, weights) -> "Dataset":
        return Dataset(self.points, self.space, weights, self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        w = None if self.weights is None else self.weights[idx]
        y = None if self.labels is None else self.labels[idx]
        return Dataset(self.points[idx], self.space, w, y)

    @property
    def n_labeled(self) -> int:
        return 0 if self.labels is None else int(np.sum(self.labels >= 0))


def as_dataset(data, space: Space | None = None) -> Dataset:
    if isinstance(data, Dataset):
        return data
    return Dataset.from_array(data, space=space)


@dataclass(frozen=True)
class LabeledDataset:
    """Unlabeled points D_u and labeled pairs D_l over one visible space."""

    unlabeled: np.ndarray
    labeled: np.ndarray
    labels: np.ndarray
    n_classes: int
    space: Space

    def __post_init__(self):
        lab = self.space.validate(self.labeled) if np.size(self.labeled) else np.empty((0, self.space.dim))
        object.__setattr__(self, "labeled", lab)
        un = self.space.validate(self.unlabeled) if np.size(self.unlabeled) else np.empty((0, self.space.dim))
        object.__setattr__(self, "unlabeled", un)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if y.shape != (lab.shape[0],):
            raise BadParams("one label per labeled point")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise BadParams(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "labels", y)

    @classmethod
    def from_dataset(cls, ds: Dataset, n_classes: int | None = None) -> "LabeledDataset":
        if ds.labels is None:
            raise EmptyLabeledSet("dataset carries no labels")
        lab = ds.labels >= 0
        C = n_classes if n_classes is not None else int(ds.labels.max()) + 1
        return cls(ds.points[~lab], ds.points[lab], ds.labels[lab], max(C, 1), ds.space)

    @property
    def n_unlabeled(self) -> int:
        return self.unlabeled.shape[0]

    @property
    def n_labeled(self) -> int:
        return self.labeled.shape[0]
