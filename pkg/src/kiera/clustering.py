"""Self-evolving cluster sets attached to every autoencoder layer.

Each layer keeps its own centroids, cardinalities and a class-allegiance
table estimated from the small labelled prefixes. Labels never reach any
other part of the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .numerics import RunningStat, softmax


class NoClustersError(RuntimeError):
    pass


@dataclass(frozen=True)
class GrowthDecision:
    grew: bool
    focal: bool


def growth_threshold(mu: float, sigma: float, d: float) -> float:
    """Distance above which a sample founds a new cluster."""
    k3 = 2.0 * np.exp(-d) + 2.0
    return mu + k3 * sigma


class LayerClusters:
    def __init__(self, width: int, capacity: int = 64):
        self.width = int(width)
        self._C = np.zeros((capacity, self.width))
        self._car = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self.dist_stat = RunningStat()
        self.allegiance = np.zeros((0, 0))
        self.dirty = True
        self.n_observed = 0
        self.n_grown = 0

    @property
    def centroids(self) -> np.ndarray:
        return self._C[: self.size]

    @property
    def cardinalities(self) -> np.ndarray:
        return self._car[: self.size]

    def __len__(self) -> int:
        return self.size

    def _append(self, h: np.ndarray) -> None:
        if self.size == len(self._C):
            self._C = np.vstack([self._C, np.zeros_like(self._C)])
            self._car = np.concatenate([self._car, np.zeros_like(self._car)])
        self._C[self.size] = h
        self._car[self.size] = 1
        self.size += 1

    def _require(self) -> None:
        if self.size == 0:
            raise NoClustersError("layer has no clusters yet")

    def _check(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=np.float64)
        if h.shape[-1] != self.width:
            raise ValueError(f"sample width {h.shape[-1]} != layer width {self.width}")
        return h

    # -------------------------------------------------------------- distances
    def distances(self, h: np.ndarray) -> np.ndarray:
        """Euclidean distances to every centroid; ``(Cls,)`` or ``(n, Cls)``."""
        self._require()
        h = self._check(h)
        if h.ndim == 1:
            return np.sqrt(((self.centroids - h) ** 2).sum(axis=1))
        return cdist(h, self.centroids)

    def nearest(self, H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Index and distance of the winning cluster for each row of ``H``."""
        D = self.distances(np.atleast_2d(H))
        idx = D.argmin(axis=1)
        return idx, D[np.arange(len(idx)), idx]

    def allegiance_of(self, h: np.ndarray) -> np.ndarray:
        d = self.distances(h)
        # exp(-d) / max exp(-d), written to avoid underflow
        return np.exp(-(d - d.min(axis=-1, keepdims=True)))

    def posterior(self, h: np.ndarray) -> np.ndarray | float:
        """Coverage ``max_s exp(-||C_s - h||)`` of a sample (or rows of a batch)."""
        d = self.distances(h)
        out = np.exp(-d.min(axis=-1))
        return float(out) if np.ndim(out) == 0 else out

    # ------------------------------------------------------------- allegiance
    def refresh_allegiance(self, H: np.ndarray, cls: np.ndarray, m: int) -> np.ndarray:
        """Average allegiance per class over the embedded labelled cache.

        ``H`` holds the cached labelled samples embedded at this layer and
        ``cls`` their class indices in ``range(m)``. Classes without cached
        samples get an all-zero column.
        """
        self._require()
        ale = self.allegiance_of(np.atleast_2d(H))
        table = np.zeros((self.size, m))
        counts = np.bincount(cls, minlength=m)
        np.add.at(table.T, cls, ale)
        present = counts > 0
        table[:, present] /= counts[present]
        self.allegiance = table
        self.dirty = False
        return table

    def class_scores(self, h: np.ndarray) -> np.ndarray:
        """Softmax over classes of allegiance weighted by ``exp(-distance)``."""
        if self.dirty:
            raise RuntimeError("allegiance is stale; refresh before scoring")
        d = self.distances(h)
        return softmax(np.exp(-d) @ self.allegiance)

    # ---------------------------------------------------------------- updates
    def observe(self, h: np.ndarray) -> GrowthDecision:
        """Either found a new cluster at ``h`` or pull the winner towards it."""
        h = self._check(h)
        self.n_observed += 1
        self.dirty = True
        if self.size == 0:
            self._append(h)
            self.n_grown += 1
            return GrowthDecision(grew=True, focal=True)
        d_all = np.sqrt(((self.centroids - h) ** 2).sum(axis=1))
        win = int(d_all.argmin())
        d = float(d_all[win])
        grow = d > growth_threshold(self.dist_stat.mean, self.dist_stat.std, d)
        self.dist_stat.update(d)
        if grow:
            self._append(h)
            self.n_grown += 1
            return GrowthDecision(grew=True, focal=True)
        car = self._car[win]
        self._C[win] -= (self._C[win] - h) / (car + 1)
        self._car[win] = car + 1
        return GrowthDecision(grew=False, focal=False)

    def resize_add(self, value: float = 0.0) -> None:
        """A node was appended to the layer: every centroid gains a coordinate."""
        self._C = np.hstack([self._C, np.full((len(self._C), 1), float(value))])
        self.width += 1
        self.dirty = True

    def resize_remove(self, index: int) -> None:
        if not 0 <= index < self.width:
            raise IndexError(f"coordinate {index} out of range for width {self.width}")
        self._C = np.delete(self._C, index, axis=1)
        self.width -= 1
        self.dirty = True

    # ------------------------------------------------------------ persistence
    def state(self) -> tuple[dict, dict[str, np.ndarray]]:
        meta = {
            "width": self.width,
            "size": self.size,
            "dist_stat": [self.dist_stat.count, self.dist_stat.mean, self.dist_stat.m2],
            "dirty": self.dirty,
            "n_observed": self.n_observed,
            "n_grown": self.n_grown,
        }
        arrays = {
            "centroids": self.centroids.copy(),
            "cardinalities": self.cardinalities.astype(np.float64),
            "allegiance": self.allegiance,
        }
        return meta, arrays

    @classmethod
    def from_state(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "LayerClusters":
        lc = cls(meta["width"], capacity=max(1, meta["size"]))
        lc.size = meta["size"]
        lc._C[: lc.size] = arrays["centroids"].reshape(lc.size, lc.width)
        lc._car[: lc.size] = arrays["cardinalities"].astype(np.int64)
        lc.allegiance = arrays["allegiance"]
        lc.dist_stat = RunningStat(*meta["dist_stat"])
        lc.dirty = meta["dirty"]
        lc.n_observed = meta["n_observed"]
        lc.n_grown = meta["n_grown"]
        return lc


def predict(score_rows: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Sum per-layer class scores and pick the best class (lowest index on ties).

    ``score_rows[l]`` is ``(m,)`` or ``(n, m)``. Returns the class indices and
    the summed scores.
    """
    total = np.sum(score_rows, axis=0)
    return np.argmax(total, axis=-1), total


class LabelCache:
    """Pooled labelled prefixes of every task seen so far."""

    def __init__(self):
        self.images: list[np.ndarray] = []
        self.labels: list[np.ndarray] = []
        self.classes: list = []
        self._index: dict = {}

    def add(self, images: np.ndarray, labels) -> None:
        labels = np.asarray(labels)
        for y in labels.tolist():
            if y not in self._index:
                self._index[y] = len(self.classes)
                self.classes.append(y)
        self.images.append(np.asarray(images, dtype=np.float64).reshape(len(labels), -1))
        self.labels.append(labels)

    @property
    def m(self) -> int:
        return len(self.classes)

    def __len__(self) -> int:
        return sum(len(l) for l in self.labels)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        X = np.concatenate(self.images)
        cls = np.array([self._index[y] for y in np.concatenate(self.labels).tolist()], dtype=np.int64)
        return X, cls

    def label_of(self, class_index) -> np.ndarray:
        return np.asarray(self.classes)[class_index]
