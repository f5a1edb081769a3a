"""Episodic memory of focal points and selection of the most forgotten ones."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import LayerClusters
from .network import ElasticNet


@dataclass(frozen=True)
class MemoryEntry:
    position: int  # index of the sample in the stream
    task: int
    layer: int


class EpisodicMemory:
    """Unlabelled images that founded a cluster, at most one per stream position."""

    def __init__(self, capacity: int | None = None):
        self.capacity = capacity or None
        self.entries: list[MemoryEntry] = []
        self._images: list[np.ndarray] = []
        self._positions: set[int] = set()

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def images(self) -> np.ndarray:
        if not self._images:
            return np.zeros((0, 0))
        return np.stack(self._images)

    def store_focal(self, image: np.ndarray, task: int, layer: int, position: int, *, pretraining: bool = False) -> bool:
        """Keep a focal point; returns whether it was actually stored."""
        if pretraining or position in self._positions:
            return False
        if self.capacity is not None and len(self) >= self.capacity:
            return False
        self._positions.add(position)
        self.entries.append(MemoryEntry(position, task, layer))
        self._images.append(np.asarray(image, dtype=np.float64).ravel().copy())
        return True

    def count_per_task(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for e in self.entries:
            out[e.task] = out.get(e.task, 0) + 1
        return out


def coverage(net: ElasticNet, clusters: list[LayerClusters], images: np.ndarray) -> np.ndarray:
    """``(n, L)`` matrix of ``max_s exp(-||C_s - h||)`` for every image and layer."""
    codes = net.embed(images)
    return np.column_stack([lc.posterior(h) for lc, h in zip(clusters, codes)])


def forgotten_mask(post: np.ndarray) -> np.ndarray:
    """Rows whose coverage is strictly below the layer mean at any layer."""
    post = np.asarray(post, dtype=np.float64)
    if post.ndim == 1:
        post = post[:, None]
    if len(post) == 0:
        return np.zeros(0, dtype=bool)
    mid = post.mean(axis=0)
    return (post < mid).any(axis=1)


def select_forgotten(mem: EpisodicMemory, net: ElasticNet, clusters: list[LayerClusters]) -> np.ndarray:
    """Indices into ``mem.entries`` forming this batch's replay buffer."""
    if len(mem) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(forgotten_mask(coverage(net, clusters, mem.images)))


def interleave(
    batch: np.ndarray, buffer: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shuffle the live batch together with replayed images.

    Returns the mixed images, a mask marking the live rows, and the
    permutation applied to ``concatenate([batch, buffer])``.
    """
    batch = np.asarray(batch, dtype=np.float64).reshape(len(batch), -1)
    if len(buffer):
        images = np.vstack([batch, np.asarray(buffer).reshape(len(buffer), -1)])
    else:
        images = batch
    live = np.zeros(len(images), dtype=bool)
    live[: len(batch)] = True
    order = rng.permutation(len(images))
    return images[order], live[order], order
