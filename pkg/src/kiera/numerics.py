"""Dense primitives shared by the rest of the package.

Matrices are plain float64 numpy arrays. Everything here is a pure function
of its arguments except the in-place option of :func:`sgd_step`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when array shapes do not agree."""


def rng_stream(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Seeded PCG64 generator; identical seeds give identical draws."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = int(seed)
    return np.random.Generator(np.random.PCG64(seed))


def xavier_bound(rows: int, cols: int) -> float:
    return float(np.sqrt(6.0 / (rows + cols)))


def xavier_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform Glorot initialisation of a ``rows x cols`` matrix."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"invalid shape ({rows}, {cols})")
    bound = xavier_bound(rows, cols)
    return rng.uniform(-bound, bound, size=(rows, cols))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return (x > 0.0).astype(np.float64)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(v: np.ndarray) -> np.ndarray:
    """Softmax along the last axis with max subtraction."""
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sgd_step(
    w: np.ndarray,
    grad: np.ndarray,
    velocity: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
    *,
    inplace: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Classical momentum update.

    ``velocity <- momentum * velocity + grad + weight_decay * w`` followed by
    ``w <- w - lr * velocity``. With ``inplace=True`` both arrays are updated
    in place and returned.
    """
    if w.shape != grad.shape or w.shape != velocity.shape:
        raise ShapeError(f"shape mismatch: w{w.shape} grad{grad.shape} v{velocity.shape}")
    if inplace:
        velocity *= momentum
        velocity += grad
        if weight_decay:
            velocity += weight_decay * w
        w -= lr * velocity
        return w, velocity
    v_new = momentum * velocity + grad + weight_decay * w
    return w - lr * v_new, v_new


@dataclass
class RunningStat:
    """Welford accumulator for a scalar stream (population variance)."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, x: float) -> "RunningStat":
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)
        if self.m2 < 0.0:
            self.m2 = 0.0
        return self

    @property
    def var(self) -> float:
        return self.m2 / self.count if self.count > 0 else 0.0

    @property
    def std(self) -> float:
        # fewer than two samples carry no spread information
        return float(np.sqrt(self.var)) if self.count > 1 else 0.0

    def reset(self) -> None:
        self.count, self.mean, self.m2 = 0, 0.0, 0.0


def stat_update(s: RunningStat, x: float) -> RunningStat:
    """Return a new accumulator with ``x`` folded in; ``s`` is untouched."""
    return RunningStat(s.count, s.mean, s.m2).update(float(x))
