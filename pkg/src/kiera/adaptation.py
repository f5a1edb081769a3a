"""Width and depth triggers.

:class:`SpcMonitor` watches the bias/variance of a layer's reconstruction and
asks for a new node (high bias) or a pruned node (high variance).
:class:`DriftDetector` compares two consecutive batches of latent inputs with
Hoeffding bounds and asks for a new layer when their means separate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .numerics import RunningStat


def hoeffding_bound(size: int, alpha: float) -> float:
    """``sqrt(ln(1/alpha) / (2 * size))``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"significance level must lie in (0, 1], got {alpha}")
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    return math.sqrt(math.log(1.0 / alpha) / (2.0 * size))


def confidence_factor(x: float) -> float:
    """Dynamic SPC factor ``1.3 exp(-x) + 0.7`` in (0.7, 2]."""
    return 1.3 * math.exp(-x) + 0.7


# ---------------------------------------------------------------------- SPC
class Action(enum.Enum):
    NONE = 0
    GROW = 1
    PRUNE = 2


@dataclass(frozen=True)
class WidthAction:
    kind: Action
    node: int | None = None

    def __bool__(self) -> bool:
        return self.kind is not Action.NONE


NO_ACTION = WidthAction(Action.NONE)


class SpcMonitor:
    """Bias/variance process control for one layer (1-based ``layer``).

    ``recon_mean``/``recon_sq_mean`` are running per-coordinate moments of the
    layer's reconstruction of its input; ``hidden_mean`` tracks the mean
    activation of every hidden node and picks the prune target.
    """

    def __init__(self, layer: int, in_width: int, width: int, grace: int = 50):
        self.layer = int(layer)
        self.grace = int(grace)
        self.recon_mean = np.zeros(in_width)
        self.recon_sq_mean = np.zeros(in_width)
        self.recon_count = 0
        self.hidden_mean = np.zeros(width)
        self.hidden_count = 0
        self.bias_stat = RunningStat()
        self.var_stat = RunningStat()
        self.min_bias = (math.inf, math.inf)
        self.min_var = (math.inf, math.inf)
        self.last_bias2 = 0.0
        self.last_var = 0.0

    @property
    def depth_factor(self) -> float:
        return math.log(self.layer) + 1.0

    def bias_threshold(self, bias2: float) -> float:
        mu, sd = self.min_bias
        return mu + self.depth_factor * confidence_factor(bias2) * sd

    def var_threshold(self, var: float) -> float:
        mu, sd = self.min_var
        return mu + 2.0 * self.depth_factor * confidence_factor(var**2) * sd

    def _moments(self, recon: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Running mean and mean square after each row of ``recon``."""
        n0 = self.recon_count
        steps = n0 + np.arange(1, len(recon) + 1)[:, None]
        mean = (n0 * self.recon_mean + np.cumsum(recon, axis=0)) / steps
        sq = (n0 * self.recon_sq_mean + np.cumsum(recon**2, axis=0)) / steps
        self.recon_mean, self.recon_sq_mean = mean[-1].copy(), sq[-1].copy()
        self.recon_count += len(recon)
        return mean, sq

    def update(self, h_in: np.ndarray, recon: np.ndarray, hidden: np.ndarray | None = None) -> list[WidthAction]:
        """Feed samples (rows) and return one action per sample.

        ``h_in`` is the layer input, ``recon`` its reconstruction, and
        ``hidden`` the layer's own activations (for prune targeting).
        """
        h_in, recon = np.atleast_2d(h_in), np.atleast_2d(recon)
        if h_in.shape != recon.shape:
            raise ValueError(f"input {h_in.shape} and reconstruction {recon.shape} differ")
        if hidden is not None:
            hidden = np.atleast_2d(hidden)
            total = self.hidden_count + len(hidden)
            self.hidden_mean = (self.hidden_count * self.hidden_mean + hidden.sum(0)) / total
            self.hidden_count = total
        mean, sq = self._moments(recon)
        bias2 = np.mean((mean - h_in) ** 2, axis=1)
        var = np.maximum(np.mean(sq - mean**2, axis=1), 0.0)
        return [self._step(float(b), float(v)) for b, v in zip(bias2, var)]

    def _step(self, bias2: float, var: float) -> WidthAction:
        self.last_bias2, self.last_var = bias2, var
        bs, vs = self.bias_stat.update(bias2), self.var_stat.update(var)
        b_level, v_level = bs.mean + bs.std, vs.mean + vs.std
        # minima of estimates built from a handful of samples are meaningless
        # (a single sample has zero spread), so they are tracked after the grace
        if bs.count >= self.grace and b_level < sum(self.min_bias):
            self.min_bias = (bs.mean, bs.std)
        if vs.count >= self.grace and v_level < sum(self.min_var):
            self.min_var = (vs.mean, vs.std)
        grow = bs.count >= self.grace and b_level >= self.bias_threshold(bias2)
        prune = vs.count >= self.grace and v_level >= self.var_threshold(var) and len(self.hidden_mean) > 1
        if grow:
            return WidthAction(Action.GROW)
        if prune:
            return WidthAction(Action.PRUNE, int(np.argmin(self.hidden_mean)))
        return NO_ACTION

    def reset(self, which: str) -> None:
        """Restart one channel after a structural change ('bias' or 'variance')."""
        if which == "bias":
            self.bias_stat = RunningStat()
            self.min_bias = (math.inf, math.inf)
        elif which == "variance":
            self.var_stat = RunningStat()
            self.min_var = (math.inf, math.inf)
        else:
            raise ValueError(which)

    # resize hooks, called when this layer or the one below changes width
    def hidden_added(self, value: float = 0.0) -> None:
        self.hidden_mean = np.append(self.hidden_mean, value)

    def hidden_removed(self, index: int) -> None:
        self.hidden_mean = np.delete(self.hidden_mean, index)

    def input_added(self) -> None:
        self.recon_mean = np.append(self.recon_mean, 0.0)
        self.recon_sq_mean = np.append(self.recon_sq_mean, 0.0)

    def input_removed(self, index: int) -> None:
        self.recon_mean = np.delete(self.recon_mean, index)
        self.recon_sq_mean = np.delete(self.recon_sq_mean, index)


# -------------------------------------------------------------------- drift
class DriftState(str, enum.Enum):
    STABLE = "stable"
    WARNING = "warning"
    DRIFT = "drift"


_RANK = {DriftState.STABLE: 0, DriftState.WARNING: 1, DriftState.DRIFT: 2}


def _upward_test(s: np.ndarray, alpha: float, alpha_d: float, alpha_w: float) -> DriftState:
    """Cut-point test for an increase of the mean of ``s``.

    The cut is the candidate prefix with the lowest Hoeffding upper bound;
    it is valid only when that bound sits below the bound of the full
    series. The prefix mean is then compared with the full-series mean.
    """
    n = len(s)
    a, b = float(s.min()), float(s.max())
    span = b - a
    if span == 0.0:
        return DriftState.STABLE
    step = max(1, n // 100)
    cuts = np.arange(step, n, step)
    if len(cuts) == 0:
        return DriftState.STABLE
    csum = np.cumsum(s)
    prefix = csum[cuts - 1] / cuts
    full = csum[-1] / n
    log_a = math.log(1.0 / alpha)
    upper = (prefix - a) / span + np.sqrt(log_a / (2.0 * cuts))
    i = int(np.argmin(upper))
    if not upper[i] < (full - a) / span + hoeffding_bound(n, alpha):
        return DriftState.STABLE
    cut = int(cuts[i])
    gap = abs(prefix[i] - full)
    width = span * math.sqrt((n - cut) / (2.0 * n * cut))
    if gap >= width * math.sqrt(math.log(1.0 / alpha_d)):
        return DriftState.DRIFT
    if gap >= width * math.sqrt(math.log(1.0 / alpha_w)):
        return DriftState.WARNING
    return DriftState.STABLE


class DriftDetector:
    """Two-batch mean-shift detector on latent inputs.

    Rows of each batch are reduced to their mean feature value. A warning
    followed by another warning or a drift on the next call is a drift.
    """

    def __init__(self, alpha: float = 0.001, alpha_d: float = 0.001, alpha_w: float = 0.005):
        if not alpha_d < alpha_w:
            raise ValueError("alpha_d must be smaller than alpha_w")
        self.alpha, self.alpha_d, self.alpha_w = alpha, alpha_d, alpha_w
        self.pending_warning = False

    def raw_state(self, series: np.ndarray) -> DriftState:
        s = np.asarray(series, dtype=np.float64)
        up = _upward_test(s, self.alpha, self.alpha_d, self.alpha_w)
        down = _upward_test(-s, self.alpha, self.alpha_d, self.alpha_w)
        return max(up, down, key=_RANK.__getitem__)

    def check(self, Z_prev: np.ndarray, Z_cur: np.ndarray) -> DriftState:
        # a 1-D batch is a scalar series, one value per sample
        Z_prev, Z_cur = (np.asarray(z, dtype=np.float64) for z in (Z_prev, Z_cur))
        Z_prev, Z_cur = (z.reshape(len(z), -1) if z.ndim else z.reshape(1, 1) for z in (Z_prev, Z_cur))
        if Z_prev.size == 0 or Z_cur.size == 0:
            raise ValueError("drift check needs two non-empty batches")
        series = np.concatenate([Z_prev.mean(axis=1), Z_cur.mean(axis=1)])
        state = self.raw_state(series)
        if self.pending_warning and state is not DriftState.STABLE:
            state = DriftState.DRIFT
        self.pending_warning = state is DriftState.WARNING
        return state
