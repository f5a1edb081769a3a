"""Feature extractor plus a growable stack of tied-weight autoencoder layers.

Shapes follow the batch-major convention: a batch is an ``(n, features)``
array and an encoder weight of layer ``l`` is ``(R_l, u_l)``, so
``h_l = relu(h_{l-1} @ W.T + b)`` and the tied decoder is
``relu(h_l @ W + c)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import ShapeError, relu, sgd_step, sigmoid, xavier_bound, xavier_init


class StructureError(RuntimeError):
    """Widths of layers, winners or clusters disagree."""


@dataclass
class Param:
    value: np.ndarray
    velocity: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.velocity is None:
            self.velocity = np.zeros_like(self.value)


def _xavier(shape, rng) -> Param:
    return Param(xavier_init(shape[0], shape[1], rng))


def _zeros(n: int) -> Param:
    return Param(np.zeros(n))


class FeatureExtractor:
    """Two-hidden-layer MLP encoder with an untied mirrored decoder.

    ``dims = (input, hidden, latent)``; the default is the 784-1000-500 net.
    Decoder output goes through a sigmoid so reconstructions live in [0, 1].
    """

    def __init__(self, rng: np.random.Generator, dims: tuple[int, int, int] = (784, 1000, 500)):
        d_in, d_hid, d_lat = dims
        self.dims = tuple(dims)
        self.params: dict[str, Param] = {
            "enc1.W": _xavier((d_hid, d_in), rng),
            "enc1.b": _zeros(d_hid),
            "enc2.W": _xavier((d_lat, d_hid), rng),
            "enc2.b": _zeros(d_lat),
            "dec2.W": _xavier((d_hid, d_lat), rng),
            "dec2.b": _zeros(d_hid),
            "dec1.W": _xavier((d_in, d_hid), rng),
            "dec1.b": _zeros(d_in),
        }

    def encode(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        a1 = relu(x @ p["enc1.W"].value.T + p["enc1.b"].value)
        return relu(a1 @ p["enc2.W"].value.T + p["enc2.b"].value)


class SaeLayer:
    """One autoencoder layer; the decoder weight is always ``W.T``."""

    def __init__(self, W: np.ndarray, b: np.ndarray | None = None, c: np.ndarray | None = None):
        W = np.asarray(W, dtype=np.float64)
        self.W = Param(W)
        self.b = Param(np.zeros(W.shape[0]) if b is None else b)
        self.c = Param(np.zeros(W.shape[1]) if c is None else c)

    @property
    def width(self) -> int:
        return self.W.value.shape[0]

    @property
    def in_width(self) -> int:
        return self.W.value.shape[1]

    def encode(self, h_prev: np.ndarray) -> np.ndarray:
        return relu(h_prev @ self.W.value.T + self.b.value)

    def decode(self, h: np.ndarray) -> np.ndarray:
        return relu(h @ self.W.value + self.c.value)


class ElasticNet:
    def __init__(
        self,
        rng: np.random.Generator,
        extractor_dims: tuple[int, int, int] = (784, 1000, 500),
        initial_width: int = 96,
    ):
        self.extractor = FeatureExtractor(rng, extractor_dims)
        latent = extractor_dims[2]
        self.layers: list[SaeLayer] = [SaeLayer(xavier_init(initial_width, latent, rng))]

    # ------------------------------------------------------------------ shape
    @property
    def input_dim(self) -> int:
        return self.extractor.dims[0]

    @property
    def widths(self) -> list[int]:
        return [layer.width for layer in self.layers]

    @property
    def depth(self) -> int:
        return len(self.layers)

    def _as_batch(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        """Flatten to ``(n, pixels)``; also report whether ``x`` was one image."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1 or (x.ndim == 2 and x.shape[1] != self.input_dim)
        batch = x.reshape(1, -1) if single else x.reshape(x.shape[0], -1)
        if batch.shape[1] != self.input_dim:
            raise ShapeError(f"expected images with {self.input_dim} pixels, got shape {x.shape}")
        return batch, single

    # ---------------------------------------------------------------- forward
    def extract(self, x: np.ndarray) -> np.ndarray:
        """Latent input ``Z`` for one image (returns a vector) or a batch."""
        batch, single = self._as_batch(x)
        Z = self.extractor.encode(batch)
        return Z[0] if single else Z

    def sae_forward(self, Z: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per layer ``(h^l, reconstruction of h^{l-1})``."""
        h = np.asarray(Z, dtype=np.float64)
        if h.shape[-1] != self.layers[0].in_width:
            raise ShapeError(f"latent width {h.shape[-1]} != {self.layers[0].in_width}")
        out = []
        for layer in self.layers:
            h_next = layer.encode(h)
            out.append((h_next, layer.decode(h_next)))
            h = h_next
        return out

    def embed(self, x: np.ndarray) -> list[np.ndarray]:
        """Hidden codes ``h^1..h^L`` of a batch of images."""
        h = self.extractor.encode(self._as_batch(x)[0])
        codes = []
        for layer in self.layers:
            h = layer.encode(h)
            codes.append(h)
        return codes

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return self.forward(self._as_batch(x)[0])["xhat"]

    def forward(self, X: np.ndarray) -> dict:
        """Every intermediate of a full forward pass over a batch.

        ``hs[0]`` is the latent input ``Z`` and ``hs[l]`` the code of SAE
        layer ``l``; the dictionary can be handed back to
        :meth:`loss_and_grads` to skip a second pass.
        """
        p = self.extractor.params
        c: dict = {"X": X}
        c["p1"] = X @ p["enc1.W"].value.T + p["enc1.b"].value
        c["a1"] = relu(c["p1"])
        c["p2"] = c["a1"] @ p["enc2.W"].value.T + p["enc2.b"].value
        hs = [relu(c["p2"])]
        qs = []
        for layer in self.layers:
            q = hs[-1] @ layer.W.value.T + layer.b.value
            qs.append(q)
            hs.append(relu(q))
        c["hs"], c["qs"] = hs, qs
        # full-depth decode back to the latent input
        g = hs[-1]
        gs = {len(self.layers): g}
        ss = {}
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            s = g @ layer.W.value + layer.c.value
            ss[idx] = s
            g = relu(s)
            gs[idx] = g
        c["gs"], c["ss"] = gs, ss
        c["p3"] = g @ p["dec2.W"].value.T + p["dec2.b"].value
        c["d1"] = relu(c["p3"])
        c["p4"] = c["d1"] @ p["dec1.W"].value.T + p["dec1.b"].value
        c["xhat"] = sigmoid(c["p4"])
        return c

    # ------------------------------------------------------------------- loss
    def parameters(self) -> list[tuple[str, Param]]:
        items = list(self.extractor.params.items())
        for i, layer in enumerate(self.layers):
            items += [(f"sae{i}.W", layer.W), (f"sae{i}.b", layer.b), (f"sae{i}.c", layer.c)]
        return items

    def loss_and_grads(
        self, X: np.ndarray, winners: list[np.ndarray], lam: float, cache: dict | None = None
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Joint reconstruction + clustering loss and its gradients.

        ``winners[l]`` is an ``(n, R_l)`` array with the winning centroid of
        every sample at layer ``l`` (held fixed). The image reconstruction
        term back-propagates through the whole model; each per-layer term
        only reaches the parameters of its own layer. ``cache`` is the
        output of :meth:`forward` for the same ``X`` and parameters.
        """
        X = self._as_batch(X)[0]
        n = X.shape[0]
        if len(winners) != len(self.layers):
            raise StructureError(f"{len(winners)} winner sets for {len(self.layers)} layers")
        for l, (w, layer) in enumerate(zip(winners, self.layers)):
            if np.shape(w) != (n, layer.width):
                raise StructureError(f"winners[{l}] has shape {np.shape(w)}, expected {(n, layer.width)}")

        c = self.forward(X) if cache is None else cache
        p = self.extractor.params
        grads = {name: np.zeros_like(par.value) for name, par in self.parameters()}
        hs, qs, gs, ss = c["hs"], c["qs"], c["gs"], c["ss"]

        # image reconstruction, end to end
        diff = c["xhat"] - X
        loss = float(np.mean(diff**2))
        dp4 = (2.0 / diff.size) * diff * c["xhat"] * (1.0 - c["xhat"])
        grads["dec1.W"] += dp4.T @ c["d1"]
        grads["dec1.b"] += dp4.sum(0)
        dp3 = (dp4 @ p["dec1.W"].value) * (c["p3"] > 0)
        grads["dec2.W"] += dp3.T @ gs[0]
        grads["dec2.b"] += dp3.sum(0)
        dg = dp3 @ p["dec2.W"].value
        for idx, layer in enumerate(self.layers):
            ds = dg * (ss[idx] > 0)
            grads[f"sae{idx}.W"] += gs[idx + 1].T @ ds
            grads[f"sae{idx}.c"] += ds.sum(0)
            dg = ds @ layer.W.value.T
        dh = dg
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            dq = dh * (qs[idx] > 0)
            grads[f"sae{idx}.W"] += dq.T @ hs[idx]
            grads[f"sae{idx}.b"] += dq.sum(0)
            dh = dq @ layer.W.value
        dp2 = dh * (c["p2"] > 0)
        grads["enc2.W"] += dp2.T @ c["a1"]
        grads["enc2.b"] += dp2.sum(0)
        dp1 = (dp2 @ p["enc2.W"].value) * (c["p1"] > 0)
        grads["enc1.W"] += dp1.T @ X
        grads["enc1.b"] += dp1.sum(0)

        # per-layer terms; the layer input is a constant
        for idx, layer in enumerate(self.layers):
            h_in, h = hs[idx], hs[idx + 1]
            r = h @ layer.W.value + layer.c.value
            rec = relu(r)
            e = rec - h_in
            loss += float(np.mean(e**2))
            dr = (2.0 / e.size) * e * (r > 0)
            grads[f"sae{idx}.W"] += h.T @ dr
            grads[f"sae{idx}.c"] += dr.sum(0)
            dh_local = dr @ layer.W.value.T
            if lam:
                gap = h - winners[idx]
                loss += float(0.5 * lam * np.sum(gap**2) / n)
                dh_local = dh_local + (lam / n) * gap
            dq = dh_local * (qs[idx] > 0)
            grads[f"sae{idx}.W"] += dq.T @ h_in
            grads[f"sae{idx}.b"] += dq.sum(0)
        return loss, grads

    def apply_grads(self, grads: dict[str, np.ndarray], lr: float, momentum: float, weight_decay: float) -> None:
        for name, par in self.parameters():
            sgd_step(par.value, grads[name], par.velocity, lr, momentum, weight_decay, inplace=True)

    # -------------------------------------------------------------- structure
    def add_node(self, layer_index: int, rng: np.random.Generator) -> int:
        """Append a hidden unit to a layer; returns its index."""
        layer = self.layers[layer_index]
        R, u = layer.W.value.shape
        bound = xavier_bound(R + 1, u)
        row = rng.uniform(-bound, bound, size=(1, u))
        layer.W = Param(np.vstack([layer.W.value, row]), np.vstack([layer.W.velocity, np.zeros((1, u))]))
        layer.b = Param(np.append(layer.b.value, 0.0), np.append(layer.b.velocity, 0.0))
        if layer_index + 1 < len(self.layers):
            nxt = self.layers[layer_index + 1]
            R2, u2 = nxt.W.value.shape
            bound2 = xavier_bound(R2, u2 + 1)
            col = rng.uniform(-bound2, bound2, size=(R2, 1))
            nxt.W = Param(np.hstack([nxt.W.value, col]), np.hstack([nxt.W.velocity, np.zeros((R2, 1))]))
            nxt.c = Param(np.append(nxt.c.value, 0.0), np.append(nxt.c.velocity, 0.0))
        return R

    def prune_node(self, layer_index: int, node_index: int) -> None:
        layer = self.layers[layer_index]
        if layer.width <= 1:
            raise StructureError(f"layer {layer_index} has a single node; refusing to prune")
        if not 0 <= node_index < layer.width:
            raise IndexError(f"node {node_index} out of range for width {layer.width}")
        layer.W = Param(np.delete(layer.W.value, node_index, 0), np.delete(layer.W.velocity, node_index, 0))
        layer.b = Param(np.delete(layer.b.value, node_index), np.delete(layer.b.velocity, node_index))
        if layer_index + 1 < len(self.layers):
            nxt = self.layers[layer_index + 1]
            nxt.W = Param(np.delete(nxt.W.value, node_index, 1), np.delete(nxt.W.velocity, node_index, 1))
            nxt.c = Param(np.delete(nxt.c.value, node_index), np.delete(nxt.c.velocity, node_index))

    def add_layer(self, rng: np.random.Generator) -> int:
        """Stack a new layer with half the width of the current top layer."""
        prev = self.layers[-1].width
        width = max(1, prev // 2)
        self.layers.append(SaeLayer(xavier_init(width, prev, rng)))
        return len(self.layers) - 1

    # ------------------------------------------------------------ persistence
    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, par in self.parameters():
            out[name] = par.value
            out[name + ".vel"] = par.velocity
        return out

    @classmethod
    def from_state(cls, extractor_dims, widths, arrays: dict[str, np.ndarray]) -> "ElasticNet":
        net = cls.__new__(cls)
        net.extractor = FeatureExtractor.__new__(FeatureExtractor)
        net.extractor.dims = tuple(extractor_dims)
        net.extractor.params = {
            k: Param(arrays[k].copy(), arrays[k + ".vel"].copy())
            for k in ("enc1.W", "enc1.b", "enc2.W", "enc2.b", "dec2.W", "dec2.b", "dec1.W", "dec1.b")
        }
        net.layers = []
        for i in range(len(widths)):
            layer = SaeLayer.__new__(SaeLayer)
            layer.W = Param(arrays[f"sae{i}.W"].copy(), arrays[f"sae{i}.W.vel"].copy())
            layer.b = Param(arrays[f"sae{i}.b"].copy(), arrays[f"sae{i}.b.vel"].copy())
            layer.c = Param(arrays[f"sae{i}.c"].copy(), arrays[f"sae{i}.c.vel"].copy())
            net.layers.append(layer)
        return net
