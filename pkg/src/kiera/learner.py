"""The streaming learner: task intake, warm-up, single-pass updates, replay."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .adaptation import Action, DriftDetector, DriftState, SpcMonitor, WidthAction
from .checkpoint import read_checkpoint, write_checkpoint
from .clustering import LabelCache, LayerClusters, predict
from .memory import EpisodicMemory, MemoryEntry, interleave, select_forgotten
from .network import ElasticNet, StructureError
from .numerics import RunningStat, rng_stream

log = logging.getLogger(__name__)


class ProtocolError(RuntimeError):
    """The learner was driven out of order (e.g. no labelled prefix)."""


@dataclass
class LearnerConfig:
    lr: float = 0.01
    momentum: float = 0.95
    weight_decay: float = 5e-5
    lam: float = 0.01
    alpha: float = 0.001
    alpha_d: float = 0.001
    alpha_w: float = 0.005
    n_init: int = 1000
    epochs: int = 50
    labelled_per_class: int = 100
    batch_size: int = 100
    initial_width: int = 96
    grace: int = 50
    memory_cap: int = 0  # 0 means unbounded
    seed: int = 0
    extractor_dims: tuple = (784, 1000, 500)

    def __post_init__(self):
        self.extractor_dims = tuple(int(d) for d in self.extractor_dims)
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("seed", "memory_cap", "weight_decay", "lam", "momentum"):
                if isinstance(v, (int, float)) and v < 0:
                    raise ValueError(f"{f.name} must be non-negative")
            elif isinstance(v, (int, float)) and v <= 0:
                raise ValueError(f"{f.name} must be positive")
        if not self.alpha_d < self.alpha_w:
            raise ValueError("alpha_d must be smaller than alpha_w")


@dataclass
class BatchReport:
    task: int
    batch: int
    loss: float
    drift: str
    layer_added: bool
    buffer_size: int
    memory_size: int
    buffer_positions: list[int]
    stored_positions: list[int]
    clusters_grown: list[int]
    width_actions: list[str]
    widths: list[int]
    n_clusters: list[int]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _CycleStats:
    loss: float
    grown: list[int]
    stored: list[int] = field(default_factory=list)
    actions: list[str] = field(default_factory=list)


class Kiera:
    """Elastic autoencoder + per-layer clusters + centroid-based replay."""

    def __init__(self, config: LearnerConfig | None = None):
        self.config = cfg = config or LearnerConfig()
        init_ss, struct_ss, shuffle_ss = np.random.SeedSequence(cfg.seed).spawn(3)
        self.rng_struct = rng_stream(struct_ss)
        self.rng_shuffle = rng_stream(shuffle_ss)
        self.net = ElasticNet(rng_stream(init_ss), cfg.extractor_dims, cfg.initial_width)
        self.clusters = [LayerClusters(cfg.initial_width)]
        self.monitors = [SpcMonitor(1, cfg.extractor_dims[2], cfg.initial_width, cfg.grace)]
        self.drift = DriftDetector(cfg.alpha, cfg.alpha_d, cfg.alpha_w)
        self.memory = EpisodicMemory(cfg.memory_cap or None)
        self.labels = LabelCache()
        self.task = -1
        self.position = 0
        self.batch_index = 0
        self.recent: deque[np.ndarray] = deque(maxlen=cfg.n_init)
        self.prev_batch: np.ndarray | None = None
        self.events: list[dict] = []

    # --------------------------------------------------------------- helpers
    @property
    def depth(self) -> int:
        return self.net.depth

    def check_alignment(self) -> None:
        widths = self.net.widths
        if not (len(self.clusters) == len(self.monitors) == len(widths)):
            raise StructureError(
                f"{len(widths)} layers, {len(self.clusters)} cluster sets, {len(self.monitors)} monitors"
            )
        for l, (lc, mon, w) in enumerate(zip(self.clusters, self.monitors, widths)):
            if lc.width != w or len(mon.hidden_mean) != w or len(mon.recon_mean) != self.net.layers[l].in_width:
                raise StructureError(f"layer {l}: container widths disagree with the network")

    def _flat(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return X.reshape(len(X), -1)

    def _winners(self, codes: list[np.ndarray]) -> list[np.ndarray]:
        out = []
        for lc, H in zip(self.clusters, codes):
            if len(lc) == 0:
                out.append(H)  # no clusters yet: the clustering term is zero
            else:
                idx, _ = lc.nearest(H)
                out.append(lc.centroids[idx])
        return out

    def _event(self, kind: str, layer: int, **detail) -> None:
        self.events.append({"position": self.position, "task": self.task, "kind": kind, "layer": layer, **detail})

    # ------------------------------------------------------------ one cycle
    def _cycle(self, X, live, positions, *, store: bool, structural: bool) -> _CycleStats:
        """Network step with clusters frozen, then cluster step with the network frozen."""
        cfg = self.config
        cache = self.net.forward(X)
        loss, grads = self.net.loss_and_grads(X, self._winners(cache["hs"][1:]), cfg.lam, cache=cache)
        self.net.apply_grads(grads, cfg.lr, cfg.momentum, cfg.weight_decay)

        Z = self.net.extract(X)
        fwd = self.net.sae_forward(Z)
        grown = [0] * len(self.clusters)
        stored: list[int] = []
        for l, lc in enumerate(self.clusters):
            H = fwd[l][0]
            for i in range(len(H)):
                decision = lc.observe(H[i])
                if decision.grew:
                    grown[l] += 1
                if decision.focal and store and live[i]:
                    if self.memory.store_focal(X[i], self.task, l, int(positions[i])):
                        stored.append(int(positions[i]))

        # process control tracks the live stream only
        pending: list[WidthAction | None] = [None] * len(self.monitors)
        if live.any():
            for l, mon in enumerate(self.monitors):
                h_in = Z if l == 0 else fwd[l - 1][0]
                acts = mon.update(h_in[live], fwd[l][1][live], fwd[l][0][live])
                if structural:
                    pending[l] = next((a for a in acts if a), None)
        stats = _CycleStats(loss, grown, stored)
        for l, action in enumerate(pending):
            if action:
                stats.actions.append(self._apply_width_action(l, action))
        return stats

    def _apply_width_action(self, l: int, action: WidthAction) -> str:
        mon = self.monitors[l]
        if action.kind is Action.GROW:
            node = self.net.add_node(l, self.rng_struct)
            # a fresh node has no activation history yet
            self.clusters[l].resize_add(0.0)
            mon.hidden_added()
            if l + 1 < len(self.monitors):
                self.monitors[l + 1].input_added()
            mon.reset("bias")
            self._event("grow_node", l, node=node)
            return f"grow:{l}"
        node = action.node
        self.net.prune_node(l, node)
        self.clusters[l].resize_remove(node)
        mon.hidden_removed(node)
        if l + 1 < len(self.monitors):
            self.monitors[l + 1].input_removed(node)
        mon.reset("variance")
        self._event("prune_node", l, node=node)
        return f"prune:{l}:{node}"

    def _with_replay(self, X):
        """Interleave ``X`` with the currently most-forgotten memories."""
        buf = select_forgotten(self.memory, self.net, self.clusters)
        buffer_images = self.memory.images[buf] if len(buf) else np.zeros((0, X.shape[1]))
        mixed, live, order = interleave(X, buffer_images, self.rng_shuffle)
        return mixed, live, order, buf

    def _iterate(self, images: np.ndarray) -> float:
        """Several epochs of alternate optimisation without storing or structural edits."""
        cfg = self.config
        n = len(images)
        positions = np.full(n, -1)
        live = np.ones(min(n, cfg.batch_size), dtype=bool)
        losses = []
        for _ in range(cfg.epochs):
            order = self.rng_shuffle.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                stats = self._cycle(images[idx], live[: len(idx)], positions, store=False, structural=False)
                losses.append(stats.loss)
        return float(np.mean(losses)) if losses else float("nan")

    def _add_layer(self) -> int:
        l = self.net.add_layer(self.rng_struct)
        layer = self.net.layers[l]
        self.clusters.append(LayerClusters(layer.width))
        self.monitors.append(SpcMonitor(l + 1, layer.in_width, layer.width, self.config.grace))
        self._event("add_layer", l, width=layer.width)
        log.info("drift: added layer %d (width %d)", l + 1, layer.width)
        return l

    # -------------------------------------------------------------- protocol
    def begin_task(self, images, labels) -> None:
        """Register a task's labelled prefix; nothing but allegiance uses it."""
        labels = np.asarray(labels)
        if len(labels) == 0:
            raise ProtocolError("a task must start with a non-empty labelled prefix")
        self.labels.add(self._flat(images), labels)
        for lc in self.clusters:
            lc.dirty = True
        self.task += 1
        self.batch_index = 0

    def reset_spc(self) -> None:
        for mon in self.monitors:
            mon.reset("bias")
            mon.reset("variance")

    def pretrain(self, images) -> float:
        """Warm-up on the head of a task; returns the mean training loss."""
        images = self._flat(images)
        if len(images) < self.config.n_init:
            log.warning("pretraining on %d samples (< n_init=%d)", len(images), self.config.n_init)
        if len(images) == 0:
            return float("nan")
        loss = self._iterate(images)
        self.recent.extend(images)
        self.position += len(images)
        self.prev_batch = images[-self.config.batch_size :]
        self.check_alignment()
        return loss

    def train_batch(self, X) -> BatchReport:
        if self.task < 0:
            raise ProtocolError("begin_task must be called before training")
        X = self._flat(X)
        positions = np.arange(self.position, self.position + len(X))
        self.position += len(X)
        self.recent.extend(X)

        state, added = DriftState.STABLE, False
        if self.prev_batch is not None:
            state = self.drift.check(self.net.extract(self.prev_batch), self.net.extract(X))
            if state is DriftState.DRIFT:
                self._add_layer()
                self._iterate(np.array(self.recent))
                added = True

        mixed, live, order, buf = self._with_replay(X)
        tags = np.concatenate([positions, np.full(len(buf), -1)])[order]
        stats = self._cycle(mixed, live, tags, store=True, structural=True)
        self.prev_batch = X
        self.check_alignment()

        report = BatchReport(
            task=self.task,
            batch=self.batch_index,
            loss=stats.loss,
            drift=state.value,
            layer_added=added,
            buffer_size=int(len(buf)),
            memory_size=len(self.memory),
            buffer_positions=[self.memory.entries[i].position for i in buf],
            stored_positions=stats.stored,
            clusters_grown=stats.grown,
            width_actions=stats.actions,
            widths=self.net.widths,
            n_clusters=[len(lc) for lc in self.clusters],
        )
        self.batch_index += 1
        return report

    def refresh(self) -> None:
        if len(self.labels) == 0:
            raise ProtocolError("no labelled samples: cannot classify")
        if any(lc.dirty for lc in self.clusters):
            Xl, cls = self.labels.stacked()
            for lc, H in zip(self.clusters, self.net.embed(Xl)):
                lc.refresh_allegiance(H, cls, self.labels.m)

    def predict_batch(self, X, chunk: int = 2000) -> np.ndarray:
        """Class labels by summing per-layer class scores."""
        self.refresh()
        X = self._flat(X)
        out = []
        for start in range(0, len(X), chunk):
            codes = self.net.embed(X[start : start + chunk])
            scores = [lc.class_scores(H) for lc, H in zip(self.clusters, codes)]
            idx, _ = predict(scores)
            out.append(self.labels.label_of(idx))
        return np.concatenate(out) if out else np.zeros(0)

    # ------------------------------------------------------------ structure
    def structure(self) -> dict:
        """Final-state counters: nodes, layers, clusters, memory."""
        return {
            "NoN": int(sum(self.net.widths)),
            "NoL": self.net.depth,
            "NoC": int(sum(len(lc) for lc in self.clusters)),
            "NoM": len(self.memory),
        }

    # ----------------------------------------------------------- persistence
    def save(self, path) -> None:
        meta = {
            "kind": "kiera",
            "config": {**asdict(self.config), "extractor_dims": list(self.config.extractor_dims)},
            "widths": self.net.widths,
            "task": self.task,
            "position": self.position,
            "batch_index": self.batch_index,
            "rng_struct": self.rng_struct.bit_generator.state,
            "rng_shuffle": self.rng_shuffle.bit_generator.state,
            "drift_pending": self.drift.pending_warning,
            "memory_entries": [[e.position, e.task, e.layer] for e in self.memory.entries],
            "classes": [c.item() if hasattr(c, "item") else c for c in self.labels.classes],
            "label_chunks": [len(l) for l in self.labels.labels],
            "has_prev": self.prev_batch is not None,
            "events": self.events,
            "clusters": [],
            "monitors": [],
        }
        arrays = {f"net/{k}": v for k, v in self.net.state_arrays().items()}
        for l, lc in enumerate(self.clusters):
            m, a = lc.state()
            meta["clusters"].append(m)
            arrays.update({f"clusters/{l}/{k}": v for k, v in a.items()})
        for l, mon in enumerate(self.monitors):
            meta["monitors"].append({
                "layer": mon.layer, "grace": mon.grace,
                "recon_count": mon.recon_count, "hidden_count": mon.hidden_count,
                "bias_stat": [mon.bias_stat.count, mon.bias_stat.mean, mon.bias_stat.m2],
                "var_stat": [mon.var_stat.count, mon.var_stat.mean, mon.var_stat.m2],
                "min_bias": list(mon.min_bias), "min_var": list(mon.min_var),
            })
            arrays[f"monitors/{l}/recon_mean"] = mon.recon_mean
            arrays[f"monitors/{l}/recon_sq_mean"] = mon.recon_sq_mean
            arrays[f"monitors/{l}/hidden_mean"] = mon.hidden_mean
        d = self.net.input_dim
        arrays["memory/images"] = self.memory.images.reshape(len(self.memory), d)
        if len(self.labels):
            Xl, cls = self.labels.stacked()
        else:
            Xl, cls = np.zeros((0, d)), np.zeros(0)
        arrays["labels/images"] = Xl
        arrays["labels/class_index"] = cls.astype(np.float64)
        arrays["recent"] = np.array(self.recent).reshape(len(self.recent), d)
        arrays["prev_batch"] = self.prev_batch if self.prev_batch is not None else np.zeros((0, d))
        write_checkpoint(path, meta, arrays)

    @classmethod
    def load(cls, path) -> "Kiera":
        meta, arrays = read_checkpoint(path)
        if meta.get("kind") != "kiera":
            raise ValueError(f"{path} is not a learner checkpoint")
        cfg = LearnerConfig(**meta["config"])
        k = cls(cfg)
        net_arrays = {name[4:]: v for name, v in arrays.items() if name.startswith("net/")}
        k.net = ElasticNet.from_state(cfg.extractor_dims, meta["widths"], net_arrays)
        k.task, k.position, k.batch_index = meta["task"], meta["position"], meta["batch_index"]
        k.rng_struct.bit_generator.state = meta["rng_struct"]
        k.rng_shuffle.bit_generator.state = meta["rng_shuffle"]
        k.drift.pending_warning = meta["drift_pending"]
        k.clusters = []
        for l, m in enumerate(meta["clusters"]):
            pre = f"clusters/{l}/"
            k.clusters.append(LayerClusters.from_state(m, {n[len(pre):]: v for n, v in arrays.items() if n.startswith(pre)}))
        k.monitors = []
        for l, m in enumerate(meta["monitors"]):
            width = meta["widths"][l]
            mon = SpcMonitor(m["layer"], len(arrays[f"monitors/{l}/recon_mean"]), width, m["grace"])
            mon.recon_mean = arrays[f"monitors/{l}/recon_mean"]
            mon.recon_sq_mean = arrays[f"monitors/{l}/recon_sq_mean"]
            mon.hidden_mean = arrays[f"monitors/{l}/hidden_mean"]
            mon.recon_count, mon.hidden_count = m["recon_count"], m["hidden_count"]
            mon.bias_stat = RunningStat(*m["bias_stat"])
            mon.var_stat = RunningStat(*m["var_stat"])
            mon.min_bias, mon.min_var = tuple(m["min_bias"]), tuple(m["min_var"])
            k.monitors.append(mon)
        for img, (pos, task, layer) in zip(arrays["memory/images"], meta["memory_entries"]):
            k.memory.entries.append(MemoryEntry(pos, task, layer))
            k.memory._images.append(img)
            k.memory._positions.add(pos)
        classes = meta["classes"]
        cls_idx = arrays["labels/class_index"].astype(np.int64)
        start = 0
        for size in meta["label_chunks"]:
            k.labels.add(arrays["labels/images"][start : start + size], [classes[i] for i in cls_idx[start : start + size]])
            start += size
        k.recent.extend(arrays["recent"])
        k.prev_batch = arrays["prev_batch"] if meta["has_prev"] else None
        k.events = meta["events"]
        k.check_alignment()
        return k
