"""Test-then-train protocol, accuracy matrix and continual-learning metrics."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..learner import Kiera, LearnerConfig
from .data import Task, TaskStream, labelled_prefix

log = logging.getLogger(__name__)


class IncompleteRecord(ValueError):
    pass


def metrics(R, baseline, preq_batch_acc) -> dict:
    """Prequential/task accuracy, backward and forward transfer.

    ``R[i][j]`` is the test accuracy on task ``j`` after training task ``i``
    and ``baseline[j]`` the accuracy of an untrained model. BWT and FWT are
    ``None`` for a single task.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1] or R.size == 0 or np.isnan(R).any():
        raise IncompleteRecord("accuracy matrix is not a complete square matrix")
    K = R.shape[0]
    b = np.asarray(baseline, dtype=np.float64)
    out = {
        "PreqAcc": float(np.mean(preq_batch_acc)) if len(preq_batch_acc) else None,
        "TaskAcc": float(R[K - 1].mean()),
        "BWT": None,
        "FWT": None,
    }
    if K > 1:
        out["BWT"] = float(np.mean([R[K - 1, i] - R[i, i] for i in range(K - 1)]))
        out["FWT"] = float(np.mean([R[i - 1, i] - b[i] for i in range(1, K)]))
    return out


@dataclass
class RunRecord:
    variant: str
    seed: int
    config: dict
    tasks: list[str]
    batches: list[dict] = field(default_factory=list)
    R: list[list[float]] = field(default_factory=list)
    baseline: list[float] = field(default_factory=list)
    structure: dict = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    elapsed: float = 0.0  # wall time, excluded from the payload hash

    def payload(self) -> dict:
        d = asdict(self)
        d.pop("elapsed")
        return d

    def payload_hash(self) -> str:
        blob = json.dumps(self.payload(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def preq_batch_acc(self) -> list[float]:
        return [b["preq_acc"] for b in self.batches]

    def compute_metrics(self) -> dict:
        return metrics(self.R, self.baseline, self.preq_batch_acc())

    # JSON-lines: one header line, one line per batch, one summary line
    def write_jsonl(self, path) -> None:
        p = self.payload()
        with open(path, "w") as f:
            f.write(json.dumps({"type": "run", "variant": p["variant"], "seed": p["seed"],
                                "config": p["config"], "tasks": p["tasks"]}) + "\n")
            for b in p["batches"]:
                f.write(json.dumps({"type": "batch", **b}) + "\n")
            f.write(json.dumps({"type": "summary", "R": p["R"], "baseline": p["baseline"],
                                "structure": p["structure"], "events": p["events"],
                                "summary": p["summary"], "elapsed": self.elapsed,
                                "payload_sha256": self.payload_hash()}) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "RunRecord":
        rec = None
        with open(path) as f:
            for line in f:
                row = json.loads(line)
                kind = row.pop("type")
                if kind == "run":
                    rec = cls(row["variant"], row["seed"], row["config"], row["tasks"])
                elif kind == "batch":
                    rec.batches.append(row)
                elif kind == "summary":
                    rec.R, rec.baseline = row["R"], row["baseline"]
                    rec.structure, rec.events = row["structure"], row["events"]
                    rec.summary, rec.elapsed = row["summary"], row.get("elapsed", 0.0)
        if rec is None:
            raise IncompleteRecord(f"{path}: no run header")
        return rec


def accuracy(learner: Kiera, images: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(learner.predict_batch(images) == labels))


def untrained_accuracy(config: LearnerConfig, task: Task) -> float:
    """Accuracy of a freshly initialised model that has only seen the labelled prefix.

    The prefix founds the clusters (one observation each, no gradient step),
    which is the least state the classifier needs to emit predictions.
    """
    k = Kiera(config)
    head, _ = labelled_prefix(task.train_labels, config.labelled_per_class)
    X = task.train_images[head]
    k.begin_task(X, task.train_labels[head])
    for lc, H in zip(k.clusters, k.net.embed(X)):
        for h in H:
            lc.observe(h)
    return accuracy(k, task.test_images, task.test_labels)


def run_protocol(stream: TaskStream, config: LearnerConfig, on_batch=None) -> RunRecord:
    """Run every task test-then-train and fill the accuracy matrix."""
    start = time.perf_counter()
    learner = Kiera(config)
    K = len(stream)
    R = np.full((K, K), np.nan)
    rec = RunRecord(stream.variant, config.seed, {**asdict(config), "extractor_dims": list(config.extractor_dims)},
                    [t.name for t in stream.tasks])
    for i, task in enumerate(stream.tasks):
        head, rest = labelled_prefix(task.train_labels, config.labelled_per_class)
        if i > 0:
            learner.reset_spc()
        learner.begin_task(task.train_images[head], task.train_labels[head])
        warm = rest[: config.n_init]
        loss = learner.pretrain(task.train_images[warm])
        log.info("task %d (%s): pretrain loss %.5f", i + 1, task.name, loss)
        stream_idx = rest[config.n_init :]
        for s in range(0, len(stream_idx), config.batch_size):
            idx = stream_idx[s : s + config.batch_size]
            X, y = task.train_images[idx], task.train_labels[idx]
            pred = learner.predict_batch(X)
            hits = int(np.sum(pred == y))
            report = learner.train_batch(X)
            row = {**report.to_dict(), "preq_hits": hits, "preq_n": len(idx), "preq_acc": hits / len(idx)}
            rec.batches.append(row)
            if on_batch is not None:
                on_batch(row)
        for j, other in enumerate(stream.tasks):
            R[i, j] = accuracy(learner, other.test_images, other.test_labels)
        log.info("task %d done: R row %s", i + 1, np.round(R[i], 4).tolist())
    rec.R = R.tolist()
    rec.baseline = [untrained_accuracy(config, t) for t in stream.tasks]
    rec.structure = learner.structure()
    rec.events = learner.events
    rec.summary = rec.compute_metrics()
    rec.elapsed = time.perf_counter() - start
    return rec


def load_records(paths) -> list[RunRecord]:
    out = []
    for p in paths:
        p = Path(p)
        files = sorted(p.glob("*.jsonl")) if p.is_dir() else [p]
        out += [RunRecord.read_jsonl(f) for f in files]
    return out
