import gzip
import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kiera.bench.cli import main
from kiera.bench.config import ConfigError, dump_config, parse_config
from kiera.bench.data import (
    Dataset,
    IdxFormatError,
    labelled_prefix,
    load_idx,
    load_mnist,
    make_tasks,
    rotate_images,
)
from kiera.bench.protocol import IncompleteRecord, RunRecord, metrics, run_protocol
from kiera.checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from kiera.learner import LearnerConfig

from conftest import tiny_config
from oracles import bwt_fwt_by_hand


# ------------------------------------------------------------------ IDX files
def idx_images(images):
    n, r, c = images.shape
    return struct.pack(">IIII", 0x803, n, r, c) + images.astype(np.uint8).tobytes()


def idx_labels(labels):
    return struct.pack(">II", 0x801, len(labels)) + np.asarray(labels, np.uint8).tobytes()


def write_fake_mnist(root, n_train=60, n_test=20, gz=False, seed=0):
    r = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    files = {
        "train-images-idx3-ubyte": idx_images(r.integers(0, 256, (n_train, 4, 4))),
        "train-labels-idx1-ubyte": idx_labels(np.arange(n_train) % 10),
        "t10k-images-idx3-ubyte": idx_images(r.integers(0, 256, (n_test, 4, 4))),
        "t10k-labels-idx1-ubyte": idx_labels(np.arange(n_test) % 10),
    }
    for name, blob in files.items():
        if gz:
            (root / (name + ".gz")).write_bytes(gzip.compress(blob))
        else:
            (root / name).write_bytes(blob)
    return root


def test_idx_images_round_trip(tmp_path):
    imgs = np.arange(2 * 3 * 4).reshape(2, 3, 4) % 256
    p = tmp_path / "x.idx"
    p.write_bytes(idx_images(imgs))
    raw = load_idx(p, normalize=False)
    assert raw.dtype == np.uint8 and np.array_equal(raw, imgs)
    scaled = load_idx(p)
    assert np.allclose(scaled, imgs / 255.0)


def test_idx_gzip_and_labels(tmp_path):
    p = tmp_path / "y.idx.gz"
    p.write_bytes(gzip.compress(idx_labels([3, 1, 4, 1, 5])))
    assert load_idx(p).tolist() == [3, 1, 4, 1, 5]


@pytest.mark.parametrize(
    "blob, fragment",
    [
        (struct.pack(">II", 0x804, 1) + b"\x00", "magic 0x00000804 at byte 0"),
        (struct.pack(">IIII", 0x803, 2, 2, 2) + b"\x00" * 5, "truncated at byte 21"),
        (idx_labels([1, 2]) + b"\x00", "trailing bytes after byte 10"),
        (b"\x00\x00", "truncated header"),
    ],
)
def test_idx_errors_report_offsets(tmp_path, blob, fragment):
    p = tmp_path / "bad"
    p.write_bytes(blob)
    with pytest.raises(IdxFormatError, match=fragment):
        load_idx(p)


@pytest.mark.parametrize("gz", [False, True])
def test_load_mnist_directory(tmp_path, gz):
    ds = load_mnist(write_fake_mnist(tmp_path / "m", gz=gz))
    assert ds.train_images.shape == (60, 4, 4) and ds.test_labels.shape == (20,)
    with pytest.raises(FileNotFoundError):
        load_mnist(tmp_path / "missing")


# ------------------------------------------------------------- task streams
def fake_dataset(n=400, seed=0):
    r = np.random.default_rng(seed)
    return Dataset(r.integers(0, 256, (n, 6, 6)).astype(np.uint8), np.arange(n) % 10,
                   r.integers(0, 256, (100, 6, 6)).astype(np.uint8), np.arange(100) % 10)


def test_split_tasks_are_class_pairs():
    s = make_tasks(fake_dataset(), "split", seed=0)
    assert len(s) == 5
    for t, pair in zip(s.tasks, [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]):
        assert set(t.train_labels.tolist()) == set(pair) and set(t.test_labels.tolist()) == set(pair)
        assert t.train_images.shape[1] == 36 and t.train_images.max() <= 1.0


def test_permuted_tasks_are_disjoint_permutations():
    ds = fake_dataset()
    s = make_tasks(ds, "permuted", seed=1)
    assert len(s) == 4
    perms = [t.permutation for t in s.tasks]
    assert all(sorted(p.tolist()) == list(range(36)) for p in perms)
    assert len({tuple(p) for p in perms}) == 4
    # un-permuting the test images recovers the raw test set
    t = s.tasks[2]
    restored = np.empty_like(t.test_images)
    restored[:, t.permutation] = t.test_images
    assert np.allclose(restored, ds.test_images.reshape(100, -1) / 255.0)
    assert sum(len(t.train_labels) for t in s.tasks) == 400


def test_rotated_task_angles_in_range():
    s = make_tasks(fake_dataset(), "rotated", seed=2, train_per_task=20, test_per_task=10)
    for t, (lo, hi) in zip(s.tasks, [(0, 30), (31, 60), (61, 90), (91, 120)]):
        assert np.all((t.angles >= lo) & (t.angles <= hi))
        assert t.train_images.shape == (20, 36) and t.test_images.shape == (10, 36)


def test_rotate_ninety_degrees_matches_rot90():
    img = np.zeros((1, 5, 5))
    img[0, 0, 2] = 1.0
    out = rotate_images(img, np.array([90.0]))
    assert np.allclose(out[0], np.rot90(img[0]), atol=1e-9)


def test_make_tasks_is_seeded_and_validates():
    ds = fake_dataset()
    a = make_tasks(ds, "permuted", seed=3)
    b = make_tasks(ds, "permuted", seed=3)
    assert np.array_equal(a.tasks[0].train_images, b.tasks[0].train_images)
    with pytest.raises(ValueError):
        make_tasks(ds, "shuffled", seed=0)
    with pytest.raises(ValueError):
        make_tasks(ds, "permuted", seed=0, train_per_task=200)


def test_labelled_prefix_takes_first_per_class():
    labels = np.array([1, 1, 0, 1, 0, 0, 1])
    head, rest = labelled_prefix(labels, 2)
    assert head.tolist() == [0, 1, 2, 4]
    assert rest.tolist() == [3, 5, 6]


# ------------------------------------------------------------------- metrics
@pytest.mark.parametrize("seed", range(10))
def test_metrics_equal_hand_computation(seed):
    r = np.random.default_rng(seed)
    K = int(r.integers(2, 7))
    R = r.uniform(0, 1, (K, K))
    b = r.uniform(0, 1, K)
    got = metrics(R, b, [0.5])
    task_acc, bwt, fwt = bwt_fwt_by_hand(R.tolist(), b.tolist())
    assert got["TaskAcc"] == pytest.approx(task_acc, rel=1e-12)
    assert got["BWT"] == pytest.approx(bwt, rel=1e-12, abs=1e-15)
    assert got["FWT"] == pytest.approx(fwt, rel=1e-12, abs=1e-15)


def test_metrics_known_matrix():
    R = [[0.9, 0.2], [0.7, 0.8]]
    got = metrics(R, [0.5, 0.1], [1.0, 0.5])
    assert got == pytest.approx({"PreqAcc": 0.75, "TaskAcc": 0.75, "BWT": -0.2, "FWT": 0.1})


def test_metrics_single_task_and_incomplete():
    assert metrics([[0.8]], [0.5], [])["BWT"] is None
    with pytest.raises(IncompleteRecord):
        metrics([[0.8, np.nan], [0.1, 0.2]], [0, 0], [])
    with pytest.raises(IncompleteRecord):
        metrics(np.zeros((2, 3)), [0, 0], [])


# -------------------------------------------------------------------- config
def test_config_grammar_and_round_trip():
    cfg = parse_config("# comment\nlr = 0.05\nepochs=3  # trailing\nextractor_dims = 16, 8, 4\n\n")
    assert cfg.lr == 0.05 and cfg.epochs == 3 and cfg.extractor_dims == (16, 8, 4)
    assert parse_config(dump_config(cfg)) == cfg
    assert parse_config("", seed=7).seed == 7


@pytest.mark.parametrize("text", ["lr 0.1", "learning_rate = 0.1", "epochs = many", "alpha_d = 0.5"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


@given(st.floats(1e-6, 1.0), st.integers(1, 100), st.integers(0, 10_000))
def test_config_dump_parse_property(lr, epochs, seed):
    cfg = LearnerConfig(lr=lr, epochs=epochs, seed=seed)
    assert parse_config(dump_config(cfg)) == cfg


# ---------------------------------------------------------------- checkpoint
def test_checkpoint_format_errors(tmp_path):
    p = tmp_path / "c.ckpt"
    write_checkpoint(p, {"a": 1}, {"x": np.arange(3.0)})
    meta, arrays = read_checkpoint(p)
    assert meta == {"a": 1} and np.array_equal(arrays["x"], [0, 1, 2])
    blob = p.read_bytes()
    assert blob[:8] == b"KIERACKP"
    (tmp_path / "bad").write_bytes(b"NOTACKPT" + blob[8:])
    with pytest.raises(CheckpointError, match="magic"):
        read_checkpoint(tmp_path / "bad")
    (tmp_path / "short").write_bytes(blob[:-4])
    with pytest.raises(CheckpointError, match="truncated"):
        read_checkpoint(tmp_path / "short")
    (tmp_path / "ver").write_bytes(blob[:8] + struct.pack("<I", 99) + blob[12:])
    with pytest.raises(CheckpointError, match="version"):
        read_checkpoint(tmp_path / "ver")


# ------------------------------------------------------------------ protocol
def small_stream():
    r = np.random.default_rng(0)
    protos = r.uniform(0, 1, (10, 6, 6)) * 255
    n = 300
    y = np.arange(n) % 10
    imgs = np.clip(protos[y] + r.normal(0, 10, (n, 6, 6)), 0, 255).astype(np.uint8)
    ds = Dataset(imgs, y, imgs[:100], y[:100])
    return make_tasks(ds, "split", seed=0)


def proto_config(**kw):
    return tiny_config(extractor_dims=(36, 16, 8), n_init=20, batch_size=10, labelled_per_class=5, **kw)


def test_run_protocol_fills_record():
    rec = run_protocol(small_stream(), proto_config())
    assert np.array(rec.R).shape == (5, 5)
    assert len(rec.baseline) == 5
    n_batches = sum((len(t.train_labels) - 10 - 20 + 9) // 10 for t in small_stream().tasks)
    assert len(rec.batches) == n_batches
    assert set(rec.structure) == {"NoN", "NoL", "NoC", "NoM"}
    assert rec.summary == rec.compute_metrics()


def test_run_record_jsonl_round_trip(tmp_path):
    rec = run_protocol(small_stream(), proto_config())
    p = tmp_path / "r.jsonl"
    rec.write_jsonl(p)
    back = RunRecord.read_jsonl(p)
    assert back.payload_hash() == rec.payload_hash()
    lines = [json.loads(l) for l in p.read_text().splitlines()]
    assert lines[0]["type"] == "run" and lines[-1]["type"] == "summary"
    assert lines[-1]["payload_sha256"] == rec.payload_hash()


def test_payload_hash_is_deterministic():
    a = run_protocol(small_stream(), proto_config(seed=4))
    b = run_protocol(small_stream(), proto_config(seed=4))
    assert a.payload_hash() == b.payload_hash()


# ----------------------------------------------------------------------- CLI
def test_cli_run_metrics_report(tmp_path, capsys):
    data = write_fake_mnist(tmp_path / "mnist", n_train=400, n_test=50)
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text("extractor_dims = 16, 8, 4\ninitial_width = 4\nn_init = 10\nepochs = 1\n"
                   "batch_size = 10\nlabelled_per_class = 2\ngrace = 5\n")
    out = tmp_path / "runs"
    code = main(["run", "--dataset", str(data), "--variant", "split", "--seeds", "2",
                 "--config", str(cfg), "--out", str(out)])
    assert code == 0
    assert sorted(p.name for p in out.glob("*.jsonl")) == ["split_seed0.jsonl", "split_seed1.jsonl"]
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0].startswith("variant,seeds,BWT_mean") and summary[1].startswith("split,2,")
    assert (out / "memory_curve.csv").exists()
    assert main(["metrics", str(out)]) == 0
    assert main(["report", str(out), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "summary.csv").exists()


def test_cli_usage_errors(tmp_path, capsys):
    assert main(["run", "--dataset", str(tmp_path / "nope"), "--variant", "split"]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense = 1\n")
    data = write_fake_mnist(tmp_path / "m")
    assert main(["run", "--dataset", str(data), "--variant", "split", "--config", str(bad)]) == 2
    assert main(["metrics", str(tmp_path / "empty_dir_does_not_exist")]) != 0
    with pytest.raises(SystemExit) as exc:
        main(["run", "--variant", "bogus"])
    assert exc.value.code == 2


def test_cli_run_failure_exit_code(tmp_path):
    # the fake images are 4x4 but the config insists on 784 inputs
    data = write_fake_mnist(tmp_path / "m", n_train=200)
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n_init = 5\nepochs = 1\nbatch_size = 5\nlabelled_per_class = 2\n")
    assert main(["run", "--dataset", str(data), "--variant", "split", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == 1
