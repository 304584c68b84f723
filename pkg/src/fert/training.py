"""Dataset assembly, the training loop, and evaluation reports.

Recordings are split into train/test by whole recording, never by window:
windows from one recording are strongly correlated through the sliding
integrator, so letting them straddle the split would leak.
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import AdcCube, RadarConfig
from .dsp import DEFAULT_WINDOW, Pipeline
from .errors import ConfigError, FileSystemError, NumericError
from .formats import LABELS, ManifestEntry, read_manifest, read_recording
from .nn import FertNet, SGD, cross_entropy, softmax
from .nn.layers import BatchNorm2d

N_CLASSES = len(LABELS)


@dataclass
class Dataset:
    """Stacked feature windows plus integer labels (codes into LABELS).

    dsp_ms holds, per window, the preprocessing time of the frame that
    emitted it, so evaluation can report the full dsp+inference latency.
    """

    windows: np.ndarray  # [n][4][rows][cols] float32
    labels: np.ndarray  # [n] int64
    recording_names: list[str] = field(default_factory=list)
    tag: str = ""
    dsp_ms: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0
    window: int = DEFAULT_WINDOW
    split_ratio: float = 0.75
    stage_blocks: tuple[int, ...] = (2, 2)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ConfigError("need epochs >= 1 and batch_size >= 2")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split_ratio must be in (0, 1), got {self.split_ratio}")


def split_recordings(
    entries: list[ManifestEntry], split_ratio: float, seed: int
) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
    """Deterministic per-class split by recording. Both sides get >= 1 of each class."""
    rng = np.random.default_rng(seed)
    train: list[ManifestEntry] = []
    test: list[ManifestEntry] = []
    for label in LABELS:
        group = [e for e in entries if e.label == label]
        if len(group) < 2:
            raise ConfigError(f"need >= 2 recordings of class {label!r}, got {len(group)}")
        order = rng.permutation(len(group))
        n_train = min(max(int(len(group) * split_ratio), 1), len(group) - 1)
        train.extend(group[i] for i in order[:n_train])
        test.extend(group[i] for i in order[n_train:])
    return train, test


def _windows_of(
    entry: ManifestEntry, cfg: RadarConfig, window: int
) -> tuple[np.ndarray, np.ndarray]:
    """All feature windows of one recording, with per-window preprocessing time.

    Each window is charged the pipeline cost of the frame that emitted it;
    in the steady state every frame emits one window, so this is the
    per-frame preprocessing latency.
    """
    rec = read_recording(entry.path)
    pipe = Pipeline(cfg, window=window)
    stacked: list[np.ndarray] = []
    times: list[float] = []
    for f in range(rec.frames.shape[0]):
        t0 = time.perf_counter()
        fw = pipe.push(AdcCube(data=rec.frames[f], frame_index=f))
        dt_ms = (time.perf_counter() - t0) * 1e3
        if fw is not None:
            stacked.append(fw.stack())
            times.append(dt_ms)
    if not stacked:
        shape = (0, 4, cfg.n_samples // 2, cfg.n_chirps)
        return np.zeros(shape, dtype=np.float32), np.zeros(0)
    return np.stack(stacked), np.asarray(times)


def _collect(
    entries: list[ManifestEntry], cfg: RadarConfig, window: int, tag: str = ""
) -> Dataset:
    parts, labels, names, times = [], [], [], []
    for e in entries:
        if e.label is None:
            raise ConfigError(f"recording {e.path} is unlabeled; training data must be labeled")
        w, t = _windows_of(e, cfg, window)
        if len(w):
            parts.append(w)
            labels.append(np.full(len(w), LABELS.index(e.label), dtype=np.int64))
            names.extend([e.path.name] * len(w))
            times.append(t)
    if not parts:
        raise ConfigError(
            f"no feature windows: recordings are too short for window {window} "
            "(first window needs window + 8 frames)"
        )
    return Dataset(
        np.concatenate(parts), np.concatenate(labels), names, tag, np.concatenate(times)
    )


def build_dataset(
    manifest_path: str | Path,
    cfg: RadarConfig,
    window: int = DEFAULT_WINDOW,
    split_ratio: float = 0.75,
    seed: int = 0,
) -> tuple[Dataset, Dataset]:
    """Load a manifest, split by recording, and run the DSP chain on each side."""
    entries = read_manifest(manifest_path)
    train_entries, test_entries = split_recordings(entries, split_ratio, seed)
    return (
        _collect(train_entries, cfg, window, "train"),
        _collect(test_entries, cfg, window, "test"),
    )


# ---------------------------------------------------------------- training

def steps_per_epoch(n_samples: int, batch_size: int) -> int:
    return math.ceil(n_samples / batch_size)


def train(net: FertNet, dataset: Dataset, tc: TrainConfig, log=None) -> list[float]:
    """SGD over shuffled minibatches; returns the per-batch loss curve.

    A non-finite loss aborts immediately with the epoch/batch coordinates
    and the learning rate, which is almost always the knob to turn.
    """
    if len(dataset) < tc.batch_size:
        raise ConfigError(f"dataset has {len(dataset)} windows, need >= batch_size {tc.batch_size}")
    opt = SGD(net.parameters(), lr=tc.lr, momentum=tc.momentum)
    rng = np.random.default_rng(tc.seed)
    losses: list[float] = []
    for epoch in range(tc.epochs):
        order = rng.permutation(len(dataset))
        for step in range(steps_per_epoch(len(dataset), tc.batch_size)):
            idx = order[step * tc.batch_size : (step + 1) * tc.batch_size]
            batch = dataset.windows[idx]
            labels = dataset.labels[idx]
            logits = net.forward(batch, train=True)
            loss, dlogits = cross_entropy(logits, labels)
            if not math.isfinite(loss):
                raise NumericError(
                    f"loss became non-finite at epoch {epoch} batch {step} (lr={tc.lr}); "
                    "reduce the learning rate"
                )
            opt.zero_grad()
            net.backward(dlogits)
            opt.step()
            losses.append(loss)
            if log is not None:
                log(f"epoch {epoch + 1}/{tc.epochs} batch {step + 1} loss {loss:.4f}")
    _refresh_norm_stats(net, dataset, tc, rng)
    return losses


def _refresh_norm_stats(net: FertNet, dataset: Dataset, tc: TrainConfig, rng) -> None:
    """One forward-only pass rebuilding batchnorm statistics with the final weights.

    The moving averages accumulated during a short run lag the weights and
    still carry part of their init, which can sink eval-mode accuracy even
    when the train loss has converged. Batches must stay class-mixed here:
    single-class batches would underestimate the variance the eval batches
    of size one actually see.
    """
    norms = [m for _, m in net.named_modules() if isinstance(m, BatchNorm2d)]
    for bn in norms:
        bn.begin_stat_refresh()
    try:
        order = rng.permutation(len(dataset))
        for step in range(steps_per_epoch(len(dataset), tc.batch_size)):
            idx = order[step * tc.batch_size : (step + 1) * tc.batch_size]
            if len(idx) < 2:
                break
            net.forward(dataset.windows[idx], train=True)
    finally:
        for bn in norms:
            bn.end_stat_refresh()


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    per_class: dict[str, float]  # recall per class, percent
    average: float  # mean of per-class recalls, percent
    matrix: np.ndarray  # [true][pred] counts
    latency_ms: dict[str, float]  # p50/p95/p99 per-window dsp+inference latency
    wall_clock_s: float
    n_samples: int
    extras: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_class": self.per_class,
            "average": self.average,
            "matrix": self.matrix.tolist(),
            "labels": list(LABELS),
            "latency_ms": self.latency_ms,
            "wall_clock_s": self.wall_clock_s,
            "n_samples": self.n_samples,
            "extras": self.extras,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _percentiles(samples_ms: list[float]) -> dict[str, float]:
    arr = np.asarray(samples_ms) if samples_ms else np.asarray([0.0])
    return {
        "p50": float(np.percentile(arr, 50)),
        "p95": float(np.percentile(arr, 95)),
        "p99": float(np.percentile(arr, 99)),
    }


def evaluate(net: FertNet, dataset: Dataset) -> EvalReport:
    """Accuracy, confusion matrix, and per-window latency stats.

    Inference runs one window at a time so the latency percentiles reflect
    what a streaming deployment sees. When the dataset carries per-window
    preprocessing times the percentiles cover the full dsp+inference path,
    otherwise inference alone.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    t_start = time.perf_counter()
    matrix = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    latencies = []
    for i in range(len(dataset)):
        t0 = time.perf_counter()
        logits = net.forward(dataset.windows[i : i + 1], train=False)
        infer_ms = (time.perf_counter() - t0) * 1e3
        dsp_ms = float(dataset.dsp_ms[i]) if dataset.dsp_ms is not None else 0.0
        latencies.append(dsp_ms + infer_ms)
        pred = int(np.argmax(logits[0]))
        matrix[dataset.labels[i], pred] += 1
    wall = time.perf_counter() - t_start

    per_class = {}
    recalls = []
    for code, label in enumerate(LABELS):
        total = matrix[code].sum()
        recall = 100.0 * matrix[code, code] / total if total else 0.0
        per_class[label] = recall
        if total:
            recalls.append(recall)
    precision = {}
    f1 = {}
    for code, label in enumerate(LABELS):
        col = matrix[:, code].sum()
        p = 100.0 * matrix[code, code] / col if col else 0.0
        precision[label] = p
        r = per_class[label]
        f1[label] = 2 * p * r / (p + r) if (p + r) else 0.0
    return EvalReport(
        per_class=per_class,
        average=float(np.mean(recalls)) if recalls else 0.0,
        matrix=matrix,
        latency_ms=_percentiles(latencies),
        wall_clock_s=wall,
        n_samples=len(dataset),
        extras={"precision": precision, "f1": f1},
    )


def write_confusion_pgm(matrix: np.ndarray, path: str | Path, cell: int = 48) -> None:
    """Render the confusion matrix as a binary PGM heatmap (one cell per entry)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    peak = matrix.max()
    gray = (255.0 * matrix / peak if peak > 0 else matrix).astype(np.uint8)
    img = np.kron(gray, np.ones((cell, cell), dtype=np.uint8))
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    try:
        Path(path).write_bytes(header + img.tobytes())
    except OSError as exc:
        raise FileSystemError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------- end-to-end runs

def run_experiment(
    manifest_path: str | Path, cfg: RadarConfig, tc: TrainConfig, log=None
) -> tuple[FertNet, list[float], EvalReport]:
    """Build datasets, train a fresh network, evaluate on the held-out side."""
    train_set, test_set = build_dataset(
        manifest_path, cfg, window=tc.window, split_ratio=tc.split_ratio, seed=tc.seed
    )
    if log is not None:
        log(f"train windows: {len(train_set)}, test windows: {len(test_set)}")
    net = FertNet(stage_blocks=tc.stage_blocks, rng=np.random.default_rng(tc.seed))
    losses = train(net, train_set, tc, log=log)
    report = evaluate(net, test_set)
    return net, losses, report


def _hash_recordings(manifest_path: str | Path) -> str:
    digest = hashlib.sha256()
    for e in read_manifest(manifest_path):
        digest.update(Path(e.path).read_bytes())
    return digest.hexdigest()


def ablation_e_respd(
    manifest_path: str | Path,
    cfg: RadarConfig,
    tc: TrainConfig,
    off_window: int = 1,
    log=None,
) -> dict:
    """Paired runs with temporal integration on (tc.window) and off (off_window).

    Everything else, both runs share: recordings (hash-checked), split seed,
    network init, and optimizer hyperparameters.
    """
    rec_hash = _hash_recordings(manifest_path)
    results = {}
    for tag, window in (("on", tc.window), ("off", off_window)):
        tc_run = TrainConfig(
            epochs=tc.epochs,
            lr=tc.lr,
            momentum=tc.momentum,
            batch_size=tc.batch_size,
            seed=tc.seed,
            window=window,
            split_ratio=tc.split_ratio,
            stage_blocks=tc.stage_blocks,
        )
        if log is not None:
            log(f"ablation arm {tag!r}: window={window}")
        _, _, report = run_experiment(manifest_path, cfg, tc_run, log=log)
        results[tag] = report
    deltas = {
        label: results["on"].per_class[label] - results["off"].per_class[label] for label in LABELS
    }
    deltas["average"] = results["on"].average - results["off"].average
    return {
        "recordings_sha256": rec_hash,
        "window_on": tc.window,
        "window_off": off_window,
        "on": results["on"].to_dict(),
        "off": results["off"].to_dict(),
        "deltas": deltas,
    }
