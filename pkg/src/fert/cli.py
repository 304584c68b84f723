"""Command-line interface.

Subcommands: simulate, preprocess, train, eval, ablate, stream. Long flags
only. Exit codes: 0 success, 1 usage, 2 filesystem, 3 format, 4 truncation,
5 numeric.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import queue
import sys
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import AdcCube, RadarConfig, load_config
from .dsp import DEFAULT_WINDOW, MICRO_FRAMES, Pipeline, process_stream
from .errors import FertError, UsageError
from .formats import (
    LABELS,
    Recording,
    read_manifest,
    read_model,
    read_recording,
    write_features,
    write_model,
)
from .nn import FertNet, softmax
from .simulate import generate_dataset, load_templates
from .training import (
    TrainConfig,
    ablation_e_respd,
    evaluate,
    run_experiment,
    write_confusion_pgm,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_cfg(path: str | None) -> RadarConfig:
    if path is None:
        with resources.as_file(resources.files("fert.data") / "default_radar.json") as p:
            return load_config(p)
    return load_config(path)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=3, help="training epochs")
    p.add_argument("--lr", type=float, default=0.01, help="SGD learning rate")
    p.add_argument("--momentum", type=float, default=0.9, help="SGD momentum")
    p.add_argument("--batch-size", type=int, default=32, help="minibatch size")
    p.add_argument("--seed", type=int, default=0, help="split/init/shuffle seed")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW, help="integration window (frames)")
    p.add_argument("--split-ratio", type=float, default=0.75, help="train fraction of recordings per class")
    p.add_argument(
        "--head-stages",
        type=str,
        default="2,2",
        help="residual head layout: comma-separated block counts per stage",
    )


def _train_config(args) -> TrainConfig:
    try:
        stages = tuple(int(s) for s in args.head_stages.split(","))
    except ValueError:
        raise UsageError(f"--head-stages must be comma-separated integers, got {args.head_stages!r}")
    return TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        momentum=args.momentum,
        batch_size=args.batch_size,
        seed=args.seed,
        window=args.window,
        split_ratio=args.split_ratio,
        stage_blocks=stages,
    )


def _print_report(report) -> None:
    for label in LABELS:
        print(f"  {label:<8} {report.per_class[label]:6.2f} %")
    print(f"  average  {report.average:6.2f} %")
    print(
        "  latency  p50 {p50:.2f} ms  p95 {p95:.2f} ms  p99 {p99:.2f} ms".format(**report.latency_ms)
    )


# ---------------------------------------------------------------- simulate

def _cmd_simulate(args) -> int:
    if args.per_class < 1:
        raise UsageError(f"--per-class must be >= 1, got {args.per_class}")
    if args.frames < 1:
        raise UsageError(f"--frames must be >= 1, got {args.frames}")
    cfg = _load_cfg(args.config)
    templates = load_templates(args.templates)
    if args.frames < DEFAULT_WINDOW + MICRO_FRAMES:
        print(
            f"warning: {args.frames} frames per recording yield no feature windows at the "
            f"default integration window ({DEFAULT_WINDOW}); the first window needs "
            f"{DEFAULT_WINDOW + MICRO_FRAMES} frames",
            file=sys.stderr,
        )
    manifest = generate_dataset(
        cfg,
        args.out,
        per_class=args.per_class,
        n_frames=args.frames,
        seed=args.seed,
        templates=templates,
        noise_scale=args.noise_scale,
    )
    digest = hashlib.sha256()
    for e in read_manifest(manifest):
        digest.update(Path(e.path).read_bytes())
    print(f"manifest: {manifest}")
    for label in LABELS:
        print(f"  {label}: {args.per_class} recordings x {args.frames} frames")
    print(f"dataset sha256: {digest.hexdigest()}")
    return 0


# ---------------------------------------------------------------- preprocess

def _cmd_preprocess(args) -> int:
    cfg = _load_cfg(args.config)
    entries = read_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    total = 0
    for e in entries:
        rec = read_recording(e.path)
        stacked = [fw.stack() for _, fw in process_stream(rec, cfg, window=args.window)]
        windows = (
            np.stack(stacked)
            if stacked
            else np.zeros((0, 4, cfg.n_samples // 2, cfg.n_chirps), dtype=np.float32)
        )
        out_path = out_dir / (Path(e.path).stem + ".ferf")
        write_features(out_path, windows, rec.label)
        total += len(windows)
        print(f"{out_path}: {len(windows)} windows")
    print(f"total windows: {total}")
    return 0


# ---------------------------------------------------------------- train / eval / ablate

def _cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    tc = _train_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    net, losses, report = run_experiment(args.manifest, cfg, tc, log=print)
    model_path = out_dir / "model.ferm"
    write_model(model_path, net.state())
    (out_dir / "loss_curve.json").write_text(json.dumps(losses))
    (out_dir / "report.json").write_text(report.to_json())
    write_confusion_pgm(report.matrix, out_dir / "confusion.pgm")
    print(f"model: {model_path}")
    print("held-out accuracy:")
    _print_report(report)
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_cfg(args.config)
    from .training import build_dataset  # local import keeps module load light

    net = FertNet.from_state(read_model(args.model))
    _, test_set = build_dataset(
        args.manifest, cfg, window=args.window, split_ratio=args.split_ratio, seed=args.seed
    )
    report = evaluate(net, test_set)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json())
    write_confusion_pgm(report.matrix, out_dir / "confusion.pgm")
    print(f"evaluated {report.n_samples} held-out windows")
    _print_report(report)
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_cfg(args.config)
    tc = _train_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = ablation_e_respd(args.manifest, cfg, tc, off_window=args.off_window, log=print)
    (out_dir / "ablation.json").write_text(json.dumps(result, indent=2))
    print(f"integration on  (window {result['window_on']}): average {result['on']['average']:.2f} %")
    print(f"integration off (window {result['window_off']}): average {result['off']['average']:.2f} %")
    print(f"average delta: {result['deltas']['average']:+.2f} points")
    return 0


# ---------------------------------------------------------------- stream

@dataclass
class StreamResult:
    predictions: list[tuple[int, str, float]] = field(default_factory=list)
    latencies_ms: list[float] = field(default_factory=list)
    deadline_misses: int = 0

    def percentiles(self) -> dict[str, float]:
        arr = np.asarray(self.latencies_ms) if self.latencies_ms else np.asarray([0.0])
        return {
            "p50": float(np.percentile(arr, 50)),
            "p95": float(np.percentile(arr, 95)),
            "p99": float(np.percentile(arr, 99)),
        }


def run_stream(
    recording: Recording,
    cfg: RadarConfig,
    net: FertNet,
    window: int = DEFAULT_WINDOW,
    realtime: bool = False,
    on_prediction=None,
) -> StreamResult:
    """Replay a recording through the DSP chain and classifier.

    Non-realtime mode processes frames back to back and counts a deadline
    miss whenever one frame's processing exceeds the frame period. Realtime
    mode paces frames at the frame period through a bounded queue (depth 8,
    one producer, one consumer); queue overflow also counts as a miss but
    frames are never dropped, so both modes predict identically.
    """
    net.forward(np.zeros((1, 4, 64, 64), dtype=np.float32), train=False)  # warm-up
    pipe = Pipeline(cfg, window=window)
    result = StreamResult()
    deadline = cfg.frame_period

    def process(i: int, frame: np.ndarray) -> None:
        t0 = time.perf_counter()
        fw = pipe.push(AdcCube(data=frame, frame_index=i))
        if fw is not None:
            logits = net.forward(fw.stack()[None], train=False)
            probs = softmax(logits.astype(np.float64))[0]
            pred = int(np.argmax(probs))
            entry = (i + 1, LABELS[pred], float(probs[pred]))
            result.predictions.append(entry)
            if on_prediction is not None:
                on_prediction(entry)
        elapsed = time.perf_counter() - t0
        result.latencies_ms.append(elapsed * 1e3)
        if elapsed > deadline:
            result.deadline_misses += 1

    if not realtime:
        for i in range(recording.n_frames):
            process(i, recording.frames[i])
        return result

    q: queue.Queue = queue.Queue(maxsize=8)

    def producer():
        start = time.perf_counter()
        for i in range(recording.n_frames):
            target = start + i * cfg.frame_period
            delay = target - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            try:
                q.put_nowait(i)
            except queue.Full:
                result.deadline_misses += 1
                q.put(i)  # block rather than drop: predictions stay deterministic
        q.put(None)

    t = threading.Thread(target=producer, daemon=True)
    t.start()
    while True:
        item = q.get()
        if item is None:
            break
        process(item, recording.frames[item])
    t.join()
    return result


def _cmd_stream(args) -> int:
    cfg = _load_cfg(args.config)
    rec = read_recording(getattr(args, "in"))
    net = FertNet.from_state(read_model(args.model))

    def emit(entry):
        frame, label, conf = entry
        print(f"frame {frame} {label} {conf:.4f}")

    result = run_stream(
        rec, cfg, net, window=args.window, realtime=args.realtime, on_prediction=emit
    )
    pct = result.percentiles()
    print(
        f"frames {rec.n_frames}  windows {len(result.predictions)}  "
        f"p50 {pct['p50']:.2f} ms  p95 {pct['p95']:.2f} ms  p99 {pct['p99']:.2f} ms  "
        f"deadline misses {result.deadline_misses}"
    )
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fert", description="FMCW radar facial-expression toolchain")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic labeled dataset")
    p.add_argument("--config", default=None, help="radar config JSON (default: shipped profile)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--per-class", type=int, default=8, help="recordings per class")
    p.add_argument("--frames", type=int, default=260, help="frames per recording")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--templates", default=None, help="scene template JSON (default: shipped)")
    p.add_argument("--noise-scale", type=float, default=1.0, help="multiplier on template noise")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("preprocess", help="run the DSP chain over a manifest, write features")
    p.add_argument("--config", default=None)
    p.add_argument("--manifest", required=True, help="recording manifest (JSON lines)")
    p.add_argument("--out", required=True, help="output directory for .ferf files")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("train", help="train a classifier on a manifest")
    p.add_argument("--config", default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory for model and reports")
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on the held-out split")
    p.add_argument("--config", default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True, help="model file (.ferm)")
    p.add_argument("--out", required=True, help="output directory for report and heatmap")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--split-ratio", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0, help="must match the training split seed")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="paired runs with temporal integration on vs off")
    p.add_argument("--config", default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--off-window", type=int, default=1, help="window of the ablated arm")
    _add_train_flags(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("stream", help="replay a recording through DSP + classifier")
    p.add_argument("--config", default=None)
    p.add_argument("--in", required=True, help="recording file (.ferd)")
    p.add_argument("--model", required=True)
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--realtime", action="store_true", help="pace frames at the frame period")
    p.set_defaults(func=_cmd_stream)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_help()
            return 1
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"filesystem error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
