"""On-disk formats: FERD recordings, FERF feature sets, FERM model weights.

All multi-byte fields are little-endian regardless of host byte order, so
files are portable; readers use explicit '<' struct formats and dtypes.
Read errors distinguish structural problems (bad magic, bad version, bad
dimension: FormatError) from short files (TruncationError, which names the
byte offset where data ran out).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FileSystemError, FormatError, TruncationError

FERD_MAGIC = b"FERD"
FERF_MAGIC = b"FERF"
FERM_MAGIC = b"FERM"
FORMAT_VERSION = 1

LABELS = ("smile", "anger", "neutral", "noface")
LABEL_CODES = {name: code for code, name in enumerate(LABELS)}
UNLABELED = 0xFFFF

# Guard against absurd headers before allocating anything.
_MAX_ELEMENTS = 1 << 31

_FERD_HEADER = struct.Struct("<4sHHIHHHQ")
_FERF_HEADER = struct.Struct("<4sHHIHH")
_FERM_HEADER = struct.Struct("<4sHI")

FEATURE_ORDER = ("rdi", "micro_rdi", "rai", "rei")


@dataclass
class Recording:
    """A labeled stretch of raw frames: data shape [n_frames][n_rx][n_chirps][n_samples]."""

    frames: np.ndarray
    label: str | None
    seed: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: str | None
    seed: int
    n_frames: int


def label_to_code(label: str | None) -> int:
    if label is None:
        return UNLABELED
    try:
        return LABEL_CODES[label]
    except KeyError:
        raise FormatError(f"unknown label {label!r}, expected one of {LABELS}") from None


def code_to_label(code: int) -> str | None:
    if code == UNLABELED:
        return None
    if not 0 <= code < len(LABELS):
        raise FormatError(f"label code {code} out of range")
    return LABELS[code]


def _read_exact(fh, n: int, what: str):
    offset = fh.tell()
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncationError(
            f"{what}: needed {n} bytes at offset {offset}, file ends after {len(buf)}"
        )
    return buf


def _open_read(path: Path):
    try:
        return open(path, "rb")
    except OSError as exc:
        raise FileSystemError(f"cannot open {path}: {exc}") from exc


def _check_dims(dims, what: str) -> None:
    total = 1
    for d in dims:
        if d <= 0:
            raise FormatError(f"{what}: non-positive dimension {d}")
        total *= d
        if total > _MAX_ELEMENTS:
            raise FormatError(f"{what}: dimension overflow, {dims} exceeds {_MAX_ELEMENTS} elements")


# ---------------------------------------------------------------- FERD

def write_recording(path: str | Path, rec: Recording) -> None:
    """Write a raw recording. Sample order is [frame][rx][chirp][sample], float32 LE."""
    frames = np.asarray(rec.frames, dtype="<f4")
    if frames.ndim != 4:
        raise FormatError(f"recording data must be 4-D, got shape {frames.shape}")
    n_frames, n_rx, n_chirps, n_samples = frames.shape
    header = _FERD_HEADER.pack(
        FERD_MAGIC,
        FORMAT_VERSION,
        label_to_code(rec.label),
        n_frames,
        n_rx,
        n_chirps,
        n_samples,
        rec.seed & 0xFFFFFFFFFFFFFFFF,
    )
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(frames.tobytes())
    except OSError as exc:
        raise FileSystemError(f"cannot write {path}: {exc}") from exc


def read_recording(path: str | Path) -> Recording:
    path = Path(path)
    with _open_read(path) as fh:
        raw = _read_exact(fh, _FERD_HEADER.size, "FERD header")
        magic, version, label_code, n_frames, n_rx, n_chirps, n_samples, seed = (
            _FERD_HEADER.unpack(raw)
        )
        if magic != FERD_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at offset 0, expected {FERD_MAGIC!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported FERD version {version}")
        _check_dims((n_frames, n_rx, n_chirps, n_samples), f"{path}: FERD dims")
        count = n_frames * n_rx * n_chirps * n_samples
        buf = _read_exact(fh, count * 4, f"{path}: FERD samples")
        extra = fh.read(1)
        if extra:
            raise FormatError(f"{path}: {len(extra)}+ trailing bytes after declared payload")
    frames = np.frombuffer(buf, dtype="<f4").reshape(n_frames, n_rx, n_chirps, n_samples)
    if not np.isfinite(frames).all():
        raise FormatError(f"{path}: non-finite samples in payload")
    return Recording(frames=frames.astype(np.float32), label=code_to_label(label_code), seed=seed)


# ---------------------------------------------------------------- FERF

def write_features(path: str | Path, windows: np.ndarray, label: str | None) -> None:
    """Write feature windows, shape [n_windows][4][rows][cols], float32 LE.

    Image order inside each window is FEATURE_ORDER.
    """
    windows = np.asarray(windows, dtype="<f4")
    if windows.ndim != 4 or windows.shape[1] != len(FEATURE_ORDER):
        raise FormatError(
            f"feature array must be [n][{len(FEATURE_ORDER)}][rows][cols], got {windows.shape}"
        )
    n_windows, _, rows, cols = windows.shape
    header = _FERF_HEADER.pack(FERF_MAGIC, FORMAT_VERSION, label_to_code(label), n_windows, rows, cols)
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(windows.tobytes())
    except OSError as exc:
        raise FileSystemError(f"cannot write {path}: {exc}") from exc


def read_features(path: str | Path) -> tuple[np.ndarray, str | None]:
    path = Path(path)
    with _open_read(path) as fh:
        raw = _read_exact(fh, _FERF_HEADER.size, "FERF header")
        magic, version, label_code, n_windows, rows, cols = _FERF_HEADER.unpack(raw)
        if magic != FERF_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at offset 0, expected {FERF_MAGIC!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported FERF version {version}")
        # Zero windows is a legal file: the writer emits one for recordings
        # shorter than the integration window.
        checked = (n_windows, len(FEATURE_ORDER), rows, cols)
        _check_dims(checked if n_windows else checked[1:], f"{path}: FERF dims")
        count = n_windows * len(FEATURE_ORDER) * rows * cols
        buf = _read_exact(fh, count * 4, f"{path}: FERF images")
    windows = np.frombuffer(buf, dtype="<f4").reshape(n_windows, len(FEATURE_ORDER), rows, cols)
    return windows.astype(np.float32), code_to_label(label_code)


# ---------------------------------------------------------------- FERM

def write_model(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write named tensors. Iteration order of the dict is preserved on disk."""
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(_FERM_HEADER.pack(FERM_MAGIC, FORMAT_VERSION, len(tensors)))
            for name, arr in tensors.items():
                arr = np.asarray(arr, dtype="<f4")
                encoded = name.encode("utf-8")
                if len(encoded) > 0xFFFF:
                    raise FormatError(f"tensor name too long: {name[:32]}...")
                if arr.ndim > 0xFF:
                    raise FormatError(f"tensor rank {arr.ndim} too large for {name}")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<B", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.tobytes())
    except OSError as exc:
        raise FileSystemError(f"cannot write {path}: {exc}") from exc


def read_model(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    tensors: dict[str, np.ndarray] = {}
    with _open_read(path) as fh:
        raw = _read_exact(fh, _FERM_HEADER.size, "FERM header")
        magic, version, count = _FERM_HEADER.unpack(raw)
        if magic != FERM_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at offset 0, expected {FERM_MAGIC!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported FERM version {version}")
        for i in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, f"{path}: tensor {i} name length"))
            name = _read_exact(fh, name_len, f"{path}: tensor {i} name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, f"{path}: {name} rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"{path}: {name} dims"))
            _check_dims(dims if dims else (1,), f"{path}: tensor {name}")
            n = int(np.prod(dims)) if dims else 1
            buf = _read_exact(fh, n * 4, f"{path}: {name} data")
            tensors[name] = np.frombuffer(buf, dtype="<f4").reshape(dims).astype(np.float32)
        extra = fh.read(1)
        if extra:
            raise FormatError(f"{path}: trailing bytes after {count} declared tensors")
    return tensors


# ---------------------------------------------------------------- manifest

def write_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    """One JSON object per line; paths stored relative to the manifest."""
    path = Path(path)
    base = path.parent
    lines = []
    for e in entries:
        rel = Path(e.path)
        if rel.is_absolute():
            try:
                rel = rel.relative_to(base.resolve())
            except ValueError:
                pass  # outside the manifest tree, keep absolute
        lines.append(
            json.dumps(
                {"path": str(rel), "label": e.label, "seed": e.seed, "n_frames": e.n_frames}
            )
        )
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise FileSystemError(f"cannot write {path}: {exc}") from exc


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse a manifest; relative entry paths resolve against the manifest's directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileSystemError(f"cannot read manifest {path}: {exc}") from exc
    base = path.resolve().parent
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        for key in ("path", "label", "seed", "n_frames"):
            if key not in obj:
                raise FormatError(f"{path}:{lineno}: missing key {key!r}")
        p = Path(obj["path"])
        if not p.is_absolute():
            p = base / p
        label = obj["label"]
        if label is not None and label not in LABELS:
            raise FormatError(f"{path}:{lineno}: unknown label {label!r}")
        entries.append(
            ManifestEntry(path=p, label=label, seed=int(obj["seed"]), n_frames=int(obj["n_frames"]))
        )
    if not entries:
        raise FormatError(f"{path}: manifest is empty")
    return entries
