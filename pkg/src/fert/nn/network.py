"""The four-branch fusion classifier.

Each of the four radar image modalities gets its own shallow feature
extractor; extractor outputs fuse pairwise (range-Doppler with
micro-range-Doppler, azimuth with elevation) into two intermediate
extractors, whose outputs fuse again and feed a small residual head:

  4 x [1 -> 8 -> 16 -> 16 @ 64x64]
    -> 2 x concat(32) -> [32 -> 32, pool, 32 -> 32, pool] -> 32 @ 16x16
    -> concat(64) -> residual stages -> global average pool -> 4 logits

The head's stage layout is configurable; the default is two stages of two
basic blocks at 64 then 128 channels, with stride 2 entering each stage
after the first.
"""
from __future__ import annotations

import numpy as np

from ..errors import FormatError, ShapeError
from .layers import (
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Linear,
    MaxPool2x2,
    Module,
    ReLU,
    concat_channels,
    split_channels,
)

N_CLASSES = 4
IMAGE_SIZE = 64
HEAD_BASE_CHANNELS = 64
ARCH_KEY = "arch.stage_blocks"


class Sequential(Module):
    def __init__(self, mods: list[Module]):
        super().__init__()
        self.mods = list(mods)

    def forward(self, x, train):
        for m in self.mods:
            x = m.forward(x, train)
        return x

    def backward(self, grad):
        for m in reversed(self.mods):
            grad = m.backward(grad)
        return grad


class ConvBnRelu(Module):
    def __init__(self, in_ch, out_ch, rng, dtype, stride=1):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, rng, stride=stride, dtype=dtype)
        self.bn = BatchNorm2d(out_ch, dtype=dtype)
        self.relu = ReLU()

    def forward(self, x, train):
        return self.relu.forward(self.bn.forward(self.conv.forward(x, train), train), train)

    def backward(self, grad):
        return self.conv.backward(self.bn.backward(self.relu.backward(grad)))


def feature_extractor(rng, dtype) -> Sequential:
    """Per-modality stem: 1 -> 8 -> 16 -> 16 channels, spatial size preserved."""
    return Sequential(
        [
            ConvBnRelu(1, 8, rng, dtype),
            ConvBnRelu(8, 16, rng, dtype),
            ConvBnRelu(16, 16, rng, dtype),
        ]
    )


def intermediate_extractor(rng, dtype) -> Sequential:
    """Fusion stage: two conv+pool rounds, 64x64 -> 16x16 at 32 channels."""
    return Sequential(
        [
            ConvBnRelu(32, 32, rng, dtype),
            MaxPool2x2(),
            ConvBnRelu(32, 32, rng, dtype),
            MaxPool2x2(),
        ]
    )


class BasicBlock(Module):
    """Two 3x3 convs with identity (or 1x1 projection) shortcut."""

    def __init__(self, in_ch, out_ch, rng, dtype, stride=1):
        super().__init__()
        self.conv1 = Conv2d(in_ch, out_ch, rng, stride=stride, dtype=dtype)
        self.bn1 = BatchNorm2d(out_ch, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(out_ch, out_ch, rng, dtype=dtype)
        self.bn2 = BatchNorm2d(out_ch, dtype=dtype)
        self.relu2 = ReLU()
        if stride != 1 or in_ch != out_ch:
            self.proj_conv = Conv2d(in_ch, out_ch, rng, kernel=1, stride=stride, padding=0, dtype=dtype)
            self.proj_bn = BatchNorm2d(out_ch, dtype=dtype)
        else:
            self.proj_conv = None
            self.proj_bn = None

    def forward(self, x, train):
        main = self.bn2.forward(
            self.conv2.forward(
                self.relu1.forward(self.bn1.forward(self.conv1.forward(x, train), train), train),
                train,
            ),
            train,
        )
        if self.proj_conv is not None:
            short = self.proj_bn.forward(self.proj_conv.forward(x, train), train)
        else:
            short = x
        return self.relu2.forward(main + short, train)

    def backward(self, grad):
        grad = self.relu2.backward(grad)
        d_main = self.conv1.backward(
            self.bn1.backward(self.relu1.backward(self.conv2.backward(self.bn2.backward(grad))))
        )
        if self.proj_conv is not None:
            d_short = self.proj_conv.backward(self.proj_bn.backward(grad))
        else:
            d_short = grad
        return d_main + d_short


class FertNet(Module):
    """Four-branch fused classifier over stacked (rdi, micro_rdi, rai, rei) images."""

    def __init__(
        self,
        stage_blocks: tuple[int, ...] = (2, 2),
        rng: np.random.Generator | int = 0,
        dtype=np.float32,
    ):
        super().__init__()
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        stage_blocks = tuple(int(b) for b in stage_blocks)
        if not stage_blocks or any(b < 1 for b in stage_blocks):
            raise FormatError(f"stage_blocks must be non-empty positive counts, got {stage_blocks}")
        self._stage_blocks = stage_blocks
        self._dtype = dtype

        self.fe_rdi = feature_extractor(rng, dtype)
        self.fe_micro = feature_extractor(rng, dtype)
        self.fe_rai = feature_extractor(rng, dtype)
        self.fe_rei = feature_extractor(rng, dtype)
        self.mid_rd = intermediate_extractor(rng, dtype)
        self.mid_ae = intermediate_extractor(rng, dtype)

        blocks = []
        in_ch = 2 * 32
        for stage, count in enumerate(stage_blocks):
            out_ch = HEAD_BASE_CHANNELS * (2 ** stage)
            for b in range(count):
                stride = 2 if (stage > 0 and b == 0) else 1
                blocks.append(BasicBlock(in_ch, out_ch, rng, dtype, stride=stride))
                in_ch = out_ch
        self.head = Sequential(blocks)
        self.pool = GlobalAvgPool()
        self.fc = Linear(in_ch, N_CLASSES, rng, dtype=dtype)

    @property
    def stage_blocks(self) -> tuple[int, ...]:
        return self._stage_blocks

    @property
    def dtype(self):
        return self._dtype

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != 4 or x.shape[2:] != (IMAGE_SIZE, IMAGE_SIZE):
            raise ShapeError(
                f"expected [n][4][{IMAGE_SIZE}][{IMAGE_SIZE}] input, got {x.shape}; "
                "the network takes the stacked feature window at its native size"
            )
        x = x.astype(self._dtype, copy=False)
        f_rdi = self.fe_rdi.forward(x[:, 0:1], train)
        f_micro = self.fe_micro.forward(x[:, 1:2], train)
        f_rai = self.fe_rai.forward(x[:, 2:3], train)
        f_rei = self.fe_rei.forward(x[:, 3:4], train)
        m_rd = self.mid_rd.forward(concat_channels(f_rdi, f_micro), train)
        m_ae = self.mid_ae.forward(concat_channels(f_rai, f_rei), train)
        h = self.head.forward(concat_channels(m_rd, m_ae), train)
        return self.fc.forward(self.pool.forward(h, train), train)

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        grad = self.head.backward(self.pool.backward(self.fc.backward(dlogits)))
        d_rd, d_ae = split_channels(grad, 32)
        g_rd = self.mid_rd.backward(d_rd)
        g_ae = self.mid_ae.backward(d_ae)
        d_rdi, d_micro = split_channels(g_rd, 16)
        d_rai, d_rei = split_channels(g_ae, 16)
        return np.concatenate(
            [
                self.fe_rdi.backward(d_rdi),
                self.fe_micro.backward(d_micro),
                self.fe_rai.backward(d_rai),
                self.fe_rei.backward(d_rei),
            ],
            axis=1,
        )

    # ------------------------------------------------------------ persistence

    def state(self) -> dict[str, np.ndarray]:
        """All tensors needed to reconstruct the network, architecture included."""
        out: dict[str, np.ndarray] = {ARCH_KEY: np.asarray(self._stage_blocks, dtype=np.float32)}
        for name, t in self.named_parameters():
            out[name] = t.data
        for name, arr in self.named_buffers():
            out[name] = arr
        return out

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters():
            if name not in tensors:
                raise FormatError(f"model file missing tensor {name!r}")
            arr = tensors[name]
            if tuple(arr.shape) != t.shape:
                raise FormatError(f"tensor {name!r} has shape {arr.shape}, expected {t.shape}")
            t.data = arr.astype(self._dtype)
            t.grad = None
        for path, mod in self.named_modules():
            for key in mod._buffers:
                name = f"{path}.{key}" if path else key
                if name not in tensors:
                    raise FormatError(f"model file missing buffer {name!r}")
                arr = tensors[name]
                if tuple(arr.shape) != mod._buffers[key].shape:
                    raise FormatError(f"buffer {name!r} has shape {arr.shape}")
                mod._buffers[key] = arr.astype(self._dtype)

    @classmethod
    def from_state(cls, tensors: dict[str, np.ndarray], dtype=np.float32) -> "FertNet":
        if ARCH_KEY not in tensors:
            raise FormatError(f"model file missing {ARCH_KEY!r}")
        stage_blocks = tuple(int(round(v)) for v in np.asarray(tensors[ARCH_KEY]).ravel())
        net = cls(stage_blocks=stage_blocks, rng=0, dtype=dtype)
        net.load_state(tensors)
        return net
