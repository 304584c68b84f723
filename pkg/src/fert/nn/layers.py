"""Layers with explicit forward/backward passes.

Every layer caches what its backward needs during forward, so each
instance handles one forward/backward pair at a time. Convolution is
cross-correlation (no kernel flip) done as one tensordot per kernel
offset; on a single core that beats the im2col matmul because it never
materializes the k*k-times-larger column matrix. Activations are
[batch][channels][height][width] everywhere.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError
from .tensor import Tensor, he_uniform, ones, zeros


def _walk(val, prefix):
    if isinstance(val, Tensor):
        yield prefix, val
    elif isinstance(val, Module):
        yield from val.named_parameters(prefix + ".")
    elif isinstance(val, (list, tuple)):
        for i, item in enumerate(val):
            yield from _walk(item, f"{prefix}.{i}")


class Module:
    """Base layer: recursive parameter/buffer discovery over public attributes."""

    def __init__(self):
        self._buffers: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def named_parameters(self, prefix: str = ""):
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            yield from _walk(val, prefix + name)

    def named_modules(self, prefix: str = ""):
        """Yield (dotted path, module) pairs; the root has path ''."""
        yield prefix.rstrip("."), self
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(val, Module):
                yield from val.named_modules(prefix + name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{name}.{i}.")

    def named_buffers(self):
        for path, mod in self.named_modules():
            for key, arr in mod._buffers.items():
                yield (f"{path}.{key}" if path else key), arr

    def decision_state(self):
        """Discrete choices the last forward made (ReLU signs, pool argmax).

        Gradient checking uses this to spot probes that straddle a kink,
        where a central difference measures nothing. Smooth layers return
        None.
        """
        return None

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()


class Conv2d(Module):
    """3x3 cross-correlation by default; stride and padding support the head blocks."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        kernel: int = 3,
        stride: int = 1,
        padding: int = 1,
        dtype=np.float32,
    ):
        super().__init__()
        if stride not in (1, 2):
            raise ConfigError(f"conv stride must be 1 or 2, got {stride}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        self.weight = he_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in, dtype)
        self.bias = zeros((out_channels,), dtype)
        self._xp = None
        self._x_shape = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"conv2d expects [n][{self.in_channels}][h][w], got {x.shape}"
            )
        x = np.ascontiguousarray(x, dtype=self.weight.dtype)
        k, s, p = self.kernel, self.stride, self.padding
        n, c, h, w = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        oh = (h + 2 * p - k) // s + 1
        ow = (w + 2 * p - k) // s + 1
        self._xp = xp
        self._x_shape = x.shape
        # Accumulate channel-last so each tensordot lands without a transpose.
        out = np.empty((n, oh, ow, self.out_channels), dtype=x.dtype)
        out[:] = self.bias.data
        for i in range(k):
            for j in range(k):
                sl = xp[:, :, i : i + s * oh : s, j : j + s * ow : s]
                out += np.tensordot(sl, self.weight.data[:, :, i, j], axes=([1], [1]))
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(self, grad: np.ndarray) -> np.ndarray:
        n, _, oh, ow = grad.shape
        k, s, p = self.kernel, self.stride, self.padding
        xp = self._xp
        _, c, h, w = self._x_shape
        dW = np.empty_like(self.weight.data)
        dxp = np.zeros((n, xp.shape[1], xp.shape[2], xp.shape[3]), dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                sl = xp[:, :, i : i + s * oh : s, j : j + s * ow : s]
                dW[:, :, i, j] = np.tensordot(grad, sl, axes=([0, 2, 3], [0, 2, 3]))
                dsl = np.tensordot(grad, self.weight.data[:, :, i, j], axes=([1], [0]))
                dxp[:, :, i : i + s * oh : s, j : j + s * ow : s] += dsl.transpose(0, 3, 1, 2)
        self.weight.add_grad(dW)
        self.bias.add_grad(grad.sum(axis=(0, 2, 3)))
        self._xp = None
        return dxp[:, :, p : p + h, p : p + w] if p else dxp


class BatchNorm2d(Module):
    """Per-channel batch normalization over (batch, height, width).

    Running statistics are an exponential moving average during normal
    training. After a short run that average still carries a visible share
    of the unit-variance init, which wrecks eval-mode accuracy, so the
    layer also supports a refresh pass: between begin_stat_refresh() and
    end_stat_refresh(), train-mode forwards rebuild the buffers as a plain
    cumulative average of the batch statistics they see.
    """

    def __init__(self, channels: int, rng=None, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = ones((channels,), dtype)
        self.beta = zeros((channels,), dtype)
        self._buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self._buffers["running_var"] = np.ones(channels, dtype=dtype)
        self._cache = None
        self._refresh = None  # batches seen in the current refresh pass

    def begin_stat_refresh(self) -> None:
        self._refresh = 0

    def end_stat_refresh(self) -> None:
        self._refresh = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm expects [n][{self.channels}][h][w], got {x.shape}")
        x = x.astype(self.gamma.dtype, copy=False)
        if train:
            if x.shape[0] < 2:
                raise ConfigError("batchnorm in train mode needs batch size >= 2")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            if self._refresh is not None:
                # momentum 1/t turns the moving average into a cumulative one,
                # and the t=1 step overwrites whatever the buffers held
                self._refresh += 1
                m = 1.0 / self._refresh
            else:
                m = self.momentum
            self._buffers["running_mean"] = ((1 - m) * self._buffers["running_mean"] + m * mean).astype(x.dtype)
            self._buffers["running_var"] = ((1 - m) * self._buffers["running_var"] + m * var).astype(x.dtype)
        else:
            mean = self._buffers["running_mean"]
            var = self._buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std, train)
        return self.gamma.data[None, :, None, None] * xhat + self.beta.data[None, :, None, None]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        xhat, inv_std, train = self._cache
        self._cache = None
        axes = (0, 2, 3)
        self.gamma.add_grad((grad * xhat).sum(axis=axes))
        self.beta.add_grad(grad.sum(axis=axes))
        dxhat = grad * self.gamma.data[None, :, None, None]
        scale = inv_std[None, :, None, None]
        if not train:
            return dxhat * scale
        m = grad.shape[0] * grad.shape[2] * grad.shape[3]
        mean_dxhat = dxhat.mean(axis=axes, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes, keepdims=True)
        return scale * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)


class ReLU(Module):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        mask = self._mask
        self._mask = None
        return grad * mask

    def decision_state(self):
        return self._mask


class MaxPool2x2(Module):
    """2x2 max pooling, stride 2. Ties resolve to the first maximum in row-major order."""

    def __init__(self):
        super().__init__()
        self._cache = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2x2 needs even spatial dims, got {x.shape}")
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, h // 2, w // 2, 4
        )
        idx = win.argmax(axis=-1)
        self._cache = (idx, x.shape)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        idx, (n, c, h, w) = self._cache
        self._cache = None
        dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad.dtype)
        np.put_along_axis(dwin, idx[..., None], grad[..., None], axis=-1)
        return (
            dwin.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )

    def decision_state(self):
        return None if self._cache is None else self._cache[0]


class GlobalAvgPool(Module):
    """Mean over the spatial dims: [n][c][h][w] -> [n][c]."""

    def __init__(self):
        super().__init__()
        self._hw = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._hw = x.shape[2:]
        return x.mean(axis=(2, 3))

    def backward(self, grad: np.ndarray) -> np.ndarray:
        h, w = self._hw
        self._hw = None
        return np.broadcast_to(grad[:, :, None, None] / (h * w), grad.shape + (h, w)).copy()


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.weight = he_uniform(rng, (in_features, out_features), in_features, dtype)
        self.bias = zeros((out_features,), dtype)
        self._x = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"linear expects [n][{self.in_features}], got {x.shape}")
        x = x.astype(self.weight.dtype, copy=False)
        self._x = x
        return x @ self.weight.data + self.bias.data

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x = self._x
        self._x = None
        self.weight.add_grad(x.T @ grad)
        self.bias.add_grad(grad.sum(axis=0))
        return grad @ self.weight.data.T


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Concatenate along the channel axis; backward is split_channels."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concat {a.shape} with {b.shape}")
    return np.concatenate([a, b], axis=1)


def split_channels(grad: np.ndarray, first_channels: int) -> tuple[np.ndarray, np.ndarray]:
    return grad[:, :first_channels], grad[:, first_channels:]
