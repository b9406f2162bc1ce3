"""Domain types shared by the functional model and the simulator.

Dense numpy arrays are the working representation everywhere; ``SpikeTensor``
and ``MaskTensor`` give the bit-packed storage form used for traffic
accounting and for round-tripping recorded tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class LifParams:
    """LIF neuron and surrogate-gradient parameters.

    ``alpha`` is the leakage factor, ``th_f`` the firing threshold,
    ``(th_l, th_r)`` the open window where the surrogate derivative equals
    ``beta``.
    """

    alpha: float = 0.5
    th_f: float = 0.5
    th_l: float = 0.0
    th_r: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.th_l < self.th_r:
            raise ConfigurationError(f"th_l ({self.th_l}) must be below th_r ({self.th_r})")
        if not self.beta > 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")


class MaskKind(str, Enum):
    SPIKE_GRAD = "spike-grad-mask"
    POT_GRAD = "pot-grad-mask"


@dataclass(frozen=True)
class SpikeTensor:
    """Binary tensor packed one bit per element, LSB-first within 8-bit words."""

    shape: tuple
    words: np.ndarray

    WORD_BITS = 8

    @classmethod
    def pack(cls, bits) -> "SpikeTensor":
        arr = np.asarray(bits)
        if arr.dtype != bool:
            if not np.isin(arr, (0, 1)).all():
                raise ConfigurationError("spike tensors hold only 0/1 values")
            arr = arr.astype(bool)
        words = np.packbits(arr.ravel(), bitorder="little")
        return cls(tuple(arr.shape), words)

    def unpack(self) -> np.ndarray:
        n = self.size
        return np.unpackbits(self.words, count=n, bitorder="little").astype(bool).reshape(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def nbytes(self) -> int:
        return math.ceil(self.size / self.WORD_BITS)

    def popcount(self) -> int:
        return int(np.unpackbits(self.words).sum())


@dataclass(frozen=True)
class MaskTensor(SpikeTensor):
    kind: MaskKind = MaskKind.SPIKE_GRAD

    @classmethod
    def pack(cls, bits, kind: MaskKind = MaskKind.SPIKE_GRAD) -> "MaskTensor":
        base = SpikeTensor.pack(bits)
        return cls(base.shape, base.words, MaskKind(kind))


class LayerKind(str, Enum):
    CONV = "conv"
    FC = "fc"
    AVGPOOL = "avgpool"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    is_encoding: bool = False
    pool: int = 0

    def __post_init__(self):
        if self.kind is LayerKind.AVGPOOL:
            if self.pool < 1:
                raise ConfigurationError("AvgPool needs a pool size >= 1")
            return
        if self.out_channels < 1:
            raise ConfigurationError("layer needs at least one output channel")
        if self.kernel < 1 or self.stride < 1:
            raise ConfigurationError("kernel and stride must be >= 1")

    @property
    def padding(self) -> int:
        return self.kernel // 2 if self.kind is LayerKind.CONV else 0

    def __str__(self):
        if self.kind is LayerKind.AVGPOOL:
            return f"AP{self.pool}"
        if self.kind is LayerKind.FC:
            return f"{self.out_channels}FC"
        s = f"{self.out_channels}C{self.kernel}"
        if self.stride != 1:
            s += f"S{self.stride}"
        if self.is_encoding:
            s += "(Encoding)"
        return s


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple  # (C, H, W)
    timesteps: int
    layers: tuple
    lif: LifParams = field(default_factory=LifParams)
    sub_batch: int = 4
    batch_group: int = 1

    def __post_init__(self):
        if self.timesteps < 1:
            raise ConfigurationError("T must be >= 1")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigurationError(f"input shape must be (C, H, W), got {self.input_shape}")
        if self.sub_batch < 1 or self.batch_group < 1:
            raise ConfigurationError("sub_batch and batch_group must be >= 1")
        if not any(l.kind is not LayerKind.AVGPOOL for l in self.layers):
            raise ConfigurationError("network needs at least one Conv or FC layer")
        if self.layers[-1].kind is LayerKind.AVGPOOL:
            raise ConfigurationError("network cannot end with a pooling layer")
        for i, layer in enumerate(self.layers):
            if layer.is_encoding and i != 0:
                raise ConfigurationError("only the first layer can be an encoding layer")

    @property
    def batch_size(self) -> int:
        return self.sub_batch * self.batch_group

    def describe(self) -> str:
        return "-".join(str(l) for l in self.layers)


def pooled_size(n: int, pool: int) -> int:
    # partial blocks are zero padded
    return -(-n // pool)


def conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    out = (n + 2 * pad - k) // stride + 1
    if out < 1:
        raise ConfigurationError(f"kernel {k} does not fit a size-{n} map with padding {pad}")
    return out


def check_shape(name: str, arr: np.ndarray, expected: Sequence[int]):
    if tuple(arr.shape) != tuple(expected):
        raise ConfigurationError(f"{name}: expected shape {tuple(expected)}, got {tuple(arr.shape)}")


def as_bits(x: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if x is None:
        return None
    return np.asarray(x).astype(bool)
