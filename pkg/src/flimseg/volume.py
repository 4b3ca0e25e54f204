"""Dense volume containers: multi-channel scalar grids and kernel banks.

A Volume is a channel-major float32 array over a 2D or 3D grid. Spatial
axes are stored C-order (last axis fastest); ``dims`` is the spatial shape
and matches ``data.shape[1:]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


def _as_tuple(value, ndim: int, name: str) -> tuple:
    if np.isscalar(value):
        return (value,) * ndim
    t = tuple(value)
    if len(t) != ndim:
        raise ValueError(f"{name} must have {ndim} entries, got {len(t)}")
    return t


@dataclass
class Volume:
    """Multi-channel scalar grid with physical spacing.

    data is float32, shape (channels, *dims). channels may be 0 only for
    the degenerate operand of concat_channels.
    """

    data: np.ndarray
    spacing: tuple[float, ...] = ()

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.dtype != np.float32:
            self.data = self.data.astype(np.float32)
        if self.data.ndim not in (3, 4):
            raise ShapeError(
                f"volume data must be (channels, *dims) over 2 or 3 spatial axes, got shape {self.data.shape}"
            )
        if not self.spacing:
            self.spacing = (1.0,) * self.ndim
        self.spacing = tuple(float(s) for s in _as_tuple(self.spacing, self.ndim, "spacing"))
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("volume data contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape[1:]

    @property
    def ndim(self) -> int:
        return self.data.ndim - 1

    def channel(self, c: int) -> np.ndarray:
        return self.data[c]

    def copy(self) -> "Volume":
        return Volume(self.data.copy(), self.spacing)

    @staticmethod
    def from_channels(planes, spacing=()) -> "Volume":
        return Volume(np.stack([np.asarray(p, dtype=np.float32) for p in planes]), spacing)


@dataclass
class LabelVolume:
    """Per-voxel class labels: 0 BG, 1 ED, 2 ET, 3 NC."""

    labels: np.ndarray
    spacing: tuple[float, ...] = ()

    N_CLASSES = 4

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.dtype != np.uint8:
            lab = np.asarray(self.labels)
            if not np.all(np.equal(np.mod(lab, 1), 0)):
                raise ValueError("labels must be integers")
            self.labels = lab.astype(np.uint8)
        if self.labels.ndim not in (2, 3):
            raise ShapeError(f"label volume must have 2 or 3 spatial axes, got shape {self.labels.shape}")
        if self.labels.max(initial=0) >= self.N_CLASSES:
            raise ValueError(f"labels must be < {self.N_CLASSES}")
        if not self.spacing:
            self.spacing = (1.0,) * self.labels.ndim
        self.spacing = tuple(float(s) for s in _as_tuple(self.spacing, self.labels.ndim, "spacing"))

    @property
    def dims(self) -> tuple[int, ...]:
        return self.labels.shape

    def to_volume(self) -> Volume:
        return Volume(self.labels[None].astype(np.float32), self.spacing)

    @staticmethod
    def from_volume(vol: Volume) -> "LabelVolume":
        if vol.channels != 1:
            raise ShapeError(f"label volume file must have 1 channel, got {vol.channels}")
        lab = vol.data[0]
        rounded = np.rint(lab)
        if not np.allclose(lab, rounded, atol=1e-3):
            raise ValueError("label volume payload is not integer-valued")
        return LabelVolume(rounded.astype(np.uint8), vol.spacing)


@dataclass
class KernelBank:
    """A bank of convolution filters sharing one kernel extent.

    weights has shape (count, in_channels, *kernel_extent); all extents odd.
    """

    weights: np.ndarray
    bias: np.ndarray | None = None
    kernel_extent: tuple[int, ...] = field(default=(), repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        if self.weights.dtype != np.float32:
            self.weights = self.weights.astype(np.float32)
        if self.weights.ndim < 3:
            raise ShapeError(
                f"kernel weights must be (count, in_channels, *extent), got shape {self.weights.shape}"
            )
        extent = self.weights.shape[2:]
        if any(e < 1 or e % 2 == 0 for e in extent):
            raise ValueError(f"kernel extents must be odd and positive, got {extent}")
        self.kernel_extent = extent
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("kernel weights contain non-finite values")
        if self.bias is None:
            self.bias = np.zeros(self.count, dtype=np.float32)
        self.bias = np.asarray(self.bias, dtype=np.float32)
        if self.bias.shape != (self.count,):
            raise ShapeError(f"bias must have shape ({self.count},), got {self.bias.shape}")

    @property
    def count(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def ndim(self) -> int:
        return self.weights.ndim - 2

    def filter_norms(self) -> np.ndarray:
        flat = self.weights.reshape(self.count, -1).astype(np.float64)
        return np.linalg.norm(flat, axis=1)
