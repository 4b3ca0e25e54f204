"""Input validation helpers shared by kernels, estimators, and the service."""
from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .volume import KernelBank, LabelVolume, Volume


def check_volume(vol, name: str = "input") -> Volume:
    if not isinstance(vol, Volume):
        raise TypeError(f"{name} must be a Volume, got {type(vol).__name__}")
    return vol


def check_same_spatial(a: Volume, b: Volume, what: str = "volumes") -> None:
    if a.dims != b.dims:
        raise ShapeError(f"{what} have mismatched spatial dims: {a.dims} vs {b.dims}")


def check_mask(mask, dims=None, name: str = "mask") -> np.ndarray:
    m = np.asarray(mask)
    if m.dtype != np.bool_:
        m = m.astype(bool)
    if dims is not None and m.shape != tuple(dims):
        raise ShapeError(f"{name} has shape {m.shape}, expected {tuple(dims)}")
    return m


def check_bank_compatible(vol: Volume, bank: KernelBank) -> None:
    if vol.channels != bank.in_channels:
        raise ShapeError(
            f"input has {vol.channels} channels but bank expects {bank.in_channels}"
        )
    if bank.ndim != vol.ndim:
        raise ShapeError(f"bank is {bank.ndim}D but input is {vol.ndim}D")
    for d, e in zip(vol.dims, bank.kernel_extent):
        if d < e:
            raise ShapeError(f"kernel extent {bank.kernel_extent} exceeds input dims {vol.dims}")


def check_labels(lab, name: str = "labels") -> LabelVolume:
    if not isinstance(lab, LabelVolume):
        raise TypeError(f"{name} must be a LabelVolume, got {type(lab).__name__}")
    return lab


def check_coordinate(coord, dims, context: str = "") -> tuple[int, ...]:
    c = tuple(int(x) for x in coord)
    if len(c) != len(dims):
        raise ValueError(f"coordinate {c} has {len(c)} axes, volume has {len(dims)}{context}")
    for x, d in zip(c, dims):
        if x < 0 or x >= d:
            raise ValueError(f"coordinate {c} outside volume bounds {tuple(dims)}{context}")
    return c


def as_extent(value, ndim: int, name: str = "extent") -> tuple[int, ...]:
    if np.isscalar(value):
        t = (int(value),) * ndim
    else:
        t = tuple(int(v) for v in value)
    if len(t) != ndim:
        raise ValueError(f"{name} needs {ndim} entries, got {len(t)}")
    if any(v < 1 for v in t):
        raise ValueError(f"{name} entries must be >= 1, got {t}")
    return t
