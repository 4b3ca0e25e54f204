"""Dense numeric kernels: convolution, activation, pooling, upsampling.

All operations are pure, dimension-generic (2D and 3D share one code
path), and keep float32 storage with float64 accumulation inside the
convolution reduction.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .validation import as_extent, check_bank_compatible, check_same_spatial, check_volume
from .volume import KernelBank, Volume


def conv_same(vol: Volume, bank: KernelBank) -> Volume:
    """Cross-correlate every filter with the input, zero padding to keep dims.

    output[f] = sum_c (input[c] (x) weights[f, c]) + bias[f]
    """
    check_volume(vol)
    check_bank_compatible(vol, bank)
    nd = vol.ndim
    pad = [(0, 0)] + [((e - 1) // 2, (e - 1) // 2) for e in bank.kernel_extent]
    padded = np.pad(vol.data.astype(np.float64), pad)
    windows = sliding_window_view(padded, bank.kernel_extent, axis=tuple(range(1, nd + 1)))
    # windows: (c, *dims, *extent); contract channel and kernel axes
    w64 = bank.weights.astype(np.float64)
    axes_w = [1] + list(range(2, 2 + nd))
    axes_x = [0] + list(range(1 + nd, 1 + 2 * nd))
    out = np.tensordot(w64, windows, axes=(axes_w, axes_x))
    out += bank.bias.astype(np.float64).reshape((-1,) + (1,) * nd)
    return Volume(out.astype(np.float32), vol.spacing)


def relu(vol: Volume) -> Volume:
    check_volume(vol)
    return Volume(np.maximum(vol.data, 0), vol.spacing)


def max_pool(vol: Volume, window, stride) -> Volume:
    """Per-channel max over non-padded windows.

    Output dim per axis = floor((dim - window) / stride) + 1.
    """
    check_volume(vol)
    nd = vol.ndim
    window = as_extent(window, nd, "window")
    stride = as_extent(stride, nd, "stride")
    for d, w in zip(vol.dims, window):
        if w > d:
            raise ShapeError(f"pool window {window} exceeds input extent {vol.dims}")
    views = sliding_window_view(vol.data, window, axis=tuple(range(1, nd + 1)))
    slicer = (slice(None),) + tuple(slice(None, None, s) for s in stride)
    views = views[slicer]
    out = views.max(axis=tuple(range(1 + nd, 1 + 2 * nd)))
    spacing = tuple(sp * s for sp, s in zip(vol.spacing, stride))
    return Volume(np.ascontiguousarray(out), spacing)


def upsample_nearest(vol: Volume, factor) -> Volume:
    """Replicate each voxel factor times along every spatial axis."""
    check_volume(vol)
    factor = as_extent(factor, vol.ndim, "factor")
    out = vol.data
    for axis, f in enumerate(factor, start=1):
        if f > 1:
            out = np.repeat(out, f, axis=axis)
    spacing = tuple(sp / f for sp, f in zip(vol.spacing, factor))
    return Volume(out, spacing)


def concat_channels(a: Volume, b: Volume) -> Volume:
    """Stack b's channels after a's; spatial dims must agree."""
    check_volume(a, "a")
    check_volume(b, "b")
    check_same_spatial(a, b, "concat operands")
    return Volume(np.concatenate([a.data, b.data], axis=0), a.spacing)
