"""Slice extraction and PNG rendering for the viewer."""
from __future__ import annotations

import io

import numpy as np
from PIL import Image

from ..errors import ShapeError
from ..volume import Volume

# label -> RGB used for GT and prediction overlays
LABEL_COLORS = {1: (80, 200, 120), 2: (235, 80, 60), 3: (90, 140, 235)}
BINARY_COLOR = (250, 210, 60)
ALPHA = 0.5


def slice_plane(data: np.ndarray, axis: int, index: int) -> np.ndarray:
    """2D plane from a 2D or 3D array; IndexError on bad axis/index."""
    if data.ndim == 2:
        if axis != 0:
            raise IndexError(f"2D volumes only expose axis 0, got {axis}")
        if not 0 <= index < 1:
            raise IndexError(f"index {index} out of range for a single plane")
        return data
    if not 0 <= axis < data.ndim:
        raise IndexError(f"axis {axis} out of range for {data.ndim}D volume")
    if not 0 <= index < data.shape[axis]:
        raise IndexError(f"index {index} out of range [0, {data.shape[axis]})")
    return np.take(data, index, axis=axis)


def window_level(plane: np.ndarray) -> np.ndarray:
    """Scale to uint8 over the [p1, p99] percentile window."""
    lo, hi = np.percentile(plane, [1.0, 99.0])
    if hi <= lo:
        return np.zeros(plane.shape, dtype=np.uint8)
    scaled = (plane.astype(np.float64) - lo) / (hi - lo)
    return (np.clip(scaled, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def render_png(
    gray: np.ndarray,
    label_overlay: np.ndarray | None = None,
    binary_overlay: np.ndarray | None = None,
) -> bytes:
    """8-bit grayscale PNG; overlays alpha-blend color onto the plane.

    label_overlay carries class codes (colored per LABEL_COLORS);
    binary_overlay is a boolean mask (single color).
    """
    if gray.dtype != np.uint8:
        raise ShapeError("render_png expects a window-leveled uint8 plane")
    if label_overlay is None and binary_overlay is None:
        img = Image.fromarray(gray, mode="L")
    else:
        rgb = np.stack([gray, gray, gray], axis=-1).astype(np.float64)
        if label_overlay is not None:
            if label_overlay.shape != gray.shape:
                raise ShapeError(
                    f"overlay shape {label_overlay.shape} vs plane {gray.shape}"
                )
            for code, color in LABEL_COLORS.items():
                mask = label_overlay == code
                rgb[mask] = (1 - ALPHA) * rgb[mask] + ALPHA * np.array(color)
        if binary_overlay is not None:
            if binary_overlay.shape != gray.shape:
                raise ShapeError(
                    f"overlay shape {binary_overlay.shape} vs plane {gray.shape}"
                )
            rgb[binary_overlay] = (
                (1 - ALPHA) * rgb[binary_overlay] + ALPHA * np.array(BINARY_COLOR)
            )
        img = Image.fromarray(rgb.round().astype(np.uint8), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def volume_slice_png(
    vol: Volume,
    axis: int,
    index: int,
    label_overlay: np.ndarray | None = None,
    binary_overlay: np.ndarray | None = None,
) -> bytes:
    plane = slice_plane(vol.data[0], axis, index)
    lab = slice_plane(label_overlay, axis, index) if label_overlay is not None else None
    binm = slice_plane(binary_overlay, axis, index) if binary_overlay is not None else None
    return render_png(window_level(plane), lab, binm)
