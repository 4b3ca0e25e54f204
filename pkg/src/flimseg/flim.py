"""Learn encoder layers directly from image markers; no backpropagation.

Filters are cluster centers of patches sampled at user-marked voxels.
Per-marker k-means keeps every scribble represented; a second reduction
k-means caps the bank size. All learning is deterministic under a seed
and invariant to the order images are supplied in.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import NoMarkersError, ShapeError
from .kernels import conv_same, max_pool, relu
from .validation import as_extent, check_coordinate
from .volume import KernelBank, Volume

OBJECT = "object"
BACKGROUND = "background"
STDEV_FLOOR = 1e-6


@dataclass(frozen=True)
class MarkerEntry:
    coord: tuple[int, ...]
    marker_id: int
    tag: str

    def __post_init__(self):
        if self.tag not in (OBJECT, BACKGROUND):
            raise ValueError(f"marker tag must be object or background, got {self.tag!r}")
        if self.marker_id < 1:
            raise ValueError(f"marker_id must be >= 1, got {self.marker_id}")
        object.__setattr__(self, "coord", tuple(int(c) for c in self.coord))


@dataclass
class MarkerSet:
    """User scribbles on one image, grouped by marker id."""

    image_id: str
    entries: list[MarkerEntry] = field(default_factory=list)

    def __post_init__(self):
        tags = {}
        for e in self.entries:
            if tags.setdefault(e.marker_id, e.tag) != e.tag:
                raise ValueError(f"marker {e.marker_id} mixes object and background entries")

    def marker_ids(self) -> list[int]:
        return sorted({e.marker_id for e in self.entries})

    def tag_of(self, marker_id: int) -> str:
        for e in self.entries:
            if e.marker_id == marker_id:
                return e.tag
        raise KeyError(marker_id)

    def coords_of(self, marker_id: int) -> list[tuple[int, ...]]:
        return [e.coord for e in self.entries if e.marker_id == marker_id]

    def has_object(self) -> bool:
        return any(e.tag == OBJECT for e in self.entries)

    def validate_bounds(self, dims) -> None:
        for i, e in enumerate(self.entries):
            check_coordinate(e.coord, dims, f" (marker entry {i})")


@dataclass
class NormParams:
    """Per-channel z-score statistics from marker voxels only."""

    mean: np.ndarray
    stdev: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float32).reshape(-1)
        self.stdev = np.asarray(self.stdev, dtype=np.float32).reshape(-1)
        if self.mean.shape != self.stdev.shape:
            raise ShapeError("mean and stdev must have the same length")
        if np.any(self.stdev <= 0):
            raise ValueError("stdev must be positive (floor at 1e-6)")


@dataclass
class LayerSpec:
    kernel_extent: int | tuple[int, ...] = 3
    filters_per_marker: int = 3
    total_filters: int = 32
    pool_window: int | tuple[int, ...] = 2
    pool_stride: int | tuple[int, ...] = 2
    activation: str = "relu"

    def __post_init__(self):
        if self.filters_per_marker < 1:
            raise ValueError("filters_per_marker must be >= 1")
        if self.total_filters < 1:
            raise ValueError("total_filters must be >= 1")
        ext = (self.kernel_extent,) if np.isscalar(self.kernel_extent) else self.kernel_extent
        if any(e < 1 or e % 2 == 0 for e in ext):
            raise ValueError(f"kernel extents must be odd, got {self.kernel_extent}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")


@dataclass(frozen=True)
class FilterProvenance:
    image_id: str
    marker_id: int
    cluster_index: int


@dataclass
class EncoderLayer:
    norm: NormParams
    bank: KernelBank
    pool_window: tuple[int, ...]
    pool_stride: tuple[int, ...]
    provenance: list[FilterProvenance]
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.provenance) != self.bank.count:
            raise ValueError("provenance must cover every filter")


def marker_seed(seed: int, image_id: str, marker_id: int) -> int:
    """Deterministic per-marker seed, independent of image supply order."""
    h = hashlib.blake2b(f"{image_id}\x1f{marker_id}".encode(), digest_size=8).digest()
    return (int(seed) ^ int.from_bytes(h, "little")) & 0x7FFFFFFFFFFFFFFF


def marker_stats(images: list[Volume], markers: list[MarkerSet]) -> NormParams:
    """Per-channel mean/stdev over the multiset of marker voxels (population)."""
    if len(images) != len(markers):
        raise ValueError("images and marker sets must be aligned")
    pairs = sorted(zip(images, markers), key=lambda p: p[1].image_id)
    channels = None
    values = []
    for img, ms in pairs:
        if channels is None:
            channels = img.channels
        elif img.channels != channels:
            raise ShapeError("all images must share a channel count")
        if not ms.entries:
            continue
        ms.validate_bounds(img.dims)
        idx = tuple(np.array([e.coord[a] for e in ms.entries]) for a in range(img.ndim))
        values.append(img.data[(slice(None),) + idx].astype(np.float64))
    if not values:
        raise NoMarkersError("no marker voxels in any image")
    allv = np.concatenate(values, axis=1)
    mean = allv.mean(axis=1)
    stdev = np.maximum(allv.std(axis=1), STDEV_FLOOR)
    return NormParams(mean, stdev)


def normalize(vol: Volume, norm: NormParams) -> Volume:
    if vol.channels != norm.mean.shape[0]:
        raise ShapeError(
            f"volume has {vol.channels} channels, norm params have {norm.mean.shape[0]}"
        )
    shape = (-1,) + (1,) * vol.ndim
    out = (vol.data - norm.mean.reshape(shape)) / norm.stdev.reshape(shape)
    return Volume(out, vol.spacing)


def extract_patches(
    image: Volume, norm: NormParams, markers: MarkerSet, extent
) -> list[tuple[int, np.ndarray]]:
    """One flattened patch per marker voxel, centered there, zero-padded at borders."""
    if not markers.entries:
        raise NoMarkersError(f"marker set for {markers.image_id} is empty")
    extent = as_extent(extent, image.ndim, "extent")
    if any(e % 2 == 0 for e in extent):
        raise ValueError(f"patch extent must be odd, got {extent}")
    markers.validate_bounds(image.dims)
    normed = normalize(image, norm)
    half = [(e - 1) // 2 for e in extent]
    pad = [(0, 0)] + [(h, h) for h in half]
    padded = np.pad(normed.data, pad)
    out = []
    for e in markers.entries:
        slicer = (slice(None),) + tuple(
            slice(c, c + ext) for c, ext in zip(e.coord, extent)
        )
        out.append((e.marker_id, padded[slicer].reshape(-1).copy()))
    return out


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    objective: float
    n_iter: int
    k_requested: int
    k_used: int
    objective_history: list[float]


def kmeans(points, k: int, seed: int, max_iter: int = 100) -> KMeansResult:
    """Lloyd's algorithm with seeded k-means++ init.

    Stops when assignments are stable or after max_iter sweeps. k is clamped
    to the number of distinct points and the clamp is reported in the result.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if n == 0:
        raise ValueError("kmeans needs at least one point")
    if k < 1:
        raise ValueError("k must be >= 1")
    n_distinct = np.unique(pts, axis=0).shape[0]
    k_used = min(k, n_distinct)
    rng = np.random.default_rng(seed)

    centroids = np.empty((k_used, pts.shape[1]))
    centroids[0] = pts[rng.integers(n)]
    d2 = ((pts - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k_used):
        total = d2.sum()
        probs = d2 / total
        centroids[j] = pts[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((pts - centroids[j]) ** 2).sum(axis=1))

    prev_assign = None
    history: list[float] = []
    assign = np.zeros(n, dtype=np.int64)
    for it in range(max_iter):
        dist2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = dist2.argmin(axis=1)
        for j in range(k_used):
            members = assign == j
            if members.any():
                centroids[j] = pts[members].mean(axis=0)
        obj = float(((pts - centroids[assign]) ** 2).sum())
        history.append(obj)
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign
    return KMeansResult(
        centroids=centroids,
        assignment=assign,
        objective=history[-1],
        n_iter=len(history),
        k_requested=k,
        k_used=k_used,
        objective_history=history,
    )


def learn_layer(
    images: list[Volume], markersets: list[MarkerSet], spec: LayerSpec, seed: int
) -> EncoderLayer:
    """Synthesize one encoder layer from marker patches.

    Per (image, marker): k-means with k = filters_per_marker over that
    marker's patches; pooled centroids reduced by a second k-means when they
    exceed total_filters; every surviving filter is L2-normalized.
    """
    if len(images) != len(markersets):
        raise ValueError("images and marker sets must be aligned")
    pairs = sorted(zip(images, markersets), key=lambda p: p[1].image_id)
    if not any(ms.has_object() for _, ms in pairs):
        raise NoMarkersError("at least one object marker is required")
    tags_used = {e.tag for _, ms in pairs for e in ms.entries}
    if spec.total_filters < len(tags_used):
        raise ValueError(
            f"total_filters={spec.total_filters} is below the {len(tags_used)} distinct marker tags"
        )
    ndim = images[0].ndim
    extent = as_extent(spec.kernel_extent, ndim, "kernel_extent")

    norm = marker_stats([img for img, _ in pairs], [ms for _, ms in pairs])
    centroid_rows = []
    provenance = []
    notes: list[str] = []
    for img, ms in pairs:
        if not ms.entries:
            continue
        patches = extract_patches(img, norm, ms, extent)
        by_marker: dict[int, list[np.ndarray]] = {}
        for mid, patch in patches:
            by_marker.setdefault(mid, []).append(patch)
        for mid in sorted(by_marker):
            result = kmeans(
                np.stack(by_marker[mid]),
                spec.filters_per_marker,
                marker_seed(seed, ms.image_id, mid),
            )
            if result.k_used < result.k_requested:
                notes.append(
                    f"marker ({ms.image_id},{mid}): k clamped {result.k_requested}->{result.k_used}"
                )
            for j in range(result.k_used):
                centroid_rows.append(result.centroids[j])
                provenance.append(FilterProvenance(ms.image_id, mid, j))

    pool = np.stack(centroid_rows)
    if pool.shape[0] > spec.total_filters:
        reduction = kmeans(pool, spec.total_filters, marker_seed(seed, "__reduce__", 0))
        reduced = reduction.centroids
        # each reduced filter inherits the record of its nearest source centroid
        new_prov = []
        for j in range(reduced.shape[0]):
            members = np.where(reduction.assignment == j)[0]
            cand = members if members.size else np.arange(pool.shape[0])
            d = ((pool[cand] - reduced[j]) ** 2).sum(axis=1)
            new_prov.append(provenance[int(cand[int(d.argmin())])])
        notes.append(f"reduced {pool.shape[0]} centroids to {reduced.shape[0]}")
        pool, provenance = reduced, new_prov

    norms = np.linalg.norm(pool, axis=1)
    keep = norms > 1e-12
    if not keep.all():
        dropped = [provenance[i] for i in np.where(~keep)[0]]
        notes.append(f"dropped {len(dropped)} zero-norm centroid(s): {dropped}")
        pool = pool[keep]
        provenance = [p for p, k in zip(provenance, keep) if k]
    if pool.shape[0] == 0:
        raise ValueError("all centroids were zero-norm; no filters learned")
    pool = pool / np.linalg.norm(pool, axis=1, keepdims=True)

    channels = images[0].channels
    weights = pool.reshape((pool.shape[0], channels) + extent).astype(np.float32)
    bank = KernelBank(weights)
    return EncoderLayer(
        norm=norm,
        bank=bank,
        pool_window=as_extent(spec.pool_window, ndim, "pool_window"),
        pool_stride=as_extent(spec.pool_stride, ndim, "pool_stride"),
        provenance=provenance,
        notes=notes,
    )


def run_layer(vol: Volume, layer: EncoderLayer) -> tuple[Volume, Volume]:
    """Returns (pre_pool, pooled); skip connections tap pre_pool."""
    pre = relu(conv_same(normalize(vol, layer.norm), layer.bank))
    pooled = max_pool(pre, layer.pool_window, layer.pool_stride)
    return pre, pooled


@dataclass
class EncoderOutput:
    pre_pools: list[Volume]
    pooled: Volume


def run_encoder(vol: Volume, layers: list[EncoderLayer]) -> EncoderOutput:
    pre_pools = []
    current = vol
    for layer in layers:
        pre, current = run_layer(current, layer)
        pre_pools.append(pre)
    return EncoderOutput(pre_pools=pre_pools, pooled=current)


def downscale_markers(markers: MarkerSet, stride, new_dims) -> MarkerSet:
    """Map marker coordinates through one pooling: floor-divide, clamp, dedupe."""
    stride = as_extent(stride, len(new_dims), "stride")
    seen = set()
    entries = []
    for e in markers.entries:
        coord = tuple(
            min(c // s, d - 1) for c, s, d in zip(e.coord, stride, new_dims)
        )
        key = (coord, e.marker_id)
        if key in seen:
            continue
        seen.add(key)
        entries.append(MarkerEntry(coord, e.marker_id, e.tag))
    return MarkerSet(markers.image_id, entries)


def learn_encoder(
    images: list[Volume],
    markersets: list[MarkerSet],
    specs: list[LayerSpec],
    seed: int,
    existing: list[EncoderLayer] | None = None,
) -> list[EncoderLayer]:
    """Learn layers sequentially; each layer consumes the previous pooled output.

    existing layers (e.g. a layer 1 learned during selection) are kept and
    only the remaining specs are learned.
    """
    layers = list(existing or [])
    feats = list(images)
    marks = list(markersets)
    for layer in layers:
        next_feats, next_marks = [], []
        for vol, ms in zip(feats, marks):
            _, pooled = run_layer(vol, layer)
            next_feats.append(pooled)
            next_marks.append(downscale_markers(ms, layer.pool_stride, pooled.dims))
        feats, marks = next_feats, next_marks
    for spec in specs[len(layers):]:
        layer = learn_layer(feats, marks, spec, seed)
        layers.append(layer)
        next_feats, next_marks = [], []
        for vol, ms in zip(feats, marks):
            _, pooled = run_layer(vol, layer)
            next_feats.append(pooled)
            next_marks.append(downscale_markers(ms, layer.pool_stride, pooled.dims))
        feats, marks = next_feats, next_marks
    return layers
