"""Image-selection criterion: Otsu-binarized activations scored by Dice.

Each remaining training image is scored per region (WT, ET) as the best
Dice any filter labeled good for that region achieves after Otsu
binarization of its activation map; the worst-scoring image is
recommended next.
"""
from __future__ import annotations

import io as _io
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstantInputError, NoLabeledFiltersError, ShapeError
from .validation import check_mask, check_volume
from .volume import Volume

GOOD_WT = "good_WT"
GOOD_ET = "good_ET"
NONE_LABEL = "none"
LABELS = (GOOD_WT, GOOD_ET, NONE_LABEL)
REGIONS = ("WT", "ET")

OTSU_BINS = 256


def otsu_threshold(vol: Volume, channel: int) -> float:
    """Bin-edge threshold maximizing between-class variance over a 256-bin
    histogram spanning [min, max]; ties break toward the lowest edge."""
    check_volume(vol)
    if channel < 0 or channel >= vol.channels:
        raise ShapeError(f"channel {channel} not in volume with {vol.channels} channels")
    values = vol.data[channel].astype(np.float64).ravel()
    mn, mx = float(values.min()), float(values.max())
    if mn == mx:
        raise ConstantInputError("all values equal; Otsu threshold undefined")
    hist, edges = np.histogram(values, bins=OTSU_BINS, range=(mn, mx))
    centers = (edges[:-1] + edges[1:]) / 2.0
    total = hist.sum()
    w = np.cumsum(hist)[:-1]                      # class-0 mass at split i=1..255
    mu_partial = np.cumsum(hist * centers)[:-1]
    mu_total = (hist * centers).sum()
    valid = (w > 0) & (w < total)
    var = np.full(OTSU_BINS - 1, -1.0)
    mu0 = mu_partial[valid] / w[valid]
    mu1 = (mu_total - mu_partial[valid]) / (total - w[valid])
    var[valid] = (w[valid] / total) * ((total - w[valid]) / total) * (mu0 - mu1) ** 2
    best = int(np.argmax(var))                    # argmax takes the first max: lowest edge
    return float(edges[best + 1])


def binarize(vol: Volume, channel: int, threshold: float) -> np.ndarray:
    check_volume(vol)
    return vol.data[channel] > threshold


def dice_binary(a, b) -> float:
    """2|a n b| / (|a| + |b|); two empty masks score 1.0."""
    a = check_mask(a, name="a")
    b = check_mask(b, dims=a.shape, name="b")
    sa = int(a.sum())
    sb = int(b.sum())
    if sa + sb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / (sa + sb)


@dataclass
class ScoreRecord:
    image_id: str
    region: str
    best_filter_id: int
    dice: float
    threshold: float


@dataclass
class ImageScore:
    image_id: str
    records: list[ScoreRecord]
    aggregate: float
    rank: int = 0


@dataclass
class ScoreTable:
    rows: list[ImageScore] = field(default_factory=list)

    def __post_init__(self):
        self.sort()

    def sort(self):
        self.rows.sort(key=lambda r: (r.aggregate, r.image_id))
        for i, row in enumerate(self.rows):
            row.rank = i + 1

    def aggregates(self) -> dict[str, float]:
        return {r.image_id: r.aggregate for r in self.rows}

    def drop(self, image_id: str):
        self.rows = [r for r in self.rows if r.image_id != image_id]
        self.sort()

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf)
        w.writerow(["image_id", "region", "best_filter_id", "threshold", "dice", "aggregate", "rank"])
        for row in self.rows:
            for rec in row.records:
                w.writerow(
                    [row.image_id, rec.region, rec.best_filter_id,
                     f"{rec.threshold:.6g}", f"{rec.dice:.6f}", f"{row.aggregate:.6f}", row.rank]
                )
        return buf.getvalue()


def filters_for_region(annotations: dict[int, str], region: str) -> list[int]:
    label = GOOD_WT if region == "WT" else GOOD_ET
    return sorted(f for f, lab in annotations.items() if lab == label)


def score_image(
    activations: Volume,
    annotations: dict[int, str],
    gt_masks: dict[str, np.ndarray],
    image_id: str = "",
) -> ImageScore:
    """Score one image from its layer-1 activations.

    Per region, the score is the max Dice over that region's labeled filters
    (Otsu-binarized activation vs the region's GT mask); a constant
    activation contributes 0. The aggregate is the mean over regions that
    have at least one labeled filter.
    """
    if not any(lab in (GOOD_WT, GOOD_ET) for lab in annotations.values()):
        raise NoLabeledFiltersError("no filter labeled good_WT or good_ET")
    records = []
    region_scores = []
    for region in REGIONS:
        fids = filters_for_region(annotations, region)
        if not fids:
            continue
        gt = check_mask(gt_masks[region], dims=activations.dims, name=f"gt_{region}")
        best = None
        for fid in fids:
            if fid < 0 or fid >= activations.channels:
                raise ShapeError(f"filter id {fid} outside activation channels")
            try:
                thr = otsu_threshold(activations, fid)
                d = dice_binary(binarize(activations, fid, thr), gt)
            except ConstantInputError:
                thr, d = float(activations.data[fid].flat[0]), 0.0
            if best is None or d > best[1]:
                best = (fid, d, thr)
        records.append(ScoreRecord(image_id, region, best[0], best[1], best[2]))
        region_scores.append(best[1])
    aggregate = float(np.mean(region_scores))
    return ImageScore(image_id=image_id, records=records, aggregate=aggregate)


def rank_and_recommend(table: ScoreTable) -> str:
    """Worst image first: argmin aggregate, ties to the smallest image id."""
    if not table.rows:
        raise ValueError("score table is empty")
    table.sort()
    return table.rows[0].image_id


def chi2_histogram_distance(h1: np.ndarray, h2: np.ndarray, eps: float = 1e-12) -> float:
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    return float(0.5 * np.sum((h1 - h2) ** 2 / (h1 + h2 + eps)))


def suggest_first_image(volumes_by_id: dict[str, list[Volume]], bins: int = 64) -> str:
    """Suggest the most typical image: minimal mean chi-square distance
    between its per-channel intensity histograms and the dataset average."""
    if not volumes_by_id:
        raise ValueError("no images to suggest from")
    ids = sorted(volumes_by_id)
    n_channels = len(volumes_by_id[ids[0]])
    ranges = []
    for c in range(n_channels):
        lo = min(float(volumes_by_id[i][c].data.min()) for i in ids)
        hi = max(float(volumes_by_id[i][c].data.max()) for i in ids)
        ranges.append((lo, hi if hi > lo else lo + 1.0))
    hists = {}
    for i in ids:
        per_channel = []
        for c in range(n_channels):
            h, _ = np.histogram(volumes_by_id[i][c].data, bins=bins, range=ranges[c])
            total = h.sum()
            per_channel.append(h / total if total else h.astype(np.float64))
        hists[i] = per_channel
    avg = [np.mean([hists[i][c] for i in ids], axis=0) for c in range(n_channels)]
    best_id, best_d = None, None
    for i in ids:
        d = float(np.mean([chi2_histogram_distance(hists[i][c], avg[c]) for c in range(n_channels)]))
        if best_d is None or d < best_d:
            best_id, best_d = i, d
    return best_id
