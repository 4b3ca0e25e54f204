"""Region algebra (WT/TC/ET) and DSC reporting."""
from __future__ import annotations

import io as _io
import csv
from dataclasses import dataclass

import numpy as np

from .criterion import dice_binary
from .errors import ShapeError
from .volume import LabelVolume

# label codes: 0 BG, 1 ED, 2 ET, 3 NC
REGION_LABELS = {"WT": (1, 2, 3), "TC": (2, 3), "ET": (2,)}
REGIONS = ("ET", "TC", "WT")


def region_mask(labels: LabelVolume, region: str) -> np.ndarray:
    if region not in REGION_LABELS:
        raise ValueError(f"unknown region {region!r}, expected one of {sorted(REGION_LABELS)}")
    return np.isin(labels.labels, REGION_LABELS[region])


@dataclass
class DscReport:
    per_image: dict[str, list[float]]       # region -> one DSC per image pair
    image_ids: list[str]

    def mean(self, region: str) -> float:
        return float(np.mean(self.per_image[region]))

    def std(self, region: str) -> float:
        # population std, ddof=0
        return float(np.std(self.per_image[region]))

    def summary(self) -> dict[str, tuple[float, float]]:
        return {r: (self.mean(r), self.std(r)) for r in REGIONS}

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf)
        w.writerow(["image_id"] + [f"dsc_{r.lower()}" for r in REGIONS])
        for i, image_id in enumerate(self.image_ids):
            w.writerow([image_id] + [f"{self.per_image[r][i]:.6f}" for r in REGIONS])
        w.writerow(["mean"] + [f"{self.mean(r):.6f}" for r in REGIONS])
        w.writerow(["std"] + [f"{self.std(r):.6f}" for r in REGIONS])
        return buf.getvalue()

    def pretty(self) -> str:
        lines = ["region  DSC"]
        for r in REGIONS:
            lines.append(f"{r:<6}  {self.mean(r):.3f} ± {self.std(r):.3f}")
        return "\n".join(lines)


def dsc_report(
    preds: list[LabelVolume],
    gts: list[LabelVolume],
    image_ids: list[str] | None = None,
) -> DscReport:
    """Per-region Dice over paired prediction/GT label volumes.

    Both-empty regions count as 1.0, consistent with the selection criterion.
    """
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if not preds:
        raise ValueError("no image pairs to evaluate")
    if image_ids is None:
        image_ids = [f"img{i:03d}" for i in range(len(preds))]
    elif len(image_ids) != len(preds):
        raise ShapeError("image_ids length does not match predictions")
    per_image = {r: [] for r in REGIONS}
    for pred, gt in zip(preds, gts):
        if pred.dims != gt.dims:
            raise ShapeError(f"prediction dims {pred.dims} vs GT dims {gt.dims}")
        for r in REGIONS:
            per_image[r].append(dice_binary(region_mask(pred, r), region_mask(gt, r)))
    return DscReport(per_image=per_image, image_ids=list(image_ids))
