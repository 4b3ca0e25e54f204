"""Synthetic brain-tumor-like dataset for desk-scale benchmarks.

Each case is an ellipsoidal "tumor" with a concentric necrotic core,
enhancing rim, and edema halo over two modalities. A second "hard"
appearance mode inverts the contrast and roughens the boundary so that
filters learned on typical cases fail on it; the selection loop is
expected to find those cases.
"""
from __future__ import annotations

import warnings

import numpy as np
from scipy import ndimage

from .errors import NoMarkersError
from .flim import BACKGROUND, OBJECT, MarkerEntry, MarkerSet
from .io import CaseRecord, DatasetManifest, save_manifest, write_volume
from .volume import LabelVolume, Volume

NOISE_SIGMA = 0.05

# normalized-radius thresholds for the concentric regions
R_NC = 0.45
R_ET = 0.70
R_ED = 1.00

TYPICAL = {
    "flair_bg": 0.20, "flair_ed": 0.80, "flair_et": 0.80, "flair_nc": 0.80,
    "t1gd_bg": 0.20, "t1gd_ed": 0.35, "t1gd_et": 0.90, "t1gd_nc": 0.05,
}
# inverted contrast: bright ground, dark tumor; rim nearly vanishes
HARD = {
    "flair_bg": 0.80, "flair_ed": 0.25, "flair_et": 0.25, "flair_nc": 0.25,
    "t1gd_bg": 0.80, "t1gd_ed": 0.65, "t1gd_et": 0.10, "t1gd_nc": 0.50,
}

MARKER_ET = 1
MARKER_WT = 2
MARKER_BG = 3


def _radius_field(dims, center, radii) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(d, dtype=np.float64) for d in dims], indexing="ij")
    r2 = np.zeros(dims, dtype=np.float64)
    for g, c, r in zip(grids, center, radii):
        r2 += ((g - c) / r) ** 2
    return np.sqrt(r2)


def _smooth_noise(rng, dims, sigma=3.0) -> np.ndarray:
    raw = rng.normal(size=dims)
    sm = ndimage.gaussian_filter(raw, sigma=sigma)
    sd = sm.std()
    return sm / sd if sd > 0 else sm


def synth_case(rng: np.random.Generator, dims, hard: bool = False):
    """One case: (flair, t1gd, gt). Redraws geometry until every region
    (ED, ET, NC) is nonempty, which a sane radius range reaches immediately."""
    dims = tuple(int(d) for d in dims)
    if any(d < 16 for d in dims):
        raise ValueError(f"dims {dims} degenerate; every axis must be >= 16")
    for _ in range(20):
        center = [d * rng.uniform(0.40, 0.60) for d in dims]
        radii = [d * rng.uniform(0.22, 0.30) for d in dims]
        r = _radius_field(dims, center, radii)
        if hard:
            r = r * (1.0 + 0.25 * _smooth_noise(rng, dims))
        labels = np.zeros(dims, dtype=np.uint8)
        labels[r <= R_ED] = 1
        labels[r <= R_ET] = 2
        labels[r <= R_NC] = 3
        if all((labels == c).any() for c in (1, 2, 3)):
            break
    else:
        raise RuntimeError(f"could not draw non-degenerate tumor geometry at dims {dims}")
    pal = HARD if hard else TYPICAL
    flair = np.full(dims, pal["flair_bg"], dtype=np.float64)
    t1gd = np.full(dims, pal["t1gd_bg"], dtype=np.float64)
    for code, name in ((1, "ed"), (2, "et"), (3, "nc")):
        flair[labels == code] = pal[f"flair_{name}"]
        t1gd[labels == code] = pal[f"t1gd_{name}"]
    flair += rng.normal(0, NOISE_SIGMA, dims)
    t1gd += rng.normal(0, NOISE_SIGMA, dims)
    return (
        Volume(flair[None].astype(np.float32)),
        Volume(t1gd[None].astype(np.float32)),
        LabelVolume(labels),
    )


def _split_assignment(n_cases, n_hard, rng, split_counts=None):
    """Splits roughly 60/10/30 unless given exact counts; >=1 hard case
    lands in train and in test whenever n_hard allows it."""
    if split_counts is not None:
        n_train, n_val, n_test = (int(v) for v in split_counts)
        if n_train + n_val + n_test != n_cases:
            raise ValueError(f"split counts {split_counts} do not sum to {n_cases}")
    else:
        n_test = max(1, round(n_cases * 0.3))
        n_val = max(0, round(n_cases * 0.1)) if n_cases >= 8 else 0
        n_train = n_cases - n_test - n_val
    if n_train < 1:
        raise ValueError(f"{n_cases} cases leave no training split")
    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    hard_flags = [False] * n_cases
    if n_hard > 0:
        hard_train = (n_hard + 1) // 2
        hard_test = n_hard - hard_train
        if n_hard > 1 and hard_test == 0:
            hard_train, hard_test = n_hard - 1, 1
        train_ids = list(range(n_train))
        test_ids = list(range(n_train + n_val, n_cases))
        for i in rng.choice(train_ids, size=min(hard_train, len(train_ids)), replace=False):
            hard_flags[i] = True
        for i in rng.choice(test_ids, size=min(hard_test, len(test_ids)), replace=False):
            hard_flags[i] = True
    return splits, hard_flags


def synth_dataset(
    out_dir, n_cases: int, dims, seed: int, n_hard: int = 2, split_counts=None
) -> DatasetManifest:
    """Write n_cases synthetic cases plus a manifest under out_dir.

    split_counts, when given, pins exact (train, val, test) sizes."""
    from pathlib import Path

    if n_cases < 2:
        raise ValueError("need at least 2 cases")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    splits, hard_flags = _split_assignment(n_cases, n_hard, rng, split_counts)
    cases = []
    for i in range(n_cases):
        case_id = f"case{i:02d}"
        flair, t1gd, gt = synth_case(rng, dims, hard=hard_flags[i])
        paths = {
            "flair": f"{case_id}_flair.fvol",
            "t1gd": f"{case_id}_t1gd.fvol",
            "gt": f"{case_id}_gt.fvol",
        }
        write_volume(flair, out_dir / paths["flair"])
        write_volume(t1gd, out_dir / paths["t1gd"])
        write_volume(gt.to_volume(), out_dir / paths["gt"])
        cases.append(
            CaseRecord(
                case_id=case_id,
                flair=paths["flair"],
                t1gd=paths["t1gd"],
                gt=paths["gt"],
                split=splits[i],
                mode="hard" if hard_flags[i] else "typical",
            )
        )
    manifest = DatasetManifest(cases=cases, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def _sample_coords(mask: np.ndarray, n: int, rng) -> list[tuple[int, ...]]:
    coords = np.argwhere(mask)
    if len(coords) == 0:
        return []
    take = min(n, len(coords))
    picked = coords[rng.choice(len(coords), size=take, replace=False)]
    return [tuple(int(v) for v in c) for c in picked]


def _eroded_or_whole(mask: np.ndarray, what: str) -> np.ndarray:
    eroded = ndimage.binary_erosion(mask)
    if eroded.any():
        return eroded
    warnings.warn(f"{what} vanished under erosion; sampling the raw region")
    return mask


def oracle_markers(case_id: str, gt: LabelVolume, n_per_class: int, seed: int) -> MarkerSet:
    """Stand-in for the human scribbler in batch runs.

    Object markers come from the erosion of ET and of WT (separate marker
    ids); background markers from outside WT dilated by 2 voxels.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    labels = gt.labels
    wt = labels > 0
    et = labels == 2
    if not wt.any():
        raise NoMarkersError(f"{case_id}: no tumor voxels to mark")
    rng = np.random.default_rng(seed)
    entries = []
    for mask, what, marker_id in ((et, "ET", MARKER_ET), (wt, "WT", MARKER_WT)):
        region = _eroded_or_whole(mask, f"{case_id}: {what}")
        for coord in _sample_coords(region, n_per_class, rng):
            entries.append(MarkerEntry(coord=coord, marker_id=marker_id, tag=OBJECT))
    outside = ~ndimage.binary_dilation(wt, iterations=2)
    if not outside.any():
        warnings.warn(f"{case_id}: dilated tumor fills the image; using raw complement")
        outside = ~wt
    for coord in _sample_coords(outside, n_per_class, rng):
        entries.append(MarkerEntry(coord=coord, marker_id=MARKER_BG, tag=BACKGROUND))
    if not entries:
        raise NoMarkersError(f"{case_id}: could not place any markers")
    return MarkerSet(image_id=case_id, entries=entries)
