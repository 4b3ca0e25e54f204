import numpy as np
import pytest

from flimseg.errors import NoMarkersError
from flimseg.flim import BACKGROUND, OBJECT
from flimseg.io import load_manifest, read_volume
from flimseg.synth import (
    MARKER_BG,
    MARKER_ET,
    MARKER_WT,
    oracle_markers,
    synth_case,
    synth_dataset,
)
from flimseg.volume import LabelVolume


def manhattan_ball_hits(mask, coord, radius):
    """True if any set voxel of mask lies within the given city-block radius."""
    lo = [max(0, c - radius) for c in coord]
    hi = [min(d, c + radius + 1) for c, d in zip(coord, mask.shape)]
    window = mask[tuple(slice(a, b) for a, b in zip(lo, hi))]
    for idx in np.argwhere(window):
        dist = sum(abs(int(i) + a - c) for i, a, c in zip(idx, lo, coord))
        if dist <= radius:
            return True
    return False


class TestSynthCase:
    def test_all_regions_nonempty_3d(self):
        rng = np.random.default_rng(0)
        _, _, gt = synth_case(rng, (32, 32, 32))
        for code in (1, 2, 3):
            assert (gt.labels == code).sum() > 0

    def test_all_regions_nonempty_min_dims(self):
        rng = np.random.default_rng(3)
        _, _, gt = synth_case(rng, (16, 16, 16))
        for code in (1, 2, 3):
            assert (gt.labels == code).sum() > 0

    def test_region_nesting(self):
        rng = np.random.default_rng(1)
        _, _, gt = synth_case(rng, (32, 32, 32), hard=True)
        et = gt.labels == 2
        tc = np.isin(gt.labels, (2, 3))
        wt = gt.labels > 0
        assert not (np.isin(gt.labels, (2, 3)) & ~wt).any()
        assert tc.sum() > et.sum() > 0
        assert wt.sum() > tc.sum()

    def test_small_dims_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="16"):
            synth_case(rng, (15, 32, 32))

    def test_typical_contrast(self):
        rng = np.random.default_rng(2)
        flair, t1gd, gt = synth_case(rng, (32, 32, 32))
        wt = gt.labels > 0
        assert flair.data[0][wt].mean() > flair.data[0][~wt].mean() + 0.3
        et = gt.labels == 2
        nc = gt.labels == 3
        assert t1gd.data[0][et].mean() > t1gd.data[0][nc].mean() + 0.5

    def test_hard_contrast_inverted(self):
        rng = np.random.default_rng(2)
        flair, t1gd, gt = synth_case(rng, (32, 32, 32), hard=True)
        wt = gt.labels > 0
        assert flair.data[0][wt].mean() < flair.data[0][~wt].mean() - 0.3
        et = gt.labels == 2
        assert t1gd.data[0][et].mean() < t1gd.data[0][~wt].mean() - 0.4

    def test_noise_present(self):
        rng = np.random.default_rng(5)
        flair, _, gt = synth_case(rng, (32, 32, 32))
        bg = gt.labels == 0
        # background is flat apart from the additive noise
        assert 0.02 < flair.data[0][bg].std() < 0.10


class TestSynthDataset:
    def test_ten_cases_all_regions(self, tmp_path):
        manifest = synth_dataset(tmp_path, 10, (32, 32, 32), seed=7)
        assert len(manifest.cases) == 10
        for case in manifest.cases:
            gt = LabelVolume.from_volume(read_volume(manifest.resolve(case.gt)))
            for code in (1, 2, 3):
                assert (gt.labels == code).sum() > 0, case.case_id

    def test_fixed_seed_bit_identical(self, tmp_path):
        m1 = synth_dataset(tmp_path / "a", 4, (16, 16, 16), seed=9)
        m2 = synth_dataset(tmp_path / "b", 4, (16, 16, 16), seed=9)
        for c1, c2 in zip(m1.cases, m2.cases):
            assert c1.case_id == c2.case_id
            assert c1.split == c2.split and c1.mode == c2.mode
            for attr in ("flair", "t1gd", "gt"):
                b1 = (m1.resolve(getattr(c1, attr))).read_bytes()
                b2 = (m2.resolve(getattr(c2, attr))).read_bytes()
                assert b1 == b2

    def test_different_seed_differs(self, tmp_path):
        m1 = synth_dataset(tmp_path / "a", 3, (16, 16, 16), seed=1)
        m2 = synth_dataset(tmp_path / "b", 3, (16, 16, 16), seed=2)
        b1 = m1.resolve(m1.cases[0].flair).read_bytes()
        b2 = m2.resolve(m2.cases[0].flair).read_bytes()
        assert b1 != b2

    def test_hard_cases_in_train_and_test(self, tmp_path):
        manifest = synth_dataset(tmp_path, 10, (16, 16, 16), seed=3)
        hard = [c for c in manifest.cases if c.mode == "hard"]
        assert len(hard) >= 2
        assert any(c.split == "train" for c in hard)
        assert any(c.split == "test" for c in hard)

    def test_manifest_loadable(self, tmp_path):
        synth_dataset(tmp_path, 5, (16, 16, 16), seed=4)
        manifest = load_manifest(tmp_path / "manifest.json")
        assert len(manifest.cases) == 5
        assert manifest.split_cases("train")

    def test_too_few_cases(self, tmp_path):
        with pytest.raises(ValueError):
            synth_dataset(tmp_path, 1, (16, 16, 16), seed=0)


class TestOracleMarkers:
    @pytest.fixture()
    def case(self):
        rng = np.random.default_rng(11)
        return synth_case(rng, (32, 32, 32))

    def test_counts_and_tags(self, case):
        _, _, gt = case
        ms = oracle_markers("c0", gt, n_per_class=5, seed=0)
        by_id = {mid: ms.coords_of(mid) for mid in ms.marker_ids()}
        assert set(by_id) == {MARKER_ET, MARKER_WT, MARKER_BG}
        assert all(len(v) == 5 for v in by_id.values())
        assert ms.tag_of(MARKER_ET) == OBJECT
        assert ms.tag_of(MARKER_WT) == OBJECT
        assert ms.tag_of(MARKER_BG) == BACKGROUND
        ms.validate_bounds(gt.dims)

    def test_markers_land_in_their_regions(self, case):
        _, _, gt = case
        ms = oracle_markers("c0", gt, n_per_class=8, seed=1)
        for coord in ms.coords_of(MARKER_ET):
            assert gt.labels[coord] == 2
        for coord in ms.coords_of(MARKER_WT):
            assert gt.labels[coord] > 0
        wt = gt.labels > 0
        for coord in ms.coords_of(MARKER_BG):
            assert gt.labels[coord] == 0
            # outside the 2-step dilation: no tumor within city-block radius 2
            assert not manhattan_ball_hits(wt, coord, 2)

    def test_deterministic(self, case):
        _, _, gt = case
        a = oracle_markers("c0", gt, n_per_class=4, seed=5)
        b = oracle_markers("c0", gt, n_per_class=4, seed=5)
        assert [(e.coord, e.marker_id, e.tag) for e in a.entries] == [
            (e.coord, e.marker_id, e.tag) for e in b.entries
        ]
        c = oracle_markers("c0", gt, n_per_class=4, seed=6)
        assert [(e.coord, e.marker_id) for e in a.entries] != [
            (e.coord, e.marker_id) for e in c.entries
        ]

    def test_tumor_free_raises(self):
        gt = LabelVolume(np.zeros((16, 16), dtype=np.uint8))
        with pytest.raises(NoMarkersError):
            oracle_markers("empty", gt, n_per_class=3, seed=0)

    def test_tiny_region_falls_back_with_warning(self):
        labels = np.zeros((16, 16), dtype=np.uint8)
        labels[4:12, 4:12] = 1
        labels[8, 8] = 2  # single ET voxel erodes away
        gt = LabelVolume(labels)
        with pytest.warns(UserWarning, match="ET"):
            ms = oracle_markers("tiny", gt, n_per_class=2, seed=0)
        assert ms.coords_of(MARKER_ET) == [(8, 8)]

    def test_small_region_capped(self):
        labels = np.zeros((16, 16), dtype=np.uint8)
        labels[4:12, 4:12] = 1
        labels[7:10, 7:10] = 2
        gt = LabelVolume(labels)
        ms = oracle_markers("cap", gt, n_per_class=50, seed=0)
        # only the single eroded-ET voxel is available
        assert len(ms.coords_of(MARKER_ET)) == 1
