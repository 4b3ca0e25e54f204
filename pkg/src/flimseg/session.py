"""Interactive workbench state: the select/mark/learn/score loop.

A Session owns everything the loop accumulates: which training images the
user picked, their scribbles, the encoder layers learned so far, filter
labels, and the current worst-first score table. The HTTP layer and the
batch simulator both drive this one class.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from . import io, training
from .criterion import (
    LABELS,
    NONE_LABEL,
    ScoreTable,
    rank_and_recommend,
    score_image,
    suggest_first_image,
)
from .errors import (
    BudgetExhaustedError,
    NoLabeledFiltersError,
    NoMarkersError,
    NotReadyError,
)
from .flim import EncoderLayer, LayerSpec, MarkerSet, downscale_markers, learn_layer, run_layer
from .kernels import concat_channels
from .metrics import DscReport, dsc_report, region_mask
from .sunet import ArchSpec, SUNet, assemble, predict
from .volume import LabelVolume, Volume

DEFAULT_BUDGET = 8
DEFAULT_STOP = 0.85
MODALITIES = ("flair", "t1gd")


def default_arch() -> ArchSpec:
    """Three conv layers per encoder, widening 32/64/64, pooled 2x each."""
    def stack():
        return [LayerSpec(total_filters=t) for t in (32, 64, 64)]

    return ArchSpec(encoder_flair=stack(), encoder_t1gd=stack())


@dataclass(frozen=True)
class FilterInfo:
    """One row of the filter gallery."""

    fid: int
    modality: str
    index: int
    source_image: str
    marker_id: int
    label: str


@dataclass(frozen=True)
class SelectionEvent:
    case_id: str
    recommended: str | None
    overridden: bool


@dataclass
class CaseData:
    flair: Volume
    t1gd: Volume
    gt: LabelVolume | None


class Session:
    """Single-user loop state over one dataset manifest.

    The score table only ever describes unselected training images; any
    mutation that could change scores flips `scores_stale`, and ranking
    refuses to answer until `score_remaining` runs again.
    """

    def __init__(
        self,
        manifest: io.DatasetManifest,
        budget: int = DEFAULT_BUDGET,
        arch: ArchSpec | None = None,
        seed: int = 0,
        stop_threshold: float | None = DEFAULT_STOP,
    ):
        if budget < 1:
            raise ValueError(f"budget must be >= 1, got {budget}")
        if not manifest.split_cases("train"):
            raise ValueError("manifest has no training cases")
        self.manifest = manifest
        self.budget = int(budget)
        self.arch = arch if arch is not None else default_arch()
        self.seed = int(seed)
        self.stop_threshold = stop_threshold
        self.selected: list[str] = []
        self.markers: dict[str, MarkerSet] = {}
        self.encoder_flair: list[EncoderLayer] = []
        self.encoder_t1gd: list[EncoderLayer] = []
        self.annotations: dict[int, str] = {}
        self.table: ScoreTable | None = None
        self.scores_stale = True
        self.recommended: str | None = None
        self.stopped = False
        self.history: list[SelectionEvent] = []
        self.net: SUNet | None = None
        self.loss_log: list[training.EpochLog] = []
        self._cases: dict[str, CaseData] = {}
        self._learned_from = None

    # ---- dataset access -------------------------------------------------

    def train_ids(self) -> list[str]:
        return [c.case_id for c in self.manifest.split_cases("train")]

    def remaining(self) -> list[str]:
        chosen = set(self.selected)
        return [cid for cid in self.train_ids() if cid not in chosen]

    def case_data(self, case_id: str) -> CaseData:
        if case_id not in self._cases:
            rec = self.manifest.case(case_id)
            gt = None
            if rec.gt:
                gt = LabelVolume.from_volume(io.read_volume(self.manifest.resolve(rec.gt)))
            self._cases[case_id] = CaseData(
                flair=io.read_volume(self.manifest.resolve(rec.flair)),
                t1gd=io.read_volume(self.manifest.resolve(rec.t1gd)),
                gt=gt,
            )
        return self._cases[case_id]

    def suggest_first(self) -> str:
        by_id = {}
        for cid in self.train_ids():
            data = self.case_data(cid)
            by_id[cid] = [data.flair, data.t1gd]
        return suggest_first_image(by_id)

    # ---- loop mutations --------------------------------------------------

    def select(self, case_id: str) -> None:
        if case_id not in self.train_ids():
            raise KeyError(f"{case_id!r} is not a training case")
        if case_id in self.selected:
            raise ValueError(f"{case_id!r} already selected")
        if len(self.selected) >= self.budget:
            raise BudgetExhaustedError(
                f"budget of {self.budget} training images already reached"
            )
        overridden = self.recommended is not None and case_id != self.recommended
        self.history.append(SelectionEvent(case_id, self.recommended, overridden))
        self.selected.append(case_id)
        self.recommended = None
        self.scores_stale = True

    def set_markers(self, markers: MarkerSet) -> None:
        cid = markers.image_id
        if cid not in self.train_ids():
            raise KeyError(f"{cid!r} is not a training case")
        # scribbles land on chosen images, on the current recommendation,
        # or anywhere while the user is still picking the first image
        if self.selected and cid not in self.selected and cid != self.recommended:
            raise ValueError(f"{cid!r} is neither selected nor recommended")
        if not markers.has_object():
            raise NoMarkersError("marker set needs at least one object marker")
        markers.validate_bounds(self.case_data(cid).flair.dims)
        self.markers[cid] = markers
        self.scores_stale = True

    def _marked_pairs(self):
        pairs = []
        for cid in self.selected:
            ms = self.markers.get(cid)
            if ms is not None and ms.has_object():
                pairs.append((cid, ms))
        return pairs

    def _marker_state(self):
        return tuple(
            (cid, tuple(ms.entries)) for cid, ms in sorted(self._marked_pairs(), key=lambda p: p[0])
        )

    def learn_layer1(self) -> None:
        pairs = self._marked_pairs()
        if not pairs:
            raise NoMarkersError("no selected image has object markers yet")
        state = self._marker_state()
        mss = [ms for _, ms in pairs]
        flair_imgs = [self.case_data(cid).flair for cid, _ in pairs]
        t1gd_imgs = [self.case_data(cid).t1gd for cid, _ in pairs]
        self.encoder_flair = [learn_layer(flair_imgs, mss, self.arch.encoder_flair[0], self.seed)]
        self.encoder_t1gd = [learn_layer(t1gd_imgs, mss, self.arch.encoder_t1gd[0], self.seed)]
        self._learned_from = state
        self.net = None
        # ids are positional; anything past the new bank no longer exists
        self.annotations = {
            fid: lab for fid, lab in self.annotations.items() if fid < self.n_filters()
        }
        self.scores_stale = True

    def n_filters(self) -> int:
        if not self.encoder_flair:
            return 0
        return self.encoder_flair[0].bank.count + self.encoder_t1gd[0].bank.count

    def filter_table(self) -> list[FilterInfo]:
        rows = []
        fid = 0
        for modality, layers in (("flair", self.encoder_flair), ("t1gd", self.encoder_t1gd)):
            if not layers:
                continue
            for idx, prov in enumerate(layers[0].provenance):
                rows.append(
                    FilterInfo(
                        fid=fid,
                        modality=modality,
                        index=idx,
                        source_image=prov.image_id,
                        marker_id=prov.marker_id,
                        label=self.annotations.get(fid, NONE_LABEL),
                    )
                )
                fid += 1
        return rows

    def label_filter(self, fid: int, label: str) -> None:
        if not 0 <= fid < self.n_filters():
            raise KeyError(f"no filter {fid}")
        if label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {label!r}")
        if label == NONE_LABEL:
            self.annotations.pop(fid, None)
        else:
            self.annotations[fid] = label
        self.scores_stale = True

    # ---- scoring ----------------------------------------------------------

    def layer1_activation(self, case_id: str) -> Volume:
        if not self.encoder_flair:
            raise NotReadyError("layer 1 has not been learned")
        data = self.case_data(case_id)
        f_pre, _ = run_layer(data.flair, self.encoder_flair[0])
        t_pre, _ = run_layer(data.t1gd, self.encoder_t1gd[0])
        return concat_channels(f_pre, t_pre)

    def score_remaining(self) -> ScoreTable:
        if not self.encoder_flair:
            raise NotReadyError("layer 1 has not been learned")
        if not any(lab != NONE_LABEL for lab in self.annotations.values()):
            raise NoLabeledFiltersError("label at least one filter good_WT or good_ET")
        rows = []
        for cid in self.remaining():
            gt = self.case_data(cid).gt
            if gt is None:
                raise ValueError(f"{cid!r} has no ground truth; cannot score")
            masks = {"WT": region_mask(gt, "WT"), "ET": region_mask(gt, "ET")}
            rows.append(score_image(self.layer1_activation(cid), self.annotations, masks, cid))
        table = ScoreTable(rows)
        table.sort()
        self.table = table
        self.scores_stale = False
        self.recommended = rank_and_recommend(table) if rows else None
        return table

    def min_aggregate(self) -> float | None:
        if self.table is None or not self.table.rows:
            return None
        return min(r.aggregate for r in self.table.rows)

    def selection_step(self) -> "Session":
        """One turn of the loop: refresh layer 1, rescore, recommend worst."""
        if len(self.selected) >= self.budget:
            raise BudgetExhaustedError(
                f"budget of {self.budget} training images already reached"
            )
        if self._learned_from != self._marker_state():
            self.learn_layer1()
        self.score_remaining()
        lo = self.min_aggregate()
        if lo is None:
            self.recommended = None
        elif self.stop_threshold is not None and lo >= self.stop_threshold:
            self.stopped = True
            self.recommended = None
        return self

    # ---- deeper training ---------------------------------------------------

    def train_encoder_rest(self) -> None:
        if not self.encoder_flair:
            raise NotReadyError("layer 1 has not been learned")
        pairs = self._marked_pairs()
        if not pairs:
            raise NoMarkersError("no selected image has object markers yet")
        mss = [ms for _, ms in pairs]
        for modality, specs in (("flair", self.arch.encoder_flair), ("t1gd", self.arch.encoder_t1gd)):
            layers = [getattr(self, f"encoder_{modality}")[0]]
            imgs = [getattr(self.case_data(cid), modality) for cid, _ in pairs]
            cur_mss = mss
            for spec in specs[1:]:
                pooled_imgs, pooled_mss = [], []
                for img, ms in zip(imgs, cur_mss):
                    _, pooled = run_layer(img, layers[-1])
                    pooled_imgs.append(pooled)
                    pooled_mss.append(
                        downscale_markers(ms, layers[-1].pool_stride, pooled.dims)
                    )
                imgs, cur_mss = pooled_imgs, pooled_mss
                layers.append(learn_layer(imgs, cur_mss, spec, self.seed))
            setattr(self, f"encoder_{modality}", layers)
        self.net = None

    def build_net(self) -> SUNet:
        depth = len(self.arch.encoder_flair)
        if len(self.encoder_flair) != depth or len(self.encoder_t1gd) != depth:
            raise NotReadyError(
                f"encoders are not complete ({len(self.encoder_flair)}/{depth} layers)"
            )
        self.net = assemble(self.encoder_flair, self.encoder_t1gd, self.arch, seed=self.seed)
        return self.net

    def train_decoder(self, config: training.TrainConfig | None = None, progress=None):
        if self.net is None:
            self.build_net()
        config = config or training.TrainConfig(seed=self.seed)
        dataset = []
        for cid in self.selected:
            data = self.case_data(cid)
            if data.gt is None:
                raise ValueError(f"{cid!r} has no ground truth; cannot train")
            dataset.append((data.flair, data.t1gd, data.gt))
        self.loss_log = training.train_decoder(self.net, dataset, config, progress=progress)
        return self.loss_log

    def evaluate(self, split: str = "test") -> DscReport:
        if self.net is None:
            raise NotReadyError("no trained network to evaluate")
        cases = self.manifest.split_cases(split)
        if not cases:
            raise ValueError(f"manifest has no {split!r} cases")
        preds, gts, ids = [], [], []
        for rec in cases:
            data = self.case_data(rec.case_id)
            if data.gt is None:
                raise ValueError(f"{rec.case_id!r} has no ground truth")
            preds.append(predict(self.net, data.flair, data.t1gd))
            gts.append(data.gt)
            ids.append(rec.case_id)
        return dsc_report(preds, gts, image_ids=ids)

    def save_checkpoint(self, path) -> None:
        if self.net is None:
            raise NotReadyError("no trained network to checkpoint")
        io.save_checkpoint(self.net, self.annotations, path)
