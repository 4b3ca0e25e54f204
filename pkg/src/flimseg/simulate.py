"""Batch replay of the selection loop with a scripted stand-in user.

Oracle markers replace the human scribbler and an auto-labeler replaces
manual filter annotation: a filter is marked good for a region when its
Otsu-binarized activation reaches a Dice threshold against that region on
the filter's own source image. Everything else runs through the same
Session code the interactive service uses.
"""
from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass

import numpy as np

from .criterion import GOOD_ET, GOOD_WT, ImageScore, binarize, dice_binary, otsu_threshold, score_image
from .errors import ConstantInputError
from .flim import marker_seed
from .io import DatasetManifest
from .metrics import region_mask
from .session import Session
from .sunet import ArchSpec
from .synth import oracle_markers
from .training import TrainConfig

STRATEGIES = ("interactive", "random", "first-k")
LABEL_THRESHOLD = 0.3
REDUCED_EPOCHS = 20


@dataclass
class SimulateConfig:
    budget: int = 8
    strategy: str = "interactive"
    seeds: tuple[int, ...] = (0,)
    n_markers: int = 10
    label_threshold: float = LABEL_THRESHOLD
    epochs: int = REDUCED_EPOCHS
    lr0: float = 2.5e-3
    stop_threshold: float | None = None
    arch: ArchSpec | None = None
    eval_budgets: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed required")


@dataclass(frozen=True)
class ResultRow:
    strategy: str
    seed: int
    n_images: int
    dsc_et: float
    dsc_tc: float
    dsc_wt: float


@dataclass(frozen=True)
class AuditRow:
    """One score-table entry as the simulator saw it.

    phase "score" rows reproduce the ranking table just before a pick;
    phase "postjoin" rows re-run the criterion on a freshly selected image
    after its markers joined training (diagnostic, not part of any ranking).
    """

    strategy: str
    seed: int
    phase: str
    step: int
    image_id: str
    aggregate: float
    rank: int
    picked: bool


def _case_markers(session: Session, case_id: str, n: int, seed: int):
    gt = session.case_data(case_id).gt
    if gt is None:
        raise ValueError(f"{case_id!r} has no ground truth; simulation needs GT")
    return oracle_markers(case_id, gt, n_per_class=n, seed=marker_seed(seed, case_id, 0))


def auto_label(session: Session, threshold: float = LABEL_THRESHOLD) -> dict[int, str]:
    """Label each filter by its best region on its own source image.

    Ties prefer WT. Filters that clear the threshold for neither region
    stay unlabeled, exactly like a human skipping a bad activation map.
    """
    session.annotations = {}
    by_source: dict[str, list[int]] = {}
    for info in session.filter_table():
        by_source.setdefault(info.source_image, []).append(info.fid)
    for cid, fids in by_source.items():
        act = session.layer1_activation(cid)
        gt = session.case_data(cid).gt
        masks = {GOOD_WT: region_mask(gt, "WT"), GOOD_ET: region_mask(gt, "ET")}
        for fid in fids:
            try:
                thr = otsu_threshold(act, fid)
            except ConstantInputError:
                continue
            mask = binarize(act, fid, thr)
            best_label, best_dice = None, -1.0
            for label in (GOOD_WT, GOOD_ET):
                d = dice_binary(mask, masks[label])
                # strict > keeps WT on an exact tie
                if d > best_dice:
                    best_label, best_dice = label, d
            if best_dice >= threshold:
                session.label_filter(fid, best_label)
    return dict(session.annotations)


def _score_one(session: Session, case_id: str) -> ImageScore:
    gt = session.case_data(case_id).gt
    masks = {"WT": region_mask(gt, "WT"), "ET": region_mask(gt, "ET")}
    return score_image(session.layer1_activation(case_id), session.annotations, masks, case_id)


def interactive_order(
    manifest: DatasetManifest, config: SimulateConfig, seed: int, audit: list[AuditRow]
) -> list[str]:
    """Run the real loop once; returns the selection order, filling audit."""
    session = Session(
        manifest,
        budget=config.budget,
        arch=config.arch,
        seed=seed,
        stop_threshold=config.stop_threshold,
    )
    first = session.suggest_first()
    session.select(first)
    session.set_markers(_case_markers(session, first, config.n_markers, seed))
    just_joined: str | None = None
    while True:
        session.learn_layer1()
        auto_label(session, config.label_threshold)
        if just_joined is not None:
            rec = _score_one(session, just_joined)
            audit.append(
                AuditRow(
                    config.strategy, seed, "postjoin", len(session.selected),
                    just_joined, rec.aggregate, 0, False,
                )
            )
            just_joined = None
        if len(session.selected) >= session.budget or not session.remaining():
            break
        table = session.score_remaining()
        step = len(session.selected) + 1
        pick = session.recommended
        for row in table.rows:
            audit.append(
                AuditRow(
                    config.strategy, seed, "score", step,
                    row.image_id, row.aggregate, row.rank, row.image_id == pick,
                )
            )
        lo = session.min_aggregate()
        if config.stop_threshold is not None and lo is not None and lo >= config.stop_threshold:
            break
        session.select(pick)
        session.set_markers(_case_markers(session, pick, config.n_markers, seed))
        just_joined = pick
    return list(session.selected)


def baseline_order(manifest: DatasetManifest, config: SimulateConfig, seed: int) -> list[str]:
    train_ids = [c.case_id for c in manifest.split_cases("train")]
    k = min(config.budget, len(train_ids))
    if config.strategy == "first-k":
        return train_ids[:k]
    rng = np.random.default_rng(seed)
    return [train_ids[i] for i in rng.choice(len(train_ids), size=k, replace=False)]


def evaluate_selection(
    manifest: DatasetManifest,
    selected: list[str],
    config: SimulateConfig,
    seed: int,
):
    """Full pipeline for a fixed selection: encoders, decoder, test DSC."""
    session = Session(manifest, budget=len(selected), arch=config.arch, seed=seed)
    for cid in selected:
        session.select(cid)
        session.set_markers(_case_markers(session, cid, config.n_markers, seed))
    session.learn_layer1()
    session.train_encoder_rest()
    session.build_net()
    session.train_decoder(TrainConfig(lr0=config.lr0, epochs=config.epochs, seed=seed))
    return session.evaluate("test")


def run_simulation(manifest: DatasetManifest, config: SimulateConfig, progress=None):
    """Returns (results, audit) over every seed and evaluation budget."""
    results: list[ResultRow] = []
    audit: list[AuditRow] = []
    for seed in config.seeds:
        if config.strategy == "interactive":
            order = interactive_order(manifest, config, seed, audit)
        else:
            order = baseline_order(manifest, config, seed)
        budgets = config.eval_budgets or tuple(range(1, len(order) + 1))
        for k in budgets:
            if k > len(order):
                continue
            report = evaluate_selection(manifest, order[:k], config, seed)
            means = {r: report.mean(r) for r in ("ET", "TC", "WT")}
            results.append(
                ResultRow(
                    strategy=config.strategy,
                    seed=seed,
                    n_images=k,
                    dsc_et=means["ET"],
                    dsc_tc=means["TC"],
                    dsc_wt=means["WT"],
                )
            )
            if progress is not None:
                progress(seed, k, means)
    return results, audit


def results_csv(rows: list[ResultRow]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf)
    w.writerow(["strategy", "seed", "n_images", "dsc_et", "dsc_tc", "dsc_wt"])
    for r in rows:
        w.writerow(
            [r.strategy, r.seed, r.n_images, f"{r.dsc_et:.6f}", f"{r.dsc_tc:.6f}", f"{r.dsc_wt:.6f}"]
        )
    return buf.getvalue()


def audit_csv(rows: list[AuditRow]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf)
    w.writerow(["strategy", "seed", "phase", "step", "image_id", "aggregate", "rank", "picked"])
    for r in rows:
        w.writerow(
            [r.strategy, r.seed, r.phase, r.step, r.image_id, f"{r.aggregate:.6f}", r.rank, int(r.picked)]
        )
    return buf.getvalue()


def parse_audit_csv(text: str) -> list[AuditRow]:
    rows = []
    for rec in csv.DictReader(_io.StringIO(text)):
        rows.append(
            AuditRow(
                strategy=rec["strategy"],
                seed=int(rec["seed"]),
                phase=rec["phase"],
                step=int(rec["step"]),
                image_id=rec["image_id"],
                aggregate=float(rec["aggregate"]),
                rank=int(rec["rank"]),
                picked=bool(int(rec["picked"])),
            )
        )
    return rows
