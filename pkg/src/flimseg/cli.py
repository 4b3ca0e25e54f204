"""Batch entry points: serve the HTTP API, synthesize data, replay the
selection loop with oracle markers, and train/apply/score checkpoints.

Exit codes: 0 ok, 1 runtime failure, 2 usage.
"""
from __future__ import annotations

from pathlib import Path

import click

from . import io as fio
from . import training
from .errors import FlimsegError
from .metrics import REGIONS, dsc_report
from .simulate import (
    REDUCED_EPOCHS,
    STRATEGIES,
    SimulateConfig,
    audit_csv,
    results_csv,
    run_simulation,
)
from .sunet import predict
from .synth import synth_dataset
from .training import TrainConfig


def _fail(exc: Exception):
    raise click.ClickException(str(exc)) from exc


def _load_pairs(manifest, split, need_gt=True):
    """(flair, t1gd, gt) triples plus ids for one split, reading from disk."""
    triples, ids = [], []
    for rec in manifest.split_cases(split):
        if not rec.gt:
            if need_gt:
                raise click.ClickException(f"{rec.case_id} has no ground truth")
            continue
        flair = fio.read_volume(manifest.resolve(rec.flair))
        t1gd = fio.read_volume(manifest.resolve(rec.t1gd))
        gt = fio.read_labels(manifest.resolve(rec.gt))
        triples.append((flair, t1gd, gt))
        ids.append(rec.case_id)
    return triples, ids


@click.group()
def main():
    """Interactive filter-learning workbench for tumor segmentation."""


@main.command()
@click.option("--data-root", type=click.Path(file_okay=False), default=".",
              show_default=True, help="Directory manifest and checkpoint paths resolve against.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=click.IntRange(1, 65535), default=8765, show_default=True)
@click.option("--static-dir", type=click.Path(file_okay=False), default=None,
              help="Optional directory of UI files to serve at /.")
def serve(data_root, host, port, static_dir):
    """Start the HTTP service."""
    import uvicorn

    from .server import create_app

    app = create_app(data_root=data_root, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port)


@main.command()
@click.option("--cases", type=click.IntRange(2), default=10, show_default=True)
@click.option("--dims", type=click.IntRange(16), default=32, show_default=True,
              help="Edge length of the cubic volumes (every axis must be >= 16).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--hard", "n_hard", type=click.IntRange(0), default=2, show_default=True,
              help="How many cases get atypical contrast and an irregular boundary.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def synth(cases, dims, seed, n_hard, out):
    """Generate a synthetic two-channel tumor dataset plus manifest."""
    try:
        manifest = synth_dataset(out, cases, (dims, dims, dims), seed=seed, n_hard=n_hard)
    except (FlimsegError, OSError, ValueError) as exc:
        _fail(exc)
    click.echo(f"wrote {len(manifest.cases)} cases under {out}")


@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--budget", type=click.IntRange(1), default=8, show_default=True)
@click.option("--strategy", type=click.Choice(STRATEGIES), default="interactive",
              show_default=True)
@click.option("--seeds", default="0", show_default=True,
              help="Comma-separated RNG seeds; one full replay per seed.")
@click.option("--epochs", type=click.IntRange(0), default=REDUCED_EPOCHS, show_default=True,
              help="Decoder epochs per evaluation point (reduced for sweeps).")
@click.option("--label-threshold", type=float, default=0.3, show_default=True,
              help="Auto-labeler keeps a filter whose source-image Dice reaches this.")
@click.option("--markers", "n_markers", type=click.IntRange(1), default=10, show_default=True,
              help="Oracle markers per class per image.")
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Results CSV (strategy, seed, n_images, dsc_et, dsc_tc, dsc_wt).")
@click.option("--audit", type=click.Path(dir_okay=False), default=None,
              help="Per-step ranking audit CSV; defaults to OUT.audit.csv (interactive only).")
def simulate(manifest_path, budget, strategy, seeds, epochs, label_threshold,
             n_markers, out, audit):
    """Replay the selection loop with oracle markers standing in for the user."""
    try:
        seed_list = tuple(int(s) for s in seeds.split(",") if s.strip())
    except ValueError:
        raise click.BadParameter("--seeds wants comma-separated integers")
    if not seed_list:
        raise click.BadParameter("--seeds wants at least one integer")
    try:
        manifest = fio.load_manifest(manifest_path)
        config = SimulateConfig(
            budget=budget,
            strategy=strategy,
            seeds=seed_list,
            n_markers=n_markers,
            label_threshold=label_threshold,
            epochs=epochs,
        )

        def progress(seed, k, means):
            click.echo(
                f"[seed {seed}] n_images={k} "
                f"ET={means['ET']:.3f} TC={means['TC']:.3f} WT={means['WT']:.3f}"
            )

        results, audit_rows = run_simulation(manifest, config, progress=progress)
    except (FlimsegError, OSError, ValueError) as exc:
        _fail(exc)
    Path(out).write_text(results_csv(results))
    click.echo(f"wrote {out}")
    if strategy == "interactive":
        audit_path = Path(audit) if audit else Path(f"{out}.audit.csv")
        audit_path.write_text(audit_csv(audit_rows))
        click.echo(f"wrote {audit_path}")


@main.command("train-decoder")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Existing checkpoint; its decoder is retrained and written back.")
@click.option("--epochs", type=click.IntRange(0), default=100, show_default=True)
@click.option("--lr", type=float, default=2.5e-3, show_default=True,
              help="Initial learning rate, decayed linearly to zero.")
@click.option("--seed", type=int, default=0, show_default=True)
def train_decoder(manifest_path, checkpoint, epochs, lr, seed):
    """Retrain a checkpointed network's decoder on the manifest's training split."""
    try:
        net, annotations = fio.load_checkpoint(checkpoint)
        manifest = fio.load_manifest(manifest_path)
        dataset, _ = _load_pairs(manifest, "train")
        val, val_ids = _load_pairs(manifest, "val", need_gt=False)
        config = TrainConfig(lr0=lr, epochs=epochs, seed=seed)

        # validation Dice is logged for inspection only; it never stops training
        def on_epoch(entry):
            line = f"epoch {entry.epoch + 1}/{epochs} loss={entry.mean_loss:.4f} lr={entry.lr:.6f}"
            if val:
                report = dsc_report(
                    [predict(net, f, t) for f, t, _ in val], [g for _, _, g in val],
                    image_ids=val_ids,
                )
                line += " val " + " ".join(
                    f"{r}={report.mean(r):.3f}" for r in REGIONS
                )
            click.echo(line)

        training.train_decoder(net, dataset, config, progress=on_epoch)
        fio.save_checkpoint(net, annotations, checkpoint)
    except (FlimsegError, OSError, ValueError) as exc:
        _fail(exc)
    click.echo(f"updated {checkpoint}")


@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--case", "case_id", required=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Where to write the predicted label volume.")
def infer(manifest_path, checkpoint, case_id, out):
    """Segment one case with a checkpointed network."""
    try:
        net, _ = fio.load_checkpoint(checkpoint)
        manifest = fio.load_manifest(manifest_path)
        rec = manifest.case(case_id)
        flair = fio.read_volume(manifest.resolve(rec.flair))
        t1gd = fio.read_volume(manifest.resolve(rec.t1gd))
    except KeyError as exc:
        raise click.ClickException(f"manifest has no case {exc}")
    except (FlimsegError, OSError, ValueError) as exc:
        _fail(exc)
    labels = predict(net, flair, t1gd)
    fio.write_volume(labels.to_volume(), out)
    click.echo(f"wrote {out}")


@main.command("eval")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", default="test", show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Per-image and mean/std Dice CSV.")
def eval_cmd(manifest_path, checkpoint, split, out):
    """Score a checkpointed network on one split of a manifest."""
    try:
        net, _ = fio.load_checkpoint(checkpoint)
        manifest = fio.load_manifest(manifest_path)
        triples, ids = _load_pairs(manifest, split)
        if not triples:
            raise click.ClickException(f"split {split!r} is empty")
        preds = [predict(net, f, t) for f, t, _ in triples]
        report = dsc_report(preds, [g for _, _, g in triples], image_ids=ids)
    except (FlimsegError, OSError, ValueError) as exc:
        _fail(exc)
    Path(out).write_text(report.to_csv())
    for region in REGIONS:
        click.echo(f"{region} {report.mean(region):.3f} ± {report.std(region):.3f}")
    click.echo(f"wrote {out}")
