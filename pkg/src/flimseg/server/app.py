"""HTTP facade over Session: everything the UI and scripts may touch.

Mutations go through a per-session lock and at most one background job
runs per session; reads only take snapshots. Status mapping: unknown
things are 404, malformed bodies 422, loop-state violations 409, and a
manifest that will not load is 400.
"""
from __future__ import annotations

import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.staticfiles import StaticFiles

from .. import io as fio
from ..criterion import LABELS, binarize, otsu_threshold
from ..errors import (
    BudgetExhaustedError,
    ConstantInputError,
    FormatError,
    NoMarkersError,
    NotReadyError,
)
from ..flim import MarkerEntry, MarkerSet
from ..session import Session
from ..sunet import predict
from ..training import TrainConfig
from .jobs import JobConflictError, JobManager
from .render import volume_slice_png

CHANNELS = ("flair", "t1gd")


class _State:
    def __init__(self, data_root: Path):
        self.data_root = data_root
        self.sessions: dict[str, Session] = {}
        self.locks: dict[str, threading.Lock] = {}
        self.jobs = JobManager()


def _session(state: _State, sid: str) -> Session:
    session = state.sessions.get(sid)
    if session is None:
        raise HTTPException(404, f"no session {sid}")
    return session


def _require_idle(state: _State, sid: str) -> None:
    job = state.jobs.active_for(sid)
    if job is not None:
        raise HTTPException(409, f"job {job.id} ({job.kind}) is {job.state}")


def _score_rows(session: Session) -> list[dict]:
    rows = []
    for row in session.table.rows:
        rows.append(
            {
                "image_id": row.image_id,
                "aggregate": row.aggregate,
                "rank": row.rank,
                "regions": {
                    rec.region: {
                        "dice": rec.dice,
                        "best_filter_id": rec.best_filter_id,
                        "threshold": rec.threshold,
                    }
                    for rec in row.records
                },
            }
        )
    return rows


def create_app(data_root=None, static_dir=None) -> FastAPI:
    app = FastAPI(title="flimseg", docs_url=None, redoc_url=None)
    state = _State(Path(data_root) if data_root else Path.cwd())
    app.state.flimseg = state

    def resolve_path(raw: str) -> Path:
        p = Path(raw)
        return p if p.is_absolute() else state.data_root / p

    # ---- plumbing ------------------------------------------------------

    @app.get("/api/health")
    def health():
        return {"status": "ok"}

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        snap = state.jobs.get(job_id)
        if snap is None:
            raise HTTPException(404, f"no job {job_id}")
        return snap

    # ---- session lifecycle ----------------------------------------------

    @app.post("/api/sessions", status_code=201)
    def create_session(body: dict):
        raw = body.get("manifest_path")
        if not raw:
            raise HTTPException(400, "manifest_path required")
        try:
            manifest = fio.load_manifest(resolve_path(raw))
            session = Session(
                manifest,
                budget=int(body.get("budget", 8)),
                seed=int(body.get("seed", 0)),
                stop_threshold=body.get("stop_threshold", 0.85),
            )
        except (OSError, FormatError, ValueError, KeyError) as exc:
            raise HTTPException(400, f"manifest rejected: {exc}") from exc
        sid = uuid.uuid4().hex[:12]
        state.sessions[sid] = session
        state.locks[sid] = threading.Lock()
        return {"id": sid, "budget": session.budget, "n_train": len(session.train_ids())}

    @app.get("/api/sessions/{sid}")
    def session_info(sid: str):
        session = _session(state, sid)
        return {
            "id": sid,
            "budget": session.budget,
            "selected": list(session.selected),
            "remaining": session.remaining(),
            "recommended": session.recommended,
            "scores_stale": session.scores_stale,
            "stopped": session.stopped,
            "n_filters": session.n_filters(),
            "encoder_depth": len(session.encoder_flair),
            "has_net": session.net is not None,
            "marked": sorted(session.markers),
            "stop_threshold": session.stop_threshold,
        }

    @app.get("/api/sessions/{sid}/images")
    def session_images(sid: str):
        session = _session(state, sid)
        out = []
        for rec in session.manifest.cases:
            data = session.case_data(rec.case_id)
            out.append(
                {
                    "case_id": rec.case_id,
                    "split": rec.split,
                    "mode": rec.mode,
                    "dims": list(data.flair.dims),
                    "selected": rec.case_id in session.selected,
                    "marked": rec.case_id in session.markers,
                    "has_gt": data.gt is not None,
                }
            )
        return {"cases": out}

    @app.get("/api/sessions/{sid}/suggest-first")
    def suggest_first(sid: str):
        session = _session(state, sid)
        return {"case_id": session.suggest_first()}

    # ---- viewing ----------------------------------------------------------

    @app.get("/api/sessions/{sid}/images/{case_id}/slice")
    def image_slice(
        sid: str,
        case_id: str,
        axis: int = 0,
        index: int = 0,
        channel: str = "flair",
        overlay: str = "none",
    ):
        session = _session(state, sid)
        try:
            data = session.case_data(case_id)
        except KeyError as exc:
            raise HTTPException(404, str(exc)) from exc
        if channel not in CHANNELS:
            raise HTTPException(422, f"channel must be one of {CHANNELS}")
        vol = getattr(data, channel)
        label_overlay = None
        binary_overlay = None
        if overlay == "gt":
            if data.gt is None:
                raise HTTPException(422, f"{case_id} has no ground truth")
            label_overlay = data.gt.labels
        elif overlay == "prediction":
            if session.net is None:
                raise HTTPException(409, "train the decoder before prediction overlays")
            label_overlay = predict(session.net, data.flair, data.t1gd).labels
        elif overlay.startswith("activation:"):
            try:
                fid = int(overlay.split(":", 1)[1])
            except ValueError as exc:
                raise HTTPException(422, "activation overlay needs a filter id") from exc
            if not session.encoder_flair:
                raise HTTPException(409, "learn filters before activation overlays")
            if not 0 <= fid < session.n_filters():
                raise HTTPException(404, f"no filter {fid}")
            act = session.layer1_activation(case_id)
            try:
                thr = otsu_threshold(act, fid)
                binary_overlay = binarize(act, fid, thr)
            except ConstantInputError:
                binary_overlay = np.zeros(act.dims, dtype=bool)
        elif overlay != "none":
            raise HTTPException(422, f"unknown overlay {overlay!r}")
        try:
            png = volume_slice_png(vol, axis, index, label_overlay, binary_overlay)
        except IndexError as exc:
            raise HTTPException(416, str(exc)) from exc
        return Response(content=png, media_type="image/png")

    # ---- markers -----------------------------------------------------------

    def _markers_from_json(case_id: str, payload: dict) -> MarkerSet:
        entries = payload.get("entries")
        if not isinstance(entries, list) or not entries:
            raise HTTPException(422, "body needs a non-empty entries list")
        out = []
        for i, e in enumerate(entries):
            try:
                out.append(
                    MarkerEntry(
                        coord=tuple(int(c) for c in e["coord"]),
                        marker_id=int(e["marker_id"]),
                        tag=str(e["tag"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise HTTPException(422, f"entry {i}: {exc}") from exc
        try:
            return MarkerSet(image_id=case_id, entries=out)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc

    def _markers_from_csv(case_id: str, text: str) -> MarkerSet:
        try:
            parsed = fio.parse_markers(text, source="request body")
        except FormatError as exc:
            raise HTTPException(422, str(exc)) from exc
        if list(parsed) != [case_id]:
            raise HTTPException(
                422, f"body describes cases {sorted(parsed)}, endpoint is for {case_id}"
            )
        return parsed[case_id]

    @app.put("/api/sessions/{sid}/markers/{case_id}")
    async def put_markers(sid: str, case_id: str, request: Request):
        session = _session(state, sid)
        _require_idle(state, sid)
        ctype = request.headers.get("content-type", "")
        if ctype.startswith("application/json"):
            markers = _markers_from_json(case_id, await request.json())
        else:
            body = (await request.body()).decode("utf-8", errors="replace")
            markers = _markers_from_csv(case_id, body)
        with state.locks[sid]:
            try:
                session.set_markers(markers)
            except KeyError as exc:
                raise HTTPException(404, str(exc)) from exc
            except NoMarkersError as exc:
                raise HTTPException(422, str(exc)) from exc
            except ValueError as exc:
                status = 409 if "neither selected nor recommended" in str(exc) else 422
                raise HTTPException(status, str(exc)) from exc
        return {
            "case_id": case_id,
            "n_entries": len(markers.entries),
            "marker_ids": markers.marker_ids(),
        }

    # ---- filters -------------------------------------------------------------

    @app.get("/api/sessions/{sid}/filters")
    def list_filters(sid: str):
        session = _session(state, sid)
        return {
            "filters": [
                {
                    "fid": f.fid,
                    "modality": f.modality,
                    "index": f.index,
                    "source_image": f.source_image,
                    "marker_id": f.marker_id,
                    "label": f.label,
                }
                for f in session.filter_table()
            ]
        }

    @app.put("/api/sessions/{sid}/filters/{fid}/label")
    def label_filter(sid: str, fid: int, body: dict):
        session = _session(state, sid)
        _require_idle(state, sid)
        label = body.get("label")
        if label not in LABELS:
            raise HTTPException(422, f"label must be one of {LABELS}")
        with state.locks[sid]:
            try:
                session.label_filter(fid, label)
            except KeyError as exc:
                raise HTTPException(404, str(exc)) from exc
        return {"fid": fid, "label": label}

    # ---- jobs over the loop ---------------------------------------------------

    def _submit(sid: str, kind: str, work):
        try:
            job = state.jobs.submit(sid, kind, work)
        except JobConflictError as exc:
            raise HTTPException(409, str(exc)) from exc
        return {"job": job.id, "kind": kind}

    @app.post("/api/sessions/{sid}/learn", status_code=202)
    def learn(sid: str):
        session = _session(state, sid)
        if not any(
            cid in session.markers and session.markers[cid].has_object()
            for cid in session.selected
        ):
            raise HTTPException(409, "no selected image has object markers")

        def work(handle):
            with state.locks[sid]:
                session.learn_layer1()
                handle.progress(0.7)
                labeled = any(lab for lab in session.annotations.values())
                if labeled and session.remaining():
                    session.score_remaining()
                return {"n_filters": session.n_filters()}

        return _submit(sid, "learn_layer1", work)

    @app.post("/api/sessions/{sid}/score", status_code=202)
    def score(sid: str):
        session = _session(state, sid)
        if not session.encoder_flair:
            raise HTTPException(409, "learn filters before scoring")
        if not any(lab for lab in session.annotations.values()):
            raise HTTPException(422, "label at least one filter first")

        def work(handle):
            with state.locks[sid]:
                table = session.score_remaining()
                return {"rows": len(table.rows), "recommended": session.recommended}

        return _submit(sid, "score", work)

    @app.get("/api/sessions/{sid}/ranking")
    def ranking(sid: str):
        session = _session(state, sid)
        if not session.remaining():
            return Response(status_code=204)
        if session.scores_stale or session.table is None:
            raise HTTPException(409, "scores are stale; POST /score first")
        lo = session.min_aggregate()
        stop = session.stop_threshold is not None and lo is not None and lo >= session.stop_threshold
        return {
            "rows": _score_rows(session),
            "recommended": session.recommended,
            "min_aggregate": lo,
            "stop_suggested": stop,
        }

    @app.post("/api/sessions/{sid}/select")
    def select(sid: str, body: dict):
        session = _session(state, sid)
        _require_idle(state, sid)
        case_id = body.get("case_id")
        if not case_id:
            raise HTTPException(422, "case_id required")
        with state.locks[sid]:
            try:
                session.select(case_id)
            except KeyError as exc:
                raise HTTPException(404, str(exc)) from exc
            except BudgetExhaustedError as exc:
                raise HTTPException(409, str(exc)) from exc
            except ValueError as exc:
                raise HTTPException(409, str(exc)) from exc
        event = session.history[-1]
        return {
            "selected": list(session.selected),
            "was_recommended": event.recommended == case_id,
            "overridden": event.overridden,
        }

    @app.post("/api/sessions/{sid}/train-encoder-rest", status_code=202)
    def train_encoder_rest(sid: str):
        session = _session(state, sid)
        if not session.encoder_flair:
            raise HTTPException(409, "learn layer 1 first")

        def work(handle):
            with state.locks[sid]:
                session.train_encoder_rest()
                return {
                    "layers": [len(session.encoder_flair), len(session.encoder_t1gd)]
                }

        return _submit(sid, "train_encoder_rest", work)

    @app.post("/api/sessions/{sid}/train-decoder", status_code=202)
    def train_decoder(sid: str, body: dict | None = None):
        session = _session(state, sid)
        body = body or {}
        depth = len(session.arch.encoder_flair)
        if len(session.encoder_flair) != depth:
            raise HTTPException(409, "encoders are not complete; train-encoder-rest first")
        try:
            config = TrainConfig(
                lr0=float(body.get("lr0", 2.5e-3)),
                epochs=int(body.get("epochs", 100)),
                seed=int(body.get("seed", session.seed)),
            )
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc

        def work(handle):
            with state.locks[sid]:
                def on_epoch(entry):
                    handle.progress((entry.epoch + 1) / max(config.epochs, 1))

                log = session.train_decoder(config, progress=on_epoch)
                return {
                    "epochs": [
                        {"epoch": e.epoch, "mean_loss": e.mean_loss, "lr": e.lr}
                        for e in log
                    ]
                }

        return _submit(sid, "train_decoder", work)

    @app.get("/api/sessions/{sid}/metrics")
    def metrics(sid: str):
        session = _session(state, sid)
        try:
            report = session.evaluate("test")
        except NotReadyError as exc:
            raise HTTPException(409, str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        return {
            "image_ids": report.image_ids,
            "per_region": {
                r: {"mean": report.mean(r), "std": report.std(r), "dice": report.per_image[r]}
                for r in ("ET", "TC", "WT")
            },
        }

    @app.post("/api/sessions/{sid}/checkpoint")
    def checkpoint(sid: str, body: dict | None = None):
        session = _session(state, sid)
        body = body or {}
        path = resolve_path(body.get("path", f"session_{sid}.npz"))
        try:
            with state.locks[sid]:
                session.save_checkpoint(path)
        except NotReadyError as exc:
            raise HTTPException(409, str(exc)) from exc
        return {"path": str(path)}

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
