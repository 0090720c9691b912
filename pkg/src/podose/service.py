"""Live trial-conduct HTTP service.

Event-sourced: every mutation appends a line to an append-only JSON-Lines
file, one file per trial, and the served state is always reproducible by
replaying that file.  Undo never truncates the log; it appends an ``undone``
event.  Mutating posts carry client idempotency keys so a retried request
returns the original response without a duplicate event.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .engine import (
    ConfigError,
    TrialState,
    apply_cohort,
    init_trial,
    recommend,
)
from .inference import InferenceError
from .reporting import config_from_dict, config_to_dict

EVENT_SCHEMA_VERSION = 1


class CohortBody(BaseModel):
    outcomes: dict[int, int]
    key: str


class WhatIfBody(BaseModel):
    outcomes: dict[int, int]


class UndoBody(BaseModel):
    key: str


@dataclass
class _Trial:
    trial_id: str
    events: list[dict]
    state: TrialState
    lock: threading.Lock = field(default_factory=threading.Lock)
    responses: dict[str, dict] = field(default_factory=dict)  # idempotency cache


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def replay_events(events: list[dict]) -> TrialState:
    """Reconstruct the trial state from an event sequence.

    ``undone`` removes the most recent not-yet-undone cohort; the surviving
    cohorts are applied in order to a fresh trial.
    """
    if not events or events[0]["kind"] != "created":
        raise ValueError("event log must start with a created event")
    config = config_from_dict(events[0]["payload"]["config"])
    net: list[dict] = []
    for ev in events[1:]:
        if ev["kind"] == "cohort_recorded":
            net.append(ev["payload"]["outcomes"])
        elif ev["kind"] == "undone":
            if not net:
                raise ValueError("undone event with no cohort to undo")
            net.pop()
        else:
            raise ValueError(f"unknown event kind {ev['kind']!r}")
    state = init_trial(config)
    for outcomes in net:
        state = apply_cohort(state, {int(a): int(v) for a, v in outcomes.items()})
    return state


def load_trial(path: Path) -> _Trial:
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(json.loads(line))
    trial = _Trial(trial_id=path.stem, events=events, state=replay_events(events))
    for ev in events:
        key = ev.get("key")
        if key:
            trial.responses.setdefault(key, {})
    return trial


def recommendation_view(trial: _Trial) -> dict:
    state = trial.state
    config = state.config
    last = state.cohorts[-1] if state.cohorts else None
    if last is not None:
        stats = last.ordering_stats
        s_star = last.selected_ordering
        phat = last.phat
    else:
        step = recommend(config, state.y, state.n)
        stats = step.ordering_stats
        s_star = step.selected_ordering
        phat = [None if p != p else float(p) for p in step.phat]
    detail = recommend(config, state.y, state.n, intervals=True)
    intervals = {
        str(arm): [float(lo), float(hi)] for arm, (lo, hi) in detail.intervals.items()
    }
    total = config.n_cohorts * config.cohort_size
    return {
        "trial_id": trial.trial_id,
        "complete": state.complete,
        "recommendation": state.recommendation,
        "next_allocation": {str(a): c for a, c in state.pending_alloc.items()},
        "selected_ordering": s_star + 1,
        "ordering_stats": [float(v) for v in stats],
        "ordering_stat_kind": "aic" if config.design == "poblrm" else "posterior",
        "estimates": {
            str(i): (None if phat[i] is None or phat[i] != phat[i] else float(phat[i]))
            for i in range(len(phat))
        },
        "intervals": intervals,
        "patients_enrolled": state.patients_enrolled,
        "patients_remaining": total - state.patients_enrolled,
        "cohorts_recorded": len(state.cohorts),
        "cohorts_total": config.n_cohorts,
    }


def create_app(data_dir: str | Path) -> FastAPI:
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    app = FastAPI(title="podose conduct service")
    trials: dict[str, _Trial] = {}
    registry_lock = threading.Lock()

    for path in sorted(data_dir.glob("*.jsonl")):
        try:
            trials[path.stem] = load_trial(path)
        except (ValueError, ConfigError, json.JSONDecodeError):
            continue  # unreadable logs are skipped, never overwritten

    def _append(trial: _Trial, kind: str, payload: dict, key: str | None) -> dict:
        event = {
            "schema_version": EVENT_SCHEMA_VERSION,
            "seq": len(trial.events),
            "kind": kind,
            "payload": payload,
            "timestamp": _now(),
        }
        if key:
            event["key"] = key
        with open(data_dir / f"{trial.trial_id}.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
        trial.events.append(event)
        return event

    def _get(trial_id: str) -> _Trial:
        trial = trials.get(trial_id)
        if trial is None:
            raise HTTPException(status_code=404, detail="no such trial")
        return trial

    @app.exception_handler(ConfigError)
    async def _config_error(request, exc):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(InferenceError)
    async def _numeric_error(request, exc):
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    @app.post("/trials", status_code=201)
    def create_trial(body: dict):
        try:
            config = config_from_dict(body.get("config", body))
        except (ValueError, TypeError, KeyError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        state = init_trial(config)  # raises ConfigError -> 422
        trial_id = uuid.uuid4().hex[:12]
        trial = _Trial(trial_id=trial_id, events=[], state=state)
        with registry_lock:
            trials[trial_id] = trial
        with trial.lock:
            _append(
                trial,
                "created",
                {"config": config_to_dict(state.config)},
                body.get("key"),
            )
            return recommendation_view(trial)

    @app.post("/trials/{trial_id}/cohorts")
    def record_cohort(trial_id: str, body: CohortBody):
        trial = _get(trial_id)
        with trial.lock:
            cached = trial.responses.get(body.key)
            if cached:
                return cached
            if trial.state.complete:
                raise HTTPException(status_code=409, detail="trial already complete")
            try:
                trial.state = apply_cohort(trial.state, dict(body.outcomes))
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from None
            _append(trial, "cohort_recorded", {"outcomes": {str(a): v for a, v in body.outcomes.items()}}, body.key)
            view = recommendation_view(trial)
            trial.responses[body.key] = view
            return view

    @app.post("/trials/{trial_id}/whatif")
    def whatif(trial_id: str, body: WhatIfBody):
        trial = _get(trial_id)
        with trial.lock:
            if trial.state.complete:
                raise HTTPException(status_code=409, detail="trial already complete")
            saved = trial.state
            try:
                hypothetical = apply_cohort(saved, dict(body.outcomes))
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from None
            probe = _Trial(trial.trial_id, trial.events, hypothetical)
            view = recommendation_view(probe)
            view["whatif"] = True
            return view

    @app.post("/trials/{trial_id}/undo")
    def undo(trial_id: str, body: UndoBody):
        trial = _get(trial_id)
        with trial.lock:
            cached = trial.responses.get(body.key)
            if cached:
                return cached
            if not trial.state.cohorts:
                raise HTTPException(status_code=409, detail="nothing to undo")
            _append(trial, "undone", {}, body.key)
            trial.state = replay_events(trial.events)
            view = recommendation_view(trial)
            trial.responses[body.key] = view
            return view

    @app.get("/trials/{trial_id}")
    def get_state(trial_id: str):
        trial = _get(trial_id)
        with trial.lock:
            view = recommendation_view(trial)
            view["config"] = config_to_dict(trial.state.config)
            view["history"] = [
                {
                    "alloc": {str(a): v for a, v in c.alloc.items()},
                    "dlts": {str(a): v for a, v in c.dlts.items()},
                    "selected_ordering": c.selected_ordering + 1,
                    "recommendation": c.recommendation,
                    # strict JSON has no NaN; the SoC slot is null when unused
                    "phat": [None if p != p else p for p in c.phat],
                    "ordering_stats": c.ordering_stats,
                }
                for c in trial.state.cohorts
            ]
            return view

    @app.get("/trials/{trial_id}/events")
    def get_events(trial_id: str):
        trial = _get(trial_id)
        with trial.lock:
            return {"trial_id": trial_id, "events": list(trial.events)}

    @app.get("/trials")
    def list_trials():
        with registry_lock:
            return {
                "trials": [
                    {
                        "trial_id": t.trial_id,
                        "complete": t.state.complete,
                        "cohorts_recorded": len(t.state.cohorts),
                        "design": t.state.config.design,
                    }
                    for t in trials.values()
                ]
            }

    static_dir = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"
    if static_dir.is_dir():
        app.mount("/ui", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
