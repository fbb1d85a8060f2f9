"""Human-in-the-loop planning service: sessions, sliders, inverse dosing.

File-backed FastAPI app.  Patients and sessions are one JSON document each
under the data directory, feedback is an append-only JSONL log, and the
trained planner bundle (world + forward models + anchor doses) is immutable
shared state.  Every error uses the {code, message, field} envelope.

Environment: FACEDOSE_DATA_DIR, FACEDOSE_BUNDLE, FACEDOSE_HOST,
FACEDOSE_PORT.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import kernels
from .axes import ALPHA_MAX, ALPHA_MIN, AlphaVector, AxisBasis, default_masks, discover_axes
from .cohort import PatientRecord, _parse_record
from .doseresponse import (
    J_MUSCLES,
    DoseVector,
    PlannerBundle,
    build_features,
    invert_dose,
)
from .errors import IngestError
from .faceworld import symmetric_target
from .geometry import REGION_IDS, LandmarkSet, MetricVector, metrics_of

SCHEMA_VERSION = 1


def _envelope(code: str, message: str, field_name: str = "") -> dict:
    return {"code": code, "message": message, "field": field_name}


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, field_name: str = ""):
        self.status = status
        self.payload = _envelope(code, message, field_name)
        super().__init__(message)


@dataclass
class PlanningSession:
    session_id: str
    patient_id: str
    w_src: np.ndarray
    basis: AxisBasis
    m_src: MetricVector
    source_points: np.ndarray
    current_alpha: list[float] = field(default_factory=lambda: [0.0] * 6)
    current_dose: list[float] = field(default_factory=lambda: [0.0] * J_MUSCLES)
    current_residual: float = 0.0
    history: list[dict] = field(default_factory=list)
    closed: bool = False

    def append(self, origin: str, alpha, dose, residual: float):
        self.history.append(
            {
                "timestamp": time.time(),
                "alpha": list(map(float, alpha)),
                "dose": list(map(float, dose)),
                "residual": float(residual),
                "origin": origin,
            }
        )
        self.current_alpha = list(map(float, alpha))
        self.current_dose = list(map(float, dose))
        self.current_residual = float(residual)

    def to_doc(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": self.session_id,
            "patient_id": self.patient_id,
            "w_src": self.w_src.tolist(),
            "basis": json.loads(self.basis.to_json()),
            "m_src": self.m_src.as_array().tolist(),
            "source_points": self.source_points.tolist(),
            "current_alpha": self.current_alpha,
            "current_dose": self.current_dose,
            "current_residual": self.current_residual,
            "history": self.history,
            "closed": self.closed,
        }


class PlannerState:
    """All mutable service state; one lock per session, files under data_dir."""

    def __init__(self, data_dir: Path, bundle: PlannerBundle | None):
        self.data_dir = Path(data_dir)
        (self.data_dir / "patients").mkdir(parents=True, exist_ok=True)
        (self.data_dir / "sessions").mkdir(parents=True, exist_ok=True)
        self.feedback_path = self.data_dir / "feedback.jsonl"
        self.bundle = bundle
        self.masks = default_masks()
        self.patients: dict[str, PatientRecord] = {}
        self.sessions: dict[str, PlanningSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._global = threading.Lock()
        for f in sorted((self.data_dir / "patients").glob("*.json")):
            record = _parse_record(json.loads(f.read_text()), f.name)
            self.patients[record.patient_id] = record
        if bundle is not None:
            kernels.warmup(bundle.world.table.flat())

    def lock_for(self, session_id: str) -> threading.Lock:
        with self._global:
            if session_id not in self._locks:
                self._locks[session_id] = threading.Lock()
            return self._locks[session_id]

    def persist_session(self, session: PlanningSession):
        path = self.data_dir / "sessions" / f"{session.session_id}.json"
        path.write_text(json.dumps(session.to_doc()))

    def load_session(self, session_id: str) -> PlanningSession:
        if session_id in self.sessions:
            return self.sessions[session_id]
        path = self.data_dir / "sessions" / f"{session_id}.json"
        if not path.exists():
            raise ApiError(404, "session_not_found", f"no session {session_id}")
        doc = json.loads(path.read_text())
        session = PlanningSession(
            session_id=doc["session_id"],
            patient_id=doc["patient_id"],
            w_src=np.asarray(doc["w_src"]),
            basis=AxisBasis.from_json(json.dumps(doc["basis"])),
            m_src=MetricVector.from_array(np.asarray(doc["m_src"])),
            source_points=np.asarray(doc["source_points"]),
            current_alpha=doc["current_alpha"],
            current_dose=doc["current_dose"],
            current_residual=doc["current_residual"],
            history=doc["history"],
            closed=doc.get("closed", False),
        )
        self.sessions[session_id] = session
        return session


def _alpha_from_body(body) -> AlphaVector:
    alpha = body.get("alpha") if isinstance(body, dict) else None
    if not isinstance(alpha, list) or len(alpha) != len(REGION_IDS):
        raise ApiError(422, "invalid_alpha", "alpha must list 6 region intensities", "alpha")
    arr = np.asarray(alpha, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ApiError(422, "invalid_alpha", "alpha must be finite", "alpha")
    for k, region in enumerate(REGION_IDS):
        if arr[k] < ALPHA_MIN or arr[k] > ALPHA_MAX:
            raise ApiError(
                422, "alpha_out_of_bounds",
                f"alpha[{region}] = {arr[k]} outside [{ALPHA_MIN}, {ALPHA_MAX}]",
                f"alpha.{region}",
            )
    return AlphaVector(arr)


def _dose_from_body(body, bounds) -> DoseVector:
    dose = body.get("dose") if isinstance(body, dict) else None
    if not isinstance(dose, list) or len(dose) != J_MUSCLES:
        raise ApiError(422, "invalid_dose", f"dose must list {J_MUSCLES} values", "dose")
    arr = np.asarray(dose, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ApiError(422, "invalid_dose", "dose must be finite", "dose")
    for j in range(J_MUSCLES):
        if arr[j] < 0 or arr[j] > bounds[j]:
            raise ApiError(
                422, "dose_out_of_bounds",
                f"dose[{j}] = {arr[j]} outside [0, {bounds[j]}]",
                f"dose.{j}",
            )
    return DoseVector(arr, bounds)


def create_app(data_dir, bundle: PlannerBundle | None = None) -> FastAPI:
    state = PlannerState(Path(data_dir), bundle)
    app = FastAPI(title="facedose planning service")
    app.state.planner = state

    @app.exception_handler(ApiError)
    async def on_api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content=exc.payload)

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(_req: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        loc = ".".join(str(p) for p in first.get("loc", []))
        return JSONResponse(
            status_code=400,
            content=_envelope("invalid_body", first.get("msg", "malformed request body"), loc),
        )

    def require_bundle() -> PlannerBundle:
        if state.bundle is None:
            raise ApiError(409, "no_model", "no trained planner bundle is loaded")
        return state.bundle

    def simulate_alpha(session: PlanningSession, alpha: AlphaVector):
        # the constant reconstruction residual (observed face minus its
        # projection) is composited back so zero alpha reproduces the
        # patient's observed landmarks exactly
        bundle = require_bundle()
        world = bundle.world
        base = world.decode_points(session.w_src)
        flat = session.w_src + alpha.values @ session.basis.axes.reshape(len(REGION_IDS), -1)
        pts = world.decode_points(flat) + (session.source_points - base)
        face = LandmarkSet(np.clip(pts, 0, 256), (256, 256))
        metrics = metrics_of(face, world.table)
        return face, metrics

    # -- patients ----------------------------------------------------------

    @app.post("/patients", status_code=201)
    def create_patient(body: dict):
        try:
            record = _parse_record(body, "request")
        except IngestError as exc:
            raise ApiError(400, "invalid_record", str(exc), exc.location)
        if record.patient_id in state.patients:
            raise ApiError(409, "duplicate_patient", f"patient {record.patient_id} exists")
        state.patients[record.patient_id] = record
        path = state.data_dir / "patients" / f"{record.patient_id}.json"
        path.write_text(record.to_json())
        return {"schema_version": SCHEMA_VERSION, "patient_id": record.patient_id}

    @app.get("/patients/{patient_id}")
    def get_patient(patient_id: str):
        record = state.patients.get(patient_id)
        if record is None:
            raise ApiError(404, "patient_not_found", f"no patient {patient_id}")
        return {
            "schema_version": SCHEMA_VERSION,
            "patient_id": record.patient_id,
            "n_sessions": len(record.sessions),
            "dose": record.dose.values.tolist(),
            "metadata": record.metadata,
        }

    # -- planning sessions --------------------------------------------------

    @app.post("/patients/{patient_id}/sessions", status_code=201)
    def create_session(patient_id: str, body: dict | None = None):
        bundle = require_bundle()
        record = state.patients.get(patient_id)
        if record is None:
            raise ApiError(404, "patient_not_found", f"no patient {patient_id}")
        pre = record.pre_sessions()
        if not pre:
            raise ApiError(400, "no_pre_session", "patient has no pre-phase landmarks")
        world = bundle.world
        table = world.table
        src = pre[0].landmarks
        w_src = world.encode(src)
        tgt, _ = symmetric_target(src, world, table)
        basis = discover_axes(src, tgt, state.masks, world, patient_id=patient_id)
        m_src = metrics_of(src, table)

        if body and body.get("dose") is not None:
            dose = _dose_from_body(body, bundle.bounds)
        else:
            dose = DoseVector.zeros(bundle.bounds)
        alpha = AlphaVector.clamped(
            bundle.model_a.predict(build_features(dose.values, m_src.as_array()))
        )
        session = PlanningSession(
            session_id=uuid.uuid4().hex,
            patient_id=patient_id,
            w_src=w_src.flat(),
            basis=basis,
            m_src=m_src,
            source_points=src.points,
        )
        face, metrics = simulate_alpha(session, alpha)
        session.append("ai", alpha.values, dose.values, 0.0)
        state.sessions[session.session_id] = session
        state.persist_session(session)
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": session.session_id,
            "patient_id": patient_id,
            "alpha": alpha.values.tolist(),
            "dose": dose.values.tolist(),
            "m_src": m_src.as_array().tolist(),
            "metrics": metrics.as_array().tolist(),
            "source_landmarks": session.source_points.tolist(),
            "landmarks": face.points.tolist(),
            "rois": [{"region_id": m.region_id, "rect": list(m.rect)} for m in state.masks],
            "history": session.history,
        }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        session = state.load_session(session_id)
        alpha = AlphaVector(np.asarray(session.current_alpha))
        face, metrics = simulate_alpha(session, alpha)
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": session.session_id,
            "patient_id": session.patient_id,
            "alpha": session.current_alpha,
            "dose": session.current_dose,
            "residual": session.current_residual,
            "m_src": session.m_src.as_array().tolist(),
            "metrics": metrics.as_array().tolist(),
            "source_landmarks": session.source_points.tolist(),
            "landmarks": face.points.tolist(),
            "rois": [{"region_id": m.region_id, "rect": list(m.rect)} for m in state.masks],
            "history": session.history,
            "closed": session.closed,
        }

    @app.post("/sessions/{session_id}/adjust")
    def adjust(session_id: str, body: dict):
        bundle = require_bundle()
        session = state.load_session(session_id)
        alpha = _alpha_from_body(body)
        with state.lock_for(session_id):
            inversion = invert_dose(
                alpha, session.m_src, bundle.model_a, bundle.bounds,
                seed=17, extra_starts=bundle.train_doses, effort="interactive",
            )
            face, metrics = simulate_alpha(session, alpha)
            session.append("clinician", alpha.values, inversion.dose.values, inversion.residual)
            state.persist_session(session)
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": session_id,
            "dose_estimate": inversion.dose.values.tolist(),
            "residual": inversion.residual,
            "metrics": metrics.as_array().tolist(),
            "landmarks": face.points.tolist(),
        }

    @app.post("/sessions/{session_id}/simulate")
    def simulate(session_id: str, body: dict):
        bundle = require_bundle()
        session = state.load_session(session_id)
        dose = _dose_from_body(body, bundle.bounds)
        with state.lock_for(session_id):
            alpha = AlphaVector.clamped(
                bundle.model_a.predict(build_features(dose.values, session.m_src.as_array()))
            )
            face, metrics = simulate_alpha(session, alpha)
            session.append("ai", alpha.values, dose.values, 0.0)
            state.persist_session(session)
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": session_id,
            "alpha": alpha.values.tolist(),
            "metrics": metrics.as_array().tolist(),
            "landmarks": face.points.tolist(),
        }

    @app.post("/sessions/{session_id}/close")
    def close_session(session_id: str):
        session = state.load_session(session_id)
        with state.lock_for(session_id):
            session.closed = True
            state.persist_session(session)
        return {"schema_version": SCHEMA_VERSION, "session_id": session_id, "closed": True}

    @app.post("/sessions/{session_id}/feedback", status_code=201)
    def feedback(session_id: str, body: dict):
        session = state.load_session(session_id)
        u_new = body.get("u_new")
        if not isinstance(u_new, list) or len(u_new) != J_MUSCLES:
            raise ApiError(400, "invalid_feedback", f"u_new must list {J_MUSCLES} doses", "u_new")
        outcome = body.get("outcome_metrics")
        if not isinstance(outcome, list) or len(outcome) != 6:
            raise ApiError(400, "invalid_feedback", "outcome_metrics must list 6 values",
                           "outcome_metrics")
        record = {
            "schema_version": SCHEMA_VERSION,
            "feedback_id": body.get("client_ref") or uuid.uuid4().hex,
            "session_id": session_id,
            "patient_id": session.patient_id,
            "u_new": [float(v) for v in u_new],
            "outcome_metrics": [float(v) for v in outcome],
            "accepted": bool(body.get("accepted", False)),
            "note": str(body.get("note", "")),
            "late": session.closed,
            "timestamp": time.time(),
        }
        with state.lock_for(session_id):
            existing = []
            if state.feedback_path.exists():
                existing = [
                    json.loads(line)["feedback_id"]
                    for line in state.feedback_path.read_text().splitlines() if line
                ]
            if record["feedback_id"] in existing:
                return {"schema_version": SCHEMA_VERSION,
                        "feedback_id": record["feedback_id"], "duplicate": True}
            with open(state.feedback_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")
        return {"schema_version": SCHEMA_VERSION, "feedback_id": record["feedback_id"],
                "late": record["late"]}

    @app.get("/feedback")
    def list_feedback():
        items = []
        if state.feedback_path.exists():
            items = [json.loads(line) for line in state.feedback_path.read_text().splitlines()
                     if line]
        return {"schema_version": SCHEMA_VERSION, "items": items}

    return app


def app_from_env() -> FastAPI:
    data_dir = os.environ.get("FACEDOSE_DATA_DIR", "./data")
    bundle_path = os.environ.get("FACEDOSE_BUNDLE", "")
    bundle = None
    if bundle_path:
        bundle = PlannerBundle.from_json(Path(bundle_path).read_text())
    return create_app(data_dir, bundle)
