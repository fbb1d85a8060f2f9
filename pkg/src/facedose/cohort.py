"""Synthetic cohort generation with sealed ground truth, plus record ingestion.

The cohort oracle: each patient gets a random latent face, a dose vector,
and the saturating response alpha_true = 1 - exp(-c * A @ u) where A is a
region-aligned gain matrix (zero entries off a muscle's region).  Post
landmarks decode the source latent pushed along the patient's true axes by
alpha_true.  Dosing follows clinical practice: periocular and perioral
muscles are injected bilaterally (equal left/right pair doses), brow
muscles may be unilateral.

Ground truth (alpha_true, A, c, per-patient axes) is emitted to a separate
sealed file that the training pipeline never reads; only the evaluation
harness may open it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .axes import AlphaVector, combine, default_masks, discover_axes
from .doseresponse import J_MUSCLES, DoseVector, MuscleMap, default_muscle_map
from .errors import IngestError, InsufficientData, ShapeMismatch
from .faceworld import LatentCode, SyntheticWorld, symmetric_target
from .geometry import CANONICAL_SIZE, N_LANDMARKS, REGION_IDS, LandmarkSet

EXPRESSIONS = (
    "neutral",
    "brow_raise",
    "eye_closure_gentle",
    "eye_closure_tight",
    "smile_symmetric",
    "smile_strong",
    "lip_pucker",
    "phonation",
)

_EPOCH = datetime(2025, 1, 1, 9, 0, tzinfo=timezone.utc)
_EXPRESSION_SCALE = 0.3
_GLOBAL_LATENT_SCALE = 1.2  # relative to asymmetry_scale


@dataclass(frozen=True)
class CohortConfig:
    n_patients: int = 46
    images_per_patient: int = 8
    seed: int = 0
    asymmetry_scale: float = 0.2
    saturation_c: float = 0.6
    noise_sigma: float = 0.0
    dose_gain: np.ndarray | None = None  # (6, 22) region-aligned response gains

    def __post_init__(self):
        if self.n_patients < 1 or self.images_per_patient < 2:
            raise ShapeMismatch("cohort needs >= 1 patient and >= 2 images each")
        if self.images_per_patient % 2 != 0:
            raise ShapeMismatch("images_per_patient must be even (pre/post pairs)")
        if self.saturation_c <= 0:
            raise ShapeMismatch("saturation constant must be positive")


@dataclass
class Session:
    expression: str
    landmarks: LandmarkSet
    timestamp: str
    phase: str  # "pre" | "post"


@dataclass
class PatientRecord:
    patient_id: str
    sessions: list[Session]
    dose: DoseVector
    metadata: dict = field(default_factory=dict)

    def pre_sessions(self) -> list[Session]:
        return [s for s in self.sessions if s.phase == "pre"]

    def post_sessions(self) -> list[Session]:
        return [s for s in self.sessions if s.phase == "post"]

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": "facedose-patient",
                "version": 1,
                "patient_id": self.patient_id,
                "dose": self.dose.values.tolist(),
                "dose_bounds": self.dose.bounds.tolist(),
                "metadata": self.metadata,
                "sessions": [
                    {
                        "expression": s.expression,
                        "phase": s.phase,
                        "timestamp": s.timestamp,
                        "frame": list(s.landmarks.frame_size),
                        "points": s.landmarks.points.tolist(),
                    }
                    for s in self.sessions
                ],
            },
            separators=(",", ":"),
            sort_keys=True,
        )


def build_dose_gain(muscle_map: MuscleMap, seed: int) -> np.ndarray:
    """Region-aligned response gains; mirrored muscle pairs share their gain."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(777,)))
    gains = rng.uniform(0.08, 0.22, size=J_MUSCLES)
    mirror = muscle_map.mirror_muscle()
    for i in range(J_MUSCLES):
        j = int(mirror[i])
        if j > i:
            gains[j] = gains[i]
    a = np.zeros((len(REGION_IDS), J_MUSCLES))
    region_idx = muscle_map.region_index()
    for m in range(J_MUSCLES):
        a[region_idx[m], m] = gains[m]
    return a


def _expression_offsets(world: SyntheticWorld, seed: int, n: int) -> np.ndarray:
    """Bilaterally symmetric latent offsets, one per expression label."""
    slices = world.block_slices
    block = slices["brow_L"].stop - slices["brow_L"].start
    g = slices["global"]
    n_global = g.stop - g.start
    half = n_global // 2
    out = np.zeros((n, world.latent_size))
    for j in range(n):
        if j == 0:
            continue  # neutral
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(4242, j)))
        for left, right in (("brow_L", "brow_R"), ("eye_L", "eye_R"), ("mouth_L", "mouth_R")):
            coeff = rng.normal(0.0, _EXPRESSION_SCALE, size=block)
            out[j, slices[left]] = coeff
            out[j, slices[right]] = coeff
        g_coeff = rng.normal(0.0, _EXPRESSION_SCALE, size=half)
        out[j, g.start:g.start + half] = g_coeff
        out[j, g.start + half:g.start + 2 * half] = g_coeff
    return out


def _sample_patient_latent(world: SyntheticWorld, rng, scale: float) -> np.ndarray:
    """Random asymmetry direction per block at a comparable severity level.

    Drawing block latents on a shell (fixed norm, random direction) keeps
    per-region asymmetry magnitudes comparable across the cohort, the
    desk-scale analogue of a population with similar clinical severity.
    """
    w = np.zeros(world.latent_size)
    slices = world.block_slices
    for region in REGION_IDS:
        s = slices[region]
        n = s.stop - s.start
        g = rng.normal(size=n)
        radius = scale * np.sqrt(n) * rng.uniform(0.85, 1.15)
        w[s] = radius * g / np.linalg.norm(g)
    g_sl = slices["global"]
    n = g_sl.stop - g_sl.start
    g = rng.normal(size=n)
    radius = _GLOBAL_LATENT_SCALE * scale * np.sqrt(n) * rng.uniform(0.85, 1.15)
    w[g_sl] = radius * g / np.linalg.norm(g)
    return w


def _sample_dose(rng, muscle_map: MuscleMap, bounds: np.ndarray, zero_dose: bool) -> np.ndarray:
    """Bilateral dosing: mirrored muscle pairs receive equal units.

    Each region pair gets a gross treatment intensity (possibly zero:
    untreated regions are common) that scales its muscles' units; this
    keeps the per-region response spread wide instead of letting summed
    doses concentrate.
    """
    if zero_dose:
        return np.zeros(J_MUSCLES)
    u = np.zeros(J_MUSCLES)
    mirror = muscle_map.mirror_muscle()
    aggressiveness = rng.uniform(0.15, 1.0)  # overall dose budget per patient
    intensity: dict[str, float] = {}
    for region in REGION_IDS:
        base = region[:-2]
        if base not in intensity:
            intensity[base] = 0.0 if rng.random() < 0.2 else aggressiveness * rng.uniform(0.55, 1.0)
    for i in range(J_MUSCLES):
        j = int(mirror[i])
        if j < i:
            continue
        level = intensity[muscle_map.region_of[i][:-2]]
        dose = level * rng.uniform(0.52, 0.68) * min(bounds[i], bounds[j])
        u[i] = dose
        u[j] = dose
    return u


@dataclass
class CohortResult:
    records: list[PatientRecord]
    sealed_truth: dict
    world: SyntheticWorld


def generate_cohort(cfg: CohortConfig, world: SyntheticWorld | None = None,
                    muscle_map: MuscleMap | None = None) -> CohortResult:
    """Deterministic synthetic cohort plus its sealed ground-truth document."""
    world = world or SyntheticWorld.create(seed=cfg.seed, noise_sigma=cfg.noise_sigma)
    muscle_map = muscle_map or default_muscle_map()
    masks = default_masks()
    table = world.table
    a_matrix = cfg.dose_gain if cfg.dose_gain is not None else build_dose_gain(muscle_map, cfg.seed)
    a_matrix = np.asarray(a_matrix, dtype=np.float64)
    region_idx = muscle_map.region_index()
    for m in range(J_MUSCLES):
        if np.any(a_matrix[np.arange(len(REGION_IDS)) != region_idx[m], m] != 0.0):
            raise ShapeMismatch(f"dose gain column {m} has off-region entries")

    n_expr = cfg.images_per_patient // 2
    if n_expr > len(EXPRESSIONS):
        raise ShapeMismatch(f"at most {2 * len(EXPRESSIONS)} images per patient supported")
    offsets = _expression_offsets(world, cfg.seed, n_expr)
    bounds = np.full(J_MUSCLES, 10.0)

    records: list[PatientRecord] = []
    sealed_patients: dict[str, dict] = {}
    for i in range(cfg.n_patients):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(i,)))
        patient_id = f"p{i:03d}"
        zero_dose = i % 12 == 0
        w_src = _sample_patient_latent(world, rng, cfg.asymmetry_scale)
        u = _sample_dose(rng, muscle_map, bounds, zero_dose)
        alpha_true = 1.0 - np.exp(-cfg.saturation_c * (a_matrix @ u))

        neutral = world.decode(LatentCode(w_src.reshape(world.latent_rows, world.latent_cols)))
        tgt, _ = symmetric_target(neutral, world, table)
        basis_true = discover_axes(neutral, tgt, masks, world, patient_id=patient_id)

        sessions: list[Session] = []
        for j in range(n_expr):
            w_expr = LatentCode((w_src + offsets[j]).reshape(world.latent_rows, world.latent_cols))
            pre_pts = world.decode(w_expr).points
            w_post = combine(w_expr, basis_true, AlphaVector(alpha_true))
            post_pts = world.decode(w_post).points
            if cfg.noise_sigma > 0:
                pre_pts = pre_pts + rng.normal(0.0, cfg.noise_sigma, size=pre_pts.shape)
                post_pts = post_pts + rng.normal(0.0, cfg.noise_sigma, size=post_pts.shape)
            t_pre = (_EPOCH + timedelta(days=i, hours=j)).isoformat()
            t_post = (_EPOCH + timedelta(days=i + 30, hours=j)).isoformat()
            sessions.append(Session(EXPRESSIONS[j], LandmarkSet(pre_pts, (CANONICAL_SIZE, CANONICAL_SIZE)), t_pre, "pre"))
            sessions.append(Session(EXPRESSIONS[j], LandmarkSet(post_pts, (CANONICAL_SIZE, CANONICAL_SIZE)), t_post, "post"))

        records.append(
            PatientRecord(
                patient_id=patient_id,
                sessions=sessions,
                dose=DoseVector(u, bounds),
                metadata={"cohort_seed": cfg.seed, "zero_dose": zero_dose},
            )
        )
        sealed_patients[patient_id] = {
            "alpha_true": alpha_true.tolist(),
            "w_src": w_src.tolist(),
            "basis_true": json.loads(basis_true.to_json()),
        }

    sealed = {
        "format": "facedose-sealed-truth",
        "version": 1,
        "seed": cfg.seed,
        "saturation_c": cfg.saturation_c,
        "dose_gain": a_matrix.tolist(),
        "patients": sealed_patients,
    }
    return CohortResult(records=records, sealed_truth=sealed, world=world)


def split_by_patient(records: list[PatientRecord], ratio: float = 0.8,
                     seed: int = 0) -> tuple[list[PatientRecord], list[PatientRecord]]:
    """Disjoint patient-identity split, proportions within one patient of ratio."""
    if len(records) < 2:
        raise InsufficientData("need at least 2 patients to split")
    ids = sorted(r.patient_id for r in records)
    if len(set(ids)) != len(ids):
        raise IngestError("duplicate patient ids in split input")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_train = int(len(ids) * ratio + 0.5)
    n_train = min(max(n_train, 1), len(ids) - 1)
    train_ids = {ids[k] for k in order[:n_train]}
    train = [r for r in records if r.patient_id in train_ids]
    test = [r for r in records if r.patient_id not in train_ids]
    return train, test


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def _parse_record(doc: dict, where: str) -> PatientRecord:
    if doc.get("format") != "facedose-patient" or doc.get("version") != 1:
        raise IngestError("unsupported record format/version", where)
    pid = doc.get("patient_id")
    if not pid or not isinstance(pid, str):
        raise IngestError("missing patient_id", where)
    dose_vals = np.asarray(doc.get("dose", []), dtype=np.float64)
    bounds = np.asarray(doc.get("dose_bounds", np.full(J_MUSCLES, 10.0)), dtype=np.float64)
    if dose_vals.shape != (J_MUSCLES,):
        raise IngestError(f"dose must list {J_MUSCLES} values", f"{where}:dose")
    if (dose_vals < 0).any():
        bad = int(np.argmin(dose_vals))
        raise IngestError(f"negative dose at muscle index {bad}", f"{where}:dose[{bad}]")
    if (dose_vals > bounds).any():
        bad = int(np.argmax(dose_vals - bounds))
        raise IngestError(f"dose exceeds bound at muscle index {bad}", f"{where}:dose[{bad}]")
    sessions = []
    for k, s in enumerate(doc.get("sessions", [])):
        loc = f"{where}:sessions[{k}]"
        phase = s.get("phase")
        if phase not in ("pre", "post"):
            raise IngestError(f"phase must be pre|post, got {phase!r}", loc)
        pts = np.asarray(s.get("points", []), dtype=np.float64)
        if pts.shape != (N_LANDMARKS, 2):
            raise IngestError(
                f"session has {pts.shape[0] if pts.ndim else 0} points, expected {N_LANDMARKS}", loc
            )
        if not np.isfinite(pts).all():
            raise IngestError("non-finite landmark coordinates", loc)
        frame = s.get("frame", [CANONICAL_SIZE, CANONICAL_SIZE])
        try:
            lms = LandmarkSet(pts, (frame[0], frame[1]))
        except Exception as exc:
            raise IngestError(f"invalid landmarks: {exc}", loc) from exc
        sessions.append(Session(s.get("expression", "neutral"), lms, s.get("timestamp", ""), phase))
    record = PatientRecord(
        patient_id=pid,
        sessions=sessions,
        dose=DoseVector(dose_vals, bounds),
        metadata=doc.get("metadata", {}),
    )
    pre = record.pre_sessions()
    post = record.post_sessions()
    if not pre or not post:
        raise IngestError("record needs at least one pre and one post session", where)
    if all(s.timestamp for s in record.sessions):
        last_pre = max(s.timestamp for s in pre)
        first_post = min(s.timestamp for s in post)
        if not last_pre < first_post:
            raise IngestError("pre sessions must precede post sessions", f"{where}:timestamps")
    return record


def ingest(path) -> list[PatientRecord]:
    """Load and validate patient record files (a directory or a single file)."""
    path = Path(path)
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    if not files:
        raise IngestError(f"no record files under {path}")
    records = []
    seen = set()
    for f in files:
        try:
            doc = json.loads(f.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise IngestError(f"unreadable record file: {exc}", str(f)) from exc
        record = _parse_record(doc, f.name)
        if record.patient_id in seen:
            raise IngestError(f"duplicate patient id {record.patient_id}", str(f))
        seen.add(record.patient_id)
        records.append(record)
    return records


def export(records: list[PatientRecord], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for r in records:
        p = out_dir / f"{r.patient_id}.json"
        p.write_text(r.to_json())
        written.append(p)
    return written
