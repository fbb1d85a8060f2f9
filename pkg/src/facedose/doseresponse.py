"""Dose-to-outcome modeling: calibration, both forward pipelines, inversion.

Feature layout is a frozen contract shared by both approaches: the 22
per-muscle doses followed by the 6 pre-treatment metrics, in that order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .axes import ALPHA_MAX, ALPHA_MIN, AlphaVector, AxisBasis, combine, discover_axes
from .errors import (
    CalibrationDiverged,
    FormatError,
    InsufficientData,
    InvalidMeasurement,
    NotCalibrated,
    ShapeMismatch,
)
from .faceworld import LatentCode, SyntheticWorld, symmetric_target
from .gbm import GbmConfig, GbmModel, train
from .geometry import (
    METRIC_NAMES,
    REGION_IDS,
    LandmarkSet,
    MetricVector,
    RegionIndexTable,
    metrics_of,
)

J_MUSCLES = 22
DEFAULT_DOSE_BOUND = 10.0
EPS_DIV = 1e-6

# per-region muscle groups; 3 + 3 + 4 + 4 + 4 + 4 = 22
_MUSCLE_GROUPS = {
    "brow_L": ["frontalis_medial_L", "frontalis_lateral_L", "corrugator_L"],
    "brow_R": ["frontalis_medial_R", "frontalis_lateral_R", "corrugator_R"],
    "eye_L": [
        "orbicularis_oculi_upper_L", "orbicularis_oculi_lower_L",
        "orbicularis_oculi_lateral_L", "depressor_supercilii_L",
    ],
    "eye_R": [
        "orbicularis_oculi_upper_R", "orbicularis_oculi_lower_R",
        "orbicularis_oculi_lateral_R", "depressor_supercilii_R",
    ],
    "mouth_L": [
        "zygomaticus_major_L", "zygomaticus_minor_L",
        "depressor_anguli_oris_L", "levator_labii_L",
    ],
    "mouth_R": [
        "zygomaticus_major_R", "zygomaticus_minor_R",
        "depressor_anguli_oris_R", "levator_labii_R",
    ],
}


@dataclass(frozen=True)
class DoseVector:
    """22 per-muscle doses in toxin Units, bounded per muscle."""

    values: np.ndarray
    bounds: np.ndarray = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (J_MUSCLES,):
            raise ShapeMismatch(f"dose must have shape ({J_MUSCLES},), got {vals.shape}")
        bounds = self.bounds
        if bounds is None:
            bounds = np.full(J_MUSCLES, DEFAULT_DOSE_BOUND)
        bounds = np.asarray(bounds, dtype=np.float64)
        if bounds.shape != (J_MUSCLES,) or (bounds <= 0).any():
            raise ShapeMismatch("bounds must be 22 positive reals")
        if not np.isfinite(vals).all():
            raise InvalidMeasurement("dose must be finite")
        if (vals < 0).any():
            bad = int(np.argmin(vals))
            raise InvalidMeasurement(f"dose must be non-negative (muscle index {bad})")
        if (vals > bounds).any():
            bad = int(np.argmax(vals - bounds))
            raise InvalidMeasurement(f"dose exceeds bound at muscle index {bad}")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def zeros(cls, bounds=None) -> "DoseVector":
        return cls(np.zeros(J_MUSCLES), bounds)


@dataclass(frozen=True)
class MuscleMap:
    """Muscle labels, their region affiliation, and left/right pairing."""

    labels: tuple[str, ...]
    region_of: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) != J_MUSCLES or len(self.region_of) != J_MUSCLES:
            raise ShapeMismatch(f"muscle map must cover {J_MUSCLES} muscles")
        for r in self.region_of:
            if r not in REGION_IDS:
                raise ShapeMismatch(f"unknown region {r!r} in muscle map")
        for region in REGION_IDS:
            if region not in self.region_of:
                raise ShapeMismatch(f"region {region!r} has no muscles")

    def region_index(self) -> np.ndarray:
        return np.asarray([REGION_IDS.index(r) for r in self.region_of], dtype=np.int64)

    def mirror_muscle(self) -> np.ndarray:
        """Index of each muscle's contralateral partner (by mirrored label)."""
        out = np.empty(J_MUSCLES, dtype=np.int64)
        lookup = {lbl: i for i, lbl in enumerate(self.labels)}
        for i, lbl in enumerate(self.labels):
            if lbl.endswith("_L"):
                out[i] = lookup[lbl[:-2] + "_R"]
            elif lbl.endswith("_R"):
                out[i] = lookup[lbl[:-2] + "_L"]
            else:
                out[i] = i
        return out


def default_muscle_map() -> MuscleMap:
    labels: list[str] = []
    regions: list[str] = []
    for region in REGION_IDS:
        for lbl in _MUSCLE_GROUPS[region]:
            labels.append(lbl)
            regions.append(region)
    return MuscleMap(labels=tuple(labels), region_of=tuple(regions))


FEATURE_NAMES = tuple(f"u_{lbl}" for lbl in default_muscle_map().labels) + METRIC_NAMES


def build_features(u: np.ndarray, m_src: np.ndarray) -> np.ndarray:
    """Frozen feature concatenation: u_1..u_22 then the six source metrics."""
    u = np.asarray(u, dtype=np.float64)
    m = np.asarray(m_src, dtype=np.float64)
    if u.shape != (J_MUSCLES,) or m.shape != (6,):
        raise ShapeMismatch(f"bad feature parts: {u.shape} / {m.shape}")
    return np.concatenate([u, m])


@dataclass
class TrainingCase:
    patient_id: str
    expression: str
    w_src: LatentCode
    basis: AxisBasis
    m_src: MetricVector
    m_post: MetricVector
    u: DoseVector
    alpha_gt: AlphaVector | None = None
    pre_points: np.ndarray | None = None
    post_points: np.ndarray | None = None

    def features(self) -> np.ndarray:
        return build_features(self.u.values, self.m_src.as_array())

    def to_json(self) -> str:
        """Versioned case bundle: landmarks, dose, metrics, optional alpha."""
        if self.pre_points is None or self.post_points is None:
            raise ShapeMismatch("case file needs the pre/post landmark frames")
        doc = {
            "format": "facedose-case",
            "version": 1,
            "patient_id": self.patient_id,
            "expression": self.expression,
            "pre_points": np.asarray(self.pre_points).tolist(),
            "post_points": np.asarray(self.post_points).tolist(),
            "dose": self.u.values.tolist(),
            "dose_bounds": self.u.bounds.tolist(),
            "m_src": self.m_src.as_array().tolist(),
            "m_post": self.m_post.as_array().tolist(),
            "alpha_gt": None if self.alpha_gt is None else self.alpha_gt.values.tolist(),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str, world: SyntheticWorld, table: RegionIndexTable,
                  masks) -> "TrainingCase":
        """Rebuild a case; the latent code and axes re-derive from the pre frame."""
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed case file: {exc}") from exc
        if doc.get("format") != "facedose-case" or doc.get("version") != 1:
            raise FormatError("unsupported case format/version")
        from .geometry import CANONICAL_SIZE, LandmarkSet

        pre = np.asarray(doc["pre_points"], dtype=np.float64)
        post = np.asarray(doc["post_points"], dtype=np.float64)
        src = LandmarkSet(pre, (CANONICAL_SIZE, CANONICAL_SIZE))
        tgt, _ = symmetric_target(src, world, table)
        return cls(
            patient_id=doc["patient_id"],
            expression=doc["expression"],
            w_src=world.encode(src),
            basis=discover_axes(src, tgt, masks, world, patient_id=doc["patient_id"]),
            m_src=MetricVector.from_array(np.asarray(doc["m_src"])),
            m_post=MetricVector.from_array(np.asarray(doc["m_post"])),
            u=DoseVector(np.asarray(doc["dose"]), np.asarray(doc["dose_bounds"])),
            alpha_gt=None if doc["alpha_gt"] is None
            else AlphaVector(np.asarray(doc["alpha_gt"])),
            pre_points=pre,
            post_points=post,
        )


def cases_from_records(records, world: SyntheticWorld, table: RegionIndexTable,
                       masks) -> list[TrainingCase]:
    """Pair each patient's pre/post sessions by expression into cases.

    The source latent and per-patient axes come from the observed pre-image
    only; post-treatment data enters solely as the outcome metrics.
    """
    cases = []
    for record in records:
        pre = {s.expression: s.landmarks for s in record.sessions if s.phase == "pre"}
        post = {s.expression: s.landmarks for s in record.sessions if s.phase == "post"}
        for expression in sorted(set(pre) & set(post)):
            src = pre[expression]
            w_src = world.encode(src)
            tgt, _ = symmetric_target(src, world, table)
            basis = discover_axes(src, tgt, masks, world, patient_id=record.patient_id)
            cases.append(
                TrainingCase(
                    patient_id=record.patient_id,
                    expression=expression,
                    w_src=w_src,
                    basis=basis,
                    m_src=metrics_of(src, table),
                    m_post=metrics_of(post[expression], table),
                    u=record.dose,
                    pre_points=src.points,
                    post_points=post[expression].points,
                )
            )
    return cases


# ---------------------------------------------------------------------------
# analysis-by-synthesis calibration
# ---------------------------------------------------------------------------

_FD_STEP = 1e-3
_STOP_STEP = 1e-5
_MAX_ITERS = 500
_STEP_CAP = 0.15
_SV_CUTOFF = 5e-3


class _AlphaObjective:
    """Batched metric evaluation of decode(combine(w, basis, alpha))."""

    def __init__(self, w_src: LatentCode, basis: AxisBasis, m_post: np.ndarray,
                 world: SyntheticWorld, table: RegionIndexTable):
        self.v = basis.axes.reshape(len(REGION_IDS), -1)
        self.w0 = w_src.flat()
        self.target = np.asarray(m_post, dtype=np.float64)
        self.world = world
        self.flat = table.flat()
        self.evaluations = 0

    def metrics(self, alphas: np.ndarray) -> np.ndarray:
        alphas = np.atleast_2d(alphas)
        flat_w = self.w0[None, :] + alphas @ self.v
        pts = self.world.decode_points_batch(flat_w)
        out = kernels.metrics_batch(pts, self.flat)
        self.evaluations += alphas.shape[0]
        if (out[:, 6] <= 0).any() or not np.isfinite(out[:, :6]).all():
            raise CalibrationDiverged("metric evaluation degenerated during calibration")
        return out[:, :6]

    def residual(self, alpha: np.ndarray) -> np.ndarray:
        return self.metrics(alpha)[0] - self.target


def calibrate_alpha(case: TrainingCase, world: SyntheticWorld,
                    table: RegionIndexTable) -> AlphaVector:
    """Recover latent intensities by matching post-treatment metrics.

    Damped Gauss-Newton on the metric residual vector with a central
    finite-difference Jacobian (h = 1e-3); rejected steps back off by
    raising the damping, so the objective never increases.  The primary
    descent starts at zero; if it stalls well above a metric match, a few
    deterministic bilateral starts are descended as a fallback and the
    best final objective wins (zero-start result on ties).  Stops when the
    accepted step drops below 1e-5 or after 500 iterations per descent.
    """
    objective = _AlphaObjective(case.w_src, case.basis, case.m_post.as_array(), world, table)
    alpha0 = np.zeros(len(REGION_IDS))
    best_alpha, best_f = _descend(objective, alpha0)
    f_start = float(objective.residual(alpha0) @ objective.residual(alpha0))
    if best_f > max(1e-4 * f_start, 1e-16):
        for level in (0.25, 0.5, 0.75):
            cand_alpha, cand_f = _descend(objective, np.full(len(REGION_IDS), level))
            if cand_f < best_f:
                best_alpha, best_f = cand_alpha, cand_f
    return AlphaVector(best_alpha)


def _descend(objective: _AlphaObjective, alpha0: np.ndarray) -> tuple[np.ndarray, float]:
    alpha = alpha0.copy()
    r = objective.residual(alpha)
    f_cur = float(r @ r)
    if not np.isfinite(f_cur):
        raise CalibrationDiverged("objective non-finite at the descent start")
    mu = 1e-3
    iters = 0
    while iters < _MAX_ITERS:
        probes = np.repeat(alpha[None, :], 12, axis=0)
        for k in range(6):
            probes[2 * k, k] += _FD_STEP
            probes[2 * k + 1, k] -= _FD_STEP
        np.clip(probes, ALPHA_MIN, ALPHA_MAX, out=probes)
        mets = objective.metrics(probes)
        m_center = r + objective.target
        jac = np.empty((6, 6))
        for k in range(6):
            span = probes[2 * k, k] - probes[2 * k + 1, k]
            jac[:, k] = (mets[2 * k] - mets[2 * k + 1]) / span if span != 0 else 0.0
            # folded metrics (|angle|, min-ratio) kink where a face crosses
            # perfect symmetry; a central difference straddling the kink is
            # junk, so drop entries whose one-sided slopes disagree in sign
            up = mets[2 * k] - m_center
            dn = m_center - mets[2 * k + 1]
            straddle = (up * dn < 0.0) & (np.abs(up) > 1e-12) & (np.abs(dn) > 1e-12)
            jac[straddle, k] = 0.0
        # Mirror-image symmetrization makes every |asymmetry| metric respond
        # to pair sums at first order, so the Jacobian carries near-null
        # pair-difference directions whose inverse gains would amplify
        # second-order residual noise into large spurious steps.  Truncating
        # the SVD keeps steps inside the identified subspace (unidentified
        # combinations stay at the zero start), and damping is relative so
        # the mixed metric units (degrees vs ratios) converge together.
        u_svd, s_svd, vt_svd = np.linalg.svd(jac)
        keep = s_svd >= _SV_CUTOFF * s_svd[0] if s_svd[0] > 0 else s_svd > 0
        coeffs = u_svd.T @ r
        gains0 = np.where(keep, np.divide(1.0, s_svd, out=np.ones_like(s_svd), where=s_svd > 0), 0.0)
        accepted = False
        while iters < _MAX_ITERS:
            iters += 1
            delta = -(vt_svd.T @ ((gains0 / (1.0 + mu)) * coeffs))
            inf_norm = float(np.max(np.abs(delta)))
            if inf_norm > _STEP_CAP:
                delta = delta * (_STEP_CAP / inf_norm)
            candidate = np.clip(alpha + delta, ALPHA_MIN, ALPHA_MAX)
            r_cand = objective.residual(candidate)
            f_cand = float(r_cand @ r_cand)
            if f_cand < f_cur:
                step_len = float(np.linalg.norm(candidate - alpha))
                alpha = candidate
                r = r_cand
                f_cur = f_cand
                mu = max(mu / 3.0, 0.0)
                accepted = step_len >= _STOP_STEP
                break
            mu = max(mu * 4.0, 1e-3)
            if mu > 1e9:
                break
        if not accepted:
            break
    return alpha, f_cur


# ---------------------------------------------------------------------------
# approach A (generative) and approach B (direct)
# ---------------------------------------------------------------------------


@dataclass
class TrainingReport:
    approach: str
    n_cases: int
    excluded: list[dict] = field(default_factory=list)
    mse_curves: list[list[float]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "approach": self.approach,
                "n_cases": self.n_cases,
                "excluded": self.excluded,
                "mse_curves": self.mse_curves,
            },
            sort_keys=True,
        )


def _case_matrix(cases: list[TrainingCase]) -> np.ndarray:
    return np.stack([c.features() for c in cases])


def train_approach_a(cases: list[TrainingCase], cfg: GbmConfig) -> tuple[GbmModel, TrainingReport]:
    """f_gen: (u, m_src) -> alpha, fit to the calibrated ground truth."""
    if len(cases) < 2:
        raise InsufficientData(f"need at least 2 cases, got {len(cases)}")
    for i, c in enumerate(cases):
        if c.alpha_gt is None:
            raise NotCalibrated(f"case {i} ({c.patient_id}/{c.expression}) lacks alpha_gt")
    x = _case_matrix(cases)
    y = np.stack([c.alpha_gt.values for c in cases])
    model = train(x, y, cfg)
    report = TrainingReport(approach="a", n_cases=len(cases), mse_curves=model.training_mse)
    return model, report


def relative_delta(m_src: np.ndarray, m_post: np.ndarray):
    """(m_post - m_src) / m_src with a validity mask guarding tiny sources."""
    m_src = np.asarray(m_src, dtype=np.float64)
    m_post = np.asarray(m_post, dtype=np.float64)
    valid = m_src >= EPS_DIV
    dm = np.zeros_like(m_src)
    dm[valid] = (m_post[valid] - m_src[valid]) / m_src[valid]
    return dm, valid


def reconstruct_post_b(m_src: np.ndarray, dm: np.ndarray) -> np.ndarray:
    """Post-metric reconstruction identity: m_src * (1 + dm), componentwise."""
    return np.asarray(m_src) * (1.0 + np.asarray(dm))


def train_approach_b(cases: list[TrainingCase], cfg: GbmConfig) -> tuple[GbmModel, TrainingReport]:
    """f_reg: (u, m_src) -> relative metric deltas, one ensemble per metric."""
    if len(cases) < 2:
        raise InsufficientData(f"need at least 2 cases, got {len(cases)}")
    x = _case_matrix(cases)
    report = TrainingReport(approach="b", n_cases=len(cases))
    per_target = []
    for j, name in enumerate(METRIC_NAMES):
        rows = []
        targets = []
        for i, c in enumerate(cases):
            src = c.m_src.as_array()[j]
            if src < EPS_DIV:
                report.excluded.append(
                    {"case": i, "patient_id": c.patient_id, "metric": name}
                )
                continue
            rows.append(i)
            targets.append((c.m_post.as_array()[j] - src) / src)
        if len(rows) < 2:
            raise InsufficientData(f"metric {name}: fewer than 2 usable cases")
        sub = train(x[rows], np.asarray(targets), cfg)
        per_target.append(sub)
    model = GbmModel.stack(per_target)
    report.mse_curves = model.training_mse
    return model, report


def predict_post_a(u: DoseVector, m_src: MetricVector, w_src: LatentCode,
                   basis: AxisBasis, model: GbmModel, world: SyntheticWorld,
                   table: RegionIndexTable) -> tuple[MetricVector, LandmarkSet, AlphaVector]:
    """Forward generative inference: predict alpha, decode, re-measure."""
    alpha = AlphaVector.clamped(model.predict(build_features(u.values, m_src.as_array())))
    face = world.decode(combine(w_src, basis, alpha))
    return metrics_of(face, table), face, alpha


def predict_delta_b(u: DoseVector, m_src: MetricVector, model: GbmModel) -> np.ndarray:
    return model.predict(build_features(u.values, m_src.as_array()))


# ---------------------------------------------------------------------------
# inverse mapping (visual -> dose)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InversionResult:
    dose: DoseVector
    residual: float
    evaluations: int


def _probe_directions(muscle_map: MuscleMap | None = None) -> np.ndarray:
    """Single-muscle plus bilateral region-group search directions."""
    muscle_map = muscle_map or default_muscle_map()
    region_idx = muscle_map.region_index()
    dirs = list(np.eye(J_MUSCLES))
    for pair in range(3):
        group = np.zeros(J_MUSCLES)
        group[(region_idx == 2 * pair) | (region_idx == 2 * pair + 1)] = 1.0
        dirs.append(group)
    dirs.append(np.ones(J_MUSCLES))
    return np.stack(dirs)


def invert_dose(alpha_target: AlphaVector, m_src: MetricVector, model_a: GbmModel,
                bounds=None, *, seed: int = 0, n_starts: int = 64,
                extra_starts: np.ndarray | None = None, refine_top: int = 8,
                max_sweeps: int = 36, tol: float = 1e-12,
                effort: str = "thorough") -> InversionResult:
    """Derivative-free inversion of the forward alpha model.

    The objective ||f_gen(u, m_src) - alpha_target||^2 is piecewise constant
    (tree ensemble), so gradients carry no information; a seeded multi-start
    (zero dose, any provided anchor doses, uniform random fills) followed by
    a pattern search over single-muscle and bilateral region directions is
    used instead.  ``effort="thorough"`` adds an exact per-threshold
    coordinate scan and a multi-scale random polish; ``"interactive"`` skips
    them to meet the planning service's latency budget.  The returned dose
    never violates the bounds and its residual is minimal over every
    candidate evaluated; ties resolve to the lowest start index.
    """
    if bounds is None:
        bounds = np.full(J_MUSCLES, DEFAULT_DOSE_BOUND)
    bounds = np.asarray(bounds, dtype=np.float64)
    if bounds.shape != (J_MUSCLES,) or (bounds <= 0).any():
        raise ShapeMismatch("bounds must be 22 positive reals")
    if effort not in ("thorough", "interactive"):
        raise ShapeMismatch(f"unknown effort {effort!r}")
    if effort == "interactive":
        refine_top = min(refine_top, 5)
        max_sweeps = min(max_sweeps, 20)
    target = alpha_target.values
    m_arr = m_src.as_array()
    rng = np.random.default_rng(seed)

    def residuals(u_batch: np.ndarray) -> np.ndarray:
        feats = np.concatenate(
            [u_batch, np.repeat(m_arr[None, :], u_batch.shape[0], axis=0)], axis=1
        )
        alpha = np.clip(model_a.predict_batch(feats), ALPHA_MIN, ALPHA_MAX)
        diff = alpha - target[None, :]
        return np.einsum("ij,ij->i", diff, diff)

    starts = [np.zeros(J_MUSCLES)]
    if extra_starts is not None:
        # anchor doses ride along in addition to the random multi-start budget
        for row in np.atleast_2d(np.asarray(extra_starts, dtype=np.float64)):
            starts.append(np.clip(row, 0.0, bounds))
    n_random = max(n_starts - 1, 0)
    for _ in range(n_random):
        starts.append(rng.uniform(0.0, bounds))
    start_mat = np.stack(starts)

    res = residuals(start_mat)
    evaluations = start_mat.shape[0]
    best_i = int(np.argmin(res))  # argmin takes the first minimum: lowest start index
    best_u = start_mat[best_i].copy()
    best_res = float(res[best_i])

    if best_res > tol:
        directions = _probe_directions()
        n_dirs = directions.shape[0]
        dir_scale = directions * bounds[None, :]
        order = np.argsort(res, kind="mergesort")[: max(1, refine_top)]
        cur = start_mat[order].copy()
        cur_res = res[order].copy()
        frac = np.full(cur.shape[0], 0.25)
        min_frac = 1.0 / 512.0
        for _ in range(max_sweeps):
            active = frac >= min_frac
            if not active.any() or best_res <= tol:
                break
            idx = np.nonzero(active)[0]
            k = idx.shape[0]
            probes = np.repeat(cur[idx], 2 * n_dirs, axis=0).reshape(k, 2 * n_dirs, J_MUSCLES)
            for d in range(n_dirs):
                probes[:, 2 * d] += frac[idx, None] * dir_scale[d][None, :]
                probes[:, 2 * d + 1] -= frac[idx, None] * dir_scale[d][None, :]
            flat = probes.reshape(-1, J_MUSCLES)
            np.clip(flat, 0.0, bounds, out=flat)
            pr = residuals(flat).reshape(k, 2 * n_dirs)
            evaluations += flat.shape[0]
            for a in range(k):
                b = int(np.argmin(pr[a]))
                if pr[a, b] < cur_res[idx[a]]:
                    cur[idx[a]] = probes[a, b]
                    cur_res[idx[a]] = pr[a, b]
                    if pr[a, b] < best_res:
                        best_res = float(pr[a, b])
                        best_u = probes[a, b].copy()
                else:
                    frac[idx[a]] /= 2.0

    if best_res > tol and effort == "thorough":
        # exact cyclic coordinate scan: the objective is constant inside the
        # ensemble's threshold cells, so probing one representative value per
        # cell per coordinate escapes plateaus the fixed-step probes cannot
        cell_values = _cell_values_per_feature(model_a, bounds)
        for _ in range(3):
            improved = False
            for j in range(J_MUSCLES):
                vals = cell_values[j]
                cand = np.repeat(best_u[None, :], vals.shape[0], axis=0)
                cand[:, j] = vals
                cr = residuals(cand)
                evaluations += cand.shape[0]
                b = int(np.argmin(cr))
                if cr[b] < best_res:
                    best_res = float(cr[b])
                    best_u = cand[b].copy()
                    improved = True
            if not improved or best_res <= tol:
                break

    if best_res > tol and effort == "thorough":
        # multi-scale random polish: cells where the residual is acceptably
        # small occupy far more volume than the exact-match needle, and
        # isotropic perturbations cross the multi-coordinate cell boundaries
        # that axis-aligned probes cannot
        for scale in (0.12, 0.05, 0.02):
            for _ in range(2):
                noise = rng.uniform(-1.0, 1.0, size=(192, J_MUSCLES))
                cand = np.clip(best_u[None, :] + scale * noise * bounds[None, :], 0.0, bounds)
                cr = residuals(cand)
                evaluations += cand.shape[0]
                b = int(np.argmin(cr))
                if cr[b] < best_res:
                    best_res = float(cr[b])
                    best_u = cand[b].copy()
                if best_res <= tol:
                    break
            if best_res <= tol:
                break

    return InversionResult(
        dose=DoseVector(best_u, bounds), residual=best_res, evaluations=evaluations
    )


def _cell_values_per_feature(model: GbmModel, bounds: np.ndarray) -> list[np.ndarray]:
    """One representative dose value per threshold cell, per muscle."""
    out = []
    for j in range(J_MUSCLES):
        thr = np.unique(model.threshold[model.feature == j])
        thr = thr[(thr > 0.0) & (thr < bounds[j])]
        edges = np.concatenate([[0.0], thr, [bounds[j]]])
        mids = (edges[:-1] + edges[1:]) / 2.0
        out.append(np.unique(np.concatenate([[0.0], mids, [bounds[j]]])))
    return out


# ---------------------------------------------------------------------------
# planner bundle: everything the service / CLI inference paths need
# ---------------------------------------------------------------------------


@dataclass
class PlannerBundle:
    world: SyntheticWorld
    model_a: GbmModel
    model_b: GbmModel | None
    muscle_map: MuscleMap
    bounds: np.ndarray
    train_doses: np.ndarray  # anchor starts for inversion

    def to_json(self) -> str:
        doc = {
            "format": "facedose-bundle",
            "version": 1,
            "world": json.loads(self.world.to_json()),
            "model_a": json.loads(self.model_a.save().decode()),
            "model_b": json.loads(self.model_b.save().decode()) if self.model_b else None,
            "muscle_labels": list(self.muscle_map.labels),
            "muscle_regions": list(self.muscle_map.region_of),
            "bounds": self.bounds.tolist(),
            "train_doses": self.train_doses.tolist(),
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "PlannerBundle":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed bundle: {exc}") from exc
        if doc.get("format") != "facedose-bundle" or doc.get("version") != 1:
            raise FormatError("unsupported bundle format/version")
        return cls(
            world=SyntheticWorld.from_json(json.dumps(doc["world"])),
            model_a=GbmModel.load(json.dumps(doc["model_a"]).encode()),
            model_b=GbmModel.load(json.dumps(doc["model_b"]).encode()) if doc["model_b"] else None,
            muscle_map=MuscleMap(labels=tuple(doc["muscle_labels"]),
                                 region_of=tuple(doc["muscle_regions"])),
            bounds=np.asarray(doc["bounds"], dtype=np.float64),
            train_doses=np.asarray(doc["train_doses"], dtype=np.float64).reshape(-1, J_MUSCLES),
        )
