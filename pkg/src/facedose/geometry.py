"""Landmark alignment to a canonical frame and the six asymmetry metrics.

Everything here is pure NumPy and doubles as the reference path for the
fused metric kernel in :mod:`facedose.kernels`.  Coordinates are pixel
units with y growing downward; "left" means viewer-left (smaller x).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateConfiguration,
    FormatError,
    InvalidMeasurement,
    ShapeMismatch,
)

N_LANDMARKS = 468
CANONICAL_SIZE = 256

# Canonical template anchors the similarity fit maps onto: left eye center,
# right eye center, mouth center.  The shipped base face places its anchors
# exactly here, so aligning it is the identity.
TEMPLATE_ANCHORS = np.array([[96.0, 108.0], [160.0, 108.0], [128.0, 168.0]])

METRIC_NAMES = (
    "eyebrows_asym",
    "eyes_asym",
    "furrow",
    "outer_eyebrow_nose",
    "mouth_angle",
    "total_asym",
)

REGION_IDS = ("brow_L", "brow_R", "eye_L", "eye_R", "mouth_L", "mouth_R")


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LandmarkSet:
    """468 face-mesh points in pixel coordinates plus the source frame size."""

    points: np.ndarray
    frame_size: tuple[int, int]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (N_LANDMARKS, 2):
            raise ShapeMismatch(f"expected ({N_LANDMARKS}, 2) points, got {pts.shape}")
        if not np.isfinite(pts).all():
            raise InvalidMeasurement("landmark coordinates must be finite")
        w, h = self.frame_size
        if w <= 0 or h <= 0:
            raise InvalidMeasurement(f"frame_size must be positive, got {self.frame_size}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "frame_size", (int(w), int(h)))

    def to_json(self) -> str:
        return json.dumps(
            {"frame": list(self.frame_size), "points": self.points.tolist()},
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "LandmarkSet":
        try:
            doc = json.loads(text)
            frame = doc["frame"]
            points = doc["points"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"malformed landmark document: {exc}") from exc
        return cls(points=np.asarray(points, dtype=np.float64), frame_size=(frame[0], frame[1]))


@dataclass(frozen=True)
class CanonicalLandmarks:
    """Landmarks expressed in the canonical 256x256 frame."""

    points: np.ndarray
    ipd: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (N_LANDMARKS, 2):
            raise ShapeMismatch(f"expected ({N_LANDMARKS}, 2) points, got {pts.shape}")
        if self.ipd <= 0:
            raise DegenerateConfiguration("ipd must be positive")
        object.__setattr__(self, "points", pts)

    def as_landmarks(self) -> LandmarkSet:
        return LandmarkSet(points=self.points.copy(), frame_size=(CANONICAL_SIZE, CANONICAL_SIZE))


@dataclass(frozen=True)
class SimilarityTransform:
    """Rotation (radians), positive scale, translation (tx, ty)."""

    rotation: float
    scale: float
    translation: tuple[float, float]

    def __post_init__(self):
        if self.scale <= 0:
            raise DegenerateConfiguration("similarity scale must be positive")

    def matrix(self) -> np.ndarray:
        c = math.cos(self.rotation) * self.scale
        s = math.sin(self.rotation) * self.scale
        return np.array([[c, -s], [s, c]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix().T + np.asarray(self.translation)

    def inverse(self) -> "SimilarityTransform":
        inv_scale = 1.0 / self.scale
        c = math.cos(-self.rotation) * inv_scale
        s = math.sin(-self.rotation) * inv_scale
        tx, ty = self.translation
        return SimilarityTransform(
            rotation=-self.rotation,
            scale=inv_scale,
            translation=(-(c * tx - s * ty), -(s * tx + c * ty)),
        )


@dataclass(frozen=True)
class MetricVector:
    """The six asymmetry metrics in fixed order (total last)."""

    eyebrows_asym: float
    eyes_asym: float
    furrow: float
    outer_eyebrow_nose: float
    mouth_angle: float
    total_asym: float

    def __post_init__(self):
        arr = self.as_array()
        if not np.isfinite(arr).all() or (arr < 0).any():
            raise InvalidMeasurement(f"metrics must be finite and non-negative: {arr}")
        if not (0.0 <= self.outer_eyebrow_nose < 1.0):
            raise InvalidMeasurement("outer_eyebrow_nose must lie in [0, 1)")
        if not (0.0 <= self.mouth_angle <= 90.0):
            raise InvalidMeasurement("mouth_angle must lie in [0, 90] degrees")

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.eyebrows_asym,
                self.eyes_asym,
                self.furrow,
                self.outer_eyebrow_nose,
                self.mouth_angle,
                self.total_asym,
            ]
        )

    @classmethod
    def from_array(cls, arr) -> "MetricVector":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != (6,):
            raise ShapeMismatch(f"expected 6 metrics, got shape {arr.shape}")
        return cls(*[float(v) for v in arr])


@dataclass
class RegionIndexTable:
    """Named landmark index sets plus the full left/right correspondence.

    ``pairs`` lists every landmark exactly once as ``[left, right]`` with
    midline points self-paired (``[i, i]``); it therefore encodes an
    involution over all 468 indices.  ``roi_support`` carries the per-region
    sets used for ROI boxes and for the synthetic world's latent blocks; the
    mouth regions deliberately include the nasolabial furrow landmarks so
    perioral edits move the furrow the way an injection would.
    """

    brow_left: list[int]
    brow_right: list[int]
    eye_left: list[int]
    eye_right: list[int]
    furrow_left: list[int]
    furrow_right: list[int]
    mouth_corner_left: int
    mouth_corner_right: int
    nose_tip: int
    outer_brow_left: int
    outer_brow_right: int
    eye_center_left: list[int]
    eye_center_right: list[int]
    pairs: list[tuple[int, int]]
    roi_support: dict[str, list[int]]
    version: int = 1
    _mirror: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("brow", "eye", "furrow"):
            left = getattr(self, f"{name}_left")
            right = getattr(self, f"{name}_right")
            if len(left) != len(right):
                raise ShapeMismatch(f"{name} left/right lists differ in length")
        mirror = np.full(N_LANDMARKS, -1, dtype=np.int64)
        for l, r in self.pairs:
            if not (0 <= l < N_LANDMARKS and 0 <= r < N_LANDMARKS):
                raise ShapeMismatch(f"pair ({l}, {r}) out of range")
            if mirror[l] != -1 or (l != r and mirror[r] != -1):
                raise InvalidMeasurement(f"landmark in pair ({l}, {r}) already paired")
            mirror[l] = r
            mirror[r] = l
        if (mirror < 0).any():
            missing = int(np.count_nonzero(mirror < 0))
            raise InvalidMeasurement(f"correspondence must cover all landmarks ({missing} missing)")
        all_named = (
            list(self.brow_left) + list(self.brow_right)
            + list(self.eye_left) + list(self.eye_right)
            + list(self.furrow_left) + list(self.furrow_right)
            + [self.mouth_corner_left, self.mouth_corner_right, self.nose_tip,
               self.outer_brow_left, self.outer_brow_right]
        )
        for idx in all_named:
            if not 0 <= idx < N_LANDMARKS:
                raise ShapeMismatch(f"landmark index {idx} out of range")
        if set(self.roi_support) != set(REGION_IDS):
            raise InvalidMeasurement("roi_support must cover exactly the six regions")
        self._mirror = mirror

    @property
    def mirror_index(self) -> np.ndarray:
        """mirror_index[i] = the landmark index i maps to across the midline."""
        return self._mirror

    @property
    def left_side(self) -> np.ndarray:
        """All indices stored on the left of a non-degenerate pair."""
        return np.array([l for l, r in self.pairs if l != r], dtype=np.int64)

    @property
    def midline(self) -> np.ndarray:
        return np.array([l for l, r in self.pairs if l == r], dtype=np.int64)

    def to_json(self) -> str:
        doc = {
            "version": self.version,
            "brow_left": list(self.brow_left),
            "brow_right": list(self.brow_right),
            "eye_left": list(self.eye_left),
            "eye_right": list(self.eye_right),
            "furrow_left": list(self.furrow_left),
            "furrow_right": list(self.furrow_right),
            "mouth_corner_left": self.mouth_corner_left,
            "mouth_corner_right": self.mouth_corner_right,
            "nose_tip": self.nose_tip,
            "outer_brow_left": self.outer_brow_left,
            "outer_brow_right": self.outer_brow_right,
            "eye_center_left": list(self.eye_center_left),
            "eye_center_right": list(self.eye_center_right),
            "pairs": [list(p) for p in self.pairs],
            "roi_support": {k: list(v) for k, v in self.roi_support.items()},
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RegionIndexTable":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed region table: {exc}") from exc
        return cls(
            brow_left=doc["brow_left"],
            brow_right=doc["brow_right"],
            eye_left=doc["eye_left"],
            eye_right=doc["eye_right"],
            furrow_left=doc["furrow_left"],
            furrow_right=doc["furrow_right"],
            mouth_corner_left=doc["mouth_corner_left"],
            mouth_corner_right=doc["mouth_corner_right"],
            nose_tip=doc["nose_tip"],
            outer_brow_left=doc["outer_brow_left"],
            outer_brow_right=doc["outer_brow_right"],
            eye_center_left=doc["eye_center_left"],
            eye_center_right=doc["eye_center_right"],
            pairs=[tuple(p) for p in doc["pairs"]],
            roi_support=doc["roi_support"],
            version=doc.get("version", 1),
        )

    def flat(self):
        """Argument tuple consumed by the fused metric kernels."""
        return (
            np.asarray(self.eye_left, dtype=np.int64),
            np.asarray(self.eye_right, dtype=np.int64),
            np.asarray(self.brow_left, dtype=np.int64),
            np.asarray(self.brow_right, dtype=np.int64),
            np.asarray(self.furrow_left, dtype=np.int64),
            np.asarray(self.furrow_right, dtype=np.int64),
            np.int64(self.mouth_corner_left),
            np.int64(self.mouth_corner_right),
            np.int64(self.nose_tip),
            np.int64(self.outer_brow_left),
            np.int64(self.outer_brow_right),
            TEMPLATE_ANCHORS,
            np.float64(CANONICAL_SIZE),
        )


def default_table() -> RegionIndexTable:
    """The region table shipped with the package (data/region_table.json)."""
    path = Path(__file__).parent / "data" / "region_table.json"
    return RegionIndexTable.from_json(path.read_text())


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def fit_similarity(src_points, template_points) -> SimilarityTransform:
    """Least-squares similarity mapping src anchors onto template anchors.

    Closed-form 2-D solution: with points as complex numbers, the optimal
    rotation+scale is the regression coefficient of centered targets on
    centered sources, and the translation matches the centroids.
    """
    src = np.asarray(src_points, dtype=np.float64)
    tpl = np.asarray(template_points, dtype=np.float64)
    if src.shape != tpl.shape or src.ndim != 2 or src.shape[1] != 2 or src.shape[0] < 2:
        raise ShapeMismatch(f"anchor shapes disagree: {src.shape} vs {tpl.shape}")
    z = src[:, 0] + 1j * src[:, 1]
    w = tpl[:, 0] + 1j * tpl[:, 1]
    zc = z - z.mean()
    wc = w - w.mean()
    den = float(np.real(np.vdot(zc, zc)))
    if den <= 0.0:
        raise DegenerateConfiguration("source anchors are all coincident")
    c = complex(np.vdot(zc, wc)) / den  # vdot conjugates the first argument
    if abs(c) <= 0.0:
        raise DegenerateConfiguration("template anchors are all coincident")
    t = w.mean() - c * z.mean()
    return SimilarityTransform(
        rotation=math.atan2(c.imag, c.real),
        scale=abs(c),
        translation=(t.real, t.imag),
    )


def _anchors_of(points: np.ndarray, table: RegionIndexTable) -> np.ndarray:
    eye_l = points[np.asarray(table.eye_center_left)].mean(axis=0)
    eye_r = points[np.asarray(table.eye_center_right)].mean(axis=0)
    mouth = 0.5 * (points[table.mouth_corner_left] + points[table.mouth_corner_right])
    return np.stack([eye_l, eye_r, mouth])


def align(landmarks: LandmarkSet, table: RegionIndexTable) -> CanonicalLandmarks:
    """Map a raw landmark frame into the canonical 256x256 frame.

    Idempotent: a face already expressed in canonical coordinates is moved
    by less than 1e-6 per coordinate.
    """
    anchors = _anchors_of(landmarks.points, table)
    transform = fit_similarity(anchors, TEMPLATE_ANCHORS)
    pts = transform.apply(landmarks.points)
    moved = transform.apply(anchors)
    ipd = float(np.linalg.norm(moved[0] - moved[1]))
    if ipd <= 0.0:
        raise DegenerateConfiguration("eye centers coincide; ipd is zero")
    return CanonicalLandmarks(points=pts, ipd=ipd)


def procrustes_distance(x, y) -> float:
    """RMS residual after removing centroids and the optimal 2-D rotation.

    No scale removal: global scale is handled by IPD normalization upstream.
    Symmetric in its arguments.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape:
        raise ShapeMismatch(f"point lists disagree: {xa.shape} vs {ya.shape}")
    if xa.ndim != 2 or xa.shape[1] != 2 or xa.shape[0] < 2:
        raise ShapeMismatch(f"need (n >= 2, 2) point arrays, got {xa.shape}")
    n = xa.shape[0]
    zx = xa[:, 0] + 1j * xa[:, 1]
    zy = ya[:, 0] + 1j * ya[:, 1]
    zx = zx - zx.mean()
    zy = zy - zy.mean()
    # optimal rotation angle from the complex correlation, then an explicit
    # residual: summing squared gaps avoids the cancellation that a
    # norms-minus-correlation form suffers near zero.
    corr = complex(np.vdot(zy, zx))  # conjugates zy: rotate y onto x
    theta = math.atan2(corr.imag, corr.real)
    rot = complex(math.cos(theta), math.sin(theta))
    gap = zx - rot * zy
    resid = float(np.real(np.vdot(gap, gap)))
    return math.sqrt(max(resid, 0.0) / n)


def symmetry_ratio(left: float, right: float) -> float:
    """S = 1 - min(L/R, R/L); zero iff the two measurements agree."""
    if left <= 0 or right <= 0:
        raise InvalidMeasurement(f"measurements must be positive, got ({left}, {right})")
    return 1.0 - min(left / right, right / left)


def _mirror_x(points: np.ndarray) -> np.ndarray:
    out = points.copy()
    out[:, 0] = CANONICAL_SIZE - out[:, 0]
    return out


def metric_array(canonical: CanonicalLandmarks, table: RegionIndexTable) -> np.ndarray:
    """The six metrics as a plain array, in METRIC_NAMES order."""
    pts = canonical.points
    ipd = canonical.ipd
    regional = []
    for left_idx, right_idx in (
        (table.brow_left, table.brow_right),
        (table.eye_left, table.eye_right),
        (table.furrow_left, table.furrow_right),
    ):
        left = pts[np.asarray(left_idx)] / ipd
        right = _mirror_x(pts[np.asarray(right_idx)]) / ipd
        regional.append(procrustes_distance(left, right))
    nose = pts[table.nose_tip]
    d_l = float(np.linalg.norm(pts[table.outer_brow_left] - nose))
    d_r = float(np.linalg.norm(pts[table.outer_brow_right] - nose))
    ratio = symmetry_ratio(d_l, d_r)
    c_l = pts[table.mouth_corner_left]
    c_r = pts[table.mouth_corner_right]
    angle = math.degrees(math.atan2(abs(c_r[1] - c_l[1]), abs(c_r[0] - c_l[0])))
    total = (regional[0] + regional[1] + regional[2]) / 3.0
    return np.array([regional[0], regional[1], regional[2], ratio, angle, total])


def compute_metrics(canonical: CanonicalLandmarks, table: RegionIndexTable) -> MetricVector:
    """Six asymmetry metrics of an aligned face.

    The three regional entries are Procrustes distances between the left
    region and the mirrored right region after dividing by IPD; the total is
    their arithmetic mean.  The ratio entry compares outer-brow-to-nose
    distances, and the mouth angle is the tilt of the mouth-corner segment
    away from horizontal (equivalently |theta - 90| against the vertical
    midline axis), in degrees.
    """
    return MetricVector.from_array(metric_array(canonical, table))


def metrics_of(landmarks: LandmarkSet, table: RegionIndexTable) -> MetricVector:
    """Convenience composition: align then compute metrics."""
    return compute_metrics(align(landmarks, table), table)
