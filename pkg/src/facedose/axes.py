"""ROI masks, localized axis discovery, and the latent combination operator."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeMismatch
from .faceworld import LatentCode, SyntheticWorld
from .geometry import REGION_IDS, LandmarkSet, RegionIndexTable

ALPHA_MIN = -0.5
ALPHA_MAX = 1.5


@dataclass(frozen=True)
class RoiMask:
    """Axis-aligned rectangle in canonical coordinates owning one region."""

    region_id: str
    rect: tuple[float, float, float, float]

    def __post_init__(self):
        if self.region_id not in REGION_IDS:
            raise ShapeMismatch(f"unknown region_id {self.region_id!r}")
        x0, y0, x1, y1 = self.rect
        if not (x0 < x1 and y0 < y1):
            raise ShapeMismatch(f"degenerate rect {self.rect}")
        object.__setattr__(self, "rect", (float(x0), float(y0), float(x1), float(y1)))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Membership mask; boundaries are half-open ([x0, x1) x [y0, y1))."""
        x0, y0, x1, y1 = self.rect
        return (
            (points[:, 0] >= x0) & (points[:, 0] < x1)
            & (points[:, 1] >= y0) & (points[:, 1] < y1)
        )


def default_masks() -> list[RoiMask]:
    """The six ROI rectangles shipped with the package, in region order."""
    path = Path(__file__).parent / "data" / "roi_masks.json"
    doc = json.loads(path.read_text())
    by_region = {m["region_id"]: m["rect"] for m in doc["masks"]}
    return [RoiMask(region_id=r, rect=tuple(by_region[r])) for r in REGION_IDS]


def masks_from_json(text: str) -> list[RoiMask]:
    try:
        doc = json.loads(text)
        masks = [RoiMask(region_id=m["region_id"], rect=tuple(m["rect"])) for m in doc["masks"]]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed ROI config: {exc}") from exc
    return masks


@dataclass(frozen=True)
class AlphaVector:
    """Six per-region intensities, bounded to the supported editing range."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (len(REGION_IDS),):
            raise ShapeMismatch(f"alpha must have shape (6,), got {vals.shape}")
        if not np.isfinite(vals).all():
            raise ShapeMismatch("alpha must be finite")
        if (vals < ALPHA_MIN).any() or (vals > ALPHA_MAX).any():
            raise ShapeMismatch(
                f"alpha outside [{ALPHA_MIN}, {ALPHA_MAX}]: {vals}"
            )
        object.__setattr__(self, "values", vals)

    @classmethod
    def clamped(cls, values) -> "AlphaVector":
        vals = np.clip(np.asarray(values, dtype=np.float64), ALPHA_MIN, ALPHA_MAX)
        return cls(vals)

    @classmethod
    def zeros(cls) -> "AlphaVector":
        return cls(np.zeros(len(REGION_IDS)))


@dataclass(frozen=True)
class AxisBasis:
    """Six latent displacement vectors, ordered by region id."""

    axes: np.ndarray  # (6, L, D)
    patient_id: str
    world_hash: str = ""

    def __post_init__(self):
        arr = np.asarray(self.axes, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != len(REGION_IDS):
            raise ShapeMismatch(f"axes must be (6, L, D), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ShapeMismatch("axes must be finite")
        object.__setattr__(self, "axes", arr)

    def axis(self, region_id: str) -> np.ndarray:
        return self.axes[REGION_IDS.index(region_id)]

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": "facedose-axes",
                "version": 1,
                "patient_id": self.patient_id,
                "world_hash": self.world_hash,
                "shape": list(self.axes.shape[1:]),
                "axes": [a.ravel().tolist() for a in self.axes],
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "AxisBasis":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed axis basis: {exc}") from exc
        if doc.get("format") != "facedose-axes" or doc.get("version") != 1:
            raise FormatError("unsupported axis basis format/version")
        rows, cols = doc["shape"]
        axes = np.asarray([np.asarray(a).reshape(rows, cols) for a in doc["axes"]])
        return cls(axes=axes, patient_id=doc["patient_id"], world_hash=doc.get("world_hash", ""))


def world_hash(world: SyntheticWorld) -> str:
    cached = getattr(world, "_fingerprint", None)
    if cached is None:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(world.mixing).tobytes())
        h.update(np.ascontiguousarray(world.base_face).tobytes())
        cached = h.hexdigest()[:16]
        world._fingerprint = cached
    return cached


def patch_roi(src: LandmarkSet, tgt: LandmarkSet, mask: RoiMask) -> LandmarkSet:
    """Replace the landmarks whose source position falls inside the mask.

    Membership is evaluated on the source coordinates, so a landmark that a
    strong edit would move across the boundary still belongs to its source
    region.
    """
    inside = mask.contains(src.points)
    pts = src.points.copy()
    pts[inside] = tgt.points[inside]
    return LandmarkSet(points=pts, frame_size=src.frame_size)


def discover_axes(src: LandmarkSet, tgt: LandmarkSet, masks: list[RoiMask],
                  world: SyntheticWorld, patient_id: str = "") -> AxisBasis:
    """Patch-and-encode per region: v_k = encode(patched_k) - encode(src)."""
    if len(masks) != len(REGION_IDS):
        raise ShapeMismatch(f"expected {len(REGION_IDS)} masks, got {len(masks)}")
    by_region = {m.region_id: m for m in masks}
    if set(by_region) != set(REGION_IDS):
        raise ShapeMismatch("masks must cover exactly the six regions")
    w_src = world.encode(src)
    axes = np.empty((len(REGION_IDS), world.latent_rows, world.latent_cols))
    for k, region in enumerate(REGION_IDS):
        hybrid = patch_roi(src, tgt, by_region[region])
        w_hybrid = world.encode(hybrid)
        axes[k] = w_hybrid.values - w_src.values
    return AxisBasis(axes=axes, patient_id=patient_id, world_hash=world_hash(world))


def combine(w_src: LatentCode, basis: AxisBasis, alpha: AlphaVector) -> LatentCode:
    """w_final = w_src + sum_k alpha_k * v_k, exactly; zero alpha is a no-op."""
    if basis.axes.shape[1:] != w_src.shape:
        raise ShapeMismatch(
            f"basis shape {basis.axes.shape[1:]} does not match latent {w_src.shape}"
        )
    out = w_src.values.copy()
    for k in range(len(REGION_IDS)):
        a = alpha.values[k]
        if a != 0.0:
            out = out + a * basis.axes[k]
    return LatentCode(out)


def region_gap(face: LandmarkSet, reference: LandmarkSet, table: RegionIndexTable,
               region_id: str) -> float:
    """RMS distance of a region's landmarks from their reference positions.

    Quantifies how far region ``region_id`` still sits from its configuration
    in a reference face (typically the patient's symmetric target); the axis
    locality checks measure per-region reductions of this gap.
    """
    idx = np.asarray(table.roi_support[region_id], dtype=np.int64)
    diff = face.points[idx] - reference.points[idx]
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))
