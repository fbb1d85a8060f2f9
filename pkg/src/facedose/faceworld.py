"""Abstract generator/encoder pair and the deterministic synthetic world.

The synthetic world is affine: landmarks = base_face + mixing @ flatten(w),
so encoding is an exact ridge least-squares solve and every downstream
module gets closed-form oracles.  The mixing map is block structured: each
of the six anatomical regions owns a dedicated latent block whose columns
move that region's landmarks (plus an off-region coupling of relative
magnitude epsilon), and a trailing global block drives the remaining
landmarks (midline, nose, filler).  Blocks come in mirrored left/right
column pairs, which makes the column space closed under face mirroring;
that is what lets the latent midpoint of the two mirrored encodings
symmetrize a face exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeMismatch
from .geometry import (
    CANONICAL_SIZE,
    N_LANDMARKS,
    REGION_IDS,
    LandmarkSet,
    RegionIndexTable,
)
from .template import build_template

RIDGE_LAMBDA = 1e-6
REFINE_MAX_STEPS = 30
# canonical px of per-point RMS displacement per unit latent; large enough
# that the 1e-6 ridge bias on encode stays below 1e-6 for unit-scale codes
_REGION_GAIN = 12.0
_GLOBAL_GAIN = 6.0


@dataclass(frozen=True)
class LatentCode:
    """An L x D real matrix standing in for a layered generator code."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ShapeMismatch(f"latent code must be 2-D, got shape {vals.shape}")
        if not np.isfinite(vals).all():
            raise ShapeMismatch("latent code must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def shape(self):
        return self.values.shape

    def flat(self) -> np.ndarray:
        return self.values.ravel()


class GeneratorInterface:
    """Deterministic decode, approximate-inverse encode, weighted refine."""

    def decode(self, w: LatentCode) -> LandmarkSet:
        raise NotImplementedError

    def encode(self, obs: LandmarkSet) -> LatentCode:
        raise NotImplementedError

    def refine(self, w0: LatentCode, obs: LandmarkSet, weights: np.ndarray) -> LatentCode:
        raise NotImplementedError

    @property
    def mean_code(self) -> LatentCode:
        raise NotImplementedError


def _mirror_columns(cols: np.ndarray, mirror_index: np.ndarray) -> np.ndarray:
    """Apply the face-mirroring operator to displacement-field columns."""
    n = mirror_index.shape[0]
    out = np.empty_like(cols)
    rows = cols.reshape(n, 2, -1)
    out_rows = out.reshape(n, 2, -1)
    out_rows[mirror_index, 0, :] = -rows[:, 0, :]
    out_rows[mirror_index, 1, :] = rows[:, 1, :]
    return out


class SyntheticWorld(GeneratorInterface):
    def __init__(self, seed: int, latent_rows: int, latent_cols: int, epsilon: float,
                 noise_sigma: float, base_face: np.ndarray, mixing: np.ndarray,
                 table: RegionIndexTable, lam: float = RIDGE_LAMBDA):
        if not 0.0 <= epsilon <= 0.2:
            raise ShapeMismatch(f"epsilon must lie in [0, 0.2], got {epsilon}")
        self.seed = int(seed)
        self.latent_rows = int(latent_rows)
        self.latent_cols = int(latent_cols)
        self.epsilon = float(epsilon)
        self.noise_sigma = float(noise_sigma)
        self.base_face = np.asarray(base_face, dtype=np.float64)
        self.mixing = np.ascontiguousarray(mixing, dtype=np.float64)
        self.table = table
        self.lam = float(lam)
        p = self.latent_rows * self.latent_cols
        if self.mixing.shape != (2 * N_LANDMARKS, p):
            raise ShapeMismatch(f"mixing must be ({2 * N_LANDMARKS}, {p}), got {self.mixing.shape}")
        if np.linalg.matrix_rank(self.mixing) < p:
            raise ShapeMismatch("mixing map is column-rank deficient; encode would be ill-posed")
        gram = self.mixing.T @ self.mixing + self.lam * np.eye(p)
        self._solve = np.linalg.inv(gram)
        self._mt = self.mixing.T.copy()

    # -- construction -----------------------------------------------------

    @classmethod
    def create(cls, seed: int = 0, latent_rows: int = 4, latent_cols: int = 32,
               epsilon: float = 0.02, noise_sigma: float = 0.0,
               table: RegionIndexTable | None = None) -> "SyntheticWorld":
        base, built_table, _ = build_template()
        table = table or built_table
        p = latent_rows * latent_cols
        block = p // 8
        if block < 2:
            raise ShapeMismatch(f"latent size {p} too small for six region blocks")
        rng = np.random.default_rng(seed)
        mixing = np.zeros((2 * N_LANDMARKS, p))
        mirror = table.mirror_index

        region_rows = {}
        all_region_pts = set()
        for region in REGION_IDS:
            pts = np.asarray(table.roi_support[region], dtype=np.int64)
            all_region_pts.update(int(i) for i in pts)
            rows = np.empty(2 * pts.shape[0], dtype=np.int64)
            rows[0::2] = 2 * pts
            rows[1::2] = 2 * pts + 1
            region_rows[region] = rows

        def scaled_block(on_rows, gain, zero_centroid=False, pin_x_points=()):
            cols = rng.normal(size=(2 * N_LANDMARKS, block))
            if zero_centroid:
                # periorbital edits reshape lids and folds but do not move
                # the eyeball: zero-mean displacement keeps eye centers (and
                # with them the IPD and alignment anchors) fixed, which also
                # removes the similarity gauge from the metric map
                for off in (0, 1):
                    rows = on_rows[off::2]
                    cols[rows] -= cols[rows].mean(axis=0, keepdims=True)
            for pt in pin_x_points:
                # muscle relaxation raises or drops these corner landmarks;
                # pinning their x keeps the corner-based metrics free of
                # sideways shortcut channels
                cols[2 * pt] = 0.0
            off_mask = np.ones(2 * N_LANDMARKS, dtype=bool)
            off_mask[on_rows] = False
            on = cols[on_rows]
            off = cols[off_mask]
            n_on_pts = on_rows.shape[0] / 2.0
            n_off_pts = off.shape[0] / 2.0
            s_on = np.sqrt(n_on_pts * gain ** 2 / np.sum(on ** 2))
            s_off = np.sqrt(n_off_pts * (epsilon * gain) ** 2 / np.sum(off ** 2)) if epsilon > 0 else 0.0
            cols[on_rows] *= s_on
            cols[off_mask] *= s_off
            return cols

        # mirrored region block pairs: (brow_L, brow_R), (eye_L, eye_R), (mouth_L, mouth_R)
        pins = {
            "brow_L": (table.outer_brow_left,),
            "eye_L": (),
            "mouth_L": (table.mouth_corner_left,),
        }
        for pair_i, (left_region, right_region) in enumerate(
            (("brow_L", "brow_R"), ("eye_L", "eye_R"), ("mouth_L", "mouth_R"))
        ):
            left_cols = scaled_block(
                region_rows[left_region], _REGION_GAIN,
                zero_centroid=left_region.startswith("eye"),
                pin_x_points=pins[left_region],
            )
            right_cols = _mirror_columns(left_cols, mirror)
            lo = 2 * pair_i * block
            mixing[:, lo:lo + block] = left_cols
            mixing[:, lo + block:lo + 2 * block] = right_cols

        # global block over non-region landmarks, in mirrored column pairs
        global_lo = 6 * block
        n_global = p - global_lo
        global_pts = np.array(sorted(set(range(N_LANDMARKS)) - all_region_pts), dtype=np.int64)
        global_rows = np.empty(2 * global_pts.shape[0], dtype=np.int64)
        global_rows[0::2] = 2 * global_pts
        global_rows[1::2] = 2 * global_pts + 1
        half = n_global // 2
        g_cols = scaled_block(global_rows, _GLOBAL_GAIN)[:, :half]
        mixing[:, global_lo:global_lo + half] = g_cols
        mixing[:, global_lo + half:global_lo + 2 * half] = _mirror_columns(g_cols, mirror)
        if n_global % 2 == 1:
            extra = scaled_block(global_rows, _GLOBAL_GAIN)[:, :1]
            sym = (extra + _mirror_columns(extra, mirror)) / np.sqrt(2.0)
            mixing[:, -1:] = sym

        return cls(seed=seed, latent_rows=latent_rows, latent_cols=latent_cols,
                   epsilon=epsilon, noise_sigma=noise_sigma, base_face=base,
                   mixing=mixing, table=table)

    # -- latent layout ----------------------------------------------------

    @property
    def latent_size(self) -> int:
        return self.latent_rows * self.latent_cols

    @property
    def block_slices(self) -> dict[str, slice]:
        block = self.latent_size // 8
        out = {region: slice(k * block, (k + 1) * block) for k, region in enumerate(REGION_IDS)}
        out["global"] = slice(6 * block, self.latent_size)
        return out

    def zero_code(self) -> LatentCode:
        return LatentCode(np.zeros((self.latent_rows, self.latent_cols)))

    @property
    def mean_code(self) -> LatentCode:
        return self.zero_code()

    def _check_code(self, w: LatentCode):
        if w.shape != (self.latent_rows, self.latent_cols):
            raise ShapeMismatch(
                f"latent shape {w.shape} does not match world "
                f"({self.latent_rows}, {self.latent_cols})"
            )

    # -- generator interface ----------------------------------------------

    def decode(self, w: LatentCode) -> LandmarkSet:
        self._check_code(w)
        pts = self.base_face + (self.mixing @ w.flat()).reshape(N_LANDMARKS, 2)
        np.clip(pts, 0.0, float(CANONICAL_SIZE), out=pts)
        return LandmarkSet(points=pts, frame_size=(CANONICAL_SIZE, CANONICAL_SIZE))

    def decode_points(self, flat_w: np.ndarray) -> np.ndarray:
        """Raw decode of a flattened latent, without LandmarkSet wrapping."""
        pts = self.base_face + (self.mixing @ flat_w).reshape(N_LANDMARKS, 2)
        np.clip(pts, 0.0, float(CANONICAL_SIZE), out=pts)
        return pts

    def decode_points_batch(self, flat_ws: np.ndarray) -> np.ndarray:
        """Decode a (B, P) batch to (B, 468, 2) point arrays."""
        pts = (flat_ws @ self.mixing.T).reshape(-1, N_LANDMARKS, 2) + self.base_face
        np.clip(pts, 0.0, float(CANONICAL_SIZE), out=pts)
        return pts

    def encode(self, obs: LandmarkSet) -> LatentCode:
        y = (obs.points - self.base_face).ravel()
        w = self._solve @ (self._mt @ y)
        return LatentCode(w.reshape(self.latent_rows, self.latent_cols))

    def refine(self, w0: LatentCode, obs: LandmarkSet, weights) -> LatentCode:
        """Weighted ridge fit by preconditioned CG, capped at 30 steps.

        The objective sum_i weights_i ||decode_i(w) - obs_i||^2 + lam ||w||^2
        is quadratic, so each CG step is an exact line search and the
        objective never increases.  The unweighted normal-equation inverse
        (precomputed for encode) preconditions the weighted system, which
        clusters the spectrum and makes 30 steps ample.
        """
        self._check_code(w0)
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (N_LANDMARKS,) or (weights < 0).any():
            raise ShapeMismatch("weights must be 468 non-negative reals")
        wrow = np.repeat(weights, 2)
        y = (obs.points - self.base_face).ravel()
        m = self.mixing
        mean_w = float(weights.mean()) or 1.0

        def apply_a(v):
            return m.T @ (wrow * (m @ v)) + self.lam * v

        def apply_p(v):
            return self._solve @ (v / mean_w)

        b = m.T @ (wrow * y)
        x = w0.flat().copy()
        r = b - apply_a(x)
        z = apply_p(r)
        d = z.copy()
        rz = float(r @ z)
        for _ in range(REFINE_MAX_STEPS):
            if rz <= 1e-30 or float(r @ r) <= 1e-30:
                break
            ad = apply_a(d)
            alpha = rz / float(d @ ad)
            x = x + alpha * d
            r = r - alpha * ad
            z = apply_p(r)
            rz_new = float(r @ z)
            d = z + (rz_new / rz) * d
            rz = rz_new
        return LatentCode(x.reshape(self.latent_rows, self.latent_cols))

    # -- serialization ----------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "format": "facedose-world",
            "version": 1,
            "seed": self.seed,
            "latent_rows": self.latent_rows,
            "latent_cols": self.latent_cols,
            "epsilon": self.epsilon,
            "noise_sigma": self.noise_sigma,
            "lam": self.lam,
            "base_face": self.base_face.ravel().tolist(),
            "mixing": self.mixing.ravel().tolist(),
            "table": json.loads(self.table.to_json()),
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SyntheticWorld":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed world document: {exc}") from exc
        if doc.get("format") != "facedose-world" or doc.get("version") != 1:
            raise FormatError(f"unsupported world format/version: {doc.get('format')}/{doc.get('version')}")
        p = doc["latent_rows"] * doc["latent_cols"]
        table = RegionIndexTable.from_json(json.dumps(doc["table"]))
        return cls(
            seed=doc["seed"],
            latent_rows=doc["latent_rows"],
            latent_cols=doc["latent_cols"],
            epsilon=doc["epsilon"],
            noise_sigma=doc["noise_sigma"],
            base_face=np.asarray(doc["base_face"]).reshape(N_LANDMARKS, 2),
            mixing=np.asarray(doc["mixing"]).reshape(2 * N_LANDMARKS, p),
            table=table,
            lam=doc["lam"],
        )


# ---------------------------------------------------------------------------
# mirroring and the symmetric target
# ---------------------------------------------------------------------------


def mirror_face(obs: LandmarkSet, table: RegionIndexTable, side: str) -> LandmarkSet:
    """Keep one half, replace the other by its reflection across the midline.

    Midline-paired landmarks are projected onto the midline (x = width/2),
    matching what mirroring does to features that straddle the axis.  A
    mirror-symmetric face is a fixed point.
    """
    if side not in ("left", "right"):
        raise ShapeMismatch(f"side must be 'left' or 'right', got {side!r}")
    width = float(obs.frame_size[0])
    pts = obs.points.copy()
    left = table.left_side
    right = table.mirror_index[left]
    mid = table.midline
    if side == "left":
        kept = pts[left]
        pts[right, 0] = width - kept[:, 0]
        pts[right, 1] = kept[:, 1]
    else:
        kept = pts[right]
        pts[left, 0] = width - kept[:, 0]
        pts[left, 1] = kept[:, 1]
    pts[mid, 0] = width / 2.0
    return LandmarkSet(points=pts, frame_size=obs.frame_size)


def symmetric_target(obs: LandmarkSet, world: SyntheticWorld,
                     table: RegionIndexTable) -> tuple[LandmarkSet, LatentCode]:
    """Latent midpoint of the two mirrored encodings, decoded back."""
    w_left = world.encode(mirror_face(obs, table, "left"))
    w_right = world.encode(mirror_face(obs, table, "right"))
    w_sym = LatentCode((w_left.values + w_right.values) / 2.0)
    return world.decode(w_sym), w_sym
