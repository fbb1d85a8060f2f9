"""Canonical face template: base landmark layout, region table, ROI boxes.

The landmark topology follows the 468-point face-mesh convention for every
index the pipeline actually reads (eye and brow contours, the nasolabial
furrow list, outer lip ring, mouth corners, nose tip, midline chain).  The
remaining indices are filler: they are laid out on a deterministic spiral
over the face oval, paired left/right in ascending index order, and kept
well clear of every ROI rectangle.  Clinical deployments that need the
exact detector correspondence override the shipped table via config.

Run ``python -m facedose.template`` to regenerate the JSON files under
``facedose/data/``; a unit test keeps them in sync with this builder.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .geometry import CANONICAL_SIZE, N_LANDMARKS, REGION_IDS, RegionIndexTable

ROI_DILATION = 8.0
_FILLER_MARGIN = 12.0

# contour index lists (left = viewer-left, ordered to correspond pairwise)
EYE_LEFT = [33, 246, 161, 160, 159, 158, 157, 173, 133, 155, 154, 153, 145, 144, 163, 7]
EYE_RIGHT = [263, 466, 388, 387, 386, 385, 384, 398, 362, 382, 381, 380, 374, 373, 390, 249]
BROW_LEFT = [70, 63, 105, 66, 107, 46, 53, 52, 65, 55]
BROW_RIGHT = [300, 293, 334, 296, 336, 276, 283, 282, 295, 285]
FURROW_LEFT = [202, 212, 216, 206, 203, 129, 209, 126]
FURROW_RIGHT = [422, 432, 436, 426, 423, 358, 429, 355]
LIP_LEFT = [61, 146, 91, 181, 84, 185, 40, 39, 37]
LIP_RIGHT = [291, 375, 321, 405, 314, 409, 270, 269, 267]
MIDLINE = [10, 151, 9, 8, 168, 6, 197, 195, 5, 4, 1, 19, 94, 2, 164, 0, 17, 18, 200, 199, 152]

MOUTH_CORNER_LEFT = 61
MOUTH_CORNER_RIGHT = 291
NOSE_TIP = 1
OUTER_BROW_LEFT = 70
OUTER_BROW_RIGHT = 300

_EYE_CENTER_L = (96.0, 108.0)
_EYE_CENTER_R = (160.0, 108.0)

_BROW_LEFT_POS = [
    (76.0, 79.0), (85.0, 76.0), (94.0, 75.0), (103.0, 76.0), (112.0, 78.0),
    (77.0, 84.0), (86.0, 82.0), (95.0, 81.0), (104.0, 82.0), (113.0, 84.0),
]
_FURROW_LEFT_POS = [
    (101.0, 166.0), (100.0, 161.0), (100.0, 156.0), (102.0, 151.0),
    (104.0, 146.0), (107.0, 141.0), (105.0, 136.0), (108.0, 132.0),
]
_LIP_LEFT_POS = [
    (100.0, 168.0),                                  # corner
    (105.0, 172.0), (110.0, 174.0), (114.0, 175.0), (118.0, 175.8),   # lower arc
    (103.0, 165.0), (107.0, 163.2), (112.0, 161.8), (117.0, 160.8),   # upper arc
]
_MIDLINE_Y = [56.0, 66.0, 80.0, 92.0, 104.0, 112.0, 120.0, 126.0, 132.0, 136.0,
              140.0, 146.0, 150.0, 154.0, 158.0, 160.0, 176.0, 184.0, 192.0, 200.0, 212.0]


def _mirror(pos):
    return (CANONICAL_SIZE - pos[0], pos[1])


def _eye_positions(center):
    cx, cy = center
    pts = []
    for i in range(16):
        theta = math.radians(180.0 - 22.5 * i)
        pts.append((cx + 13.0 * math.cos(theta), cy - 5.5 * math.sin(theta)))
    return pts


def roi_support_sets() -> dict[str, list[int]]:
    """Landmark sets each ROI must enclose; mouth regions include the furrow."""
    return {
        "brow_L": list(BROW_LEFT),
        "brow_R": list(BROW_RIGHT),
        "eye_L": list(EYE_LEFT),
        "eye_R": list(EYE_RIGHT),
        "mouth_L": list(LIP_LEFT) + list(FURROW_LEFT),
        "mouth_R": list(LIP_RIGHT) + list(FURROW_RIGHT),
    }


def _named_positions() -> dict[int, tuple[float, float]]:
    pos: dict[int, tuple[float, float]] = {}
    for idx, p in zip(EYE_LEFT, _eye_positions(_EYE_CENTER_L)):
        pos[idx] = p
    for idx, p in zip(EYE_RIGHT, _eye_positions(_EYE_CENTER_L)):
        pos[idx] = _mirror(p)
    for idx, p in zip(BROW_LEFT, _BROW_LEFT_POS):
        pos[idx] = p
    for idx, p in zip(BROW_RIGHT, _BROW_LEFT_POS):
        pos[idx] = _mirror(p)
    for idx, p in zip(FURROW_LEFT, _FURROW_LEFT_POS):
        pos[idx] = p
    for idx, p in zip(FURROW_RIGHT, _FURROW_LEFT_POS):
        pos[idx] = _mirror(p)
    for idx, p in zip(LIP_LEFT, _LIP_LEFT_POS):
        pos[idx] = p
    for idx, p in zip(LIP_RIGHT, _LIP_LEFT_POS):
        pos[idx] = _mirror(p)
    for idx, y in zip(MIDLINE, _MIDLINE_Y):
        pos[idx] = (128.0, y)
    return pos


def _roi_rects_from(positions: dict[int, tuple[float, float]]) -> dict[str, tuple[float, float, float, float]]:
    rects = {}
    for region, indices in roi_support_sets().items():
        xs = [positions[i][0] for i in indices]
        ys = [positions[i][1] for i in indices]
        rects[region] = (
            min(xs) - ROI_DILATION,
            min(ys) - ROI_DILATION,
            max(xs) + ROI_DILATION,
            max(ys) + ROI_DILATION,
        )
    return rects


def _inside_any(x, y, rects, margin):
    for x0, y0, x1, y1 in rects.values():
        if x0 - margin <= x <= x1 + margin and y0 - margin <= y <= y1 + margin:
            return True
    return False


def _filler_positions(n_pairs: int, rects) -> list[tuple[float, float]]:
    """Deterministic golden-angle spiral over the left half-face, ROI-free."""
    out = []
    budget = 4000
    i = 0
    while len(out) < n_pairs and i < budget:
        r = 116.0 * math.sqrt((i + 0.5) / 900.0)
        theta = i * 2.39996322972865332
        x = 128.0 + 1.05 * r * math.cos(theta)
        y = 132.0 + 1.15 * r * math.sin(theta)
        i += 1
        if not (22.0 <= x <= 126.5):
            continue
        if not (22.0 <= y <= 234.0):
            continue
        if _inside_any(x, y, rects, _FILLER_MARGIN):
            continue
        out.append((x, y))
    if len(out) < n_pairs:
        raise RuntimeError("spiral budget exhausted while placing filler landmarks")
    return out


def build_template():
    """Return (base_points (468, 2), RegionIndexTable, roi rects by region)."""
    positions = _named_positions()
    rects = _roi_rects_from(positions)

    named = set(positions)
    remaining = sorted(set(range(N_LANDMARKS)) - named)
    n_pairs = len(remaining) // 2
    filler = _filler_positions(n_pairs, rects)

    pairs: list[tuple[int, int]] = []
    for idx_l, idx_r in zip(EYE_LEFT, EYE_RIGHT):
        pairs.append((idx_l, idx_r))
    for idx_l, idx_r in zip(BROW_LEFT, BROW_RIGHT):
        pairs.append((idx_l, idx_r))
    for idx_l, idx_r in zip(FURROW_LEFT, FURROW_RIGHT):
        pairs.append((idx_l, idx_r))
    for idx_l, idx_r in zip(LIP_LEFT, LIP_RIGHT):
        pairs.append((idx_l, idx_r))
    for idx in MIDLINE:
        pairs.append((idx, idx))

    for k in range(n_pairs):
        left_idx, right_idx = remaining[2 * k], remaining[2 * k + 1]
        positions[left_idx] = filler[k]
        positions[right_idx] = _mirror(filler[k])
        pairs.append((left_idx, right_idx))
    if len(remaining) % 2 == 1:
        odd = remaining[-1]
        positions[odd] = (128.0, 44.0)
        pairs.append((odd, odd))

    base = np.zeros((N_LANDMARKS, 2))
    for idx, p in positions.items():
        base[idx] = p

    table = RegionIndexTable(
        brow_left=list(BROW_LEFT),
        brow_right=list(BROW_RIGHT),
        eye_left=list(EYE_LEFT),
        eye_right=list(EYE_RIGHT),
        furrow_left=list(FURROW_LEFT),
        furrow_right=list(FURROW_RIGHT),
        mouth_corner_left=MOUTH_CORNER_LEFT,
        mouth_corner_right=MOUTH_CORNER_RIGHT,
        nose_tip=NOSE_TIP,
        outer_brow_left=OUTER_BROW_LEFT,
        outer_brow_right=OUTER_BROW_RIGHT,
        eye_center_left=list(EYE_LEFT),
        eye_center_right=list(EYE_RIGHT),
        pairs=pairs,
        roi_support=roi_support_sets(),
    )
    return base, table, rects


def write_data_files(data_dir=None):
    data_dir = Path(data_dir) if data_dir else Path(__file__).parent / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    base, table, rects = build_template()
    (data_dir / "region_table.json").write_text(table.to_json())
    masks = [
        {"region_id": region, "rect": list(rects[region])}
        for region in REGION_IDS
    ]
    (data_dir / "roi_masks.json").write_text(json.dumps({"version": 1, "masks": masks}, indent=1))
    (data_dir / "base_face.json").write_text(
        json.dumps({"version": 1, "points": base.tolist()}, separators=(",", ":"))
    )
    return data_dir


if __name__ == "__main__":
    out = write_data_files()
    print(f"wrote template data to {out}")
