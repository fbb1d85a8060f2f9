"""Hot numeric kernels with Numba acceleration and pure-NumPy fallbacks.

Three kernel families dominate runtime: fused landmark-metric evaluation
(driving calibration), regression-tree split search (training), and batched
forest traversal (prediction / dose inversion).  Each is implemented twice:
an ``@njit`` version and a NumPy twin with identical arithmetic.  The active
backend is chosen once at import time:

* ``FACEDOSE_NUMBA=0`` forces the pure-NumPy path,
* ``FACEDOSE_NUMBA=1`` (or unset) uses Numba when it is importable.

``benchmarks/bench_kernels.py`` compares both paths.
"""

from __future__ import annotations

import math
import os

import numpy as np

_flag = os.environ.get("FACEDOSE_NUMBA", "1").strip().lower()
if _flag in ("0", "false", "off", "no"):
    NUMBA_ENABLED = False
else:
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    from numba import njit
else:  # pragma: no cover - exercised via FACEDOSE_NUMBA=0 runs
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


# ---------------------------------------------------------------------------
# fused landmark metrics
# ---------------------------------------------------------------------------
#
# Metric layout (fixed order): eyebrows, eyes, furrow, outer-brow/nose ratio,
# mouth angle, total.  The kernel returns a 7-vector with the aligned
# inter-pupillary distance appended; ipd <= 0 signals a degenerate input.


@njit(cache=True)
def _procrustes_rms(ax, ay, bx, by):
    n = ax.shape[0]
    max_ = 0.0
    may_ = 0.0
    mbx = 0.0
    mby = 0.0
    for i in range(n):
        max_ += ax[i]
        may_ += ay[i]
        mbx += bx[i]
        mby += by[i]
    max_ /= n
    may_ /= n
    mbx /= n
    mby /= n
    # complex correlation conj(b) * a gives the rotation of b onto a
    cre = 0.0
    cim = 0.0
    for i in range(n):
        ux = ax[i] - max_
        uy = ay[i] - may_
        vx = bx[i] - mbx
        vy = by[i] - mby
        cre += vx * ux + vy * uy
        cim += vx * uy - vy * ux
    theta = math.atan2(cim, cre)
    rc = math.cos(theta)
    rs = math.sin(theta)
    resid = 0.0
    for i in range(n):
        ux = ax[i] - max_
        uy = ay[i] - may_
        vx = bx[i] - mbx
        vy = by[i] - mby
        gx = ux - (rc * vx - rs * vy)
        gy = uy - (rs * vx + rc * vy)
        resid += gx * gx + gy * gy
    return math.sqrt(resid / n)


@njit(cache=True)
def _metrics_single(
    px, py,
    eye_l, eye_r, brow_l, brow_r, fur_l, fur_r,
    corner_l, corner_r, nose, outer_l, outer_r,
    anchors, width, out,
):
    # anchor points: eye centroids and mouth-corner midpoint
    alx = 0.0
    aly = 0.0
    for i in range(eye_l.shape[0]):
        alx += px[eye_l[i]]
        aly += py[eye_l[i]]
    alx /= eye_l.shape[0]
    aly /= eye_l.shape[0]
    arx = 0.0
    ary = 0.0
    for i in range(eye_r.shape[0]):
        arx += px[eye_r[i]]
        ary += py[eye_r[i]]
    arx /= eye_r.shape[0]
    ary /= eye_r.shape[0]
    amx = 0.5 * (px[corner_l] + px[corner_r])
    amy = 0.5 * (py[corner_l] + py[corner_r])

    # complex least-squares similarity (rotation + scale + translation)
    sx = (alx + arx + amx) / 3.0
    sy = (aly + ary + amy) / 3.0
    tx = (anchors[0, 0] + anchors[1, 0] + anchors[2, 0]) / 3.0
    ty = (anchors[0, 1] + anchors[1, 1] + anchors[2, 1]) / 3.0
    den = 0.0
    cre = 0.0
    cim = 0.0
    sxs = np.empty(3)
    sys_ = np.empty(3)
    sxs[0] = alx
    sxs[1] = arx
    sxs[2] = amx
    sys_[0] = aly
    sys_[1] = ary
    sys_[2] = amy
    for i in range(3):
        ux = sxs[i] - sx
        uy = sys_[i] - sy
        vx = anchors[i, 0] - tx
        vy = anchors[i, 1] - ty
        den += ux * ux + uy * uy
        cre += ux * vx + uy * vy
        cim += ux * vy - uy * vx
    if den <= 0.0:
        out[6] = -1.0
        return
    cr = cre / den
    ci = cim / den
    t0 = tx - (cr * sx - ci * sy)
    t1 = ty - (cr * sy + ci * sx)

    n = px.shape[0]
    qx = np.empty(n)
    qy = np.empty(n)
    for i in range(n):
        qx[i] = cr * px[i] - ci * py[i] + t0
        qy[i] = cr * py[i] + ci * px[i] + t1

    celx = cr * alx - ci * aly + t0
    cely = cr * aly + ci * alx + t1
    cerx = cr * arx - ci * ary + t0
    cery = cr * ary + ci * arx + t1
    ipd = math.sqrt((celx - cerx) ** 2 + (cely - cery) ** 2)
    if ipd <= 0.0:
        out[6] = -1.0
        return

    # regional Procrustes between left set and mirrored right set, IPD units
    nb = brow_l.shape[0]
    lx = np.empty(nb)
    ly = np.empty(nb)
    rx = np.empty(nb)
    ry = np.empty(nb)
    for i in range(nb):
        lx[i] = qx[brow_l[i]] / ipd
        ly[i] = qy[brow_l[i]] / ipd
        rx[i] = (width - qx[brow_r[i]]) / ipd
        ry[i] = qy[brow_r[i]] / ipd
    m_brow = _procrustes_rms(lx, ly, rx, ry)

    ne = eye_l.shape[0]
    lx = np.empty(ne)
    ly = np.empty(ne)
    rx = np.empty(ne)
    ry = np.empty(ne)
    for i in range(ne):
        lx[i] = qx[eye_l[i]] / ipd
        ly[i] = qy[eye_l[i]] / ipd
        rx[i] = (width - qx[eye_r[i]]) / ipd
        ry[i] = qy[eye_r[i]] / ipd
    m_eye = _procrustes_rms(lx, ly, rx, ry)

    nf = fur_l.shape[0]
    lx = np.empty(nf)
    ly = np.empty(nf)
    rx = np.empty(nf)
    ry = np.empty(nf)
    for i in range(nf):
        lx[i] = qx[fur_l[i]] / ipd
        ly[i] = qy[fur_l[i]] / ipd
        rx[i] = (width - qx[fur_r[i]]) / ipd
        ry[i] = qy[fur_r[i]] / ipd
    m_fur = _procrustes_rms(lx, ly, rx, ry)

    dl = math.sqrt((qx[outer_l] - qx[nose]) ** 2 + (qy[outer_l] - qy[nose]) ** 2)
    dr = math.sqrt((qx[outer_r] - qx[nose]) ** 2 + (qy[outer_r] - qy[nose]) ** 2)
    if dl <= 0.0 or dr <= 0.0:
        out[6] = -1.0
        return
    ratio = dl / dr
    if ratio > 1.0:
        ratio = dr / dl
    m_ratio = 1.0 - ratio

    dx = abs(qx[corner_r] - qx[corner_l])
    dy = abs(qy[corner_r] - qy[corner_l])
    m_angle = math.degrees(math.atan2(dy, dx))

    out[0] = m_brow
    out[1] = m_eye
    out[2] = m_fur
    out[3] = m_ratio
    out[4] = m_angle
    out[5] = (m_brow + m_eye + m_fur) / 3.0
    out[6] = ipd


@njit(cache=True)
def _metrics_single_entry(
    pts,
    eye_l, eye_r, brow_l, brow_r, fur_l, fur_r,
    corner_l, corner_r, nose, outer_l, outer_r,
    anchors, width,
):
    out = np.empty(7)
    _metrics_single(
        np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]),
        eye_l, eye_r, brow_l, brow_r, fur_l, fur_r,
        corner_l, corner_r, nose, outer_l, outer_r,
        anchors, width, out,
    )
    return out


@njit(cache=True)
def _metrics_batch_numba(
    pts,
    eye_l, eye_r, brow_l, brow_r, fur_l, fur_r,
    corner_l, corner_r, nose, outer_l, outer_r,
    anchors, width,
):
    # serial on purpose: batches are small and thread-pool dispatch costs
    # more than the work on desk-scale machines
    b = pts.shape[0]
    out = np.empty((b, 7))
    for k in range(b):
        _metrics_single(
            np.ascontiguousarray(pts[k, :, 0]), np.ascontiguousarray(pts[k, :, 1]),
            eye_l, eye_r, brow_l, brow_r, fur_l, fur_r,
            corner_l, corner_r, nose, outer_l, outer_r,
            anchors, width, out[k],
        )
    return out


# ---------------------------------------------------------------------------
# regression-tree split search
# ---------------------------------------------------------------------------
#
# Returns (feature, threshold, score).  ``score`` is sum_l^2/n_l + sum_r^2/n_r;
# a split is admitted only when strictly above the parent term total^2/n, and
# ties are resolved toward the lowest feature index then lowest threshold
# (guaranteed by scan order plus a strict comparison).  Both backends use the
# same running-sum accumulation so they pick bit-identical splits.


@njit(cache=True)
def _best_split_numba(x, g, min_leaf):
    n, p = x.shape
    best_feat = -1
    best_thr = 0.0
    best_score = -1.0
    total0 = 0.0
    for i in range(n):
        total0 += g[i]
    parent = total0 * total0 / n
    for f in range(p):
        order = np.argsort(x[:, f], kind="mergesort")
        csum = 0.0
        for i in range(n - 1):
            csum += g[order[i]]
            xi = x[order[i], f]
            xj = x[order[i + 1], f]
            if xj <= xi:
                continue
            nl = i + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            sl = csum
            sr = total0 - csum
            score = sl * sl / nl + sr * sr / nr
            if score > best_score and score > parent:
                best_score = score
                best_feat = f
                best_thr = 0.5 * (xi + xj)
    return best_feat, best_thr, best_score


def _best_split_numpy(x, g, min_leaf):
    n, p = x.shape
    best_feat = -1
    best_thr = 0.0
    best_score = -1.0
    total0 = 0.0
    for i in range(n):
        total0 += g[i]
    parent = total0 * total0 / n
    for f in range(p):
        order = np.argsort(x[:, f], kind="mergesort")
        xs = x[order, f]
        gs = g[order]
        csum = np.cumsum(gs)
        boundary = xs[1:] > xs[:-1]
        nl = np.arange(1, n)
        valid = boundary & (nl >= min_leaf) & ((n - nl) >= min_leaf)
        if not valid.any():
            continue
        idx = np.nonzero(valid)[0]
        sl = csum[idx]
        sr = total0 - sl
        nls = idx + 1.0
        score = sl * sl / nls + sr * sr / (n - nls)
        k = int(np.argmax(score))
        if score[k] > best_score and score[k] > parent:
            best_score = float(score[k])
            best_feat = f
            best_thr = 0.5 * (xs[idx[k]] + xs[idx[k] + 1])
    return best_feat, best_thr, best_score


# ---------------------------------------------------------------------------
# batched forest traversal
# ---------------------------------------------------------------------------
#
# Trees are stored as flat node arrays: feature < 0 marks a leaf whose value
# sits in ``value``.  ``roots`` holds each tree's root offset, ``targets`` the
# output column it contributes to.  Contributions are accumulated in tree
# order so both backends produce bitwise-equal sums.


@njit(cache=True)
def _forest_predict_numba(x, feat, thr, left, right, value, roots, targets, lr, base):
    n = x.shape[0]
    q = base.shape[0]
    t = roots.shape[0]
    out = np.empty((n, q))
    for i in range(n):
        for j in range(q):
            out[i, j] = base[j]
        for k in range(t):
            node = roots[k]
            while feat[node] >= 0:
                if x[i, feat[node]] <= thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i, targets[k]] += lr * value[node]
    return out


def _forest_predict_numpy(x, feat, thr, left, right, value, roots, targets, lr, base):
    n = x.shape[0]
    out = np.tile(base, (n, 1))
    rows = np.arange(n)
    for k in range(roots.shape[0]):
        nodes = np.full(n, roots[k], dtype=np.int64)
        while True:
            f = feat[nodes]
            inner = f >= 0
            if not inner.any():
                break
            xv = x[rows[inner], f[inner]]
            go_left = xv <= thr[nodes[inner]]
            nxt = np.where(go_left, left[nodes[inner]], right[nodes[inner]])
            nodes[inner] = nxt
        out[:, targets[k]] += lr * value[nodes]
    return out


# ---------------------------------------------------------------------------
# public dispatch
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:
    best_split = _best_split_numba
    forest_predict = _forest_predict_numba
else:
    best_split = _best_split_numpy
    forest_predict = _forest_predict_numpy


def metrics_batch(pts, flat):
    """Six metrics + ipd for a (B, 468, 2) batch of raw landmark frames."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    if NUMBA_ENABLED:
        return _metrics_batch_numba(pts, *flat)
    out = np.empty((pts.shape[0], 7))
    for k in range(pts.shape[0]):
        out[k] = _metrics_single_entry(pts[k], *flat)
    return out


def metrics_one(pts, flat):
    """Six metrics + ipd for a single (468, 2) raw landmark frame."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    return _metrics_single_entry(pts, *flat)


def warmup(flat=None):
    """Trigger JIT compilation so first-request latency stays flat."""
    if not NUMBA_ENABLED:
        return
    x = np.zeros((4, 3))
    g = np.zeros(4)
    best_split(x, g, 1)
    feat = np.array([0, -1, -1], dtype=np.int64)
    thr = np.array([0.5, 0.0, 0.0])
    left = np.array([1, -1, -1], dtype=np.int64)
    right = np.array([2, -1, -1], dtype=np.int64)
    value = np.array([0.0, 1.0, 2.0])
    roots = np.array([0], dtype=np.int64)
    targets = np.array([0], dtype=np.int64)
    forest_predict(x, feat, thr, left, right, value, roots, targets, 0.1, np.zeros(1))
    if flat is not None:
        metrics_batch(np.zeros((2, 468, 2)), flat)
