import numpy as np
import pytest

from facedose.errors import ShapeMismatch
from facedose.faceworld import (
    LatentCode,
    SyntheticWorld,
    mirror_face,
    symmetric_target,
)
from facedose.geometry import CANONICAL_SIZE, REGION_IDS, LandmarkSet, metrics_of
from tests.conftest import sample_patient_code


def test_zero_latent_decodes_base(world):
    lm = world.decode(world.zero_code())
    assert np.array_equal(lm.points, world.base_face)
    lm2 = world.decode(world.zero_code())
    assert np.array_equal(lm.points, lm2.points)


def test_decode_deterministic(world):
    w = sample_patient_code(world, 1)
    a = world.decode(w).points
    b = world.decode(w).points
    assert np.array_equal(a, b)


def test_encode_zero_case(world):
    lm = world.decode(world.zero_code())
    w = world.encode(lm)
    assert np.linalg.norm(w.values) <= 1e-6


def test_encode_decode_roundtrip(world):
    rng = np.random.default_rng(0)
    for _ in range(10):
        w = LatentCode(rng.normal(0, 1.0, size=(world.latent_rows, world.latent_cols)))
        w2 = world.encode(world.decode(w))
        assert np.linalg.norm(w2.values - w.values) <= 1e-6


def test_encode_matches_normal_equations_oracle(world):
    rng = np.random.default_rng(3)
    w = sample_patient_code(world, 3)
    obs_pts = world.decode(w).points + rng.normal(0, 0.5, size=(468, 2))
    obs = LandmarkSet(obs_pts, (CANONICAL_SIZE, CANONICAL_SIZE))
    w_hat = world.encode(obs).values.ravel()

    m = world.mixing
    y = (obs.points - world.base_face).ravel()
    gram = m.T @ m + world.lam * np.eye(world.latent_size)
    oracle = np.linalg.solve(gram, m.T @ y)
    assert np.abs(w_hat - oracle).max() < 1e-8
    # decode(encode(obs)) is the ridge projection of obs
    proj = world.decode(LatentCode(oracle.reshape(world.latent_rows, world.latent_cols)))
    assert np.abs(world.decode(world.encode(obs)).points - proj.points).max() < 1e-8


def test_decode_shape_check(world):
    with pytest.raises(ShapeMismatch):
        world.decode(LatentCode(np.zeros((2, 2))))


def test_block_locality(world):
    # per-point RMS displacement off a region stays within 2 epsilon of the
    # on-region displacement
    slices = world.block_slices
    rng = np.random.default_rng(5)
    for region in REGION_IDS:
        s = slices[region]
        w = np.zeros(world.latent_size)
        w[s] = rng.normal(0, 0.5, size=s.stop - s.start)
        disp = (world.decode_points(w) - world.base_face)
        on_idx = np.asarray(world.table.roi_support[region])
        mask = np.zeros(468, dtype=bool)
        mask[on_idx] = True
        rms_on = np.sqrt(np.mean(np.sum(disp[mask] ** 2, axis=1)))
        rms_off = np.sqrt(np.mean(np.sum(disp[~mask] ** 2, axis=1)))
        assert rms_off <= 2.0 * world.epsilon * rms_on


def test_lipschitz_bound(world):
    op_norm = np.linalg.norm(world.mixing, 2)
    rng = np.random.default_rng(6)
    for _ in range(10):
        w1 = sample_patient_code(world, rng.integers(1 << 30))
        w2 = sample_patient_code(world, rng.integers(1 << 30))
        d_obs = np.linalg.norm(world.decode(w1).points - world.decode(w2).points)
        d_lat = np.linalg.norm(w1.values - w2.values)
        assert d_obs <= op_norm * d_lat + 1e-9


def test_refine_uniform_weights_matches_encode(world):
    w = sample_patient_code(world, 11)
    obs = world.decode(w)
    refined = world.refine(world.zero_code(), obs, np.ones(468))
    encoded = world.encode(obs)
    assert np.linalg.norm(refined.values - encoded.values) <= 1e-5


def test_refine_upweighting_reduces_weighted_residual(world):
    rng = np.random.default_rng(12)
    w = sample_patient_code(world, 12)
    # conflicting off-manifold observation
    obs_pts = world.decode(w).points + rng.normal(0, 1.5, size=(468, 2))
    obs = LandmarkSet(np.clip(obs_pts, 0, 256), (CANONICAL_SIZE, CANONICAL_SIZE))
    table = world.table
    focus = np.asarray(
        list(table.eye_left) + list(table.eye_right)
        + [table.mouth_corner_left, table.mouth_corner_right]
    )
    weights = np.ones(468)
    uniform = world.refine(world.zero_code(), obs, weights)
    weights[focus] = 10.0
    focused = world.refine(world.zero_code(), obs, weights)

    def focus_residual(code):
        return float(np.sum((world.decode(code).points[focus] - obs.points[focus]) ** 2))

    assert focus_residual(focused) < focus_residual(uniform)


def test_refine_ridge_limit(world):
    w = sample_patient_code(world, 13)
    obs = world.decode(w)
    heavy = SyntheticWorld(
        seed=world.seed, latent_rows=world.latent_rows, latent_cols=world.latent_cols,
        epsilon=world.epsilon, noise_sigma=world.noise_sigma,
        base_face=world.base_face, mixing=world.mixing, table=world.table, lam=1e9,
    )
    refined = heavy.refine(heavy.zero_code(), obs, np.ones(468))
    assert np.linalg.norm(refined.values) < 1e-3  # pulled to the mean code


def test_refine_objective_nonincreasing(world):
    rng = np.random.default_rng(14)
    obs_pts = world.base_face + rng.normal(0, 2.0, size=(468, 2))
    obs = LandmarkSet(np.clip(obs_pts, 0, 256), (CANONICAL_SIZE, CANONICAL_SIZE))
    weights = rng.uniform(0, 2, size=468)
    wrow = np.repeat(weights, 2)

    def objective(code):
        resid = (world.decode_points(code.flat()) - obs.points).ravel()
        return float(resid @ (wrow * resid) + world.lam * code.flat() @ code.flat())

    # CG is monotone in the quadratic objective; check a few prefix runs
    prev = objective(world.zero_code())
    import facedose.faceworld as fw
    for steps in (1, 2, 5, 10, 30):
        orig = fw.REFINE_MAX_STEPS
        fw.REFINE_MAX_STEPS = steps
        try:
            val = objective(world.refine(world.zero_code(), obs, weights))
        finally:
            fw.REFINE_MAX_STEPS = orig
        assert val <= prev + 1e-9
        prev = val


# ---------------------------------------------------------------------------
# mirroring and the symmetric target
# ---------------------------------------------------------------------------


def test_mirror_symmetric_face_fixed_point(world, table):
    base = LandmarkSet(world.base_face, (CANONICAL_SIZE, CANONICAL_SIZE))
    for side in ("left", "right"):
        out = mirror_face(base, table, side)
        assert np.abs(out.points - base.points).max() < 1e-9


def test_mirror_raised_left_brow(world, table):
    pts = world.base_face.copy()
    left_brow = np.asarray(table.brow_left)
    pts[left_brow, 1] -= 4.0
    face = LandmarkSet(pts, (CANONICAL_SIZE, CANONICAL_SIZE))
    out = mirror_face(face, table, "left")
    right_brow = table.mirror_index[left_brow]
    assert np.abs(out.points[right_brow, 1] - pts[left_brow, 1]).max() < 1e-9


def test_mirror_idempotent(world, table):
    face = world.decode(sample_patient_code(world, 21))
    once = mirror_face(face, table, "left")
    twice = mirror_face(once, table, "left")
    assert np.abs(twice.points - once.points).max() < 1e-12


def test_symmetric_target_of_symmetric_face(world, table):
    base = LandmarkSet(world.base_face, (CANONICAL_SIZE, CANONICAL_SIZE))
    out, w_sym = symmetric_target(base, world, table)
    assert np.abs(out.points - base.points).max() < 1e-6
    assert np.linalg.norm(w_sym.values - world.encode(base).values) < 1e-6


def test_symmetric_target_symmetrizes(world, table):
    for seed in range(5):
        face = world.decode(sample_patient_code(world, 100 + seed))
        out, w_sym = symmetric_target(face, world, table)
        m = metrics_of(out, table).as_array()
        assert m.max() < 1e-6
        # oracle: midpoint in latent space equals direct landmark averaging
        mirrored = face.points.copy()
        mirrored[:, 0] = CANONICAL_SIZE - mirrored[:, 0]
        mirrored = mirrored[table.mirror_index]
        avg = (face.points + mirrored) / 2.0
        assert np.abs(out.points - avg).max() < 1e-6
        # metrics never increase
        m_in = metrics_of(face, table).as_array()
        assert (m <= m_in + 1e-6).all()


def test_symmetric_target_midpoint_definition(world, table):
    face = world.decode(sample_patient_code(world, 33))
    w_left = world.encode(mirror_face(face, table, "left"))
    w_right = world.encode(mirror_face(face, table, "right"))
    _, w_sym = symmetric_target(face, world, table)
    assert np.array_equal(w_sym.values, (w_left.values + w_right.values) / 2.0)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_world_roundtrip_bit_exact(world):
    clone = SyntheticWorld.from_json(world.to_json())
    w = sample_patient_code(world, 44)
    assert np.array_equal(clone.decode(w).points, world.decode(w).points)
    assert clone.seed == world.seed and clone.epsilon == world.epsilon


def test_world_rejects_bad_version(world):
    import json

    doc = json.loads(world.to_json())
    doc["version"] = 99
    with pytest.raises(Exception):
        SyntheticWorld.from_json(json.dumps(doc))
