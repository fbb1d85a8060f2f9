import numpy as np
import pytest

import facedose.kernels as kernels
from facedose.axes import default_masks
from facedose.faceworld import LatentCode, SyntheticWorld
from facedose.geometry import default_table


@pytest.fixture(scope="session")
def table():
    return default_table()


@pytest.fixture(scope="session")
def world():
    w = SyntheticWorld.create(seed=7)
    kernels.warmup(w.table.flat())
    return w


@pytest.fixture(scope="session")
def masks():
    return default_masks()


def sample_patient_code(world, seed, scale=0.2):
    """Cohort-style random latent for one synthetic patient."""
    from facedose.cohort import _sample_patient_latent

    rng = np.random.default_rng(seed)
    flat = _sample_patient_latent(world, rng, scale)
    return LatentCode(flat.reshape(world.latent_rows, world.latent_cols))


@pytest.fixture(scope="session")
def small_cohort():
    """12 patients x 4 images; enough structure for pipeline tests."""
    from facedose.cohort import CohortConfig, generate_cohort

    cfg = CohortConfig(n_patients=12, images_per_patient=4, seed=11)
    return generate_cohort(cfg)
