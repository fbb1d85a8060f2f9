"""Build a small trained bundle and serve the planning API for UI tests.

Usage: python3 service_fixture.py <port>
Prints "READY <patient_id>" once the server is listening.
"""

import sys
import tempfile
import threading
import time

import numpy as np
import uvicorn

from facedose.axes import default_masks
from facedose.cohort import CohortConfig, generate_cohort, split_by_patient
from facedose.doseresponse import (
    J_MUSCLES,
    PlannerBundle,
    calibrate_alpha,
    cases_from_records,
    default_muscle_map,
    train_approach_a,
    train_approach_b,
)
from facedose.gbm import GbmConfig
from facedose.service import create_app


def main() -> None:
    port = int(sys.argv[1])
    cfg = CohortConfig(n_patients=10, images_per_patient=4, seed=23)
    result = generate_cohort(cfg)
    world = result.world
    masks = default_masks()
    train_recs, test_recs = split_by_patient(result.records, 0.8, seed=2)
    cases = cases_from_records(train_recs, world, world.table, masks)
    for case in cases:
        case.alpha_gt = calibrate_alpha(case, world, world.table)
    model_a, _ = train_approach_a(cases, GbmConfig(n_trees=80))
    model_b, _ = train_approach_b(cases, GbmConfig(n_trees=80))
    bundle = PlannerBundle(
        world=world,
        model_a=model_a,
        model_b=model_b,
        muscle_map=default_muscle_map(),
        bounds=np.full(J_MUSCLES, 10.0),
        train_doses=np.stack([c.u.values for c in cases]),
    )
    data_dir = tempfile.mkdtemp(prefix="facedose-ui-")
    app = create_app(data_dir, bundle)

    record = test_recs[0]

    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    while not server.started:
        time.sleep(0.05)

    import json
    import urllib.request

    req = urllib.request.Request(
        f"http://127.0.0.1:{port}/patients",
        data=record.to_json().encode(),
        headers={"content-type": "application/json"},
        method="POST",
    )
    urllib.request.urlopen(req).read()
    print(f"READY {record.patient_id}", flush=True)
    thread.join()


if __name__ == "__main__":
    main()
