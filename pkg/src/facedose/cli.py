"""Operator command line: cohort generation through serving.

Pipeline stages communicate only through files under --data-dir.  Every
subcommand writes a machine-readable run manifest (hashed inputs, seed,
outputs) next to its outputs; nothing is written outside the data
directory (stdout excepted).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .axes import AlphaVector, default_masks, discover_axes
from .cohort import CohortConfig, export, generate_cohort, ingest, split_by_patient
from .doseresponse import (
    DoseVector,
    PlannerBundle,
    cases_from_records,
    calibrate_alpha,
    default_muscle_map,
    invert_dose,
    predict_post_a,
    train_approach_a,
    train_approach_b,
)
from .errors import FacedoseError
from .evaluation import run_comparison
from .faceworld import SyntheticWorld, symmetric_target
from .gbm import GbmConfig, GbmModel
from .geometry import LandmarkSet, METRIC_NAMES, default_table, metrics_of


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(data_dir: Path, command: str, args: dict, inputs: list, outputs: list,
                    seed=None):
    def entries(paths):
        out = []
        for p in paths:
            p = Path(p)
            if p.is_dir():
                out.extend({"path": str(f), "sha256": _sha256(f)}
                           for f in sorted(p.glob("*.json")))
            elif p.exists():
                out.append({"path": str(p), "sha256": _sha256(p)})
        return out

    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "args": {k: str(v) for k, v in args.items()},
        "inputs": entries(inputs),
        "outputs": entries(outputs),
    }
    out = data_dir / f"manifest-{command}.json"
    out.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out


def _load_world(path: str) -> SyntheticWorld:
    return SyntheticWorld.from_json(Path(path).read_text())


def _gbm_config(args) -> GbmConfig:
    return GbmConfig(
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        learning_rate=args.learning_rate,
        min_samples_leaf=args.min_samples_leaf,
        subsample=args.subsample,
        seed=args.seed,
    )


def cmd_cohort_gen(args) -> int:
    data_dir = Path(args.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    cfg = CohortConfig(
        n_patients=args.patients,
        images_per_patient=args.per_patient,
        seed=args.seed,
        noise_sigma=args.noise_sigma,
    )
    result = generate_cohort(cfg)
    records_dir = data_dir / "records"
    written = export(result.records, records_dir)
    world_path = data_dir / "world.json"
    world_path.write_text(result.world.to_json())
    sealed_path = data_dir / "sealed_truth.json"
    sealed_path.write_text(json.dumps(result.sealed_truth, sort_keys=True))
    _write_manifest(data_dir, "cohort-gen", vars(args), [],
                    written + [world_path, sealed_path], seed=args.seed)
    print(f"wrote {len(written)} patient records, world.json and sealed_truth.json "
          f"under {data_dir}")
    return 0


def cmd_ingest(args) -> int:
    data_dir = Path(args.data_dir)
    records = ingest(args.src)
    written = export(records, data_dir / "records")
    _write_manifest(data_dir, "ingest", vars(args), [args.src], written)
    print(f"ingested {len(records)} records into {data_dir / 'records'}")
    return 0


def cmd_metrics(args) -> int:
    landmarks = LandmarkSet.from_json(Path(args.landmarks).read_text())
    table = default_table()
    m = metrics_of(landmarks, table)
    doc = {name: float(v) for name, v in zip(METRIC_NAMES, m.as_array())}
    print(json.dumps(doc, indent=1, sort_keys=True))
    return 0


def cmd_axes(args) -> int:
    data_dir = Path(args.data_dir)
    world = _load_world(args.world)
    records = ingest(args.record)
    masks = default_masks()
    out_paths = []
    for record in records:
        src = record.pre_sessions()[0].landmarks
        tgt, _ = symmetric_target(src, world, world.table)
        basis = discover_axes(src, tgt, masks, world, patient_id=record.patient_id)
        out = data_dir / f"axes-{record.patient_id}.json"
        out.write_text(basis.to_json())
        out_paths.append(out)
    _write_manifest(data_dir, "axes", vars(args), [args.record, args.world], out_paths)
    print(f"wrote {len(out_paths)} axis files under {data_dir}")
    return 0


def cmd_calibrate(args) -> int:
    data_dir = Path(args.data_dir)
    world = _load_world(args.world)
    records_path = args.records or (data_dir / "records")
    records = ingest(records_path)
    masks = default_masks()
    cases = cases_from_records(records, world, world.table, masks)
    rows = []
    for case in cases:
        alpha = calibrate_alpha(case, world, world.table)
        rows.append(
            {
                "patient_id": case.patient_id,
                "expression": case.expression,
                "alpha_gt": alpha.values.tolist(),
            }
        )
    out = data_dir / "calibration.json"
    out.write_text(json.dumps({"version": 1, "cases": rows}, indent=1, sort_keys=True))
    _write_manifest(data_dir, "calibrate", vars(args), [args.world, records_path], [out])
    print(f"calibrated {len(rows)} cases -> {out}")
    return 0


def _attach_calibration(cases, calibration_path: Path):
    by_key = {}
    doc = json.loads(calibration_path.read_text())
    for row in doc["cases"]:
        by_key[(row["patient_id"], row["expression"])] = row["alpha_gt"]
    for case in cases:
        key = (case.patient_id, case.expression)
        if key in by_key:
            case.alpha_gt = AlphaVector(np.asarray(by_key[key]))


def cmd_train(args) -> int:
    data_dir = Path(args.data_dir)
    world = _load_world(args.world)
    records_path = args.records or (data_dir / "records")
    records = ingest(records_path)
    masks = default_masks()
    cases = cases_from_records(records, world, world.table, masks)
    cfg = _gbm_config(args)
    inputs = [args.world, records_path]
    if args.approach == "a":
        calib = Path(args.calibration) if args.calibration else data_dir / "calibration.json"
        if calib.exists():
            _attach_calibration(cases, calib)
            inputs.append(calib)
        for case in cases:
            if case.alpha_gt is None:
                case.alpha_gt = calibrate_alpha(case, world, world.table)
        model, report = train_approach_a(cases, cfg)
        model_path = data_dir / "model_a.json"
    else:
        model, report = train_approach_b(cases, cfg)
        model_path = data_dir / "model_b.json"
    model_path.write_bytes(model.save())
    report_path = data_dir / f"training_report_{args.approach}.json"
    report_path.write_text(report.to_json())
    outputs = [model_path, report_path]

    if args.approach == "a":
        bundle = PlannerBundle(
            world=world,
            model_a=model,
            model_b=None,
            muscle_map=default_muscle_map(),
            bounds=np.stack([c.u.bounds for c in cases]).max(axis=0),
            train_doses=np.stack([c.u.values for c in cases]),
        )
        model_b_path = data_dir / "model_b.json"
        if model_b_path.exists():
            bundle.model_b = GbmModel.load(model_b_path.read_bytes())
        bundle_path = data_dir / "bundle.json"
        bundle_path.write_text(bundle.to_json())
        outputs.append(bundle_path)
    _write_manifest(data_dir, f"train-{args.approach}", vars(args), inputs, outputs,
                    seed=args.seed)
    print(f"trained approach {args.approach} on {len(cases)} cases -> {model_path}")
    return 0


def cmd_evaluate(args) -> int:
    data_dir = Path(args.data_dir)
    world = _load_world(args.world)
    if args.train_dir and args.test_dir:
        train_records = ingest(args.train_dir)
        test_records = ingest(args.test_dir)
    else:
        records_path = args.records or (data_dir / "records")
        records = ingest(records_path)
        train_records, test_records = split_by_patient(records, args.ratio, seed=args.seed)
    approaches = tuple(args.approaches.split(","))
    cfg = _gbm_config(args)
    report = run_comparison(
        train_records, test_records, {"a": cfg, "b": cfg}, world,
        seed=args.seed, approaches=approaches,
    )
    json_path = data_dir / "report.json"
    text_path = data_dir / "report.txt"
    csv_path = data_dir / "predictions.csv"
    json_path.write_text(report.to_json())
    text_path.write_text(report.render_text())
    csv_path.write_text(report.to_csv())
    inputs = [args.world]
    if args.train_dir and args.test_dir:
        inputs += [args.train_dir, args.test_dir]
    else:
        inputs.append(records_path)
    _write_manifest(data_dir, "evaluate", vars(args), inputs,
                    [json_path, text_path, csv_path], seed=args.seed)
    print(report.render_text())
    return 0


def _load_bundle(path: str) -> PlannerBundle:
    return PlannerBundle.from_json(Path(path).read_text())


def _patient_context(bundle: PlannerBundle, record_path: str):
    records = ingest(record_path)
    record = records[0]
    world = bundle.world
    src = record.pre_sessions()[0].landmarks
    w_src = world.encode(src)
    tgt, _ = symmetric_target(src, world, world.table)
    basis = discover_axes(src, tgt, default_masks(), world, patient_id=record.patient_id)
    m_src = metrics_of(src, world.table)
    return record, w_src, basis, m_src


def cmd_simulate(args) -> int:
    bundle = _load_bundle(args.bundle)
    record, w_src, basis, m_src = _patient_context(bundle, args.record)
    dose = DoseVector(np.asarray([float(v) for v in args.dose.split(",")]), bundle.bounds)
    metrics, face, alpha = predict_post_a(
        dose, m_src, w_src, basis, bundle.model_a, bundle.world, bundle.world.table
    )
    doc = {
        "patient_id": record.patient_id,
        "alpha": alpha.values.tolist(),
        "metrics": {n: float(v) for n, v in zip(METRIC_NAMES, metrics.as_array())},
        "m_src": {n: float(v) for n, v in zip(METRIC_NAMES, m_src.as_array())},
    }
    print(json.dumps(doc, indent=1, sort_keys=True))
    return 0


def cmd_invert(args) -> int:
    bundle = _load_bundle(args.bundle)
    record, w_src, basis, m_src = _patient_context(bundle, args.record)
    alpha = AlphaVector(np.asarray([float(v) for v in args.alpha.split(",")]))
    result = invert_dose(
        alpha, m_src, bundle.model_a, bundle.bounds,
        seed=args.seed, extra_starts=bundle.train_doses,
    )
    doc = {
        "patient_id": record.patient_id,
        "dose": result.dose.values.tolist(),
        "residual": result.residual,
        "evaluations": result.evaluations,
    }
    print(json.dumps(doc, indent=1, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    bundle = _load_bundle(args.bundle) if args.bundle else None
    app = create_app(Path(args.data_dir), bundle)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facedose",
                                     description="dose-response planning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_gbm_flags(p):
        p.add_argument("--n-trees", type=int, default=200)
        p.add_argument("--max-depth", type=int, default=3)
        p.add_argument("--learning-rate", type=float, default=0.05)
        p.add_argument("--min-samples-leaf", type=int, default=2)
        p.add_argument("--subsample", type=float, default=1.0)

    p = sub.add_parser("cohort-gen", help="generate a synthetic cohort with sealed truth")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--patients", type=int, default=46)
    p.add_argument("--per-patient", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.set_defaults(fn=cmd_cohort_gen)

    p = sub.add_parser("ingest", help="validate and import patient record files")
    p.add_argument("--src", required=True)
    p.add_argument("--data-dir", required=True)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("metrics", help="compute the six metrics for a landmark file")
    p.add_argument("--landmarks", required=True)
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("axes", help="discover per-patient latent axes")
    p.add_argument("--record", required=True)
    p.add_argument("--world", required=True)
    p.add_argument("--data-dir", required=True)
    p.set_defaults(fn=cmd_axes)

    p = sub.add_parser("calibrate", help="analysis-by-synthesis alpha ground truth")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--records", default=None)
    p.add_argument("--world", required=True)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("train", help="train a dose-outcome model")
    p.add_argument("--approach", choices=("a", "b"), required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--records", default=None)
    p.add_argument("--world", required=True)
    p.add_argument("--calibration", default=None)
    p.add_argument("--seed", type=int, default=0)
    add_gbm_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="train both approaches and render the report")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--records", default=None)
    p.add_argument("--train-dir", default=None)
    p.add_argument("--test-dir", default=None)
    p.add_argument("--world", required=True)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--approaches", default="a,b")
    add_gbm_flags(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("simulate", help="forward dose -> outcome simulation")
    p.add_argument("--bundle", required=True)
    p.add_argument("--record", required=True)
    p.add_argument("--dose", required=True, help="22 comma-separated units")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("invert", help="visual target -> dose estimate")
    p.add_argument("--bundle", required=True)
    p.add_argument("--record", required=True)
    p.add_argument("--alpha", required=True, help="6 comma-separated intensities")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_invert)

    p = sub.add_parser("serve", help="run the planning HTTP service")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--bundle", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8420)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FacedoseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
