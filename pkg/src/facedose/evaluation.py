"""Evaluation harness: delta-m scoring, approach comparison, report rendering.

Scores are computed on relative metric changes (m_post - m_src) / m_src.
Approach A's deltas are derived from its predicted post metrics so both
approaches are compared in the identical target space.  The rendered table
has six metric rows by {MAE, R2, Pearson r} by {A, B}; rendering is
byte-deterministic given the same inputs.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .axes import default_masks
from .doseresponse import (
    TrainingCase,
    cases_from_records,
    calibrate_alpha,
    predict_delta_b,
    predict_post_a,
    relative_delta,
    train_approach_a,
    train_approach_b,
)
from .errors import ShapeMismatch
from .faceworld import SyntheticWorld
from .gbm import GbmConfig, GbmModel
from .geometry import METRIC_NAMES

ROW_LABELS = (
    "Eyebrows Asym.",
    "Eyes Asym.",
    "Furrow",
    "Outer Eyebr.-Nose",
    "Mouth Angle",
    "Total Asym.",
)

# the Procrustes-distance family of rows; the other two are ratio/angle
# positional measures
DISTANCE_BASED = ("eyebrows_asym", "eyes_asym", "furrow", "total_asym")


@dataclass(frozen=True)
class MetricScore:
    mae: float
    r2: float
    pearson: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "r2": None if math.isinf(self.r2) else self.r2,
            "pearson": None if math.isnan(self.pearson) else self.pearson,
            "degenerate": self.degenerate,
        }


def score(pred_dm, true_dm) -> list[MetricScore]:
    """Per-metric MAE, R2, and Pearson r for aligned delta-m lists.

    Zero-variance truth is flagged: Pearson becomes NaN, and R2 is 0 when
    the predictions match exactly, -inf otherwise.
    """
    pred = np.asarray(pred_dm, dtype=np.float64)
    true = np.asarray(true_dm, dtype=np.float64)
    if pred.shape != true.shape or pred.ndim != 2:
        raise ShapeMismatch(f"prediction/truth shapes disagree: {pred.shape} vs {true.shape}")
    if pred.shape[0] < 2:
        raise ShapeMismatch("need at least 2 samples to score")
    if not (np.isfinite(pred).all() and np.isfinite(true).all()):
        raise ShapeMismatch("scores require finite inputs")
    out = []
    for j in range(pred.shape[1]):
        p = pred[:, j]
        t = true[:, j]
        err = p - t
        mae = float(np.mean(np.abs(err)))
        sse = float(np.sum(err ** 2))
        sst = float(np.sum((t - t.mean()) ** 2))
        if sst == 0.0:
            degenerate = True
            r2 = 0.0 if sse == 0.0 else -math.inf
            pearson = math.nan
        else:
            degenerate = False
            r2 = 1.0 - sse / sst
            ps = float(np.std(p))
            pearson = math.nan if ps == 0.0 else float(np.corrcoef(p, t)[0, 1])
            if math.isnan(pearson):
                degenerate = True
        out.append(MetricScore(mae=mae, r2=r2, pearson=pearson, degenerate=degenerate))
    return out


@dataclass
class EvalReport:
    scores: dict[str, dict[str, MetricScore]]  # approach -> metric name -> score
    n_test: int
    config_hash: str
    seed: int
    excluded: list[dict] = field(default_factory=list)
    per_case: list[dict] = field(default_factory=list)
    timestamps: dict = field(default_factory=dict)

    def to_json(self) -> str:
        """Canonical JSON; volatile timestamps are excluded on purpose."""
        doc = {
            "format": "facedose-eval-report",
            "version": 1,
            "n_test": self.n_test,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "excluded": self.excluded,
            "scores": {
                approach: {name: s.to_dict() for name, s in by_metric.items()}
                for approach, by_metric in self.scores.items()
            },
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    def render_text(self) -> str:
        """Plain-text table in the six-row, dual-column comparison layout."""
        def cell(approach, metric, attr):
            by_metric = self.scores.get(approach)
            if not by_metric:
                return "   --"
            s = getattr(by_metric[metric], attr)
            if isinstance(s, float) and (math.isnan(s) or math.isinf(s)):
                return "  n/a"
            return f"{s:5.2f}"

        lines = [
            "Performance Comparison: Approach A (Generative) vs. Approach B (Direct)",
            f"n_test={self.n_test} seed={self.seed} config={self.config_hash}",
            "",
            "Metric (dm)        |  MAE A  MAE B |  R2 A   R2 B |  r A    r B",
            "-" * 68,
        ]
        for name, label in zip(METRIC_NAMES, ROW_LABELS):
            lines.append(
                f"{label:18s} | {cell('a', name, 'mae')}  {cell('b', name, 'mae')} "
                f"| {cell('a', name, 'r2')}  {cell('b', name, 'r2')} "
                f"| {cell('a', name, 'pearson')}  {cell('b', name, 'pearson')}"
            )
        lines.append("")
        lines.append("MAE x100 (percent-scale deltas)")
        for name, label in zip(METRIC_NAMES, ROW_LABELS):
            def cell100(approach):
                by_metric = self.scores.get(approach)
                if not by_metric:
                    return "    --"
                return f"{100.0 * by_metric[name].mae:6.2f}"
            lines.append(f"{label:18s} | {cell100('a')}  {cell100('b')}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        cols = ["patient_id", "expression", "approach"] + [f"dm_{m}" for m in METRIC_NAMES] \
            + [f"true_{m}" for m in METRIC_NAMES]
        lines = [",".join(cols)]
        for row in self.per_case:
            lines.append(
                ",".join(
                    [row["patient_id"], row["expression"], row["approach"]]
                    + [f"{v:.10g}" for v in row["dm"]]
                    + [f"{v:.10g}" for v in row["true"]]
                )
            )
        return "\n".join(lines) + "\n"


def _config_hash(cfgs: dict[str, GbmConfig], seed: int) -> str:
    blob = json.dumps(
        {k: cfgs[k].to_dict() for k in sorted(cfgs)} | {"seed": seed}, sort_keys=True
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _prepare_cases(records, world, table, masks, calibrate: bool):
    cases = cases_from_records(records, world, table, masks)
    if calibrate:
        for case in cases:
            case.alpha_gt = calibrate_alpha(case, world, table)
    return cases


def _assert_split_disjoint(train_records, test_records):
    train_ids = {r.patient_id for r in train_records}
    test_ids = {r.patient_id for r in test_records}
    if train_ids & test_ids:
        raise ShapeMismatch(f"patient leak across split: {sorted(train_ids & test_ids)}")


def run_comparison(train_records, test_records, cfgs: dict[str, GbmConfig],
                   world: SyntheticWorld, *, seed: int = 0,
                   approaches=("a", "b"),
                   train_cases: list[TrainingCase] | None = None,
                   test_cases: list[TrainingCase] | None = None) -> EvalReport:
    """Train the requested approaches and score them on held-out delta-m.

    Training never touches post-treatment data of test patients: test cases
    contribute their pre-image (for axes and source metrics) only at
    prediction time, and the split is asserted disjoint by patient id.
    """
    _assert_split_disjoint(train_records, test_records)
    table = world.table
    masks = default_masks()
    need_a = "a" in approaches
    if train_cases is None:
        train_cases = _prepare_cases(train_records, world, table, masks, calibrate=need_a)
    if test_cases is None:
        test_cases = _prepare_cases(test_records, world, table, masks, calibrate=False)

    excluded: list[dict] = []
    models: dict[str, GbmModel] = {}
    if need_a:
        if any(c.alpha_gt is None for c in train_cases):
            for c in train_cases:
                if c.alpha_gt is None:
                    c.alpha_gt = calibrate_alpha(c, world, table)
        models["a"], _ = train_approach_a(train_cases, cfgs["a"])
    if "b" in approaches:
        models["b"], report_b = train_approach_b(train_cases, cfgs["b"])
        excluded.extend(report_b.excluded)

    truth_rows = []
    valid_rows = []
    pred_rows: dict[str, list] = {k: [] for k in models}
    per_case: list[dict] = []
    for case in test_cases:
        dm_true, valid = relative_delta(case.m_src.as_array(), case.m_post.as_array())
        truth_rows.append(dm_true)
        row_valid = valid.copy()
        for approach, model in models.items():
            if approach == "a":
                m_hat, _, _ = predict_post_a(
                    case.u, case.m_src, case.w_src, case.basis, model, world, table
                )
                dm_hat, v_hat = relative_delta(case.m_src.as_array(), m_hat.as_array())
                row_valid &= v_hat
            else:
                dm_hat = predict_delta_b(case.u, case.m_src, model)
            pred_rows[approach].append(dm_hat)
            per_case.append(
                {
                    "patient_id": case.patient_id,
                    "expression": case.expression,
                    "approach": approach,
                    "dm": list(map(float, dm_hat)),
                    "true": list(map(float, dm_true)),
                }
            )
        valid_rows.append(row_valid)

    truth = np.asarray(truth_rows)
    valid = np.asarray(valid_rows)
    scores: dict[str, dict[str, MetricScore]] = {}
    for approach, rows in pred_rows.items():
        pred = np.asarray(rows)
        by_metric = {}
        for j, name in enumerate(METRIC_NAMES):
            v = valid[:, j]
            if int(v.sum()) < 2:
                by_metric[name] = MetricScore(mae=math.nan, r2=-math.inf, pearson=math.nan,
                                              degenerate=True)
                continue
            by_metric[name] = score(pred[v, j][:, None], truth[v, j][:, None])[0]
        scores[approach] = by_metric
        for j, name in enumerate(METRIC_NAMES):
            n_dropped = int((~valid[:, j]).sum())
            if n_dropped:
                excluded.append({"metric": name, "dropped_test_cases": n_dropped,
                                 "approach": approach})

    return EvalReport(
        scores=scores,
        n_test=len(test_cases),
        config_hash=_config_hash(cfgs, seed),
        seed=seed,
        excluded=excluded,
        per_case=per_case,
    )


def shuffled_dose_control(train_records, test_records, cfgs: dict[str, GbmConfig],
                          world: SyntheticWorld, *, seed: int = 0, n_shuffles: int = 5,
                          train_cases: list[TrainingCase] | None = None,
                          test_cases: list[TrainingCase] | None = None) -> dict:
    """Destruction control: permute doses across training patients.

    Returns the per-approach mean Pearson r over the Procrustes-family rows,
    averaged over ``n_shuffles`` seeded permutations.  A model that learned
    a real dose-response collapses toward zero here.
    """
    table = world.table
    masks = default_masks()
    if train_cases is None:
        train_cases = _prepare_cases(train_records, world, table, masks, calibrate=True)
    if test_cases is None:
        test_cases = _prepare_cases(test_records, world, table, masks, calibrate=False)
    pid_order = sorted({c.patient_id for c in train_cases})
    out = {"a": [], "b": []}
    for k in range(n_shuffles):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        perm = rng.permutation(len(pid_order))
        donor = {pid_order[i]: pid_order[perm[i]] for i in range(len(pid_order))}
        dose_of = {}
        for c in train_cases:
            dose_of[c.patient_id] = c.u
        shuffled = []
        for c in train_cases:
            c2 = copy.copy(c)
            c2.u = dose_of[donor[c.patient_id]]
            shuffled.append(c2)
        report = run_comparison(
            train_records, test_records, cfgs, world, seed=seed,
            train_cases=shuffled, test_cases=test_cases,
        )
        for approach in ("a", "b"):
            rs = [report.scores[approach][m].pearson for m in DISTANCE_BASED]
            rs = [r for r in rs if not math.isnan(r)]
            out[approach].append(float(np.mean(rs)) if rs else math.nan)
    return {approach: float(np.mean(vals)) for approach, vals in out.items()}
