"""Benchmarking against expert records: accuracy, PR curves, boundary sweeps.

Ground-truth degradation follows the band-gap deviation rule: a sample
counts as degraded when its post-degradation gap is absent or deviates
more than 0.02 eV from the least-squares line fitted to the expert
pre-degradation gaps over composition.

Threshold conventions: the precision-recall curve predicts positive at
score >= boundary and appends one terminal boundary (+inf) where nothing
is predicted, with precision recorded as 1.0 there. The accuracy sweep
matches the final classifier rule (score > boundary) over the unique
observed scores.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

EV_RANGE = (1.2, 3.3)
DEGRADATION_TOL_EV = 0.02


@dataclass
class ExpertRecord:
    """One sample's expert and automatic measurements."""

    region_id: int
    x: float
    expert_eg: float | None = None
    post_eg: float | None = None
    auto_eg: float | None = None
    i_c: float | None = None

    def __post_init__(self):
        for name in ("expert_eg", "post_eg", "auto_eg"):
            v = getattr(self, name)
            if v is not None and not (EV_RANGE[0] <= v <= EV_RANGE[1]):
                raise ValueError(f"record {self.region_id}: {name}={v} outside {EV_RANGE} eV")


def load_expert_csv(path) -> list:
    """Read records from region_id,x,expert_eg,post_eg,auto_eg,i_c (blank = absent)."""

    def opt(s):
        return None if s is None or s.strip() == "" else float(s)

    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(ExpertRecord(
                region_id=int(row["region_id"]),
                x=float(row["x"]),
                expert_eg=opt(row.get("expert_eg")),
                post_eg=opt(row.get("post_eg")),
                auto_eg=opt(row.get("auto_eg")),
                i_c=opt(row.get("i_c")),
            ))
    return records


def save_expert_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region_id", "x", "expert_eg", "post_eg", "auto_eg", "i_c"])
        for r in records:
            writer.writerow([
                r.region_id, repr(r.x),
                "" if r.expert_eg is None else repr(r.expert_eg),
                "" if r.post_eg is None else repr(r.post_eg),
                "" if r.auto_eg is None else repr(r.auto_eg),
                "" if r.i_c is None else repr(r.i_c),
            ])


def bandgap_accuracy(records, tol: float) -> float:
    """Fraction of records whose |auto - expert| gap difference is within tol."""
    pairs = [(r.auto_eg, r.expert_eg) for r in records
             if r.auto_eg is not None and r.expert_eg is not None]
    if not pairs:
        raise ValueError("no records with both automatic and expert band gaps")
    hits = sum(1 for a, e in pairs if abs(a - e) <= tol)
    return hits / len(pairs)


def ground_truth_degradation(records) -> dict:
    """Degradation truth per region from the post-gap deviation rule."""
    fit_records = [r for r in records if r.expert_eg is not None]
    if len(fit_records) < 2:
        raise ValueError("need at least 2 pre-degradation gaps to fit the reference line")
    xs = np.array([r.x for r in fit_records])
    egs = np.array([r.expert_eg for r in fit_records])
    slope, intercept = np.polyfit(xs, egs, 1)
    truth = {}
    for r in records:
        expected = slope * r.x + intercept
        truth[r.region_id] = r.post_eg is None or abs(r.post_eg - expected) > DEGRADATION_TOL_EV
    return truth


def _validate_scores(scores, truth):
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    if scores.size != truth.size or scores.size == 0:
        raise ValueError("scores and truth must share one nonzero length")
    return scores, truth


def pr_curve(scores, truth) -> list:
    """Precision/recall at every unique score plus a nothing-predicted terminal.

    Predicted positive means score >= boundary; at the +inf terminal no
    sample is predicted and the undefined precision is recorded as 1.0.
    """
    scores, truth = _validate_scores(scores, truth)
    positives = int(truth.sum())
    if positives == 0:
        raise ValueError("precision-recall needs at least one positive sample")
    points = []
    for boundary in [float(b) for b in np.unique(scores)] + [math.inf]:
        predicted = scores >= boundary
        tp = int(np.sum(predicted & truth))
        fp = int(np.sum(predicted & ~truth))
        precision = tp / (tp + fp) if (tp + fp) > 0 else 1.0
        recall = tp / positives
        points.append((boundary, precision, recall))
    return points


def pr_auc(points) -> float:
    """Trapezoidal area under the recall-sorted PR points, clamped to [0, 1]."""
    if len(points) < 2:
        raise ValueError("PR-AUC needs at least 2 curve points")
    # sort by recall; among ties keep the higher precision first
    ordered = sorted(points, key=lambda p: (p[2], -p[1]))
    recalls = np.array([p[2] for p in ordered])
    precisions = np.array([p[1] for p in ordered])
    area = float(np.trapezoid(precisions, recalls))
    return min(max(area, 0.0), 1.0)


def accuracy_sweep(scores, truth):
    """Classification accuracy of (score > boundary) at every unique score.

    Returns (curve, best_boundary, best_accuracy) with ties resolved to
    the lowest boundary.
    """
    scores, truth = _validate_scores(scores, truth)
    curve = []
    best_boundary, best_accuracy = None, -1.0
    for boundary in np.unique(scores):
        predicted = scores > boundary
        accuracy = float(np.mean(predicted == truth))
        curve.append((float(boundary), accuracy))
        if accuracy > best_accuracy:
            best_boundary, best_accuracy = float(boundary), accuracy
    return curve, best_boundary, best_accuracy


@dataclass
class MetricsReport:
    """Bundled benchmark outputs for one expert-record set."""

    accuracy_curve: list = field(default_factory=list)  # (tolerance eV, fraction)
    pr_points: list = field(default_factory=list)       # (boundary, precision, recall)
    pr_auc: float = 0.0
    sweep_curve: list = field(default_factory=list)     # (boundary, accuracy)
    best_boundary: float = 0.0
    best_accuracy: float = 0.0
    accuracy_at_tol: float = 0.0
    tol: float = 0.02
    n_records: int = 0


def build_report(records, tol: float = 0.02, tol_grid=None) -> MetricsReport:
    """Run the full benchmark: gap accuracy curve, PR analysis, boundary sweep."""
    if not records:
        raise ValueError("no expert records")
    if tol_grid is None:
        tol_grid = np.linspace(0.0, 0.1, 51)
    accuracy_curve = [(float(t), bandgap_accuracy(records, float(t))) for t in tol_grid]
    truth_by_id = ground_truth_degradation(records)
    scored = [(r.i_c, truth_by_id[r.region_id]) for r in records if r.i_c is not None]
    if not scored:
        raise ValueError("no records with instability scores")
    scores = [s for s, _ in scored]
    truth = [t for _, t in scored]
    points = pr_curve(scores, truth)
    sweep, best_boundary, best_accuracy = accuracy_sweep(scores, truth)
    return MetricsReport(
        accuracy_curve=accuracy_curve,
        pr_points=points,
        pr_auc=pr_auc(points),
        sweep_curve=sweep,
        best_boundary=best_boundary,
        best_accuracy=best_accuracy,
        accuracy_at_tol=bandgap_accuracy(records, tol),
        tol=tol,
        n_records=len(records),
    )
