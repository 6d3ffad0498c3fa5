"""Overlap, branch, leakage and continuity metrics for a predicted airway tree.

Rates are kept as fractions; :meth:`MetricsReport.to_dict` scales the
percentage-style ones (DLR, DBR, ALR, AMR, size-class rates) by 100.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np

from .errors import DomainError, EmptyMaskError, FormatError, ShapeMismatchError
from .skeleton import (
    SIZE_CLASSES,
    BranchAssignment,
    SkeletonGraph,
    analyze,
)
from .volcore import BinaryMask

DEFAULT_OMEGA = 0.9
DEFAULT_DETECTION_THRESHOLD = 0.8

CSV_COLUMNS = (
    "case_id", "jaccard", "dice", "precision", "dlr", "dbr", "alr", "amr",
    "continuity", "ccf", "tb_rate", "sb_rate", "mb_rate", "lb_rate",
)
PERCENT_FIELDS = ("dlr", "dbr", "alr", "amr", "dlr_centerline")

Rate = Union[float, str]   # "n/a" for size classes without branches


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def v_y(self) -> int:
        return self.tp + self.fn

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class CcfConfig:
    omega: float = DEFAULT_OMEGA
    threshold: float = DEFAULT_DETECTION_THRESHOLD

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError(f"omega must lie in [0, 1], got {self.omega}")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError(f"detection threshold must lie in (0, 1], got {self.threshold}")


@dataclass(frozen=True)
class BranchRecord:
    id: int
    size_class: Optional[str]
    length_mm: float
    coverage: float
    detected: bool


@dataclass(frozen=True)
class BranchDetectionReport:
    branches: List[BranchRecord]
    threshold: float

    @property
    def n_total(self) -> int:
        return len(self.branches)

    @property
    def n_detected(self) -> int:
        return sum(b.detected for b in self.branches)

    @property
    def total_length(self) -> float:
        return math.fsum(b.length_mm for b in self.branches)

    @property
    def detected_length(self) -> float:
        return math.fsum(b.length_mm for b in self.branches if b.detected)

    @property
    def dbr(self) -> float:
        if not self.n_total:
            raise DomainError("ground truth has no branches")
        return self.n_detected / self.n_total

    @property
    def dlr(self) -> float:
        total = self.total_length
        if total <= 0:
            raise DomainError("ground-truth branches have zero total length")
        return self.detected_length / total


def _check_pair(pred: BinaryMask, gt: BinaryMask):
    if pred.dims != gt.dims:
        raise ShapeMismatchError(f"prediction {pred.dims} and ground truth {gt.dims} differ in shape")


def confusion(pred: BinaryMask, gt: BinaryMask) -> ConfusionCounts:
    _check_pair(pred, gt)
    p, g = pred.data, gt.data
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def overlap_metrics(counts: ConfusionCounts) -> Dict[str, float]:
    """Jaccard, Dice, precision, ALR and AMR as fractions."""
    c = counts
    if c.v_y == 0:
        raise EmptyMaskError("ground truth is empty")
    denom = c.tp + c.fp + c.fn
    return {
        "jaccard": c.tp / denom,
        "dice": 2 * c.tp / (2 * c.tp + c.fp + c.fn),
        "precision": c.tp / (c.tp + c.fp) if c.tp + c.fp else 1.0,
        "alr": c.fp / c.v_y,
        "amr": c.fn / c.v_y,
    }


def continuity_index(pred: BinaryMask, gt_centerline: BinaryMask) -> float:
    _check_pair(pred, gt_centerline)
    n = int(np.count_nonzero(gt_centerline.data))
    if n == 0:
        raise EmptyMaskError("ground-truth centreline is empty")
    return int(np.count_nonzero(pred.data & gt_centerline.data)) / n


def ccf_score(jaccard: float, continuity: float, omega: float = DEFAULT_OMEGA) -> float:
    """Weighted harmonic combination of J and C; 0 when both are 0."""
    for name, v in (("jaccard", jaccard), ("continuity", continuity), ("omega", omega)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    w2 = omega * omega
    denom = w2 * jaccard + continuity
    if denom == 0.0:
        return 0.0
    return (1.0 + w2) * jaccard * continuity / denom


def branch_detection(
    pred: BinaryMask,
    gt_graph: SkeletonGraph,
    assignment: BranchAssignment,
    threshold: float = DEFAULT_DETECTION_THRESHOLD,
) -> BranchDetectionReport:
    """A branch counts as detected when the prediction covers more than ``threshold``
    of the ground-truth voxels assigned to it."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    if assignment.labels.shape != pred.dims:
        raise ShapeMismatchError("assignment and prediction differ in shape")
    if assignment.n_branches != len(gt_graph.branches):
        raise FormatError(
            f"assignment covers {assignment.n_branches} branches, graph has {len(gt_graph.branches)}"
        )
    n = assignment.n_branches
    region = np.bincount(assignment.labels.ravel(), minlength=n + 1)
    hit = np.bincount(assignment.labels[pred.data], minlength=n + 1)
    records = []
    for b in gt_graph.branches:
        cov = hit[b.id] / region[b.id] if region[b.id] else 0.0
        records.append(BranchRecord(b.id, b.size_class, b.length_mm, float(cov), bool(cov > threshold)))
    return BranchDetectionReport(records, threshold)


def size_class_detection(report: BranchDetectionReport) -> Dict[str, Rate]:
    rates: Dict[str, Rate] = {}
    for cls in SIZE_CLASSES:
        members = [b for b in report.branches if b.size_class == cls]
        rates[cls] = sum(b.detected for b in members) / len(members) if members else "n/a"
    return rates


@dataclass(frozen=True)
class MetricsReport:
    jaccard: float
    dice: float
    precision: float
    continuity: float
    ccf: float
    dlr: float
    dbr: float
    alr: float
    amr: float
    size_rates: Dict[str, Rate]
    dlr_centerline: float          # non-paper: fraction of gt centreline voxels covered
    counts: ConfusionCounts
    branches: BranchDetectionReport = field(repr=False)
    omega: float = DEFAULT_OMEGA

    def to_dict(self, percent: bool = True) -> dict:
        scale = 100.0 if percent else 1.0

        def pct(v):
            return v if isinstance(v, str) else v * scale

        out = {
            "jaccard": self.jaccard,
            "dice": self.dice,
            "precision": self.precision,
            "continuity": self.continuity,
            "ccf": self.ccf,
            "omega": self.omega,
        }
        for name in PERCENT_FIELDS:
            out[name] = pct(getattr(self, name))
        out["size_rates"] = {k: pct(v) for k, v in self.size_rates.items()}
        out["counts"] = {"tp": self.counts.tp, "fp": self.counts.fp,
                         "fn": self.counts.fn, "tn": self.counts.tn, "v_y": self.counts.v_y}
        out["n_branches"] = self.branches.n_total
        out["n_detected"] = self.branches.n_detected
        out["branches"] = [
            {"id": b.id, "size_class": b.size_class, "length_mm": b.length_mm,
             "coverage": b.coverage, "detected": b.detected}
            for b in self.branches.branches
        ]
        return out

    def csv_row(self, case_id: str) -> dict:
        d = self.to_dict(percent=True)
        row = {"case_id": case_id}
        for col in CSV_COLUMNS[1:]:
            if col.endswith("_rate"):
                row[col] = d["size_rates"][col[:2].upper()]
            else:
                row[col] = d[col]
        return row


def csv_text(rows: List[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def evaluate(pred: BinaryMask, gt: BinaryMask, config: CcfConfig = CcfConfig()) -> MetricsReport:
    """Skeletonize the ground truth, assign its voxels to branches, and compute every metric."""
    _check_pair(pred, gt)
    counts = confusion(pred, gt)
    overlap = overlap_metrics(counts)
    skel, graph, assignment = analyze(gt)
    cont = continuity_index(pred, skel)
    detection = branch_detection(pred, graph, assignment, config.threshold)
    return MetricsReport(
        **overlap,
        continuity=cont,
        ccf=ccf_score(overlap["jaccard"], cont, config.omega),
        dlr=detection.dlr,
        dbr=detection.dbr,
        size_rates=size_class_detection(detection),
        dlr_centerline=cont,
        counts=counts,
        branches=detection,
        omega=config.omega,
    )
