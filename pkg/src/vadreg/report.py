"""RMSE evaluation, ablation tables, and rank aggregation across dimensions.

An ablation report holds one RMSE per (dimension, split, method) cell; the
renderer reproduces the three per-dimension tables, and the rank aggregator
orders dimensions by summed per-split ranks (lower = predicted better).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import Dimension, DimensionModel, predict

DIMS = (Dimension.V, Dimension.A, Dimension.D)
DIM_TITLES = {Dimension.V: "Valence", Dimension.A: "Arousal", Dimension.D: "Dominance"}


class EvalSplit(str, Enum):
    PUBLIC = "public"
    PRIVATE = "private"


class Method(str, Enum):
    BASELINE = "baseline"
    ORTHO = "ortho"


METHOD_LABELS = {
    Method.BASELINE: "plain ResNet regression",
    Method.ORTHO: "with orthogonality regularizer",
}

ReportKey = tuple[Dimension, EvalSplit, Method]


class IncompleteReportError(ValueError):
    """A report operation needs cells that are missing; lists them."""


def rmse(preds, targets) -> float:
    """Root mean squared error of two equal-length sequences."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("rmse of empty input")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def evaluate(model: DimensionModel, images: np.ndarray, targets: np.ndarray) -> float:
    """RMSE of clamped predictions over a labeled split, in the given order."""
    if len(images) == 0:
        raise ValueError("cannot evaluate an empty split")
    preds = [predict(model, images[i], clamp=True) for i in range(len(images))]
    return rmse(preds, np.asarray(targets, dtype=np.float64))


@dataclass
class EvalReport:
    """RMSE per (dimension, split, method) plus free-form provenance metadata."""

    entries: dict[ReportKey, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def set(self, dim: Dimension, split: EvalSplit, method: Method, value: float) -> None:
        if value < 0:
            raise ValueError("RMSE must be non-negative")
        self.entries[(dim, split, method)] = float(value)

    def get(self, dim: Dimension, split: EvalSplit, method: Method) -> float:
        return self.entries[(dim, split, method)]

    def missing(self, methods=tuple(Method)) -> list[ReportKey]:
        return [(d, s, m) for d in DIMS for s in EvalSplit for m in methods
                if (d, s, m) not in self.entries]

    @property
    def complete(self) -> bool:
        return not self.missing()


@dataclass(frozen=True)
class RankReport:
    """Per-split dimension ranks by ascending RMSE and their cross-split sums."""

    per_split: dict[EvalSplit, dict[Dimension, float]]
    rank_sums: dict[Dimension, float]


def _average_ranks(values: list[float]) -> list[float]:
    """Ascending ranks starting at 1; tied values share the average rank."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def rank_aggregate(report: EvalReport, method: Method) -> RankReport:
    """Rank the three dimensions within each split and sum the ranks."""
    needed = [(d, s, method) for d in DIMS for s in EvalSplit]
    absent = [k for k in needed if k not in report.entries]
    if absent:
        raise IncompleteReportError(f"missing report cells: {absent}")
    per_split: dict[EvalSplit, dict[Dimension, float]] = {}
    for split in EvalSplit:
        vals = [report.get(d, split, method) for d in DIMS]
        ranks = _average_ranks(vals)
        per_split[split] = dict(zip(DIMS, ranks))
    sums = {d: sum(per_split[s][d] for s in EvalSplit) for d in DIMS}
    return RankReport(per_split, sums)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def render_tables(report: EvalReport) -> str:
    """The three per-dimension RMSE tables, values to 3 decimals."""
    absent = report.missing()
    if absent:
        named = ", ".join(f"{d.value}/{s.value}/{m.value}" for d, s, m in absent)
        raise IncompleteReportError(f"report incomplete; missing cells: {named}")
    lines: list[str] = []
    label_w = max(len(lbl) for lbl in METHOD_LABELS.values())
    for dim in DIMS:
        lines.append(f"{DIM_TITLES[dim]} prediction (RMSE)")
        lines.append(f"{'method':<{label_w}}  {'Public Test':>11}  {'Private Test':>12}")
        for method in Method:
            pub = report.get(dim, EvalSplit.PUBLIC, method)
            priv = report.get(dim, EvalSplit.PRIVATE, method)
            lines.append(f"{METHOD_LABELS[method]:<{label_w}}  {pub:>11.3f}  {priv:>12.3f}")
        lines.append("")
    return "\n".join(lines)


def render_ranks(rank_report: RankReport) -> str:
    lines = ["Dimension ranks by split (1 = lowest RMSE)"]
    for split in EvalSplit:
        ranks = rank_report.per_split[split]
        lines.append(f"  {split.value:<8} " +
                     "  ".join(f"{d.value.upper()}={ranks[d]:g}" for d in DIMS))
    lines.append("  rank sums " +
                 "  ".join(f"{d.value.upper()}={rank_report.rank_sums[d]:g}" for d in DIMS))
    return "\n".join(lines)


def to_records(report: EvalReport) -> str:
    """Flat line-oriented key=value emission, one record per cell.

    Field order is fixed; the normalized column rescales [-2,2]-scale RMSE
    to the [-1,1] reading for comparison across conventions.
    """
    lines = []
    for dim in DIMS:
        for split in EvalSplit:
            for method in Method:
                key = (dim, split, method)
                if key not in report.entries:
                    continue
                value = report.entries[key]
                lines.append(
                    f"dimension={dim.value} split={split.value} method={method.value} "
                    f"rmse={value:.6f} rmse_norm={value / 2.0:.6f}")
    return "\n".join(lines) + "\n"


def from_records(text: str) -> EvalReport:
    """Parse the to_records format back into a report."""
    report = EvalReport()
    for lineno, line in enumerate(text.splitlines()):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = dict(part.split("=", 1) for part in line.split())
        try:
            report.set(Dimension(fields["dimension"]), EvalSplit(fields["split"]),
                       Method(fields["method"]), float(fields["rmse"]))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"line {lineno}: bad record ({exc})") from None
    return report


# RMSE cells of the published ablation, keyed like the report entries.
PUBLISHED_RESULTS: dict[ReportKey, float] = {
    (Dimension.V, EvalSplit.PUBLIC, Method.BASELINE): 0.076,
    (Dimension.V, EvalSplit.PRIVATE, Method.BASELINE): 0.063,
    (Dimension.V, EvalSplit.PUBLIC, Method.ORTHO): 0.071,
    (Dimension.V, EvalSplit.PRIVATE, Method.ORTHO): 0.059,
    (Dimension.A, EvalSplit.PUBLIC, Method.BASELINE): 0.048,
    (Dimension.A, EvalSplit.PRIVATE, Method.BASELINE): 0.094,
    (Dimension.A, EvalSplit.PUBLIC, Method.ORTHO): 0.045,
    (Dimension.A, EvalSplit.PRIVATE, Method.ORTHO): 0.087,
    (Dimension.D, EvalSplit.PUBLIC, Method.BASELINE): 0.078,
    (Dimension.D, EvalSplit.PRIVATE, Method.BASELINE): 0.069,
    (Dimension.D, EvalSplit.PUBLIC, Method.ORTHO): 0.080,
    (Dimension.D, EvalSplit.PRIVATE, Method.ORTHO): 0.066,
}


def published_report() -> EvalReport:
    """The published 12-cell ablation as an EvalReport."""
    report = EvalReport(metadata={"source": "published results"})
    for (d, s, m), v in PUBLISHED_RESULTS.items():
        report.set(d, s, m, v)
    return report
