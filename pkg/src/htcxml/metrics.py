"""Ranking and classification metrics shared by both worlds.

Conventions for degenerate documents: an empty ground truth scores 0 for
every P@k and 1.0 for R-Precision; ranking slots beyond the prediction's
length count as irrelevant.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

DEFAULT_KS = (1, 2, 3, 5)


@dataclass(frozen=True)
class RankedPrediction:
    labels: tuple[int, ...] = ()
    scores: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if len(self.labels) != len(self.scores):
            raise ValueError("labels and scores must have equal length")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate label in ranking")
        for i in range(1, len(self.labels)):
            a, b = self.scores[i - 1], self.scores[i]
            if a < b or (a == b and self.labels[i - 1] > self.labels[i]):
                raise ValueError("ranking must be by descending score, ties by ascending label")

    @classmethod
    def from_scores(cls, scores: Mapping[int, float] | Iterable[tuple[int, float]]) -> RankedPrediction:
        items = scores.items() if isinstance(scores, Mapping) else scores
        ranked = sorted(((int(l), float(s)) for l, s in items), key=lambda p: (-p[1], p[0]))
        return cls(tuple(l for l, _ in ranked), tuple(s for _, s in ranked))

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> RankedPrediction:
        """Ranking in the given order with synthetic descending scores."""
        n = len(labels)
        return cls(tuple(labels), tuple(float(n - i) for i in range(n)))

    def __len__(self) -> int:
        return len(self.labels)

    def top(self, k: int) -> tuple[int, ...]:
        return self.labels[:k]

    def above(self, threshold: float) -> frozenset[int]:
        return frozenset(l for l, s in zip(self.labels, self.scores) if s >= threshold)


def precision_at_k(pred: RankedPrediction, relevant: Iterable[int], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(relevant)
    if not relevant:
        return 0.0
    return sum(1 for l in pred.labels[:k] if l in relevant) / k


def r_precision(pred: RankedPrediction, relevant: Iterable[int]) -> float:
    relevant = set(relevant)
    if not relevant:
        return 1.0
    return precision_at_k(pred, relevant, len(relevant))


def _check_aligned(a: Sequence, b: Sequence) -> None:
    if len(a) != len(b):
        raise ValueError(f"predictions ({len(a)}) and truths ({len(b)}) are not aligned")


def micro_f1(preds: Sequence[Iterable[int]], truths: Sequence[Iterable[int]]) -> float:
    _check_aligned(preds, truths)
    tp = fp = fn = 0
    for p, t in zip(preds, truths):
        p, t = set(p), set(t)
        hit = len(p & t)
        tp += hit
        fp += len(p) - hit
        fn += len(t) - hit
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def per_class_counts(
    preds: Sequence[Iterable[int]], truths: Sequence[Iterable[int]]
) -> dict[int, list[int]]:
    """``label -> [tp, fp, fn]`` over every label seen in either side."""
    counts: dict[int, list[int]] = {}
    for p, t in zip(preds, truths):
        p, t = set(p), set(t)
        for l in p | t:
            c = counts.setdefault(l, [0, 0, 0])
            if l in p and l in t:
                c[0] += 1
            elif l in p:
                c[1] += 1
            else:
                c[2] += 1
    return counts


def macro_f1(
    preds: Sequence[Iterable[int]],
    truths: Sequence[Iterable[int]],
    universe: int | Iterable[int] | None = None,
    skip_absent: bool = False,
) -> float:
    """Mean per-class F1 over ``universe`` (a label count or explicit ids).

    Classes without any true or predicted positive score 0 unless
    ``skip_absent`` drops them from the average.  ``universe=None`` uses the
    labels observed in either side.
    """
    _check_aligned(preds, truths)
    counts = per_class_counts(preds, truths)
    if universe is None:
        labels = sorted(counts)
    elif isinstance(universe, int):
        labels = list(range(universe))
    else:
        labels = sorted(set(universe))
    scores = []
    for l in labels:
        tp, fp, fn = counts.get(l, (0, 0, 0))
        denom = 2 * tp + fp + fn
        if denom == 0:
            if skip_absent:
                continue
            scores.append(0.0)
        else:
            scores.append(2 * tp / denom)
    return math.fsum(scores) / len(scores) if scores else 0.0


@dataclass
class EvalReport:
    p_at_k: dict[int, float]
    r_precision: float
    micro_f1: float
    macro_f1: float
    n_docs: int
    name: str = ""
    extra: dict = field(default_factory=dict)

    def columns(self) -> list[tuple[str, float]]:
        cols = [(f"P@{k}", v) for k, v in sorted(self.p_at_k.items())]
        cols.append(("R-Prec", self.r_precision))
        return cols

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_docs": self.n_docs,
            "p_at_k": {str(k): v for k, v in sorted(self.p_at_k.items())},
            "r_precision": self.r_precision,
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            **({"extra": self.extra} if self.extra else {}),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> EvalReport:
        return cls(
            p_at_k={int(k): float(v) for k, v in data["p_at_k"].items()},
            r_precision=float(data["r_precision"]),
            micro_f1=float(data["micro_f1"]),
            macro_f1=float(data["macro_f1"]),
            n_docs=int(data["n_docs"]),
            name=data.get("name", ""),
            extra=dict(data.get("extra", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> EvalReport:
        return cls.from_dict(json.loads(Path(path).read_text()))


def evaluate(
    preds: Sequence[RankedPrediction],
    truths: Sequence[Iterable[int]],
    ks: Sequence[int] = DEFAULT_KS,
    hard: Sequence[Iterable[int]] | None = None,
    threshold: float = 0.5,
    universe: int | Iterable[int] | None = None,
    skip_absent: bool = False,
) -> EvalReport:
    """Per-document means of every ranking metric plus the two F1 scores.

    F1 needs hard decisions: ``hard`` when given, else every ranked label
    whose score reaches ``threshold``.
    """
    _check_aligned(preds, truths)
    truths = [set(t) for t in truths]
    n = len(preds)
    p_at_k = {}
    for k in ks:
        vals = [precision_at_k(p, t, k) for p, t in zip(preds, truths)]
        p_at_k[int(k)] = math.fsum(vals) / n if n else 0.0
    rp = [r_precision(p, t) for p, t in zip(preds, truths)]
    if hard is None:
        hard = [p.above(threshold) for p in preds]
    else:
        _check_aligned(hard, truths)
    return EvalReport(
        p_at_k=p_at_k,
        r_precision=math.fsum(rp) / n if n else 0.0,
        micro_f1=micro_f1(hard, truths),
        macro_f1=macro_f1(hard, truths, universe, skip_absent),
        n_docs=n,
    )


@dataclass
class Aggregate:
    mean: EvalReport
    std: dict[str, float]
    n_runs: int


def aggregate(reports: Sequence[EvalReport]) -> Aggregate:
    """Mean and population standard deviation across runs."""
    if not reports:
        raise ValueError("nothing to aggregate")
    ks = sorted(reports[0].p_at_k)
    if any(sorted(r.p_at_k) != ks for r in reports):
        raise ValueError("reports use different k values")

    def col(get) -> tuple[float, float]:
        vals = [get(r) for r in reports]
        return statistics.mean(vals), statistics.pstdev(vals)

    std: dict[str, float] = {}
    p_at_k = {}
    for k in ks:
        p_at_k[k], std[f"P@{k}"] = col(lambda r: r.p_at_k[k])
    rp, std["R-Prec"] = col(lambda r: r.r_precision)
    mi, std["micro_f1"] = col(lambda r: r.micro_f1)
    ma, std["macro_f1"] = col(lambda r: r.macro_f1)
    mean = EvalReport(p_at_k, rp, mi, ma, reports[0].n_docs, name=reports[0].name)
    return Aggregate(mean, std, len(reports))


def format_row(report: EvalReport, name: str | None = None) -> str:
    """One results-table row with scores in percent."""
    cells = [f"{100 * v:.2f}" for _, v in report.columns()]
    return " & ".join([name if name is not None else report.name, *cells]) + r" \\"


def format_table(reports: Sequence[EvalReport], names: Sequence[str] | None = None) -> str:
    if not reports:
        return ""
    header = " & ".join(["Method", *(c for c, _ in reports[0].columns())]) + r" \\"
    names = names or [r.name for r in reports]
    return "\n".join([header, *(format_row(r, n) for r, n in zip(reports, names))]) + "\n"


def format_report(report: EvalReport) -> str:
    lines = [f"{label}\t{value:.6f}" for label, value in report.columns()]
    lines += [
        f"micro_f1\t{report.micro_f1:.6f}",
        f"macro_f1\t{report.macro_f1:.6f}",
        f"n_docs\t{report.n_docs}",
    ]
    return "\n".join(lines) + "\n"
