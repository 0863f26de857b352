"""Detection and behavior metrics computed from verdicts and labeled ground truth."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction
from pathlib import Path

from .analysis import BehaviorCategory
from .errors import EmptyCounts, EvalError, KeyMismatch, ZeroTotal

UNDEFINED = "undefined"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


def confusion(predictions: dict[str, bool], truth: dict[str, bool]) -> ConfusionCounts:
    if set(predictions) != set(truth):
        missing = sorted(set(truth) ^ set(predictions))
        raise KeyMismatch(f"prediction and truth keys differ: {missing[:5]}")
    tp = sum(1 for k in truth if predictions[k] and truth[k])
    fp = sum(1 for k in truth if predictions[k] and not truth[k])
    fn = sum(1 for k in truth if not predictions[k] and truth[k])
    return ConfusionCounts(tp, fp, fn, len(truth) - tp - fp - fn)


def _ratio(num: int, den: int) -> Fraction | None:
    return Fraction(num, den) if den else None


def _f1(p: Fraction | None, r: Fraction | None) -> Fraction | None:
    if p is None or r is None or p + r == 0:
        return None
    return 2 * p * r / (p + r)


def binary_metrics(c: ConfusionCounts) -> dict[str, Fraction | None]:
    """Exact accuracy, precision, recall and F1; ``None`` marks a 0/0 metric."""
    if c.total == 0:
        raise EmptyCounts("no samples")
    p = _ratio(c.tp, c.tp + c.fp)
    r = _ratio(c.tp, c.tp + c.fn)
    return {"accuracy": Fraction(c.tp + c.tn, c.total), "precision": p, "recall": r, "f1": _f1(p, r)}


def micro_metrics(per_category: list[ConfusionCounts]) -> dict[str, Fraction | None]:
    if not per_category:
        raise EmptyCounts("no categories")
    pooled = sum(per_category, ConfusionCounts())
    if pooled.tp + pooled.fp + pooled.fn == 0 and pooled.total == 0:
        raise EmptyCounts("no samples")
    p = _ratio(pooled.tp, pooled.tp + pooled.fp)
    r = _ratio(pooled.tp, pooled.tp + pooled.fn)
    return {"precision": p, "recall": r, "f1": _f1(p, r)}


def behavior_accuracy(correct: int, total: int) -> Fraction:
    if total <= 0:
        raise ZeroTotal("behavior total must be positive")
    if not 0 <= correct <= total:
        raise ValueError(f"correct={correct} outside [0, {total}]")
    return Fraction(correct, total)


def round4(value: Fraction | float | None) -> float | str:
    """Round half-even to 4 places from the exact value; ``None`` becomes "undefined"."""
    if value is None:
        return UNDEFINED
    if isinstance(value, Fraction):
        exact = Decimal(value.numerator) / Decimal(value.denominator)
    else:
        exact = Decimal(value)
    return float(exact.quantize(Decimal("0.0001"), rounding=ROUND_HALF_EVEN))


def rounded(metrics: dict) -> dict:
    return {k: round4(v) for k, v in metrics.items()}


# --- manifests -----------------------------------------------------------------


@dataclass(frozen=True)
class GroundTruth:
    app_id: str
    is_malicious: bool
    behavior_labels: frozenset[BehaviorCategory] = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.is_malicious and self.behavior_labels:
            raise ValueError(f"benign app {self.app_id} cannot carry behavior labels")


@dataclass(frozen=True)
class AppVerdict:
    app_id: str
    is_malicious: bool
    detected_categories: frozenset[BehaviorCategory] = field(default_factory=frozenset)


def _labels(values) -> frozenset[BehaviorCategory]:
    return frozenset(BehaviorCategory(v) for v in values or [])


def load_truth(path: str | Path) -> dict[str, GroundTruth]:
    out: dict[str, GroundTruth] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            gt = GroundTruth(d["app_id"], bool(d["is_malicious"]), _labels(d.get("behavior_labels")))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise EvalError(f"{path}:{lineno}: {exc}") from exc
        if gt.app_id in out:
            raise EvalError(f"{path}:{lineno}: duplicate app_id {gt.app_id}")
        out[gt.app_id] = gt
    return out


def _verdict_from_doc(d: dict) -> AppVerdict:
    if "verdict" in d and "app_info" in d:
        v = d["verdict"]
        return AppVerdict(d["app_info"]["app_id"], bool(v["is_malicious"]), _labels(v["detected_categories"]))
    return AppVerdict(d["app_id"], bool(d["is_malicious"]), _labels(d.get("detected_categories")))


def load_verdicts(path: str | Path) -> dict[str, AppVerdict]:
    """Read structured reports from a directory (recursively) or verdict records from one file."""
    path = Path(path)
    docs = []
    if path.is_dir():
        for f in sorted(path.rglob("*.json")):
            d = json.loads(f.read_text(encoding="utf-8"))
            if "verdict" in d and "app_info" in d:
                docs.append(d)
    else:
        text = path.read_text(encoding="utf-8")
        try:
            d = json.loads(text)
            docs = d if isinstance(d, list) else [d]
        except json.JSONDecodeError:
            docs = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
    out: dict[str, AppVerdict] = {}
    for d in docs:
        v = _verdict_from_doc(d)
        if v.app_id in out:
            raise EvalError(f"duplicate verdict for {v.app_id}")
        out[v.app_id] = v
    return out


def evaluate(verdicts: dict[str, AppVerdict], truth: dict[str, GroundTruth]) -> dict:
    """Binary detection over all apps, per-category and micro metrics over malicious apps."""
    counts = confusion({k: v.is_malicious for k, v in verdicts.items()}, {k: t.is_malicious for k, t in truth.items()})
    result = {"samples": counts.total, "confusion": counts.__dict__.copy(),
              "detection": rounded(binary_metrics(counts))}
    malicious = sorted(k for k, t in truth.items() if t.is_malicious)
    if not malicious:
        return result
    per_cat: dict[str, ConfusionCounts] = {}
    correct = 0
    for cat in BehaviorCategory:
        pred = {k: cat in verdicts[k].detected_categories for k in malicious}
        gold = {k: cat in truth[k].behavior_labels for k in malicious}
        c = confusion(pred, gold)
        per_cat[cat.value] = c
        correct += c.tp + c.tn
    result["behavior"] = {
        "apps": len(malicious),
        "correct": correct,
        "total": len(malicious) * len(BehaviorCategory),
        "accuracy": round4(behavior_accuracy(correct, len(malicious) * len(BehaviorCategory))),
        "micro": rounded(micro_metrics(list(per_cat.values()))),
        "per_category": {
            k: {"confusion": c.__dict__.copy(),
                "accuracy": round4(behavior_accuracy(c.tp + c.tn, c.total)),
                **{m: v for m, v in rounded(binary_metrics(c)).items() if m != "accuracy"}}
            for k, c in per_cat.items()
        },
    }
    return result
