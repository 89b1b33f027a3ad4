"""Metrics and aggregation: accuracy, macro-F1, grouping, heatmap deltas."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

from .corpus import LabelSet
from .inference import Prediction
from .prompting import CandidateList, TaskSetting


@dataclass(frozen=True)
class RunResult:
    """Outcome of one evaluated setting, with enough metadata to rerun it."""

    run_id: str
    setting: TaskSetting
    predictions: tuple[Prediction, ...]
    accuracy: float
    macro_f1: float
    mean_consistency: float
    n_failed: int = 0
    n_unparsed: int = 0
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class HeatmapCell:
    existing_pattern: str
    added: str
    delta: float  # accuracy change in percentage points
    acc_from: float
    acc_to: float


@dataclass(frozen=True)
class VerificationOutcome:
    case_id: str
    charge: str
    answer: str  # "yes" | "no" | UNPARSED sentinel
    is_gold: bool


@dataclass(frozen=True)
class VerificationReport:
    detection_recall: float
    detection_precision: float
    n_gold: int
    n_yes: int
    n_outcomes: int


def accuracy(predictions: Sequence[Prediction], gold: Mapping[str, str]) -> float:
    """Fraction of predictions exactly matching gold; UNPARSED never matches."""
    if not predictions:
        raise ValueError("no predictions")
    hits = sum(1 for pred in predictions if pred.label == gold[pred.case_id])
    return hits / len(predictions)


def macro_f1(
    predictions: Sequence[Prediction],
    gold: Mapping[str, str],
    label_set: LabelSet,
    present_only: bool = False,
) -> float:
    """Unweighted mean of per-label F1.

    Averages over the full label set by default so balanced runs stay
    comparable across slices; ``present_only`` restricts the mean to labels
    that occur in the gold annotations.  A label with neither predictions
    nor gold cases scores 0.  The UNPARSED sentinel is never a class: it
    only contributes false negatives.
    """
    if not predictions:
        raise ValueError("no predictions")
    tp: dict[str, int] = {}
    fp: dict[str, int] = {}
    fn: dict[str, int] = {}
    gold_seen: set[str] = set()
    for pred in predictions:
        truth = gold[pred.case_id]
        gold_seen.add(truth)
        if pred.label == truth:
            tp[truth] = tp.get(truth, 0) + 1
        else:
            fn[truth] = fn.get(truth, 0) + 1
            if pred.label in label_set:
                fp[pred.label] = fp.get(pred.label, 0) + 1
    labels = [lbl for lbl in label_set if not present_only or lbl in gold_seen]
    if not labels:
        raise ValueError("no labels to average over")
    total = 0.0
    for label in labels:
        denominator = 2 * tp.get(label, 0) + fp.get(label, 0) + fn.get(label, 0)
        total += 2 * tp.get(label, 0) / denominator if denominator else 0.0
    return total / len(labels)


def mean_consistency(predictions: Sequence[Prediction]) -> float:
    if not predictions:
        raise ValueError("no predictions")
    return sum(pred.consistency for pred in predictions) / len(predictions)


def split_easy_hard(
    case_ids: Sequence[str],
    candidate_lists: Sequence[CandidateList],
) -> tuple[list[str], list[str]]:
    """Partition cases by whether their gold charge made the candidate list."""
    if len(case_ids) != len(candidate_lists):
        raise ValueError("one candidate list per case required")
    easy: list[str] = []
    hard: list[str] = []
    for case_id, candidates in zip(case_ids, candidate_lists):
        if candidates.contains_gold is None:
            raise ValueError(f"candidate list for {case_id!r} has no gold flag")
        (easy if candidates.contains_gold else hard).append(case_id)
    return easy, hard


def heatmap(results: Mapping[str, RunResult]) -> list[HeatmapCell]:
    """Accuracy deltas from appending one demonstration to a T/F pattern.

    Patterns are strings over {T, F} ('' is the 0-shot run).  A cell is
    emitted for every pattern whose one-shorter prefix is also present;
    patterns at the shortest length in ``results`` act as roots.  If some
    pattern at a covered length is missing its prefix, that prefix is
    reported as missing.
    """
    for pattern in results:
        if len(pattern) > 4 or any(flag not in "TF" for flag in pattern):
            raise ValueError(f"invalid pattern key: {pattern!r}")
    lengths = {len(pattern) for pattern in results}
    cells: list[HeatmapCell] = []
    for pattern in sorted(results, key=lambda p: (len(p), p)):
        if len(pattern) == 0 or (len(pattern) - 1) not in lengths:
            continue
        parent = pattern[:-1]
        if parent not in results:
            raise ValueError(f"missing pattern {parent!r} needed for {pattern!r}")
        acc_from = results[parent].accuracy
        acc_to = results[pattern].accuracy
        cells.append(
            HeatmapCell(
                existing_pattern=parent,
                added=pattern[-1],
                delta=(acc_to - acc_from) * 100.0,
                acc_from=acc_from,
                acc_to=acc_to,
            )
        )
    return cells


def verification_metrics(outcomes: Sequence[VerificationOutcome]) -> VerificationReport:
    """Detection recall (gold charges answered yes) and precision (yes
    answers that named the gold charge)."""
    if not outcomes:
        raise ValueError("no verification outcomes")
    n_gold = sum(1 for outcome in outcomes if outcome.is_gold)
    n_yes = sum(1 for outcome in outcomes if outcome.answer == "yes")
    gold_yes = sum(1 for outcome in outcomes if outcome.is_gold and outcome.answer == "yes")
    if n_gold == 0:
        raise ValueError("every case must contribute its gold charge")
    return VerificationReport(
        detection_recall=gold_yes / n_gold,
        detection_precision=gold_yes / n_yes if n_yes else 0.0,
        n_gold=n_gold,
        n_yes=n_yes,
        n_outcomes=len(outcomes),
    )
