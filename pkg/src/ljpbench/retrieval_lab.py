"""Simulated IR systems with controllable Precision@1, plus the kNN baseline.

The simulator assigns each test case true (same-charge) or false
(different-charge) similar cases as demonstrations.  Which cases receive a
true slot-1 demonstration is decided by query difficulty: easier queries
(higher Precision@10 against the training index) are served first, so a
target Precision@1 of a% guarantees the easiest a% of queries a true
similar case while the rest get false ones.  Concrete demonstrations are
always the highest-scoring not-yet-used training case of the required
charge class.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

from .bm25 import Bm25Index, RankedHit, retrieve
from .corpus import Case


@dataclass(frozen=True)
class DemoAssignment:
    demo_id: str
    truth: bool  # True iff the demo's charge equals the query's charge


@dataclass(frozen=True)
class SimPlan:
    """Per-test-case demonstration assignments at a target Precision@1."""

    target_p1: float
    n_shots: int
    assignments: dict[str, tuple[DemoAssignment, ...]]

    def realized_p1(self) -> float:
        flags = [slots[0].truth for slots in self.assignments.values()]
        return sum(flags) / len(flags)

    def to_json(self) -> str:
        payload = {
            "target_p1": self.target_p1,
            "n_shots": self.n_shots,
            "assignments": {
                case_id: [{"demo_id": a.demo_id, "flag": "T" if a.truth else "F"} for a in slots]
                for case_id, slots in self.assignments.items()
            },
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SimPlan":
        payload = json.loads(text)
        return cls(
            target_p1=payload["target_p1"],
            n_shots=payload["n_shots"],
            assignments={
                case_id: tuple(
                    DemoAssignment(entry["demo_id"], entry["flag"] == "T") for entry in slots
                )
                for case_id, slots in payload["assignments"].items()
            },
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


@dataclass(frozen=True)
class DifficultyRanking:
    """Test-case ids ordered easiest first with their difficulty scores."""

    ordered_ids: tuple[str, ...]
    score_by_id: dict[str, float]


def rank_by_difficulty(
    index: Bm25Index,
    tests: Sequence[Case],
    labels: Mapping[str, str],
    depth: int = 10,
) -> DifficultyRanking:
    """Order test cases by per-query Precision@``depth``, easiest first.

    Ties fall back to the top-1 BM25 score (descending), then the case id.
    """
    keyed: list[tuple[float, float, str]] = []
    for case in tests:
        hits = retrieve(index, case.fact, depth)
        matches = sum(1 for hit in hits if labels[hit.doc_id] == case.charge)
        keyed.append((matches / depth, hits[0].score, case.id))
    keyed.sort(key=lambda row: (-row[0], -row[1], row[2]))
    return DifficultyRanking(
        ordered_ids=tuple(case_id for _, _, case_id in keyed),
        score_by_id={case_id: p for p, _, case_id in keyed},
    )


def _true_demo_count(target_p1: float, n_tests: int) -> int:
    # Ceiling with float-noise absorption: targets like 0.1 * 200 must not
    # round up to 21 because of binary representation error.
    return math.ceil(round(target_p1 * n_tests, 9))


def _assign_slots(
    index: Bm25Index,
    case: Case,
    labels: Mapping[str, str],
    flags: Sequence[bool],
) -> tuple[DemoAssignment, ...]:
    hits = retrieve(index, case.fact, index.n_docs)
    same = [h.doc_id for h in hits if labels[h.doc_id] == case.charge]
    diff = [h.doc_id for h in hits if labels[h.doc_id] != case.charge]
    same_i = diff_i = 0
    slots: list[DemoAssignment] = []
    for flag in flags:
        if flag:
            if same_i >= len(same):
                raise ValueError(
                    f"query {case.id!r}: no unused training case with charge {case.charge!r}"
                )
            slots.append(DemoAssignment(same[same_i], True))
            same_i += 1
        else:
            if diff_i >= len(diff):
                raise ValueError(
                    f"query {case.id!r}: no unused training case with a different charge"
                )
            slots.append(DemoAssignment(diff[diff_i], False))
            diff_i += 1
    return tuple(slots)


def simulate(
    index: Bm25Index,
    tests: Sequence[Case],
    labels: Mapping[str, str],
    ranking: DifficultyRanking,
    target_p1: float,
    n_shots: int = 1,
    rest_flags: Sequence[bool] | None = None,
) -> SimPlan:
    """Plan demonstrations so slot-1 Precision@1 realizes ``target_p1``.

    The ceil(target * N) easiest cases get a true similar case in slot 1,
    the rest a false one.  Slots 2..n copy the slot-1 flag unless
    ``rest_flags`` overrides them.
    """
    if not 0.0 <= target_p1 <= 1.0:
        raise ValueError("target_p1 must be in [0, 1]")
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    if rest_flags is not None and len(rest_flags) != n_shots - 1:
        raise ValueError("rest_flags must cover slots 2..n_shots")
    by_id = {case.id: case for case in tests}
    if set(by_id) != set(ranking.ordered_ids):
        raise ValueError("ranking does not cover the test set")
    n_true = _true_demo_count(target_p1, len(tests))
    assignments: dict[str, tuple[DemoAssignment, ...]] = {}
    for position, case_id in enumerate(ranking.ordered_ids):
        first = position < n_true
        flags = [first] + (list(rest_flags) if rest_flags is not None else [first] * (n_shots - 1))
        assignments[case_id] = _assign_slots(index, by_id[case_id], labels, flags)
    return SimPlan(target_p1=target_p1, n_shots=n_shots, assignments=assignments)


def plan_combination(
    index: Bm25Index,
    tests: Sequence[Case],
    labels: Mapping[str, str],
    pattern: Sequence[bool],
) -> SimPlan:
    """Assign every test case the exact ordered true/false demo pattern.

    Greedy by BM25 rank within each charge class, so plans for a pattern
    and any extension of it agree on the shared prefix.
    """
    if not 1 <= len(pattern) <= 4:
        raise ValueError("pattern length must be 1..4")
    flags = [bool(flag) for flag in pattern]
    assignments = {
        case.id: _assign_slots(index, case, labels, flags) for case in tests
    }
    target = 1.0 if flags[0] else 0.0
    return SimPlan(target_p1=target, n_shots=len(flags), assignments=assignments)


def _vote(hits: Sequence[RankedHit], labels: Mapping[str, str], k: int) -> str:
    count: Counter[str] = Counter()
    sum_score: dict[str, float] = {}
    first_rank: dict[str, int] = {}
    for hit in hits[:k]:
        label = labels[hit.doc_id]
        count[label] += 1
        sum_score[label] = sum_score.get(label, 0.0) + hit.score
        first_rank.setdefault(label, hit.rank)
    return max(count, key=lambda lbl: (count[lbl], sum_score[lbl], -first_rank[lbl]))


def knn_predict(index: Bm25Index, query: Case, labels: Mapping[str, str], k: int) -> str:
    """Majority label of the top-k retrieved cases.

    Ties break by larger summed BM25 score, then by the label seen
    earliest in the ranking.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.doc_ids:
        raise ValueError("empty index")
    hits = retrieve(index, query.fact, k)
    return _vote(hits, labels, k)


def tune_k(
    index: Bm25Index,
    validation: Sequence[Case],
    labels: Mapping[str, str],
    k_range: Sequence[int],
) -> tuple[int, dict[int, float]]:
    """Pick the k maximizing validation accuracy (ties favor smaller k).

    Returns the winner plus the full accuracy-by-k table.  One retrieval
    per case at the largest k serves every candidate k.
    """
    if not k_range:
        raise ValueError("k_range must not be empty")
    if min(k_range) < 1:
        raise ValueError("every k must be >= 1")
    if not validation:
        raise ValueError("validation set must not be empty")
    depth = min(max(k_range), index.n_docs)
    hits_by_case = [retrieve(index, case.fact, depth) for case in validation]
    accuracy_by_k: dict[int, float] = {}
    for k in k_range:
        correct = sum(
            1
            for case, hits in zip(validation, hits_by_case)
            if _vote(hits, labels, min(k, depth)) == case.charge
        )
        accuracy_by_k[k] = correct / len(validation)
    best = min(k_range, key=lambda k: (-accuracy_by_k[k], k))
    return best, accuracy_by_k
