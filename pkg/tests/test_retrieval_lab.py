import math

import pytest

from ljpbench.bm25 import build_index, retrieve
from ljpbench.corpus import Case
from ljpbench.retrieval_lab import (
    SimPlan,
    knn_predict,
    plan_combination,
    rank_by_difficulty,
    simulate,
    tune_k,
)
from ljpbench.synth import SynthSpec, synth_corpus


def make_index(cases):
    return build_index([(case.id, case.fact) for case in cases], scheme="whitespace")


@pytest.fixture
def xy_world():
    train = [Case(f"x{i}", "x " * (i + 1), "X") for i in range(10)] + [
        Case(f"y{i}", "y " * (i + 1), "Y") for i in range(10)
    ]
    labels = {case.id: case.charge for case in train}
    return train, labels, make_index(train)


class TestRankByDifficulty:
    def test_full_precision_ranks_before_zero(self, xy_world):
        _, labels, index = xy_world
        tests = [Case("hard", "x x x", "Y"), Case("easy", "x x x", "X")]
        ranking = rank_by_difficulty(index, tests, labels)
        assert ranking.ordered_ids == ("easy", "hard")
        assert ranking.score_by_id == {"easy": 1.0, "hard": 0.0}

    def test_zero_precision_falls_back_to_top1_score(self, xy_world):
        _, labels, index = xy_world
        # both queries miss their charge entirely; the stronger match wins
        tests = [Case("weak", "x", "Z"), Case("strong", "x x x x", "Z")]
        ranking = rank_by_difficulty(index, tests, labels)
        strong_top1 = retrieve(index, "x x x x", 1)[0].score
        weak_top1 = retrieve(index, "x", 1)[0].score
        assert strong_top1 > weak_top1
        assert ranking.ordered_ids == ("strong", "weak")

    def test_six_case_order_matches_brute_force(self, xy_world):
        _, labels, index = xy_world
        tests = [
            Case("a", "x x x", "X"),
            Case("b", "y y", "Y"),
            Case("c", "x y", "X"),
            Case("d", "y x", "Y"),
            Case("e", "x", "Y"),
            Case("f", "y", "X"),
        ]
        ranking = rank_by_difficulty(index, tests, labels)
        rows = []
        for case in tests:
            hits = retrieve(index, case.fact, 10)
            p10 = sum(1 for hit in hits if labels[hit.doc_id] == case.charge) / 10
            rows.append((-p10, -hits[0].score, case.id))
        expected = tuple(case_id for _, _, case_id in sorted(rows))
        assert ranking.ordered_ids == expected


class TestSimulate:
    def _world(self):
        spec = SynthSpec(n_labels=4, train_per_label=5, test_per_label=3, seed=1)
        split = synth_corpus(spec)
        index = build_index([(case.id, case.fact) for case in split.train])
        labels = {case.id: case.charge for case in split.train}
        ranking = rank_by_difficulty(index, split.test, labels)
        return split, index, labels, ranking

    def test_target_one_gives_all_true_slots(self):
        split, index, labels, ranking = self._world()
        plan = simulate(index, split.test, labels, ranking, 1.0)
        golds = {case.id: case.charge for case in split.test}
        for case_id, slots in plan.assignments.items():
            assert slots[0].truth
            assert labels[slots[0].demo_id] == golds[case_id]

    def test_target_zero_gives_no_true_slots(self):
        split, index, labels, ranking = self._world()
        plan = simulate(index, split.test, labels, ranking, 0.0)
        golds = {case.id: case.charge for case in split.test}
        for case_id, slots in plan.assignments.items():
            assert not slots[0].truth
            assert labels[slots[0].demo_id] != golds[case_id]

    def test_half_target_splits_easiest_from_hardest(self, xy_world):
        _, labels, index = xy_world
        tests = [
            Case("e1", "x x x", "X"),
            Case("e2", "x x", "X"),
            Case("h1", "x", "Y"),
            Case("h2", "y", "X"),
        ]
        ranking = rank_by_difficulty(index, tests, labels)
        assert ranking.ordered_ids == ("e1", "e2", "h1", "h2")
        plan = simulate(index, tests, labels, ranking, 0.5)
        flags = {case_id: slots[0].truth for case_id, slots in plan.assignments.items()}
        assert flags == {"e1": True, "e2": True, "h1": False, "h2": False}
        assert plan.realized_p1() == 0.5

    def test_true_demo_is_best_scoring_same_charge_case(self, xy_world):
        _, labels, index = xy_world
        tests = [Case("q", "x x x", "X")]
        ranking = rank_by_difficulty(index, tests, labels)
        plan = simulate(index, tests, labels, ranking, 1.0)
        hits = retrieve(index, "x x x", index.n_docs)
        best_same = next(hit.doc_id for hit in hits if labels[hit.doc_id] == "X")
        assert plan.assignments["q"][0].demo_id == best_same

    def test_rest_flags_override_trailing_slots(self, xy_world):
        _, labels, index = xy_world
        tests = [Case("q", "x x", "X")]
        ranking = rank_by_difficulty(index, tests, labels)
        plan = simulate(index, tests, labels, ranking, 1.0, n_shots=3, rest_flags=[False, True])
        assert [slot.truth for slot in plan.assignments["q"]] == [True, False, True]
        demo_ids = [slot.demo_id for slot in plan.assignments["q"]]
        assert len(set(demo_ids)) == 3

    def test_missing_charge_with_true_slot_names_query(self, xy_world):
        _, labels, index = xy_world
        tests = [Case("orphan", "x x", "Z")]
        ranking = rank_by_difficulty(index, tests, labels)
        with pytest.raises(ValueError, match="orphan"):
            simulate(index, tests, labels, ranking, 1.0)

    def test_target_out_of_range_rejected(self, xy_world):
        _, labels, index = xy_world
        tests = [Case("q", "x", "X")]
        ranking = rank_by_difficulty(index, tests, labels)
        with pytest.raises(ValueError):
            simulate(index, tests, labels, ranking, 1.5)

    def test_realized_precision_is_ceiling_over_n(self):
        split, index, labels, ranking = self._world()
        n = len(split.test)
        for step in range(0, 11):
            target = step / 10
            plan = simulate(index, split.test, labels, ranking, target)
            true_count = sum(slots[0].truth for slots in plan.assignments.values())
            assert true_count == math.ceil(round(target * n, 9))
            assert plan.realized_p1() == true_count / n

    def test_plan_round_trips_through_json(self, xy_world):
        _, labels, index = xy_world
        tests = [Case("q", "x x", "X")]
        ranking = rank_by_difficulty(index, tests, labels)
        plan = simulate(index, tests, labels, ranking, 1.0, n_shots=2)
        assert SimPlan.from_json(plan.to_json()) == plan


class TestPlanCombination:
    def _world(self):
        spec = SynthSpec(n_labels=3, train_per_label=6, test_per_label=2, seed=2)
        split = synth_corpus(spec)
        index = build_index([(case.id, case.fact) for case in split.train])
        labels = {case.id: case.charge for case in split.train}
        return split, index, labels

    def test_prefix_stability(self):
        split, index, labels = self._world()
        short = plan_combination(index, split.test, labels, [True])
        longer = plan_combination(index, split.test, labels, [True, True])
        for case_id in short.assignments:
            assert longer.assignments[case_id][0] == short.assignments[case_id][0]

    def test_swapped_pattern_keeps_demo_multiset(self):
        split, index, labels = self._world()
        ft = plan_combination(index, split.test, labels, [False, True])
        tf = plan_combination(index, split.test, labels, [True, False])
        for case_id in ft.assignments:
            ft_ids = {slot.demo_id for slot in ft.assignments[case_id]}
            tf_ids = {slot.demo_id for slot in tf.assignments[case_id]}
            assert ft_ids == tf_ids
            assert ft.assignments[case_id] != tf.assignments[case_id]

    def test_every_case_matches_pattern_flags(self):
        split, index, labels = self._world()
        golds = {case.id: case.charge for case in split.test}
        pattern = [True, False, True]
        plan = plan_combination(index, split.test, labels, pattern)
        for case_id, slots in plan.assignments.items():
            assert [slot.truth for slot in slots] == pattern
            for slot in slots:
                assert (labels[slot.demo_id] == golds[case_id]) == slot.truth
            assert len({slot.demo_id for slot in slots}) == len(slots)

    def test_true_slot_without_same_charge_case_fails(self, xy_world):
        _, labels, index = xy_world
        with pytest.raises(ValueError, match="no-match"):
            plan_combination(index, [Case("no-match", "x", "Z")], labels, [True])

    def test_pattern_length_bounds(self, xy_world):
        _, labels, index = xy_world
        tests = [Case("q", "x", "X")]
        with pytest.raises(ValueError):
            plan_combination(index, tests, labels, [])
        with pytest.raises(ValueError):
            plan_combination(index, tests, labels, [True] * 5)


class TestKnn:
    def test_k1_equals_top1_label(self):
        spec = SynthSpec(n_labels=5, train_per_label=4, test_per_label=4, seed=3)
        split = synth_corpus(spec)
        index = build_index([(case.id, case.fact) for case in split.train])
        labels = {case.id: case.charge for case in split.train}
        for case in split.test:
            top1 = retrieve(index, case.fact, 1)[0]
            assert knn_predict(index, case, labels, 1) == labels[top1.doc_id]

    def test_strict_majority_wins(self):
        train = [Case("a1", "q q q", "a"), Case("a2", "q", "a"), Case("b1", "q q", "b")]
        index = make_index(train)
        labels = {case.id: case.charge for case in train}
        hits = retrieve(index, "q", 3)
        assert sorted(labels[h.doc_id] for h in hits) == ["a", "a", "b"]
        assert knn_predict(index, Case("q", "q", "?"), labels, 3) == "a"

    def test_count_tie_breaks_by_summed_score(self):
        # two labels, two hits each; label "a" accumulates the larger total
        train = [
            Case("a1", "q q q q", "a"),
            Case("a2", "q q q", "a"),
            Case("b1", "q", "b"),
            Case("b2", "q r r r r r", "b"),
        ]
        index = make_index(train)
        labels = {case.id: case.charge for case in train}
        hits = retrieve(index, "q", 4)
        sums: dict[str, float] = {}
        for hit in hits:
            sums[labels[hit.doc_id]] = sums.get(labels[hit.doc_id], 0.0) + hit.score
        assert sums["a"] != sums["b"]
        winner = max(sums, key=sums.get)
        assert knn_predict(index, Case("q", "q", "?"), labels, 4) == winner

    def test_full_tie_breaks_by_first_occurrence(self):
        train = [
            Case("a1", "w w", "a"),
            Case("a2", "w w", "a"),
            Case("b1", "w w", "b"),
            Case("b2", "w w", "b"),
        ]
        index = make_index(train)
        labels = {case.id: case.charge for case in train}
        assert knn_predict(index, Case("q", "w", "?"), labels, 4) == "a"

    def test_k_below_one_rejected(self):
        train = [Case("a1", "w", "a")]
        index = make_index(train)
        with pytest.raises(ValueError):
            knn_predict(index, Case("q", "w", "?"), {"a1": "a"}, 0)


def test_p_at_1_equals_one_nearest_neighbor_accuracy():
    from ljpbench.bm25 import precision_at_k

    spec = SynthSpec(n_labels=6, train_per_label=5, test_per_label=5, seed=13)
    split = synth_corpus(spec)
    index = build_index([(case.id, case.fact) for case in split.train])
    labels = {case.id: case.charge for case in split.train}
    report = precision_at_k(index, split.test, labels, k=1)
    one_nn_accuracy = sum(
        1 for case in split.test if knn_predict(index, case, labels, 1) == case.charge
    ) / len(split.test)
    assert report.p_at_1 == one_nn_accuracy


class TestTuneK:
    def test_singleton_range(self):
        train = [Case("a1", "x", "A")]
        index = make_index(train)
        best, table = tune_k(index, [Case("v", "x", "A")], {"a1": "A"}, [1])
        assert best == 1
        assert table == {1: 1.0}

    def test_prefers_k_where_top1_wins(self):
        train = [Case("xa", "x", "A"), Case("yb1", "y y", "B"), Case("yb2", "y", "B")]
        index = make_index(train)
        labels = {case.id: case.charge for case in train}
        best, table = tune_k(index, [Case("v1", "x", "A")], labels, [1, 3])
        assert table == {1: 1.0, 3: 0.0}
        assert best == 1

    def test_accuracy_tie_prefers_smaller_k(self):
        train = [Case("a1", "x x", "A"), Case("a2", "x", "A")]
        index = make_index(train)
        labels = {case.id: case.charge for case in train}
        best, table = tune_k(index, [Case("v", "x", "A")], labels, [2, 1])
        assert table[1] == table[2] == 1.0
        assert best == 1

    def test_empty_range_rejected(self):
        train = [Case("a1", "x", "A")]
        index = make_index(train)
        with pytest.raises(ValueError):
            tune_k(index, [Case("v", "x", "A")], {"a1": "A"}, [])

    def test_matches_exhaustive_recheck(self):
        spec = SynthSpec(
            n_labels=4, train_per_label=6, validation_per_label=3, test_per_label=1, seed=9
        )
        split = synth_corpus(spec)
        index = build_index([(case.id, case.fact) for case in split.train])
        labels = {case.id: case.charge for case in split.train}
        k_range = [1, 3, 5, 7]
        best, table = tune_k(index, split.validation, labels, k_range)
        for k in k_range:
            correct = sum(
                1
                for case in split.validation
                if knn_predict(index, case, labels, k) == case.charge
            )
            assert table[k] == correct / len(split.validation)
        assert best == min(k_range, key=lambda k: (-table[k], k))
