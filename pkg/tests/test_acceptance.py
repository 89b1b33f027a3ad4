"""Acceptance suite: one test per release criterion, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  The full-scale retrieval check (criterion 10, second half) needs the
public CAIL corpus and is skipped unless LJPBENCH_CAIL_TRAIN and
LJPBENCH_CAIL_TEST point at CAIL-format JSONL files.
"""

import contextlib
import json
import math
import os
import random
import time

import pytest

from ljpbench.bm25 import Bm25Params, build_index, index_cases, retrieve, score
from ljpbench.config import ExperimentConfig
from ljpbench.corpus import LabelSet, tokenize
from ljpbench.evaluation import heatmap, macro_f1
from ljpbench.inference import map_samples
from ljpbench.llm_gateway import GenRequest, generate, mock_provider
from ljpbench.prompting import CandidateList, select_demonstrations
from ljpbench.retrieval_lab import knn_predict, rank_by_difficulty, simulate
from ljpbench.runner import run_knn, run_matrix, run_simulation
from ljpbench.synth import SynthSpec, synth_corpus

from conftest import make_config
from oracles import bm25_all_scores_oracle, macro_f1_oracle
from test_evaluation import preds, run_result


@contextlib.contextmanager
def criterion(number: int, description: str):
    started = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"[criterion {number:2d}] FAIL  {description}")
        raise
    elapsed = time.monotonic() - started
    print(f"[criterion {number:2d}] PASS  {description} ({elapsed:.2f}s)")


def test_criterion_1_bm25_matches_brute_force():
    with criterion(1, "BM25 score and ranking match brute-force evaluation"):
        rng = random.Random(20240901)
        vocabulary = [f"w{i}" for i in range(30)]
        started = time.monotonic()
        for _ in range(200):
            n_docs = rng.randint(1, 50)
            docs = [
                (
                    f"d{i}",
                    " ".join(rng.choice(vocabulary) for _ in range(rng.randint(1, 20))),
                )
                for i in range(n_docs)
            ]
            params = Bm25Params(k1=rng.uniform(0, 3), b=rng.uniform(0, 1))
            index = build_index(docs, params, scheme="whitespace")
            query_tokens = [
                rng.choice(vocabulary + ["oov1", "oov2"]) for _ in range(rng.randint(1, 8))
            ]
            docs_tokens = {
                doc_id: list(tokenize(text, "whitespace").tokens) for doc_id, text in docs
            }
            oracle = bm25_all_scores_oracle(docs_tokens, query_tokens, params.k1, params.b)
            for doc_id, _ in docs:
                assert abs(score(index, query_tokens, doc_id) - oracle[doc_id]) <= 1e-9
            position = {doc_id: i for i, (doc_id, _) in enumerate(docs)}
            expected_order = sorted(
                oracle, key=lambda doc_id: (-oracle[doc_id], position[doc_id])
            )
            got_order = [
                hit.doc_id for hit in retrieve(index, " ".join(query_tokens), n_docs)
            ]
            assert got_order == expected_order
        assert time.monotonic() - started < 10.0


def test_criterion_2_knn_k1_equals_top1_label():
    with criterion(2, "kNN with k=1 equals the top-1 retrieved label"):
        started = time.monotonic()
        spec = SynthSpec(n_labels=10, train_per_label=6, test_per_label=10, seed=17)
        split = synth_corpus(spec)
        index = index_cases(split.train)
        labels = {case.id: case.charge for case in split.train}
        assert len(split.test) == 100
        for case in split.test:
            top1 = retrieve(index, case.fact, 1)[0]
            assert knn_predict(index, case, labels, 1) == labels[top1.doc_id]
        assert time.monotonic() - started < 1.0


def test_criterion_3_simulator_calibration():
    with criterion(3, "simulated Precision@1 realizes ceil(target*N)/N exactly"):
        started = time.monotonic()
        spec = SynthSpec(n_labels=10, train_per_label=10, test_per_label=20, seed=23)
        split = synth_corpus(spec)
        assert len(split.test) == 200
        index = index_cases(split.train)
        labels = {case.id: case.charge for case in split.train}
        golds = {case.id: case.charge for case in split.test}
        ranking = rank_by_difficulty(index, split.test, labels)
        n = len(split.test)
        for step in range(11):
            target = step / 10
            plan = simulate(index, split.test, labels, ranking, target)
            realized = plan.realized_p1()
            assert realized == math.ceil(round(target * n, 9)) / n
            if target == 1.0:
                one_nn_over_plan = sum(
                    1
                    for case_id, slots in plan.assignments.items()
                    if labels[slots[0].demo_id] == golds[case_id]
                ) / n
                assert one_nn_over_plan == 1.0
        assert time.monotonic() - started < 5.0


def test_criterion_4_self_consistency():
    with criterion(4, "scripted 3-1-1 sample split yields consistency 3"):
        label_set = LabelSet(("盗窃", "抢劫", "诈骗"))
        fixture = {"case-1": ["盗窃", "盗窃罪", "犯盗窃罪", "抢劫", "诈骗"]}
        provider = mock_provider("scripted", fixture=fixture)
        request = GenRequest(prompt="irrelevant", meta={"case_id": "case-1"})
        result = generate(provider, request)
        prediction = map_samples(result.samples, label_set, "case-1")
        assert prediction.per_sample_labels == ("盗窃", "盗窃", "盗窃", "抢劫", "诈骗")
        assert prediction.consistency == 3

        rng = random.Random(5)
        for _ in range(10):
            shuffled = list(result.samples)
            rng.shuffle(shuffled)
            permuted = map_samples(shuffled, label_set, "case-1")
            assert permuted.consistency == prediction.consistency
            assert permuted.label == prediction.label


def test_criterion_5_end_to_end_mock_pipeline(tmp_path):
    with criterion(5, "mock pipeline: echo-gold perfect, constant at label frequency"):
        started = time.monotonic()
        spec = SynthSpec(n_labels=3, train_per_label=4, test_per_label=10, seed=31)
        split = synth_corpus(spec)
        assert len(split.test) == 30

        config = make_config(
            tmp_path / "gold",
            split.train,
            split.test,
            settings={"question_forms": ["multi_choice"], "shots": [1]},
            candidates={"pool_size": 4},
            provider={"mock": "echo_gold"},
        )
        bundle = run_matrix(config)
        results = json.loads((bundle / "results.json").read_text())
        run = results["runs"][0]
        assert run["accuracy"] == 1.0
        assert run["macro_f1"] == 1.0

        one_label = split.test[0].charge
        config = make_config(
            tmp_path / "const",
            split.train,
            split.test,
            settings={"question_forms": ["multi_choice"], "shots": [1]},
            candidates={"pool_size": 4},
            provider={"mock": "constant", "constant_text": one_label},
        )
        bundle = run_matrix(config)
        results = json.loads((bundle / "results.json").read_text())
        assert results["runs"][0]["accuracy"] == 1 / 3
        assert time.monotonic() - started < 5.0


def test_criterion_6_demonstration_filtering():
    with criterion(6, "multi-choice demos never leave the candidate list"):
        from ljpbench.bm25 import RankedHit

        labels = {f"d{i}": charge for i, charge in enumerate("abcabcbca")}
        facts = {doc_id: f"事实{doc_id}" for doc_id in labels}
        hits = [RankedHit(f"d{i}", 9.0 - i, i + 1) for i in range(9)]

        from ljpbench.prompting import PromptError

        for candidate_labels in (("a",), ("a", "b"), ("b", "c"), ("a", "b", "c")):
            candidates = CandidateList(candidate_labels)
            eligible = sum(1 for hit in hits if labels[hit.doc_id] in candidate_labels)
            for n in (1, 2, 3, 4):
                if n > eligible:
                    with pytest.raises(PromptError):
                        select_demonstrations(hits, labels, facts, n, candidates)
                    continue
                demos = select_demonstrations(hits, labels, facts, n, candidates)
                assert all(demo.charge in candidate_labels for demo in demos)

        # top-4 labels are a, b, c, a: all inside the candidate set
        full = CandidateList(("a", "b", "c"))
        assert select_demonstrations(hits, labels, facts, 4, full) == select_demonstrations(
            hits, labels, facts, 4
        )


def test_criterion_7_macro_f1_oracle_fixtures():
    with criterion(7, "macro-F1 matches the enumeration oracle on fixtures"):
        fixtures = [
            # rows: (gold, predicted) pairs realizing a confusion matrix
            [("a", "a"), ("a", "a"), ("a", "b"), ("b", "b")],  # [[2,1],[0,1]]
            [("a", "a"), ("b", "b"), ("c", "c")],
            [("a", "b"), ("b", "a")],
            [("a", "a"), ("a", "a"), ("b", "a"), ("b", "a")],
            [("a", "b"), ("a", "b"), ("b", "b"), ("c", "b")],
        ]
        for pairs in fixtures:
            labels = sorted({gold for gold, _ in pairs} | {pred for _, pred in pairs})
            predictions, gold = preds(pairs)
            got = macro_f1(predictions, gold, LabelSet(tuple(labels)))
            want = macro_f1_oracle(pairs, labels)
            assert abs(got - want) <= 1e-12
        confusion_2101 = fixtures[0]
        predictions, gold = preds(confusion_2101)
        value = macro_f1(predictions, gold, LabelSet(("a", "b")))
        assert abs(value - 11 / 15) <= 1e-12  # per-class F1 of 4/5 and 2/3


def test_criterion_8_heatmap_algebra():
    with criterion(8, "heatmap deltas telescope and the 1-to-2-shot sweep has 4 cells"):
        accuracies = {
            "": 0.31, "T": 0.52, "F": 0.28,
            "TT": 0.63, "TF": 0.44, "FT": 0.50, "FF": 0.22,
        }
        results = {pattern: run_result(pattern, acc) for pattern, acc in accuracies.items()}
        cells = {(c.existing_pattern, c.added): c for c in heatmap(results)}
        for path in ("TT", "TF", "FT", "FF"):
            total = cells[("", path[0])].delta + cells[(path[0], path[1])].delta
            endpoint = (accuracies[path] - accuracies[""]) * 100
            assert abs(total - endpoint) <= 1e-12

        one_to_two = {
            pattern: run_result(pattern, accuracies[pattern])
            for pattern in ("T", "F", "TT", "TF", "FT", "FF")
        }
        cells = heatmap(one_to_two)
        assert len(cells) == 4
        assert {(c.existing_pattern, c.added) for c in cells} == {
            ("T", "T"), ("T", "F"), ("F", "T"), ("F", "F"),
        }


def test_criterion_9_reproducible_bundles(tmp_path):
    with criterion(9, "rerunning a completed sweep reproduces byte-identical bundles"):
        from test_runner_cli import bundle_digest

        spec = SynthSpec(n_labels=3, train_per_label=5, test_per_label=4, seed=41)
        split = synth_corpus(spec)
        config = make_config(
            tmp_path,
            split.train,
            split.test,
            settings={"question_forms": ["open", "multi_choice"], "shots": [0, 1, 2]},
            candidates={"pool_size": 4},
            provider={"mock": "echo_gold"},
        )
        first = run_matrix(config)
        digest = bundle_digest(first)
        cache_files = sorted((tmp_path / "out" / "cache").glob("*.json"))
        assert cache_files
        second = run_matrix(config)
        assert second == first
        assert bundle_digest(second) == digest
        assert sorted((tmp_path / "out" / "cache").glob("*.json")) == cache_files

        sim_config = make_config(
            tmp_path / "sim",
            split.train,
            split.test,
            simulation={"targets": [0.0, 0.5, 1.0]},
            provider={"mock": "echo_first_demo"},
        )
        sim_first = bundle_digest(run_simulation(sim_config))
        assert bundle_digest(run_simulation(sim_config)) == sim_first


def test_criterion_10_report_table_shape(tmp_path):
    with criterion(10, "summary grid has the question-form x 0..4-shot shape"):
        config = make_config(
            tmp_path,
            [case for case in synth_corpus(SynthSpec(n_labels=3, train_per_label=5, seed=3)).train],
            [case for case in synth_corpus(SynthSpec(n_labels=3, test_per_label=3, seed=3)).test],
            candidates={"pool_size": 4},
            provider={"mock": "echo_gold"},
        )
        bundle = run_matrix(config)
        results = json.loads((bundle / "results.json").read_text())
        assert {run["run_id"] for run in results["runs"]} == {
            f"{form}_{shots}shot"
            for form in ("open", "multi_choice")
            for shots in range(5)
        }
        lines = (bundle / "summary.csv").read_text(encoding="utf-8").splitlines()
        assert lines[1] == "metric,question_form,0shot,1shot,2shot,3shot,4shot"
        assert len(lines) == 2 + 4  # schema line, header, 2 metrics x 2 forms


CAIL_TRAIN = os.environ.get("LJPBENCH_CAIL_TRAIN")
CAIL_TEST = os.environ.get("LJPBENCH_CAIL_TEST")


@pytest.mark.skipif(
    not (CAIL_TRAIN and CAIL_TEST),
    reason="full-scale retrieval check needs LJPBENCH_CAIL_TRAIN/LJPBENCH_CAIL_TEST "
    "pointing at CAIL-format JSONL files",
)
def test_criterion_10_cail_scale_retrieval(tmp_path):
    with criterion(10, "CAIL-scale BM25 P@1 and kNN accuracy near reference values"):
        config = ExperimentConfig.from_dict(
            {
                "corpus": {"train": CAIL_TRAIN, "test": CAIL_TEST, "format": "cail"},
                "sampling": {
                    "train_per_label": 10,
                    "validation_per_label": 10,
                    "test_per_label": 5,
                    "seed": 42,
                },
                "run": {"output_dir": str(tmp_path / "out")},
            }
        )
        results = run_knn(config)
        print(
            f"    P@1={results['p_at_1']:.4f} best_k={results['best_k']} "
            f"knn_accuracy={results['knn_accuracy']:.4f}"
        )
        assert abs(results["p_at_1"] - 0.4803) <= 0.03
        assert abs(results["knn_accuracy"] - 0.5768) <= 0.03
