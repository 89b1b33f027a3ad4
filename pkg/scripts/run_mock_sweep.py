#!/usr/bin/env python3
"""End-to-end demo on synthetic data with deterministic mock providers.

Builds a corpus, runs the full question-form x shots matrix with the
echo-gold mock, the kNN baseline, an IR-capability sweep with the
demo-echoing mock, and the per-charge verification pass.  Everything lands
under --out; no network, no keys.
"""

import argparse
import json
from pathlib import Path

from ljpbench.config import ExperimentConfig
from ljpbench.corpus import write_canonical
from ljpbench.runner import run_knn, run_matrix, run_simulation, run_verification
from ljpbench.synth import SynthSpec, synth_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="mock_sweep_out")
    parser.add_argument("--labels", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    spec = SynthSpec(
        n_labels=args.labels,
        train_per_label=10,
        validation_per_label=5,
        test_per_label=5,
        seed=args.seed,
    )
    split = synth_corpus(spec)
    write_canonical(split.train, out / "corpus" / "train.jsonl")
    write_canonical(split.validation, out / "corpus" / "validation.jsonl")
    write_canonical(split.test, out / "corpus" / "test.jsonl")

    base = {
        "corpus": {
            "train": str(out / "corpus" / "train.jsonl"),
            "validation": str(out / "corpus" / "validation.jsonl"),
            "test": str(out / "corpus" / "test.jsonl"),
        },
        "candidates": {"pool_size": 5},
        "run": {"output_dir": str(out / "results")},
    }

    matrix_config = ExperimentConfig.from_dict(
        {**base, "provider": {"kind": "mock", "mock": "echo_gold"}}
    )
    bundle = run_matrix(matrix_config)
    print(f"matrix bundle: {bundle}")
    print((bundle / "summary.csv").read_text(encoding="utf-8"))

    knn_results = run_knn(matrix_config)
    print(
        f"knn baseline: P@1={knn_results['p_at_1']:.4f} "
        f"best_k={knn_results['best_k']} accuracy={knn_results['knn_accuracy']:.4f}"
    )

    sim_config = ExperimentConfig.from_dict(
        {
            **base,
            "provider": {"kind": "mock", "mock": "echo_first_demo"},
            "simulation": {
                "targets": [i / 10 for i in range(11)],
                "patterns": ["T", "F", "TT", "TF", "FT", "FF"],
            },
        }
    )
    sim_bundle = run_simulation(sim_config)
    results = json.loads((sim_bundle / "results.json").read_text(encoding="utf-8"))
    print(f"simulation bundle: {sim_bundle}")
    print("target  realized_p1  ir_acc  llm_acc")
    for row in results["paradox"]:
        print(
            f"{row['target']:6.2f}  {row['realized_p1']:11.4f}  "
            f"{row['ir_accuracy']:6.4f}  {row['llm_accuracy']:7.4f}"
        )
    print(f"crossover target: {results['crossover_target']}")

    verify_config = ExperimentConfig.from_dict(
        {**base, "provider": {"kind": "mock", "mock": "yes_if_gold"}}
    )
    verify_bundle = run_verification(verify_config)
    verify_results = json.loads((verify_bundle / "results.json").read_text(encoding="utf-8"))
    print(
        f"verification: recall={verify_results['detection_recall']:.4f} "
        f"precision={verify_results['detection_precision']:.4f}"
    )


if __name__ == "__main__":
    main()
