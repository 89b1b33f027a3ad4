#!/usr/bin/env python3
"""Emit a synthetic desk-scale corpus as canonical JSONL splits.

Useful for exercising the full pipeline without any real data:

    python scripts/make_synthetic_corpus.py --out data/synth \\
        --labels 5 --train-per-label 10 --test-per-label 5
"""

import argparse
from pathlib import Path

from ljpbench.corpus import write_canonical
from ljpbench.synth import SynthSpec, synth_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--labels", type=int, default=5)
    parser.add_argument("--train-per-label", type=int, default=10)
    parser.add_argument("--validation-per-label", type=int, default=5)
    parser.add_argument("--test-per-label", type=int, default=5)
    parser.add_argument("--filler-weight", type=float, default=0.25)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    spec = SynthSpec(
        n_labels=args.labels,
        train_per_label=args.train_per_label,
        validation_per_label=args.validation_per_label,
        test_per_label=args.test_per_label,
        filler_weight=args.filler_weight,
        seed=args.seed,
    )
    split = synth_corpus(spec)
    out = Path(args.out)
    write_canonical(split.train, out / "train.jsonl")
    write_canonical(split.validation, out / "validation.jsonl")
    write_canonical(split.test, out / "test.jsonl")
    print(
        f"wrote {len(split.train)} train / {len(split.validation)} validation / "
        f"{len(split.test)} test cases to {out}"
    )


if __name__ == "__main__":
    main()
