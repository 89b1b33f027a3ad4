"""Synthetic desk-scale corpora with controllable retrieval difficulty.

Each synthetic charge owns a disjoint pool of ideographs; facts mix chars
from their charge's pool with shared filler, so same-charge cases are
genuinely similar under BM25 while the filler fraction controls how clean
retrieval is.  With ``filler_weight = 0`` the nearest neighbor of every
case is guaranteed to share its charge.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .corpus import Case, CorpusSplit, build_split

_LABEL_BASE = 0x4E00  # per-label char pools carved from this block
_FILLER_BASE = 0x6F00
_POOL_SIZE = 8
_FILLER_SIZE = 40


@dataclass(frozen=True)
class SynthSpec:
    n_labels: int = 3
    train_per_label: int = 4
    validation_per_label: int = 0
    test_per_label: int = 2
    fact_length: tuple[int, int] = (20, 60)
    filler_weight: float = 0.25
    seed: int = 0


def synth_labels(n_labels: int) -> list[str]:
    """Distinct two-ideograph charge names, one per disjoint char pool."""
    if n_labels < 1:
        raise ValueError("n_labels must be >= 1")
    labels = []
    for i in range(n_labels):
        base = _LABEL_BASE + i * _POOL_SIZE
        labels.append(chr(base) + chr(base + 1))
    return labels


def _label_pool(label_index: int) -> list[str]:
    base = _LABEL_BASE + label_index * _POOL_SIZE
    return [chr(base + j) for j in range(_POOL_SIZE)]


def _make_fact(rng: random.Random, label_index: int, spec: SynthSpec) -> str:
    pool = _label_pool(label_index)
    filler = [chr(_FILLER_BASE + j) for j in range(_FILLER_SIZE)]
    length = rng.randint(*spec.fact_length)
    chars = []
    for _ in range(length):
        if rng.random() < spec.filler_weight:
            chars.append(rng.choice(filler))
        else:
            chars.append(rng.choice(pool))
    return "".join(chars)


def synth_cases(spec: SynthSpec, split_name: str, per_label: int, rng: random.Random) -> list[Case]:
    labels = synth_labels(spec.n_labels)
    cases = []
    for label_index, label in enumerate(labels):
        for i in range(per_label):
            cases.append(
                Case(
                    id=f"{split_name}-{label_index:03d}-{i:03d}",
                    fact=_make_fact(rng, label_index, spec),
                    charge=label,
                )
            )
    return cases


def synth_corpus(spec: SynthSpec) -> CorpusSplit:
    """Build a ready CorpusSplit; splits are disjoint by construction."""
    rng = random.Random(spec.seed)
    train = synth_cases(spec, "train", spec.train_per_label, rng)
    validation = synth_cases(spec, "val", spec.validation_per_label, rng)
    test = synth_cases(spec, "test", spec.test_per_label, rng)
    return build_split(train, test, validation)
