"""Map sampled generations to charge predictions and measure self-consistency.

Parsing deliberately targets the full label set, not the candidate subset:
models can produce correct answers that never appeared among the rendered
candidates.  One BM25-based parsing rule serves every model; there are no
per-model heuristics.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass

from .bm25 import Bm25Params, label_similarity
from .corpus import LabelSet

UNPARSED = "<unparsed>"

YES_MARKERS = ("是", "yes")
NO_MARKERS = ("否", "不", "no")


@dataclass(frozen=True)
class Prediction:
    """Averaged per-label similarity scores and the resulting label.

    ``consistency`` is the multiplicity of the modal per-sample label; when
    every sample is unparseable it equals the sample count and the label is
    the UNPARSED sentinel.
    """

    case_id: str
    label: str
    score_vector: dict[str, float]
    consistency: int
    per_sample_labels: tuple[str, ...]

    def top_scores(self, n: int = 5) -> list[tuple[str, float]]:
        ranked = sorted(self.score_vector.items(), key=lambda kv: -kv[1])
        return ranked[:n]


def _argmax_label(row: Sequence[float], label_set: LabelSet) -> str:
    best_label = UNPARSED
    best = 0.0
    for label, value in zip(label_set, row):
        if value > best:
            best = value
            best_label = label
    return best_label


def map_samples(
    samples: Sequence[str],
    label_set: LabelSet,
    case_id: str = "",
    params: Bm25Params | None = None,
    scheme: str = "cjk_char",
    normalize: bool = False,
) -> Prediction:
    """Turn sampled texts into one prediction.

    Each sample is scored against every label with BM25; the per-label
    scores are averaged across samples (optionally max-normalized per
    sample first) and the best-scoring label wins.  Ties break by label
    order; a sample with no label overlap parses to UNPARSED.
    """
    if not samples:
        raise ValueError("samples must not be empty")
    if not len(label_set):
        raise ValueError("label set must not be empty")
    rows = label_similarity(samples, label_set, params, scheme)
    if normalize:
        rows = [
            [value / peak for value in row] if (peak := max(row)) > 0 else row
            for row in rows
        ]
    per_sample = tuple(_argmax_label(row, label_set) for row in rows)
    n = len(samples)
    mean_vector = {
        label: sum(row[i] for row in rows) / n for i, label in enumerate(label_set)
    }
    label = _argmax_label([mean_vector[lbl] for lbl in label_set], label_set)
    parsed = [lbl for lbl in per_sample if lbl != UNPARSED]
    consistency = max(Counter(parsed).values()) if parsed else n
    return Prediction(
        case_id=case_id,
        label=label,
        score_vector=mean_vector,
        consistency=consistency,
        per_sample_labels=per_sample,
    )


def _detect(sample: str, yes_markers: Sequence[str], no_markers: Sequence[str]) -> str | None:
    text = sample.casefold()
    best_pos = len(text) + 1
    verdict: str | None = None
    for polarity, markers in (("yes", yes_markers), ("no", no_markers)):
        for marker in markers:
            pos = text.find(marker.casefold())
            if pos != -1 and (pos < best_pos or (pos == best_pos and polarity == "no")):
                best_pos = pos
                verdict = polarity
    return verdict


def parse_yes_no(
    samples: Sequence[str],
    yes_markers: Sequence[str] = YES_MARKERS,
    no_markers: Sequence[str] = NO_MARKERS,
) -> str:
    """Majority vote over per-sample yes/no marker detection.

    Per sample the earliest marker occurrence decides (negative wins exact
    position ties, so "不是" reads as no).  A 50/50 vote or a total lack of
    markers yields UNPARSED.
    """
    if not samples:
        raise ValueError("samples must not be empty")
    votes = Counter(
        verdict
        for sample in samples
        if (verdict := _detect(sample, yes_markers, no_markers)) is not None
    )
    if not votes:
        return UNPARSED
    if votes["yes"] == votes["no"]:
        return UNPARSED
    return "yes" if votes["yes"] > votes["no"] else "no"
