"""Case corpora: ingestion, balanced sampling, tokenization, and truncation."""

from __future__ import annotations

import json
import logging
import random
from collections import Counter
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

SCHEMES = ("cjk_char", "whitespace")

_CJK_RANGES = (
    (0x3400, 0x4DBF),
    (0x4E00, 0x9FFF),
    (0xF900, 0xFAFF),
    (0x20000, 0x2A6DF),
    (0x2A700, 0x2EBEF),
    (0x30000, 0x3134F),
)


class IngestError(ValueError):
    """A corpus file could not be parsed."""


@dataclass(frozen=True)
class Case:
    """One legal case: stable unique id, fact text, gold charge label."""

    id: str
    fact: str
    charge: str


@dataclass(frozen=True)
class TokenStream:
    tokens: tuple[str, ...]
    scheme_id: str


@dataclass(frozen=True)
class LabelSet:
    """Ordered collection of distinct charge names."""

    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValueError("label set must not be empty")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("label set contains duplicates")

    @classmethod
    def from_cases(cls, cases: Iterable[Case]) -> "LabelSet":
        """Collect distinct charges in first-appearance order."""
        seen: dict[str, None] = {}
        for case in cases:
            seen.setdefault(case.charge, None)
        return cls(tuple(seen))

    def position(self, label: str) -> int:
        return self.labels.index(label)

    def __iter__(self):
        return iter(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: object) -> bool:
        return label in self.labels


@dataclass(frozen=True)
class CorpusSplit:
    """Disjoint train/validation/test case lists plus per-label tallies."""

    train: tuple[Case, ...]
    validation: tuple[Case, ...]
    test: tuple[Case, ...]
    per_label_counts: dict[str, dict[str, int]]


def _is_cjk(codepoint: int) -> bool:
    return any(lo <= codepoint <= hi for lo, hi in _CJK_RANGES)


def tokenize(text: str, scheme: str = "cjk_char") -> TokenStream:
    """Tokenize text deterministically.

    cjk_char: every CJK ideograph is its own token, maximal ASCII
    alphanumeric runs become single lowercased tokens, everything else is
    dropped.  whitespace: plain split.
    """
    if scheme == "whitespace":
        return TokenStream(tuple(text.split()), scheme)
    if scheme != "cjk_char":
        raise ValueError(f"unknown tokenization scheme: {scheme!r}")
    tokens: list[str] = []
    run: list[str] = []
    for ch in text:
        if ch.isascii() and ch.isalnum():
            run.append(ch)
            continue
        if run:
            tokens.append("".join(run).lower())
            run.clear()
        if _is_cjk(ord(ch)):
            tokens.append(ch)
    if run:
        tokens.append("".join(run).lower())
    return TokenStream(tuple(tokens), scheme)


def make_counter(scheme: str = "cjk_char") -> Callable[[str], int]:
    """Token-counting function backed by one of the built-in schemes."""

    def count(text: str) -> int:
        return len(tokenize(text, scheme).tokens)

    return count


def truncate(text: str, limit: int, counter: Callable[[str], int]) -> str:
    """Longest prefix of ``text`` whose token count is <= ``limit``.

    The counter must be monotone over character prefixes (both built-in
    schemes are).  Texts already within the limit are returned unchanged.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    if counter(text) <= limit:
        return text
    lo, hi = 0, len(text)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if counter(text[:mid]) <= limit:
            lo = mid
        else:
            hi = mid
    return text[:lo]


def ingest(path: str | Path, format: str = "canonical") -> list[Case]:
    """Read a JSONL corpus file into cases, preserving file order.

    canonical records carry id/fact/charge directly; cail records carry
    fact plus meta.accusation, of which the first entry becomes the charge
    (extra accusations are logged and dropped).
    """
    if format not in ("canonical", "cail"):
        raise ValueError(f"unknown corpus format: {format!r}")
    path = Path(path)
    parse = _case_from_canonical if format == "canonical" else _case_from_cail
    cases: list[Case] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            case = parse(record, lineno, path)
            if case.id in seen:
                raise IngestError(f"{path}:{lineno}: duplicate case id {case.id!r}")
            seen.add(case.id)
            cases.append(case)
    if not cases:
        raise IngestError(f"{path}: corpus file has no records")
    return cases


def _case_from_canonical(record: object, lineno: int, path: Path) -> Case:
    if not isinstance(record, dict):
        raise IngestError(f"{path}:{lineno}: record is not an object")
    try:
        case = Case(id=str(record["id"]), fact=str(record["fact"]), charge=str(record["charge"]))
    except KeyError as exc:
        raise IngestError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
    if not case.fact:
        raise IngestError(f"{path}:{lineno}: empty fact")
    if not case.charge:
        raise IngestError(f"{path}:{lineno}: empty charge")
    return case


def _case_from_cail(record: object, lineno: int, path: Path) -> Case:
    if not isinstance(record, dict):
        raise IngestError(f"{path}:{lineno}: record is not an object")
    try:
        fact = str(record["fact"])
        accusation = record["meta"]["accusation"]
    except (KeyError, TypeError) as exc:
        raise IngestError(f"{path}:{lineno}: missing fact or meta.accusation") from exc
    if not isinstance(accusation, list) or not accusation:
        raise IngestError(f"{path}:{lineno}: meta.accusation must be a non-empty list")
    if len(accusation) > 1:
        logger.warning("%s:%d: %d accusations, keeping the first", path, lineno, len(accusation))
    if not fact:
        raise IngestError(f"{path}:{lineno}: empty fact")
    case_id = str(record.get("id") or f"cail-{lineno}")
    return Case(id=case_id, fact=fact, charge=str(accusation[0]))


def write_canonical(cases: Iterable[Case], path: str | Path) -> None:
    """Write cases as canonical JSONL (inverse of canonical ``ingest``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for case in cases:
            fh.write(json.dumps({"id": case.id, "fact": case.fact, "charge": case.charge}, ensure_ascii=False))
            fh.write("\n")


def sample_balanced(cases: Sequence[Case], per_label: int, seed: int) -> list[Case]:
    """Pick ``per_label`` cases per charge uniformly without replacement.

    Labels with fewer cases contribute everything they have (with a
    warning).  Deterministic for a fixed seed; within each label the
    original file order of the selected cases is kept.
    """
    if per_label < 1:
        raise ValueError("per_label must be >= 1")
    groups: dict[str, list[Case]] = {}
    for case in cases:
        groups.setdefault(case.charge, []).append(case)
    rng = random.Random(seed)
    chosen: list[Case] = []
    for label, members in groups.items():
        if len(members) <= per_label:
            if len(members) < per_label:
                logger.warning(
                    "label %r has only %d cases (requested %d): keeping all",
                    label, len(members), per_label,
                )
            chosen.extend(members)
        else:
            picks = sorted(rng.sample(range(len(members)), per_label))
            chosen.extend(members[i] for i in picks)
    return chosen


def build_split(
    train_cases: Sequence[Case],
    test_cases: Sequence[Case],
    validation_cases: Sequence[Case] | None = None,
    *,
    train_per_label: int | None = None,
    validation_per_label: int | None = None,
    test_per_label: int | None = None,
    seed: int = 42,
) -> CorpusSplit:
    """Assemble a CorpusSplit, sampling each pool down to its quota.

    When no validation pool is given and a validation quota is set, the
    validation split is carved out of the remaining (unsampled) train
    cases so train and validation stay disjoint.
    """
    test = sample_balanced(test_cases, test_per_label, seed) if test_per_label else list(test_cases)
    train = (
        sample_balanced(train_cases, train_per_label, seed + 1)
        if train_per_label
        else list(train_cases)
    )
    if validation_cases is not None:
        validation = (
            sample_balanced(validation_cases, validation_per_label, seed + 2)
            if validation_per_label
            else list(validation_cases)
        )
    elif validation_per_label:
        train_ids = {case.id for case in train}
        remainder = [case for case in train_cases if case.id not in train_ids]
        validation = sample_balanced(remainder, validation_per_label, seed + 2)
    else:
        validation = []

    split = CorpusSplit(
        train=tuple(train),
        validation=tuple(validation),
        test=tuple(test),
        per_label_counts={
            "train": dict(Counter(case.charge for case in train)),
            "validation": dict(Counter(case.charge for case in validation)),
            "test": dict(Counter(case.charge for case in test)),
        },
    )
    _check_disjoint(split)
    return split


def _check_disjoint(split: CorpusSplit) -> None:
    ids: Counter[str] = Counter()
    for part in (split.train, split.validation, split.test):
        ids.update(case.id for case in part)
    dupes = [case_id for case_id, n in ids.items() if n > 1]
    if dupes:
        raise ValueError(f"splits share case ids: {sorted(dupes)[:5]}")
