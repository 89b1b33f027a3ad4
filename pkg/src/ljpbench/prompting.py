"""Prompt construction: label candidates, demonstration selection, rendering.

Templates live in external UTF-8 text files with {name} placeholders; a
manifest maps template roles to files.  Rendering is pure string
substitution and byte-deterministic.
"""

from __future__ import annotations

import hashlib
import json
import string
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .bm25 import RankedHit
from .corpus import Case, make_counter, truncate
from .retrieval_lab import SimPlan

QUESTION_FORMS = ("open", "multi_choice")
DEMO_SOURCES = ("retrieved", "fixed", "simulated")

_ROLE_FILES = {
    "instruction": "instruction.txt",
    "instruction_zero_shot_open": "instruction_zero_shot_open.txt",
    "candidate_block": "candidate_block.txt",
    "demo_block": "demo_block.txt",
    "query_block": "query_block.txt",
    "verification_block": "verification_block.txt",
}


class PromptError(ValueError):
    """A prompt could not be constructed as requested."""


@dataclass(frozen=True)
class TaskSetting:
    """One evaluation condition: question form, shot count, demo source."""

    question_form: str
    n_shots: int
    demo_source: str = "retrieved"

    def __post_init__(self) -> None:
        if self.question_form not in QUESTION_FORMS:
            raise ValueError(f"unknown question form: {self.question_form!r}")
        if not 0 <= self.n_shots <= 4:
            raise ValueError("n_shots must be in 0..4")
        if self.demo_source not in DEMO_SOURCES:
            raise ValueError(f"unknown demo source: {self.demo_source!r}")

    @property
    def key(self) -> str:
        base = f"{self.question_form}_{self.n_shots}shot"
        if self.demo_source != "retrieved" and self.n_shots > 0:
            base += f"_{self.demo_source}"
        return base


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    instruction: str
    instruction_zero_shot_open: str
    candidate_block: str
    demo_block: str
    query_block: str
    joiner: str
    candidate_joiner: str
    verification_block: str

    def fingerprint(self) -> str:
        blob = json.dumps(
            {
                "instruction": self.instruction,
                "instruction_zero_shot_open": self.instruction_zero_shot_open,
                "candidate_block": self.candidate_block,
                "demo_block": self.demo_block,
                "query_block": self.query_block,
                "joiner": self.joiner,
                "candidate_joiner": self.candidate_joiner,
                "verification_block": self.verification_block,
            },
            ensure_ascii=False,
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Demonstration:
    fact: str
    charge: str
    source_id: str
    truth_flag: bool | None = None


@dataclass(frozen=True)
class CandidateList:
    """Distinct candidate charges in retrieval first-appearance order.

    ``contains_gold`` is evaluation-only metadata and is never rendered.
    ``rendered_labels`` preserves duplicates when deduplication is turned
    off for rendering.
    """

    labels: tuple[str, ...]
    contains_gold: bool | None = None
    rendered_labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("candidate labels must be distinct")

    def render_sequence(self) -> tuple[str, ...]:
        return self.rendered_labels if self.rendered_labels is not None else self.labels


def load_template(name: str = "zh", root: str | Path | None = None) -> PromptTemplate:
    """Load a template set by name from the bundled manifest (or a custom root)."""
    if root is None:
        base = resources.files("ljpbench") / "templates"
    else:
        base = Path(root)
    manifest = json.loads((base / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("version") != 1:
        raise ValueError("unsupported template manifest version")
    try:
        spec = manifest["sets"][name]
    except KeyError:
        raise ValueError(f"unknown template set {name!r}; have {sorted(manifest['sets'])}") from None
    directory = base / spec["dir"]
    roles = {
        role: (directory / filename).read_text(encoding="utf-8").rstrip("\n")
        for role, filename in _ROLE_FILES.items()
    }
    return PromptTemplate(
        name=name,
        joiner=spec["joiner"],
        candidate_joiner=spec["candidate_joiner"],
        **roles,
    )


def _fill(template_text: str, values: Mapping[str, str]) -> str:
    fields = {name for _, name, _, _ in string.Formatter().parse(template_text) if name is not None}
    missing = sorted(field for field in fields if field not in values)
    if "" in fields or missing:
        raise PromptError(f"unresolved template placeholders: {missing or ['{}']}")
    return template_text.format(**values)


def make_candidates(
    hits: Sequence[RankedHit],
    labels: Mapping[str, str],
    pool_size: int,
    gold: str | None = None,
    dedupe: bool = True,
) -> CandidateList:
    """Distinct labels of the top ``pool_size`` hits, first appearance first."""
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    if not hits:
        raise PromptError("no retrieval hits to build candidates from")
    raw = [labels[hit.doc_id] for hit in hits[:pool_size]]
    distinct: dict[str, None] = {}
    for label in raw:
        distinct.setdefault(label, None)
    return CandidateList(
        labels=tuple(distinct),
        contains_gold=(gold in distinct) if gold is not None else None,
        rendered_labels=None if dedupe else tuple(raw),
    )


def inject_gold(candidates: CandidateList, gold: str) -> CandidateList:
    """Append the gold label when absent; idempotent."""
    if gold in candidates.labels:
        return replace(candidates, contains_gold=True)
    rendered = candidates.rendered_labels
    return CandidateList(
        labels=candidates.labels + (gold,),
        contains_gold=True,
        rendered_labels=rendered + (gold,) if rendered is not None else None,
    )


def select_demonstrations(
    hits: Sequence[RankedHit],
    labels: Mapping[str, str],
    facts: Mapping[str, str],
    n: int,
    candidates: CandidateList | None = None,
    fact_limit: int = 500,
    counter: Callable[[str], int] | None = None,
) -> list[Demonstration]:
    """Top-n hits in rank order, filtered to candidate labels when given.

    Hits whose label is outside the candidate list are skipped and replaced
    by the next ranked hit.  Demo facts are truncated to ``fact_limit``
    tokens.
    """
    if not 1 <= n <= 4:
        raise ValueError("n must be in 1..4")
    counter = counter or make_counter()
    allowed = set(candidates.labels) if candidates is not None else None
    demos: list[Demonstration] = []
    for hit in hits:
        label = labels[hit.doc_id]
        if allowed is not None and label not in allowed:
            continue
        demos.append(
            Demonstration(
                fact=truncate(facts[hit.doc_id], fact_limit, counter),
                charge=label,
                source_id=hit.doc_id,
            )
        )
        if len(demos) == n:
            return demos
    raise PromptError(f"need {n} eligible demonstrations, found only {len(demos)}")


def fixed_demos(
    pool: Sequence[Case],
    n: int,
    fact_limit: int = 500,
    counter: Callable[[str], int] | None = None,
) -> list[Demonstration]:
    """First ``n`` pool cases as demonstrations, identical for every query."""
    if len(pool) < n:
        raise PromptError(f"fixed demo pool has {len(pool)} cases, need {n}")
    counter = counter or make_counter()
    return [
        Demonstration(
            fact=truncate(case.fact, fact_limit, counter),
            charge=case.charge,
            source_id=case.id,
        )
        for case in pool[:n]
    ]


def plan_demonstrations(
    plan: SimPlan,
    case_id: str,
    train_by_id: Mapping[str, Case],
    fact_limit: int = 500,
    counter: Callable[[str], int] | None = None,
) -> list[Demonstration]:
    """Demonstrations for one test case as assigned by a simulation plan."""
    counter = counter or make_counter()
    try:
        slots = plan.assignments[case_id]
    except KeyError:
        raise PromptError(f"plan has no assignment for case {case_id!r}") from None
    demos = []
    for slot in slots:
        source = train_by_id[slot.demo_id]
        demos.append(
            Demonstration(
                fact=truncate(source.fact, fact_limit, counter),
                charge=source.charge,
                source_id=source.id,
                truth_flag=slot.truth,
            )
        )
    return demos


def render(
    template: PromptTemplate,
    setting: TaskSetting,
    query_fact: str,
    demos: Sequence[Demonstration] = (),
    candidates: CandidateList | None = None,
) -> str:
    """Assemble the full prompt for one query.

    Layout: instruction, candidate block (multi-choice only), demonstration
    blocks in order, query block.  The zero-shot open setting uses the
    extended instruction.
    """
    if setting.question_form == "multi_choice" and candidates is None:
        raise PromptError("multi-choice setting requires candidates")
    if setting.question_form == "open" and candidates is not None:
        raise PromptError("open setting must not carry candidates")
    if len(demos) != setting.n_shots:
        raise PromptError(f"setting asks for {setting.n_shots} demos, got {len(demos)}")

    zero_shot_open = setting.question_form == "open" and setting.n_shots == 0
    blocks = [template.instruction_zero_shot_open if zero_shot_open else template.instruction]
    if candidates is not None:
        joined = template.candidate_joiner.join(candidates.render_sequence())
        blocks.append(_fill(template.candidate_block, {"candidates": joined}))
    for demo in demos:
        blocks.append(_fill(template.demo_block, {"demo_fact": demo.fact, "demo_charge": demo.charge}))
    blocks.append(_fill(template.query_block, {"query_fact": query_fact}))
    return template.joiner.join(blocks)


def verification_prompt(template: PromptTemplate, query_fact: str, charge: str) -> str:
    """Yes/no question asking whether the named charge applies."""
    return _fill(template.verification_block, {"query_fact": query_fact, "charge": charge})
