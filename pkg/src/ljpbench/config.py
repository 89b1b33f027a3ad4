"""Declarative experiment configuration: one YAML/JSON tree, strictly validated.

Defaults mirror the reference evaluation recipe: five samples at
temperature 0.8, shot counts 0..4 for both question forms, candidate pool
of 10, and 500/1000-token truncation for demonstration and query facts.
Secrets never live in the config file; the provider reads its API key from
the environment variable named by ``provider.api_key_env``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .corpus import SCHEMES
from .prompting import QUESTION_FORMS


class ConfigError(ValueError):
    """The configuration is malformed or incomplete."""


@dataclass(frozen=True)
class CorpusConfig:
    train: str = ""
    test: str = ""
    validation: str = ""
    format: str = "canonical"


@dataclass(frozen=True)
class SamplingConfig:
    train_per_label: int | None = None
    validation_per_label: int | None = None
    test_per_label: int | None = None
    seed: int = 42


@dataclass(frozen=True)
class Bm25Config:
    k1: float = 1.5
    b: float = 0.75
    scheme: str = "cjk_char"


@dataclass(frozen=True)
class CandidateConfig:
    pool_size: int = 10
    dedupe: bool = True
    inject_gold: bool = False


@dataclass(frozen=True)
class SettingsConfig:
    question_forms: tuple[str, ...] = ("open", "multi_choice")
    shots: tuple[int, ...] = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class DemoConfig:
    source: str = "retrieved"
    order: str = "similar_first"
    fixed_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class SimulationConfig:
    targets: tuple[float, ...] = ()
    patterns: tuple[str, ...] = ()
    n_shots: int = 1
    question_form: str = "open"


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "mock"
    mock: str = "echo_gold"
    constant_text: str = ""
    scripted_path: str = ""
    base_url: str = ""
    model: str = ""
    api_key_env: str = "LLM_API_KEY"
    supports_n: bool = True
    timeout: float = 60.0


@dataclass(frozen=True)
class GenerationConfig:
    n_samples: int = 5
    temperature: float = 0.8
    max_new_tokens: int = 128
    retry_attempts: int = 5
    retry_base_delay: float = 0.5
    normalize_scores: bool = False


@dataclass(frozen=True)
class TruncationConfig:
    demo_limit: int = 500
    query_limit: int = 1000
    counter_scheme: str = "cjk_char"


@dataclass(frozen=True)
class VerificationConfig:
    yes_markers: tuple[str, ...] = ("是", "yes")
    no_markers: tuple[str, ...] = ("否", "不", "no")


@dataclass(frozen=True)
class KnnConfig:
    k_range: tuple[int, ...] = (1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21)


@dataclass(frozen=True)
class RunConfig:
    output_dir: str = "runs_out"
    template: str = "zh"
    template_root: str = ""
    parallelism: int = 1


_SECTIONS: dict[str, type] = {
    "corpus": CorpusConfig,
    "sampling": SamplingConfig,
    "bm25": Bm25Config,
    "candidates": CandidateConfig,
    "settings": SettingsConfig,
    "demos": DemoConfig,
    "simulation": SimulationConfig,
    "provider": ProviderConfig,
    "generation": GenerationConfig,
    "truncation": TruncationConfig,
    "verification": VerificationConfig,
    "knn": KnnConfig,
    "run": RunConfig,
}


def _build_section(cls: type, data: Any, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {path!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys under {path!r}: {unknown}")
    kwargs = {
        key: tuple(value) if isinstance(value, list) else value
        for key, value in data.items()
    }
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {path!r}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    bm25: Bm25Config = field(default_factory=Bm25Config)
    candidates: CandidateConfig = field(default_factory=CandidateConfig)
    settings: SettingsConfig = field(default_factory=SettingsConfig)
    demos: DemoConfig = field(default_factory=DemoConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    truncation: TruncationConfig = field(default_factory=TruncationConfig)
    verification: VerificationConfig = field(default_factory=VerificationConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    run: RunConfig = field(default_factory=RunConfig)

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        unknown = sorted(set(data) - set(_SECTIONS))
        if unknown:
            raise ConfigError(f"unknown top-level keys: {unknown}")
        config = cls(**{
            name: _build_section(section_cls, data.get(name), name)
            for name, section_cls in _SECTIONS.items()
        })
        config.validate()
        return config

    def validate(self) -> None:
        if not self.corpus.train or not self.corpus.test:
            raise ConfigError("corpus.train and corpus.test are required")
        if self.corpus.format not in ("canonical", "cail"):
            raise ConfigError(f"unknown corpus format: {self.corpus.format!r}")
        if self.bm25.scheme not in SCHEMES or self.truncation.counter_scheme not in SCHEMES:
            raise ConfigError("unknown tokenization scheme")
        for form in self.settings.question_forms:
            if form not in QUESTION_FORMS:
                raise ConfigError(f"unknown question form: {form!r}")
        for shots in self.settings.shots:
            if not 0 <= shots <= 4:
                raise ConfigError("settings.shots entries must be in 0..4")
        if self.demos.source not in ("retrieved", "fixed", "simulated"):
            raise ConfigError(f"unknown demo source: {self.demos.source!r}")
        if self.demos.order not in ("similar_first", "similar_last"):
            raise ConfigError(f"unknown demo order: {self.demos.order!r}")
        if self.provider.kind not in ("mock", "http"):
            raise ConfigError(f"unknown provider kind: {self.provider.kind!r}")
        if self.provider.kind == "http" and not (self.provider.base_url and self.provider.model):
            raise ConfigError("http provider requires base_url and model")
        if self.generation.n_samples < 1:
            raise ConfigError("generation.n_samples must be >= 1")
        if self.generation.temperature < 0:
            raise ConfigError("generation.temperature must be >= 0")
        if self.truncation.demo_limit < 1 or self.truncation.query_limit < 1:
            raise ConfigError("truncation limits must be >= 1")
        for target in self.simulation.targets:
            if not 0.0 <= target <= 1.0:
                raise ConfigError("simulation targets must be in [0, 1]")
        for pattern in self.simulation.patterns:
            if len(pattern) > 4 or any(flag not in "TF" for flag in pattern):
                raise ConfigError(f"invalid simulation pattern: {pattern!r}")
        if self.simulation.question_form not in QUESTION_FORMS:
            raise ConfigError(f"unknown question form: {self.simulation.question_form!r}")
        if not 1 <= self.simulation.n_shots <= 4:
            raise ConfigError("simulation.n_shots must be in 1..4")
        if self.run.parallelism < 1:
            raise ConfigError("run.parallelism must be >= 1")

    def resolved(self) -> dict:
        """Full config tree with defaults applied (echoed into manifests)."""
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.resolved(), ensure_ascii=False, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _apply_override(tree: dict, dotted_key: str, raw_value: str) -> None:
    keys = dotted_key.split(".")
    node = tree
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override through non-mapping key {key!r}")
    node[keys[-1]] = yaml.safe_load(raw_value)


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Load a config file (YAML or JSON) and apply dotted-key overrides."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    data = data or {}
    for dotted_key, raw_value in (overrides or {}).items():
        _apply_override(data, dotted_key, raw_value)
    return ExperimentConfig.from_dict(data)
