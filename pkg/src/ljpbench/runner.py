"""End-to-end experiment execution and report-bundle writing.

All artifacts are deterministic: no timestamps, sorted keys, fixed float
formatting, and case processing that is aggregated after a sort by case
id, so a rerun of the same configuration against a warm generation cache
reproduces every report file byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import bm25, evaluation, prompting, retrieval_lab
from .config import ConfigError, ExperimentConfig
from .corpus import (
    Case,
    CorpusSplit,
    LabelSet,
    build_split,
    ingest,
    make_counter,
    truncate,
    write_canonical,
)
from .evaluation import RunResult, VerificationOutcome
from .inference import UNPARSED, Prediction, map_samples, parse_yes_no
from .llm_gateway import (
    GenerationCache,
    GenRequest,
    HttpChatProvider,
    ProviderError,
    RetryPolicy,
    generate,
    mock_provider,
)
from .prompting import CandidateList, TaskSetting, load_template
from .retrieval_lab import SimPlan

RESULTS_SCHEMA = "ljpbench.results.v1"
MANIFEST_SCHEMA = "ljpbench.manifest.v1"
SUMMARY_SCHEMA = "ljpbench.summary.v1"
GROUPS_SCHEMA = "ljpbench.groups.v1"
PARADOX_SCHEMA = "ljpbench.paradox.v1"
HEATMAP_SCHEMA = "ljpbench.heatmap.v1"
VERIFICATION_SCHEMA = "ljpbench.verification.v1"


@dataclass
class CaseOutcome:
    case_id: str
    prompt: str
    samples: tuple[str, ...] | None
    prediction: Prediction | None
    candidates: CandidateList | None
    error: str | None = None


@dataclass
class Workspace:
    """Everything a command needs, loaded once from the configuration."""

    config: ExperimentConfig
    split: CorpusSplit
    label_set: LabelSet
    index: bm25.Bm25Index
    template: prompting.PromptTemplate
    provider: object | None
    cache: GenerationCache
    retry: RetryPolicy
    counter: Callable[[str], int]
    train_labels: dict[str, str]
    train_facts: dict[str, str]
    train_by_id: dict[str, Case]
    _hits: dict[str, list[bm25.RankedHit]] = field(default_factory=dict)

    def hits(self, case: Case) -> list[bm25.RankedHit]:
        """Full-depth ranking for one query, cached across settings."""
        cached = self._hits.get(case.id)
        if cached is None:
            cached = bm25.retrieve(self.index, case.fact, self.index.n_docs)
            self._hits[case.id] = cached
        return cached


def load_corpus(config: ExperimentConfig) -> CorpusSplit:
    corpus, sampling = config.corpus, config.sampling
    train_pool = ingest(corpus.train, corpus.format)
    test_pool = ingest(corpus.test, corpus.format)
    validation_pool = ingest(corpus.validation, corpus.format) if corpus.validation else None
    return build_split(
        train_pool,
        test_pool,
        validation_pool,
        train_per_label=sampling.train_per_label,
        validation_per_label=sampling.validation_per_label,
        test_per_label=sampling.test_per_label,
        seed=sampling.seed,
    )


def _build_provider(config: ExperimentConfig, template, split: CorpusSplit):
    provider = config.provider
    if provider.kind == "http":
        return HttpChatProvider(
            base_url=provider.base_url,
            model=provider.model,
            api_key_env=provider.api_key_env,
            supports_n=provider.supports_n,
            timeout=provider.timeout,
        )
    kind = provider.mock
    if kind == "constant":
        return mock_provider("constant", text=provider.constant_text)
    if kind == "scripted":
        if not provider.scripted_path:
            raise ConfigError("scripted mock requires provider.scripted_path")
        fixture = json.loads(Path(provider.scripted_path).read_text(encoding="utf-8"))
        return mock_provider("scripted", fixture=fixture)
    if kind == "echo_gold":
        gold = {case.id: case.charge for case in split.test}
        return mock_provider("echo_gold", gold_by_case=gold)
    if kind in ("first_candidate", "echo_first_demo"):
        return mock_provider(kind, template=template)
    if kind == "yes_if_gold":
        return mock_provider("yes_if_gold")
    raise ConfigError(f"unknown mock provider: {kind!r}")


def load_workspace(config: ExperimentConfig, need_provider: bool = True) -> Workspace:
    split = load_corpus(config)
    label_set = LabelSet.from_cases([*split.train, *split.validation, *split.test])
    params = bm25.Bm25Params(k1=config.bm25.k1, b=config.bm25.b)
    index = bm25.index_cases(split.train, params, config.bm25.scheme)
    template = load_template(config.run.template, config.run.template_root or None)
    provider = _build_provider(config, template, split) if need_provider else None
    return Workspace(
        config=config,
        split=split,
        label_set=label_set,
        index=index,
        template=template,
        provider=provider,
        cache=GenerationCache(Path(config.run.output_dir) / "cache"),
        retry=RetryPolicy(
            attempts=config.generation.retry_attempts,
            base_delay=config.generation.retry_base_delay,
        ),
        counter=make_counter(config.truncation.counter_scheme),
        train_labels={case.id: case.charge for case in split.train},
        train_facts={case.id: case.fact for case in split.train},
        train_by_id={case.id: case for case in split.train},
    )


# --------------------------------------------------------------------------
# Per-case pipeline


def _case_outcome(
    ws: Workspace,
    setting: TaskSetting,
    case: Case,
    plan: SimPlan | None = None,
    fixed_pool: Sequence[Case] | None = None,
) -> CaseOutcome:
    cfg = ws.config
    candidates = None
    hits = None
    if setting.question_form == "multi_choice":
        hits = ws.hits(case)
        candidates = prompting.make_candidates(
            hits,
            ws.train_labels,
            cfg.candidates.pool_size,
            gold=case.charge,
            dedupe=cfg.candidates.dedupe,
        )
        if cfg.candidates.inject_gold:
            candidates = prompting.inject_gold(candidates, case.charge)
    demos: list[prompting.Demonstration] = []
    if setting.n_shots:
        if setting.demo_source == "retrieved":
            hits = hits if hits is not None else ws.hits(case)
            demos = prompting.select_demonstrations(
                hits,
                ws.train_labels,
                ws.train_facts,
                setting.n_shots,
                candidates,
                cfg.truncation.demo_limit,
                ws.counter,
            )
        elif setting.demo_source == "fixed":
            demos = prompting.fixed_demos(
                fixed_pool or (), setting.n_shots, cfg.truncation.demo_limit, ws.counter
            )
        else:
            demos = prompting.plan_demonstrations(
                plan, case.id, ws.train_by_id, cfg.truncation.demo_limit, ws.counter
            )
        if cfg.demos.order == "similar_last":
            demos = list(reversed(demos))
    query_fact = truncate(case.fact, cfg.truncation.query_limit, ws.counter)
    prompt = prompting.render(ws.template, setting, query_fact, demos, candidates)
    request = GenRequest(
        prompt=prompt,
        n_samples=cfg.generation.n_samples,
        temperature=cfg.generation.temperature,
        max_new_tokens=cfg.generation.max_new_tokens,
        model_id=cfg.provider.model,
        meta={
            "case_id": case.id,
            "gold": case.charge,
            "candidates": list(candidates.labels) if candidates else None,
            "demo_labels": [demo.charge for demo in demos],
        },
    )
    try:
        result = generate(ws.provider, request, ws.cache, ws.retry)
    except ProviderError as exc:
        return CaseOutcome(case.id, prompt, None, None, candidates, error=str(exc))
    prediction = map_samples(
        result.samples,
        ws.label_set,
        case_id=case.id,
        params=ws.index.params,
        scheme=cfg.bm25.scheme,
        normalize=cfg.generation.normalize_scores,
    )
    return CaseOutcome(case.id, prompt, result.samples, prediction, candidates)


def _map_cases(fn: Callable[[Case], CaseOutcome], cases: Sequence[Case], parallelism: int):
    if parallelism <= 1:
        return [fn(case) for case in cases]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, cases))


def _run_setting(
    ws: Workspace,
    setting: TaskSetting,
    run_key: str,
    plan: SimPlan | None = None,
    fixed_pool: Sequence[Case] | None = None,
) -> tuple[RunResult, list[CaseOutcome]]:
    cases = sorted(ws.split.test, key=lambda case: case.id)
    outcomes = _map_cases(
        lambda case: _case_outcome(ws, setting, case, plan, fixed_pool),
        cases,
        ws.config.run.parallelism,
    )
    gold = {case.id: case.charge for case in cases}
    predictions = tuple(o.prediction for o in outcomes if o.prediction is not None)
    n_failed = sum(1 for o in outcomes if o.error)
    metadata = {
        "provider": getattr(ws.provider, "provider_id", "none"),
        "template_hash": ws.template.fingerprint(),
        "seed": ws.config.sampling.seed,
        "candidate_pool_size": ws.config.candidates.pool_size,
        "demo_order": ws.config.demos.order,
    }
    if plan is not None:
        metadata["plan_hash"] = _plan_hash(plan)
    if predictions:
        result = RunResult(
            run_id=run_key,
            setting=setting,
            predictions=predictions,
            accuracy=evaluation.accuracy(predictions, gold),
            macro_f1=evaluation.macro_f1(predictions, gold, ws.label_set),
            mean_consistency=evaluation.mean_consistency(predictions),
            n_failed=n_failed,
            n_unparsed=sum(1 for pred in predictions if pred.label == UNPARSED),
            metadata=metadata,
        )
    else:
        result = RunResult(
            run_id=run_key,
            setting=setting,
            predictions=(),
            accuracy=0.0,
            macro_f1=0.0,
            mean_consistency=0.0,
            n_failed=n_failed,
            metadata=metadata,
        )
    return result, outcomes


def _plan_hash(plan: SimPlan) -> str:
    return hashlib.sha256(plan.to_json().encode("utf-8")).hexdigest()[:16]


# --------------------------------------------------------------------------
# Deterministic artifact writing


def _dump_json(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _csv_text(schema: str, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buffer = io.StringIO()
    buffer.write(f"# schema={schema}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def _pct(value: float) -> str:
    return f"{value * 100:.2f}"


def _run_entry(result: RunResult, groups: list[dict] | None = None) -> dict:
    entry = {
        "run_id": result.run_id,
        "setting": {
            "question_form": result.setting.question_form,
            "n_shots": result.setting.n_shots,
            "demo_source": result.setting.demo_source,
        },
        "accuracy": result.accuracy,
        "macro_f1": result.macro_f1,
        "mean_consistency": result.mean_consistency,
        "n_cases": len(result.predictions),
        "n_failed": result.n_failed,
        "n_unparsed": result.n_unparsed,
        "metadata": result.metadata,
    }
    if groups is not None:
        entry["groups"] = groups
    return entry


def _prediction_rows(run_key: str, outcomes: Sequence[CaseOutcome]) -> list[str]:
    rows = []
    for outcome in outcomes:
        if outcome.prediction is None:
            continue
        pred = outcome.prediction
        rows.append(
            json.dumps(
                {
                    "run": run_key,
                    "case_id": pred.case_id,
                    "label": pred.label,
                    "consistency": pred.consistency,
                    "per_sample_labels": list(pred.per_sample_labels),
                    "top_scores": [[label, score] for label, score in pred.top_scores(5)],
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )
    return rows


def _write_case_artifacts(bundle: Path, run_key: str, outcomes: Sequence[CaseOutcome]) -> None:
    for outcome in outcomes:
        _write(bundle / "prompts" / run_key / f"{outcome.case_id}.txt", outcome.prompt)
        payload: dict = {"case_id": outcome.case_id}
        if outcome.samples is not None:
            payload["samples"] = list(outcome.samples)
        if outcome.error:
            payload["error"] = outcome.error
        _write(bundle / "generations" / run_key / f"{outcome.case_id}.json", _dump_json(payload))


def _group_rows(outcomes: Sequence[CaseOutcome], gold: dict[str, str]) -> list[dict]:
    scored = [o for o in outcomes if o.prediction is not None and o.candidates is not None]
    if not scored:
        return []
    easy, hard = evaluation.split_easy_hard(
        [o.case_id for o in scored], [o.candidates for o in scored]
    )
    by_id = {o.case_id: o for o in scored}
    rows = []
    for name, ids in (("easy", easy), ("hard", hard)):
        if not ids:
            continue
        correct = sum(1 for case_id in ids if by_id[case_id].prediction.label == gold[case_id])
        rows.append({"group": name, "n": len(ids), "accuracy": correct / len(ids)})
    return rows


def _write_manifest(bundle: Path, command: str, ws: Workspace, extra: dict | None = None) -> None:
    artifacts = sorted(
        str(path.relative_to(bundle).as_posix())
        for path in bundle.rglob("*")
        if path.is_file() and path.name != "manifest.json"
    )
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "config": ws.config.resolved(),
        "config_fingerprint": ws.config.fingerprint(),
        "corpus_hash": ws.index.corpus_hash,
        "template_hash": ws.template.fingerprint(),
        "label_count": len(ws.label_set),
        "split_sizes": {
            "train": len(ws.split.train),
            "validation": len(ws.split.validation),
            "test": len(ws.split.test),
        },
        "decisions": {
            "score_tie_break": "descending score, then insertion order",
            "true_slot_count": "ceil(target_p1 * n_tests)",
            "demo_order": ws.config.demos.order,
            "candidate_order": "retrieval first-appearance",
            "candidate_dedupe": ws.config.candidates.dedupe,
        },
        "artifacts": artifacts,
    }
    if extra:
        manifest.update(extra)
    _write(bundle / "manifest.json", _dump_json(manifest))


def _summary_csv(config: ExperimentConfig, primary: dict[tuple[str, int], RunResult]) -> str:
    shot_columns = sorted(set(config.settings.shots))
    header = ["metric", "question_form"] + [f"{shots}shot" for shots in shot_columns]
    rows = []
    for metric in ("accuracy", "macro_f1"):
        for form in config.settings.question_forms:
            row = [metric, form]
            for shots in shot_columns:
                result = primary.get((form, shots))
                row.append(_pct(getattr(result, metric)) if result is not None else "")
            rows.append(row)
    return _csv_text(SUMMARY_SCHEMA, header, rows)


def _groups_csv(run_entries: Sequence[dict]) -> str:
    rows = []
    for entry in run_entries:
        for group in entry.get("groups", ()):  # only multi-choice runs carry groups
            rows.append([entry["run_id"], group["group"], group["n"], f"{group['accuracy']:.6f}"])
    return _csv_text(GROUPS_SCHEMA, ["run", "group", "n", "accuracy"], rows)


# --------------------------------------------------------------------------
# Commands


def run_index(config: ExperimentConfig) -> Path:
    """Build (or reuse) the persisted, content-addressed training index."""
    split = load_corpus(config)
    params = bm25.Bm25Params(k1=config.bm25.k1, b=config.bm25.b)
    docs = [(case.id, case.fact) for case in split.train]
    corpus_hash = bm25.corpus_fingerprint(docs, params, config.bm25.scheme)
    index_dir = Path(config.run.output_dir) / "index"
    artifact = index_dir / f"bm25-{corpus_hash[:16]}.json"
    if not artifact.exists():
        index = bm25.build_index(docs, params, config.bm25.scheme)
        bm25.save_index(index, artifact)
    _write(
        index_dir / "manifest.json",
        _dump_json(
            {
                "schema": MANIFEST_SCHEMA,
                "command": "index",
                "artifact": artifact.name,
                "corpus_hash": corpus_hash,
                "n_docs": len(docs),
                "params": {"k1": params.k1, "b": params.b},
                "scheme": config.bm25.scheme,
            }
        ),
    )
    return artifact


def run_sample(config: ExperimentConfig) -> Path:
    """Materialize the balanced splits as canonical JSONL files."""
    split = load_corpus(config)
    out = Path(config.run.output_dir) / "corpus"
    write_canonical(split.train, out / "train.jsonl")
    write_canonical(split.validation, out / "validation.jsonl")
    write_canonical(split.test, out / "test.jsonl")
    _write(out / "counts.json", _dump_json(split.per_label_counts))
    return out


def _resolve_fixed_pool(ws: Workspace) -> list[Case]:
    pool = []
    for case_id in ws.config.demos.fixed_ids:
        case = ws.train_by_id.get(case_id)
        if case is None:
            raise ConfigError(f"fixed demo id {case_id!r} not found in the train split")
        pool.append(case)
    return pool


def run_matrix(config: ExperimentConfig) -> Path:
    """Execute the full question-form x shots matrix and write the bundle."""
    ws = load_workspace(config)
    bundle = Path(config.run.output_dir) / "runs" / f"run-{config.fingerprint()}"
    fixed_pool = _resolve_fixed_pool(ws) if config.demos.source == "fixed" else []
    if config.demos.source == "fixed" and any(config.settings.shots) and not fixed_pool:
        raise ConfigError("demos.source=fixed requires demos.fixed_ids")
    gold = {case.id: case.charge for case in ws.split.test}

    run_entries: list[dict] = []
    prediction_lines: list[str] = []
    failures: list[dict] = []
    primary: dict[tuple[str, int], RunResult] = {}

    for form in config.settings.question_forms:
        for shots in sorted(set(config.settings.shots)):
            source = config.demos.source if shots else "retrieved"
            setting = TaskSetting(form, shots, source)
            if source == "fixed" and shots == 1 and len(fixed_pool) > 1:
                sub_results = []
                for i, pool_case in enumerate(fixed_pool):
                    key = f"{setting.key}_p{i}"
                    result, outcomes = _run_setting(ws, setting, key, fixed_pool=[pool_case])
                    sub_results.append(result)
                    _collect(bundle, key, result, outcomes, gold, run_entries, prediction_lines, failures)
                averaged = RunResult(
                    run_id=setting.key,
                    setting=setting,
                    predictions=(),
                    accuracy=sum(r.accuracy for r in sub_results) / len(sub_results),
                    macro_f1=sum(r.macro_f1 for r in sub_results) / len(sub_results),
                    mean_consistency=sum(r.mean_consistency for r in sub_results) / len(sub_results),
                    n_failed=sum(r.n_failed for r in sub_results),
                    n_unparsed=sum(r.n_unparsed for r in sub_results),
                    metadata={"averaged_over": [r.run_id for r in sub_results]},
                )
                run_entries.append(_run_entry(averaged))
                primary[(form, shots)] = averaged
            else:
                result, outcomes = _run_setting(ws, setting, setting.key, fixed_pool=fixed_pool)
                _collect(bundle, setting.key, result, outcomes, gold, run_entries, prediction_lines, failures)
                primary[(form, shots)] = result

    run_entries.sort(key=lambda entry: entry["run_id"])
    failures.sort(key=lambda f: (f["run"], f["case_id"]))
    _write(bundle / "predictions.jsonl", "\n".join(sorted(prediction_lines)) + "\n" if prediction_lines else "")
    _write(
        bundle / "results.json",
        _dump_json(
            {
                "schema": RESULTS_SCHEMA,
                "command": "run",
                "config": config.resolved(),
                "runs": run_entries,
                "failures": failures,
            }
        ),
    )
    _write(bundle / "summary.csv", _summary_csv(config, primary))
    _write(bundle / "groups.csv", _groups_csv(run_entries))
    _write_manifest(bundle, "run", ws)
    return bundle


def _collect(
    bundle: Path,
    run_key: str,
    result: RunResult,
    outcomes: list[CaseOutcome],
    gold: dict[str, str],
    run_entries: list[dict],
    prediction_lines: list[str],
    failures: list[dict],
) -> None:
    groups = _group_rows(outcomes, gold) if result.setting.question_form == "multi_choice" else None
    run_entries.append(_run_entry(result, groups))
    prediction_lines.extend(_prediction_rows(run_key, outcomes))
    failures.extend(
        {"run": run_key, "case_id": o.case_id, "error": o.error} for o in outcomes if o.error
    )
    _write_case_artifacts(bundle, run_key, outcomes)


def run_simulation(config: ExperimentConfig) -> Path:
    """Sweep simulated IR capabilities (and optional T/F patterns)."""
    sim = config.simulation
    if not sim.targets:
        raise ConfigError("simulation.targets must not be empty")
    ws = load_workspace(config)
    bundle = Path(config.run.output_dir) / "runs" / f"simulate-{config.fingerprint()}"
    gold = {case.id: case.charge for case in ws.split.test}
    ranking = retrieval_lab.rank_by_difficulty(ws.index, ws.split.test, ws.train_labels)

    run_entries: list[dict] = []
    prediction_lines: list[str] = []
    failures: list[dict] = []
    paradox_rows: list[dict] = []

    for target in sim.targets:
        plan = retrieval_lab.simulate(
            ws.index, ws.split.test, ws.train_labels, ranking, target, n_shots=sim.n_shots
        )
        key = f"target_{target:.2f}"
        _write(bundle / "plans" / f"{key}.json", plan.to_json() + "\n")
        setting = TaskSetting(sim.question_form, sim.n_shots, "simulated")
        result, outcomes = _run_setting(ws, setting, key, plan=plan)
        _collect(bundle, key, result, outcomes, gold, run_entries, prediction_lines, failures)
        ir_hits = sum(
            1
            for case_id, slots in plan.assignments.items()
            if ws.train_labels[slots[0].demo_id] == gold[case_id]
        )
        paradox_rows.append(
            {
                "target": target,
                "realized_p1": plan.realized_p1(),
                "ir_accuracy": ir_hits / len(plan.assignments),
                "llm_accuracy": result.accuracy,
                "run_id": key,
            }
        )

    crossover = next(
        (row["target"] for row in paradox_rows if row["ir_accuracy"] > row["llm_accuracy"]),
        None,
    )

    heatmap_cells: list[dict] = []
    if sim.patterns:
        by_pattern: dict[str, RunResult] = {}
        for pattern in sim.patterns:
            key = f"pattern_{pattern or 'base'}"
            if pattern:
                plan = retrieval_lab.plan_combination(
                    ws.index, ws.split.test, ws.train_labels, [flag == "T" for flag in pattern]
                )
                _write(bundle / "plans" / f"{key}.json", plan.to_json() + "\n")
                setting = TaskSetting(sim.question_form, len(pattern), "simulated")
                result, outcomes = _run_setting(ws, setting, key, plan=plan)
            else:
                setting = TaskSetting(sim.question_form, 0, "retrieved")
                result, outcomes = _run_setting(ws, setting, key)
            _collect(bundle, key, result, outcomes, gold, run_entries, prediction_lines, failures)
            by_pattern[pattern] = result
        heatmap_cells = [
            {
                "existing_pattern": cell.existing_pattern,
                "added": cell.added,
                "delta_pp": cell.delta,
                "acc_from": cell.acc_from,
                "acc_to": cell.acc_to,
            }
            for cell in evaluation.heatmap(by_pattern)
        ]

    run_entries.sort(key=lambda entry: entry["run_id"])
    failures.sort(key=lambda f: (f["run"], f["case_id"]))
    _write(bundle / "predictions.jsonl", "\n".join(sorted(prediction_lines)) + "\n" if prediction_lines else "")
    _write(
        bundle / "results.json",
        _dump_json(
            {
                "schema": RESULTS_SCHEMA,
                "command": "simulate",
                "config": config.resolved(),
                "runs": run_entries,
                "failures": failures,
                "paradox": paradox_rows,
                "crossover_target": crossover,
                "heatmap": heatmap_cells,
            }
        ),
    )
    _write(bundle / "paradox.csv", _paradox_csv(paradox_rows))
    if heatmap_cells:
        _write(bundle / "heatmap.csv", _heatmap_csv(heatmap_cells))
    _write_manifest(bundle, "simulate", ws)
    return bundle


def _paradox_csv(rows: Sequence[dict]) -> str:
    return _csv_text(
        PARADOX_SCHEMA,
        ["target", "realized_p1", "ir_accuracy", "llm_accuracy"],
        [
            [f"{r['target']:.2f}", f"{r['realized_p1']:.6f}", f"{r['ir_accuracy']:.6f}", f"{r['llm_accuracy']:.6f}"]
            for r in rows
        ],
    )


def _heatmap_csv(cells: Sequence[dict]) -> str:
    return _csv_text(
        HEATMAP_SCHEMA,
        ["existing_pattern", "added", "delta_pp", "acc_from", "acc_to"],
        [
            [
                c["existing_pattern"],
                c["added"],
                f"{c['delta_pp']:.4f}",
                f"{c['acc_from']:.6f}",
                f"{c['acc_to']:.6f}",
            ]
            for c in cells
        ],
    )


def run_knn(config: ExperimentConfig) -> dict:
    """BM25 Precision@1, tuned k, and kNN accuracy on the test split."""
    ws = load_workspace(config, need_provider=False)
    if not ws.split.validation:
        raise ConfigError("knn tuning requires a validation split")
    report = bm25.precision_at_k(ws.index, ws.split.test, ws.train_labels, k=1)
    best_k, accuracy_by_k = retrieval_lab.tune_k(
        ws.index, ws.split.validation, ws.train_labels, list(config.knn.k_range)
    )
    correct = sum(
        1
        for case in ws.split.test
        if retrieval_lab.knn_predict(ws.index, case, ws.train_labels, best_k) == case.charge
    )
    results = {
        "schema": RESULTS_SCHEMA,
        "command": "knn",
        "p_at_1": report.p_at_1,
        "best_k": best_k,
        "knn_accuracy": correct / len(ws.split.test),
        "validation_accuracy_by_k": {str(k): v for k, v in sorted(accuracy_by_k.items())},
        "k_range": list(config.knn.k_range),
        "n_test": len(ws.split.test),
        "n_validation": len(ws.split.validation),
    }
    bundle = Path(config.run.output_dir) / "runs" / f"knn-{config.fingerprint()}"
    _write(bundle / "results.json", _dump_json({**results, "config": config.resolved()}))
    _write_manifest(bundle, "knn", ws)
    return results


def run_verification(config: ExperimentConfig) -> Path:
    """One yes/no generation per (case, candidate-or-gold charge)."""
    ws = load_workspace(config)
    bundle = Path(config.run.output_dir) / "runs" / f"verify-{config.fingerprint()}"
    cases = sorted(ws.split.test, key=lambda case: case.id)
    outcomes: list[VerificationOutcome] = []
    rows: list[list] = []
    failures: list[dict] = []
    for case in cases:
        hits = ws.hits(case)
        candidates = prompting.make_candidates(
            hits, ws.train_labels, ws.config.candidates.pool_size, gold=case.charge
        )
        charges = prompting.inject_gold(candidates, case.charge).labels
        query_fact = truncate(case.fact, config.truncation.query_limit, ws.counter)
        for i, charge in enumerate(charges):
            prompt = prompting.verification_prompt(ws.template, query_fact, charge)
            request = GenRequest(
                prompt=prompt,
                n_samples=config.generation.n_samples,
                temperature=config.generation.temperature,
                max_new_tokens=config.generation.max_new_tokens,
                model_id=config.provider.model,
                meta={"case_id": case.id, "charge": charge, "gold": case.charge},
            )
            _write(bundle / "prompts" / case.id / f"{i:02d}.txt", prompt)
            try:
                result = generate(ws.provider, request, ws.cache, ws.retry)
            except ProviderError as exc:
                failures.append({"case_id": case.id, "charge": charge, "error": str(exc)})
                continue
            answer = parse_yes_no(
                result.samples,
                config.verification.yes_markers,
                config.verification.no_markers,
            )
            outcome = VerificationOutcome(
                case_id=case.id,
                charge=charge,
                answer=answer,
                is_gold=charge == case.charge,
            )
            outcomes.append(outcome)
            rows.append([case.id, charge, "1" if outcome.is_gold else "0", answer])
            _write(
                bundle / "generations" / case.id / f"{i:02d}.json",
                _dump_json({"charge": charge, "samples": list(result.samples)}),
            )
    report = evaluation.verification_metrics(outcomes)
    _write(
        bundle / "verification.csv",
        _csv_text(VERIFICATION_SCHEMA, ["case_id", "charge", "is_gold", "answer"], rows),
    )
    _write(
        bundle / "results.json",
        _dump_json(
            {
                "schema": RESULTS_SCHEMA,
                "command": "verify",
                "config": config.resolved(),
                "detection_recall": report.detection_recall,
                "detection_precision": report.detection_precision,
                "n_gold": report.n_gold,
                "n_yes": report.n_yes,
                "n_outcomes": report.n_outcomes,
                "failures": failures,
            }
        ),
    )
    _write_manifest(bundle, "verify", ws)
    return bundle


def run_report(run_dir: str | Path) -> Path:
    """Regenerate the CSV reports of a completed bundle from results.json."""
    bundle = Path(run_dir)
    results = json.loads((bundle / "results.json").read_text(encoding="utf-8"))
    if results.get("schema") != RESULTS_SCHEMA:
        raise ValueError(f"unrecognized results schema in {bundle}")
    config = ExperimentConfig.from_dict(results["config"])
    if results.get("command") == "run":
        primary: dict[tuple[str, int], RunResult] = {}
        for entry in results["runs"]:
            setting = TaskSetting(
                entry["setting"]["question_form"],
                entry["setting"]["n_shots"],
                entry["setting"]["demo_source"],
            )
            if entry["run_id"] != setting.key:
                continue  # sub-runs never feed the grid
            primary[(setting.question_form, setting.n_shots)] = RunResult(
                run_id=entry["run_id"],
                setting=setting,
                predictions=(),
                accuracy=entry["accuracy"],
                macro_f1=entry["macro_f1"],
                mean_consistency=entry["mean_consistency"],
            )
        _write(bundle / "summary.csv", _summary_csv(config, primary))
        _write(bundle / "groups.csv", _groups_csv(results["runs"]))
    if results.get("command") == "simulate":
        _write(bundle / "paradox.csv", _paradox_csv(results["paradox"]))
        if results.get("heatmap"):
            _write(bundle / "heatmap.csv", _heatmap_csv(results["heatmap"]))
    return bundle
