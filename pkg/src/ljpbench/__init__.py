"""Retrieval-augmented evaluation harness for legal charge prediction."""

from .bm25 import (
    Bm25Index,
    Bm25Params,
    PrecisionReport,
    RankedHit,
    build_index,
    index_cases,
    label_similarity,
    load_index,
    precision_at_k,
    retrieve,
    save_index,
    score,
)
from .config import ConfigError, ExperimentConfig, load_config
from .corpus import (
    Case,
    CorpusSplit,
    IngestError,
    LabelSet,
    TokenStream,
    build_split,
    ingest,
    make_counter,
    sample_balanced,
    tokenize,
    truncate,
    write_canonical,
)
from .evaluation import (
    HeatmapCell,
    RunResult,
    VerificationOutcome,
    VerificationReport,
    accuracy,
    heatmap,
    macro_f1,
    split_easy_hard,
    verification_metrics,
)
from .inference import UNPARSED, Prediction, map_samples, parse_yes_no
from .llm_gateway import (
    AuthenticationError,
    GenerationCache,
    GenRequest,
    GenResult,
    HttpChatProvider,
    ProviderError,
    RetryPolicy,
    TransientProviderError,
    generate,
    mock_provider,
)
from .prompting import (
    CandidateList,
    Demonstration,
    PromptError,
    PromptTemplate,
    TaskSetting,
    fixed_demos,
    inject_gold,
    load_template,
    make_candidates,
    render,
    select_demonstrations,
    verification_prompt,
)
from .retrieval_lab import (
    DemoAssignment,
    DifficultyRanking,
    SimPlan,
    knn_predict,
    plan_combination,
    rank_by_difficulty,
    simulate,
    tune_k,
)

__version__ = "0.1.0"
