"""Coverage-based demonstration selection for in-context learning.

Scores candidate demonstrations by how well they cover a test input's
salient aspects (terms, embedding dimensions, or contextual tokens),
selects informative sets greedily under a submodular coverage objective,
and renders few-shot prompts.
"""

from .corpus import (
    CandidatePool,
    EmbeddingStore,
    Instance,
    ParseRecord,
    Selection,
    load_embeddings,
    load_parses,
    load_pool,
    load_selections,
    validate_bundle,
    write_selections,
)
from .completion import EndpointConfig, complete_prompts
from .errors import ConfigError, DataError, DemoselectError
from .harness import (
    ExperimentConfig,
    RunReport,
    compare_report,
    coverage_audit,
    evaluate_predictions,
    exact_match,
    random_select,
    run_selection,
    substructure_recall,
)
from .promptkit import (
    BudgetPolicy,
    PromptTemplate,
    fit_budget,
    load_templates,
    order_for_prompt,
    render_prompt,
)
from .relevance import (
    MetricConfig,
    ScoredCandidate,
    Scorer,
    bert_score,
    bm25_score,
    cosine_score,
    rank_independent,
    token_weights,
)
from .setcover import (
    AspectDecomposition,
    CoverState,
    decompose,
    greedy_select,
    incremental_gain,
    setcov,
)
from .terms import (
    IdfTable,
    TermBag,
    TermScheme,
    idf_stats,
    ngram_bag,
    okapi_idf,
    subtree_bag,
    unigram_bag,
    whitespace_tokens,
)

__version__ = "1.0.0"

__all__ = [
    "AspectDecomposition",
    "BudgetPolicy",
    "CandidatePool",
    "ConfigError",
    "CoverState",
    "DataError",
    "DemoselectError",
    "EmbeddingStore",
    "EndpointConfig",
    "ExperimentConfig",
    "IdfTable",
    "Instance",
    "MetricConfig",
    "ParseRecord",
    "PromptTemplate",
    "RunReport",
    "ScoredCandidate",
    "Scorer",
    "Selection",
    "TermBag",
    "TermScheme",
    "bert_score",
    "bm25_score",
    "compare_report",
    "complete_prompts",
    "cosine_score",
    "coverage_audit",
    "decompose",
    "evaluate_predictions",
    "exact_match",
    "fit_budget",
    "greedy_select",
    "idf_stats",
    "incremental_gain",
    "load_embeddings",
    "load_parses",
    "load_pool",
    "load_selections",
    "load_templates",
    "ngram_bag",
    "okapi_idf",
    "order_for_prompt",
    "random_select",
    "rank_independent",
    "render_prompt",
    "run_selection",
    "setcov",
    "subtree_bag",
    "substructure_recall",
    "token_weights",
    "unigram_bag",
    "validate_bundle",
    "whitespace_tokens",
    "write_selections",
]
