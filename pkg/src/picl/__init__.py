"""Process in-context learning: confusion-triggered demonstration insertion
for streaming LLM reasoning, with static baselines and an evaluation harness."""

from .backend import (
    Backend,
    BackendError,
    BackendRequest,
    CannedCompletion,
    MockBackend,
    MockScript,
    MockScriptError,
    MockStep,
    OpenAICompletionsBackend,
    TokenStream,
    TransportError,
    load_mock_file,
)
from .config import ConfigError, ConfigViolation, EngineConfig, load_config, validate_config
from .confusion import (
    DetectionResult,
    build_detection_prompt,
    detect_confusion,
    parse_detection_response,
)
from .controller import (
    RunMode,
    build_static_prompt,
    build_zero_shot_prompt,
    extract_answer,
    render_insertion_block,
    run_picl,
    run_query,
    run_static,
    run_zero_shot,
    select_static_demos,
)
from .embedding import HttpEmbedder, TfidfEmbedder
from .harness import (
    Dataset,
    EvalReport,
    SweepTable,
    canonicalize_answer,
    evaluate,
    export_entropy,
    load_dataset,
    sweep,
)
from .pool import (
    DemonstrationPool,
    PoolError,
    PoolNotEmbeddedError,
    embed_pool,
    load_pool,
    pool_content_hash,
)
from .retrieval import (
    HttpReranker,
    LexicalReranker,
    RankedCandidate,
    RerankResult,
    bm25_retrieve,
    composite_input,
    cosine_similarity,
    rerank,
    retrieve_candidates,
)
from .types import (
    ConfusionSummary,
    Demonstration,
    GeneratedText,
    GenerationTranscript,
    InsertedDemos,
    InterventionRecord,
    Query,
    TokenCounts,
    TokenEvent,
    render_demonstration,
)
from .uncertainty import (
    EntropyProfile,
    EntropyReading,
    InterruptMatch,
    detect_interrupt,
    entropy_profile,
    interrupt_flags,
    shannon_entropy,
)

__version__ = "0.1.0"
