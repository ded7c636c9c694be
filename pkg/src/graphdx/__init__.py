"""graphdx: knowledge-graph-augmented retrieval and diagnosis engine.

The package builds a four-tier diagnostic knowledge graph from an EHR
corpus, matches patient manifestations onto it, retrieves similar records,
assembles a structured prompt for a chat backend, and refines the diagnosis
through targeted follow-up questions.
"""

from .backends import (
    BackendError,
    ChatExchange,
    MockChatBackend,
    MockEmbeddingBackend,
    RecordingChat,
    exchange_key,
    make_backends,
)
from .build import (
    BuildError,
    CanonicalDiseaseMap,
    EhrRecord,
    HierarchyAssignment,
    aggregate_hierarchy,
    augment_manifestations,
    build_disease_kg,
    cluster_diseases,
    load_corpus,
    save_corpus,
)
from .config import AppConfig, ConfigError, load_config
from .engine import (
    ConsultationSession,
    DiagnosisReport,
    EngineError,
    Pipeline,
    ReportParseError,
    assemble_prompt,
    parse_report,
)
from .kg import (
    DiagnosticKG,
    FeatureKind,
    GraphError,
    KgEdge,
    KgNode,
    Level,
    Relation,
    ancestors,
    graph_equal,
    node_id,
    subgraph_under,
    validate,
)
from .matching import (
    DecomposeError,
    DifferenceSet,
    FeatureMatch,
    MatchConfig,
    PatientQuery,
    decompose,
    extract_differences,
    match_features,
    prepare_query,
    vote_subcategory,
)
from .questions import (
    MaskingConfig,
    Question,
    discriminability,
    generate_questions,
    mask_features,
    prune_query,
    select_question_features,
)
from .retrieval import (
    DocumentIndex,
    RetrievedContext,
    ingest,
    load_index,
    retrieve,
    save_index,
)

__version__ = "0.1.0"
