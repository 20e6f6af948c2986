"""Deterministic orchestration harness for multimodal search agents.

The package covers the full offline loop around a tool-using agent: the
tag protocol its turns are written in, the budgeted multi-turn episode
engine, simulated search tools over a synthetic world, masked training
corpus generation, group-relative policy optimization arithmetic, and a
rule-based answer judge with usage statistics.
"""

from .datagen import (
    InsufficientPool,
    MaskAuditError,
    MaskedConversation,
    MaskSpan,
    Rejection,
    SeedItem,
    audit_sft_corpus,
    audit_sft_record,
    balance_sample,
    build_masked_conversation,
    derive_mask_spans,
    emit_sft_corpus,
    filter_by_ground_truth,
    generate_example,
    load_sft_corpus,
    read_seed_items,
    scripted_oracle,
    synthesize_items,
    write_seed_items,
)
from .engine import (
    Answered,
    Budget,
    BudgetExhausted,
    EngineError,
    Episode,
    EpisodeState,
    EpisodeStatus,
    InformationBlock,
    InformationSource,
    Ledger,
    MaxTurnsReached,
    Policy,
    ProtocolViolation,
    ScriptedPolicy,
    Tools,
    ToolError,
    TurnRecord,
    count_tokens,
    dumps_episode,
    loads_episode,
    read_episodes_jsonl,
    run_episode,
    step,
    write_episodes_jsonl,
)
from .evaluation import (
    DEFAULT_ALIASES,
    DEFAULT_UNITS,
    EvaluationReport,
    JudgeBackendError,
    MatchRule,
    ToolUsageStats,
    UnitEntry,
    Verdict,
    accuracy,
    aggregate_stats,
    evaluate,
    judge,
    judge_deterministic,
    normalize_tokens,
)
from .grpo import (
    GrpoConfig,
    GrpoReport,
    RewardBreakdown,
    RolloutGroup,
    Trajectory,
    composite_reward,
    group_advantages,
    grpo_objective,
    read_groups_jsonl,
    reward_trajectory,
    write_groups_jsonl,
)
from .simtools import (
    BoundingBox,
    Document,
    EmptyQuery,
    Entity,
    GroundingFailure,
    KnowledgeBase,
    SceneImage,
    SceneRegion,
    SimulatedToolSuite,
    UnknownImage,
    derive_rng,
    generate_kb,
    ground,
    image_search,
    kb_from_dict,
    kb_to_dict,
    load_kb,
    save_kb,
    summarize,
    text_search,
)
from .tags import (
    AgentAction,
    Answer,
    Diagnostic,
    DiagnosticKind,
    Directive,
    ImageSearchCrop,
    ImageSearchWhole,
    ParseOutcome,
    TextSearch,
    format_score,
    parse_turn,
    render_action,
    render_information,
)

__version__ = "0.1.0"
