"""A fixed-budget, prompt-resident context map maintained from agent trajectories."""

from .cartographer import CartographerInput, build_cartographer_prompt, parse_cartographer_response, plan_edits
from .distiller import (
    CacheCandidate,
    DistillerOptions,
    DistillerReport,
    Trajectory,
    TrajectoryStep,
    build_distiller_prompt,
    distill,
    parse_distiller_response,
)
from .edits import EditKind, EditOp, EditOutcome, EditSet, apply_edits, dedup_candidates, validate_edit
from .evictor import EVICTION_TIER, BudgetInfeasibleError, Tag, TagDelta, apply_tags, evict_to_budget, eviction_order
from .jsonextract import ResponseParseError, extract_json_object
from .model import (
    ContextMap,
    ItemId,
    MapItem,
    SectionKind,
    approx_token_count,
    deserialize_map,
    dumps_map,
    init_map,
    loads_map,
    map_tokens,
    render_map,
    serialize_map,
)
from .policy import AgentRunError, PolicyConfig, UpdateRecord, run_policy, run_task, update_cycle
from .providers import ChatRequest, ChatResponse, HTTPProvider, Message, RecordingProvider, ReplayProvider

__version__ = "0.1.0"
