"""Score accumulation from run tags and budget enforcement by whole-item eviction."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, replace
from typing import Mapping

from .model import (
    ContextMap,
    ItemId,
    MapError,
    MapItem,
    SectionKind,
    TokenCounter,
    approx_token_count,
    map_tokens,
)

logger = logging.getLogger(__name__)


class Tag(str, enum.Enum):
    HELPFUL = "helpful"
    HARMFUL = "harmful"
    NEUTRAL = "neutral"
    STALE = "stale"


@dataclass(frozen=True)
class TagDelta:
    helpful: int = 1
    neutral: int = 0
    harmful: int = -1
    stale: int = -2

    def __post_init__(self):
        if not (self.helpful > 0 and self.harmful < 0 and self.stale <= self.harmful and self.neutral == 0):
            raise ValueError(
                "tag delta must satisfy helpful > 0, harmful < 0, stale <= harmful, neutral == 0"
            )

    def __getitem__(self, tag: Tag) -> int:
        return getattr(self, Tag(tag).value)


# Lower tiers are evicted first; roadmap and understanding share the top tier.
EVICTION_TIER: Mapping[SectionKind, int] = {
    SectionKind.PARSING_SCHEMA: 0,
    SectionKind.ERROR_PATTERNS: 1,
    SectionKind.REUSABLE_RESULTS: 2,
    SectionKind.DOMAIN_CONSTANTS: 3,
    SectionKind.CONTEXT_ROADMAP: 4,
    SectionKind.CONTEXT_UNDERSTANDING: 4,
}
PROTECTED_TIER = 4


class BudgetInfeasibleError(MapError):
    pass


def apply_tags(
    cmap: ContextMap,
    tags: Mapping[ItemId, Tag],
    delta: TagDelta = TagDelta(),
    warnings: list[str] | None = None,
) -> ContextMap:
    """Add ``delta[tag]`` to the score of every tagged item present in the map.

    Tags naming unknown items are ignored; a message is appended to
    ``warnings`` when a list is supplied.
    """
    out = cmap
    for item_id, tag in tags.items():
        item = out.get(item_id)
        if item is None:
            msg = f"tag for unknown item {item_id} ignored"
            logger.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            continue
        inc = delta[tag]
        if inc:
            out = out.with_item(replace(item, score=item.score + inc))
    return out


def eviction_key(item: MapItem) -> tuple:
    return (EVICTION_TIER[item.section], item.score, item.created_seq, item.id.serial, item.id.prefix)


def eviction_order(cmap: ContextMap) -> list[ItemId]:
    return [it.id for it in sorted(cmap.items(), key=eviction_key)]


def evict_to_budget(
    cmap: ContextMap, counter: TokenCounter = approx_token_count
) -> tuple[ContextMap, list[MapItem]]:
    """Remove items in eviction order until the rendered map fits its budget.

    Raises ``BudgetInfeasibleError`` if even the item-free map is over budget.
    """
    if map_tokens(cmap, counter) <= cmap.budget:
        return cmap, []
    if map_tokens(cmap.without([it.id for it in cmap.items()]), counter) > cmap.budget:
        raise BudgetInfeasibleError(f"section headers alone exceed the budget of {cmap.budget} tokens")
    current = cmap
    evicted: list[MapItem] = []
    for item in sorted(cmap.items(), key=eviction_key):
        current = current.without([item.id])
        evicted.append(item)
        if map_tokens(current, counter) <= current.budget:
            break
    return current, evicted
