"""Structured ADD / DELETE / REPLACE edits against a context map."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable

from .model import (
    ContextMap,
    ItemId,
    MapError,
    MapItem,
    SectionKind,
    TokenCounter,
    approx_token_count,
    clean_text,
    normalize_text,
)

logger = logging.getLogger(__name__)

DEFAULT_ITEM_CAP = 80


class EditKind(str, enum.Enum):
    ADD = "ADD"
    DELETE = "DELETE"
    REPLACE = "REPLACE"


@dataclass(frozen=True)
class EditOp:
    kind: EditKind
    section: SectionKind | None = None
    item_id: ItemId | None = None
    content: str | None = None

    def __post_init__(self):
        k = self.kind
        if k is EditKind.ADD:
            ok = self.section is not None and self.item_id is None and self.content is not None
        elif k is EditKind.DELETE:
            ok = self.item_id is not None and self.section is None and self.content is None
        else:
            ok = self.item_id is not None and self.section is None and self.content is not None
        if not ok:
            raise ValueError(f"malformed {k.value} operation")
        if self.content is not None and not self.content.strip():
            raise ValueError(f"{k.value} content is empty")

    @classmethod
    def add(cls, section: SectionKind, content: str) -> "EditOp":
        return cls(EditKind.ADD, section=section, content=content)

    @classmethod
    def delete(cls, item_id: ItemId) -> "EditOp":
        return cls(EditKind.DELETE, item_id=item_id)

    @classmethod
    def replace(cls, item_id: ItemId, content: str) -> "EditOp":
        return cls(EditKind.REPLACE, item_id=item_id, content=content)

    def to_dict(self) -> dict:
        d: dict = {"type": self.kind.value}
        if self.section is not None:
            d["section"] = self.section.value
        if self.item_id is not None:
            d["item_id"] = str(self.item_id)
        if self.content is not None:
            d["content"] = self.content
        return d


@dataclass(frozen=True)
class EditSet:
    reasoning: str = ""
    operations: tuple[EditOp, ...] = ()
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "reasoning": self.reasoning,
            "operations": [op.to_dict() for op in self.operations],
            "warnings": list(self.warnings),
        }


@dataclass
class EditOutcome:
    applied: list[tuple[EditOp, ItemId]] = field(default_factory=list)
    rejected: list[tuple[EditOp, str]] = field(default_factory=list)
    map_after: ContextMap | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "applied": [{"op": op.to_dict(), "item_id": str(i)} for op, i in self.applied],
            "rejected": [{"op": op.to_dict(), "reason": r} for op, r in self.rejected],
            "error": self.error,
        }


def validate_edit(
    cmap: ContextMap,
    op: EditOp,
    counter: TokenCounter = approx_token_count,
    item_cap: int = DEFAULT_ITEM_CAP,
) -> str | None:
    """Return a rejection reason, or None if ``op`` can be applied to ``cmap``."""
    if op.kind is not EditKind.ADD and op.item_id not in cmap:
        return "unknown item id"
    if op.content is not None:
        text = clean_text(op.content)
        if counter(text) > item_cap:
            return "exceeds per-item cap"
        if op.kind is EditKind.ADD:
            key = normalize_text(text)
            if any(normalize_text(it.text) == key for it in cmap.sections[op.section]):
                return "duplicate"
    return None


def apply_edits(
    cmap: ContextMap,
    edits: EditSet,
    counter: TokenCounter = approx_token_count,
    item_cap: int = DEFAULT_ITEM_CAP,
) -> EditOutcome:
    """Apply ``edits`` in order, skipping (and recording) invalid operations.

    New and replaced items are stamped with the map's current ``update_seq``.
    If the result would break a map invariant the input map is returned
    unchanged and ``error`` is set.
    """
    outcome = EditOutcome()
    seq = cmap.update_seq
    current = cmap
    try:
        for op in edits.operations:
            reason = validate_edit(current, op, counter, item_cap)
            if reason is not None:
                outcome.rejected.append((op, reason))
                continue
            if op.kind is EditKind.ADD:
                item_id, current = current.allocate_id(op.section)
                current = current.with_item(MapItem(item_id, clean_text(op.content), seq, seq, 0))
            elif op.kind is EditKind.DELETE:
                item_id = op.item_id
                current = current.without([item_id])
            else:
                item_id = op.item_id
                old = current.get(item_id)
                current = current.with_item(
                    replace(old, text=clean_text(op.content), modified_seq=seq, score=0)
                )
            outcome.applied.append((op, item_id))
        current.check_invariants()
    except (MapError, ValueError) as exc:
        logger.error("edit application aborted: %s", exc)
        return EditOutcome(
            applied=[],
            rejected=[(op, "aborted") for op in edits.operations],
            map_after=cmap,
            error=str(exc),
        )
    outcome.map_after = current
    return outcome


def dedup_candidates(
    cmap: ContextMap, candidates: Iterable[tuple[SectionKind, str]]
) -> list[tuple[SectionKind, str]]:
    """Drop candidates equal (after normalization) to an existing same-section
    item or to an earlier candidate in the same section."""
    seen = {(it.section, normalize_text(it.text)) for it in cmap.items()}
    kept = []
    for section, text in candidates:
        key = (section, normalize_text(text))
        if key in seen:
            continue
        seen.add(key)
        kept.append((section, text))
    return kept
