"""Translate a distiller report into a structured edit set for the map."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .distiller import DistillerReport, complete_with_retry, load_template
from .edits import EditKind, EditOp, EditSet, dedup_candidates
from .jsonextract import ResponseParseError, extract_json_object, snippet_of
from .model import ContextMap, ItemId, SectionKind, TokenCounter, approx_token_count, map_tokens, render_map
from .providers import ChatRequest, Message, Provider

logger = logging.getLogger(__name__)

NO_FINDINGS = "[No findings from the latest task attempt]"


@dataclass(frozen=True)
class CartographerInput:
    report: DistillerReport
    map: ContextMap
    question_text: str
    budget: int
    current_tokens: int

    @classmethod
    def build(
        cls,
        report: DistillerReport,
        cmap: ContextMap,
        question_text: str,
        counter: TokenCounter = approx_token_count,
    ) -> "CartographerInput":
        return cls(report, cmap, question_text, cmap.budget, map_tokens(cmap, counter))


@dataclass(frozen=True)
class CartographerOptions:
    model: str = "gpt-5-mini"
    temperature: float | None = None
    retry_on_parse_error: bool = True
    template: str | None = None


def render_reflection(report: DistillerReport) -> str:
    if report.empty:
        return NO_FINDINGS
    lines = ["DIAGNOSIS:", report.diagnosis.strip() or "(none)", "", "ITEM TAGS:"]
    if report.item_tags:
        lines += [f"- {item_id}: {tag.value}" for item_id, tag in sorted(report.item_tags.items())]
    else:
        lines.append("(none)")
    lines += ["", "CANDIDATES:"]
    if report.candidates:
        for c in report.candidates:
            lines.append(f"- [{c.section.value}] {c.value}")
            if c.transferability:
                lines.append(f"  transferability: {c.transferability}")
            if c.rationale:
                lines.append(f"  rationale: {c.rationale}")
    else:
        lines.append("(none)")
    return "\n".join(lines)


def build_cartographer_prompt(inp: CartographerInput, options: CartographerOptions = CartographerOptions()) -> str:
    template = options.template or load_template("cartographer")
    return template.format(
        token_budget=inp.budget,
        current_tokens=inp.current_tokens,
        reflection=render_reflection(inp.report),
        current_playbook=render_map(inp.map).rstrip("\n"),
        question_context=inp.question_text,
    )


def _parse_op(raw) -> EditOp:
    if not isinstance(raw, dict):
        raise ValueError("operation is not an object")
    kind = EditKind(str(raw.get("type", "")).strip().upper())
    content = raw.get("content")
    if kind is not EditKind.DELETE and not isinstance(content, str):
        raise ValueError("missing content")
    if kind is EditKind.ADD:
        return EditOp.add(SectionKind(str(raw.get("section", "")).strip()), content)
    item_id = ItemId.parse(str(raw.get("item_id", "")))
    if kind is EditKind.DELETE:
        return EditOp.delete(item_id)
    return EditOp.replace(item_id, content)


def parse_cartographer_response(text: str) -> EditSet:
    obj = extract_json_object(text, keys=("operations",))
    ops_raw = obj.get("operations")
    if not isinstance(ops_raw, list):
        raise ResponseParseError("response has no operations array", snippet_of(text))
    reasoning = obj.get("reasoning", "")
    warnings = []
    if not isinstance(reasoning, str):
        warnings.append("reasoning is not a string; coerced")
        reasoning = str(reasoning)
    ops = []
    for i, raw in enumerate(ops_raw):
        try:
            ops.append(_parse_op(raw))
        except ValueError as exc:
            warnings.append(f"operation {i} dropped: {exc}")
    for w in warnings:
        logger.warning("cartographer: %s", w)
    return EditSet(reasoning, tuple(ops), tuple(warnings))


def dedup_edit_set(cmap: ContextMap, edits: EditSet) -> EditSet:
    """Remove ADDs that duplicate an existing item or an earlier ADD."""
    adds = [(op.section, op.content) for op in edits.operations if op.kind is EditKind.ADD]
    survivors = set(dedup_candidates(cmap, adds))
    kept = []
    warnings = list(edits.warnings)
    for op in edits.operations:
        if op.kind is EditKind.ADD:
            key = (op.section, op.content)
            if key not in survivors:
                warnings.append(f"duplicate ADD to {op.section.value} dropped")
                continue
            survivors.discard(key)
        kept.append(op)
    return EditSet(edits.reasoning, tuple(kept), tuple(warnings))


def plan_edits(
    inp: CartographerInput,
    provider: Provider,
    options: CartographerOptions = CartographerOptions(),
) -> EditSet:
    prompt = build_cartographer_prompt(inp, options)
    request = ChatRequest(options.model, (Message("user", prompt),), options.temperature)
    edits = complete_with_retry(provider, request, parse_cartographer_response, options.retry_on_parse_error)
    return dedup_edit_set(inp.map, edits)
