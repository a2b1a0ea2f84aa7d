"""Turn an agent trajectory into a diagnosis, per-item tags and cache candidates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Iterable

from .evictor import Tag
from .jsonextract import ResponseParseError, extract_json_object, snippet_of
from .model import ContextMap, ItemId, SectionKind, render_map
from .providers import ChatRequest, Message, Provider

logger = logging.getLogger(__name__)

DEFAULT_STEP_LIMIT = 20_000
TRUNCATION_MARKER = "…[truncated]"
GROUND_TRUTH_NA = "[Ground Truth not applicable]"
AGENT_RESULT_NA = "[Agent's result not applicable]"
FORMAT_REMINDER = (
    "Your previous reply could not be parsed. Reply with ONLY the JSON object "
    "described under Output Format, with no other text."
)

ACTORS = ("model", "environment")


def load_template(name: str) -> str:
    return resources.files("contextmap").joinpath(f"prompts/{name}.txt").read_text(encoding="utf-8")


@dataclass(frozen=True)
class TrajectoryStep:
    index: int
    actor: str
    content: str

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("step index must be >= 1")
        if self.actor not in ACTORS:
            raise ValueError(f"unknown actor {self.actor!r}")


@dataclass(frozen=True)
class Trajectory:
    task_text: str
    steps: tuple[TrajectoryStep, ...] = ()
    final_answer: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        idx = [s.index for s in self.steps]
        if idx != sorted(idx):
            raise ValueError("trajectory steps must be ordered by index")

    @classmethod
    def from_steps(cls, task_text: str, steps: Iterable[dict], final_answer: str | None = None) -> "Trajectory":
        """Build from ``{actor, content[, index]}`` dicts.

        Without explicit indices each model step opens a new iteration and
        environment steps share the iteration of the preceding model step.
        """
        out = []
        iteration = 0
        for raw in steps:
            actor = raw.get("actor")
            if "index" in raw:
                iteration = int(raw["index"])
            elif actor == "model" or iteration == 0:
                iteration += 1
            content = raw.get("content")
            if not isinstance(content, str):
                raise ValueError("step content must be a string")
            out.append(TrajectoryStep(iteration, actor, content))
        return cls(task_text, tuple(out), final_answer)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "task": self.task_text,
            "steps": [{"index": s.index, "actor": s.actor, "content": s.content} for s in self.steps],
        }
        if self.final_answer is not None:
            d["answer"] = self.final_answer
        return d


@dataclass(frozen=True)
class CacheCandidate:
    section: SectionKind
    value: str
    transferability: str = ""
    rationale: str = ""


@dataclass(frozen=True)
class DistillerReport:
    diagnosis: str = ""
    item_tags: dict = field(default_factory=dict)  # ItemId -> Tag
    candidates: tuple[CacheCandidate, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def empty(self) -> bool:
        return not (self.diagnosis.strip() or self.item_tags or self.candidates)

    def to_dict(self) -> dict:
        return {
            "diagnosis": self.diagnosis,
            "item_tags": {str(k): v.value for k, v in sorted(self.item_tags.items())},
            "cache_candidates": [
                {
                    "section": c.section.value,
                    "value": c.value,
                    "transferability": c.transferability,
                    "rationale": c.rationale,
                }
                for c in self.candidates
            ],
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class DistillerOptions:
    step_limit: int = DEFAULT_STEP_LIMIT
    ground_truth: str | None = None
    agent_result: str | None = None
    model: str = "gpt-5-mini"
    temperature: float | None = None
    retry_on_parse_error: bool = True
    template: str | None = None


def truncate(text: str, limit: int) -> str:
    if len(text) <= limit:
        return text
    return text[:limit] + TRUNCATION_MARKER


def serialize_trajectory(traj: Trajectory, step_limit: int = DEFAULT_STEP_LIMIT) -> str:
    blocks = [f"TASK:\n{traj.task_text}"]
    for step in traj.steps:
        blocks.append(f"ITERATION {step.index} — {step.actor.upper()}:\n{truncate(step.content, step_limit)}")
    return "\n\n".join(blocks)


def build_distiller_prompt(traj: Trajectory, cmap: ContextMap, options: DistillerOptions = DistillerOptions()) -> str:
    template = options.template or load_template("distiller")
    return template.format(
        ground_truth=options.ground_truth if options.ground_truth is not None else GROUND_TRUTH_NA,
        agent_result=options.agent_result if options.agent_result is not None else AGENT_RESULT_NA,
        playbook=render_map(cmap).rstrip("\n"),
        trace_history=serialize_trajectory(traj, options.step_limit),
    )


def _str_field(obj: dict, key: str, warnings: list[str]) -> str:
    value = obj.get(key, "")
    if value is None:
        return ""
    if not isinstance(value, str):
        warnings.append(f"{key} is not a string; coerced")
        return str(value)
    return value


def parse_distiller_response(text: str) -> DistillerReport:
    """Parse model output into a report. Raises ``ResponseParseError`` on
    missing or unusable JSON; never raises anything else."""
    obj = extract_json_object(text, keys=("diagnosis", "item_tags", "cache_candidates"))
    warnings: list[str] = []
    diagnosis = _str_field(obj, "diagnosis", warnings)

    tags: dict[ItemId, Tag] = {}
    raw_tags = obj.get("item_tags") or {}
    if not isinstance(raw_tags, dict):
        raise ResponseParseError("item_tags is not an object", snippet_of(text))
    for key, raw in raw_tags.items():
        try:
            item_id = ItemId.parse(key)
        except ValueError:
            warnings.append(f"tag for malformed item id {key!r} dropped")
            continue
        try:
            tag = Tag(raw.strip().lower() if isinstance(raw, str) else raw)
        except ValueError:
            warnings.append(f"unknown tag {raw!r} for {item_id}; treated as neutral")
            tag = Tag.NEUTRAL
        tags[item_id] = tag

    candidates = []
    raw_cands = obj.get("cache_candidates") or []
    if not isinstance(raw_cands, list):
        raise ResponseParseError("cache_candidates is not an array", snippet_of(text))
    for i, raw in enumerate(raw_cands):
        if not isinstance(raw, dict):
            warnings.append(f"candidate {i} is not an object; dropped")
            continue
        try:
            section = SectionKind(str(raw.get("section", "")).strip())
        except ValueError:
            warnings.append(f"candidate {i} has unknown section {raw.get('section')!r}; dropped")
            continue
        value = raw.get("value")
        if not isinstance(value, str) or not value.strip():
            warnings.append(f"candidate {i} has no value; dropped")
            continue
        candidates.append(
            CacheCandidate(
                section,
                value.strip(),
                _str_field(raw, "transferability", warnings),
                _str_field(raw, "rationale", warnings),
            )
        )
    for w in warnings:
        logger.warning("distiller: %s", w)
    return DistillerReport(diagnosis, tags, tuple(candidates), tuple(warnings))


def complete_with_retry(provider: Provider, request: ChatRequest, parse, retry: bool):
    """One provider call plus, if parsing fails and ``retry`` is set, one more
    call with a format reminder appended as a second user message."""
    resp = provider.complete(request)
    try:
        return parse(resp.content)
    except ResponseParseError as exc:
        if not retry:
            raise
        logger.warning("unparseable response (%s); retrying once", exc)
    retry_req = ChatRequest(
        request.model,
        (*request.messages, Message("user", FORMAT_REMINDER)),
        request.temperature,
    )
    return parse(provider.complete(retry_req).content)


def distill(
    traj: Trajectory,
    cmap: ContextMap,
    provider: Provider,
    options: DistillerOptions = DistillerOptions(),
) -> DistillerReport:
    prompt = build_distiller_prompt(traj, cmap, options)
    request = ChatRequest(options.model, (Message("user", prompt),), options.temperature)
    return complete_with_retry(provider, request, parse_distiller_response, options.retry_on_parse_error)
