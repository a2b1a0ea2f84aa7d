"""The cache policy loop: run each task with the map as system prefix, then
(for the first ``m`` tasks) distill, plan edits, apply them and evict."""

from __future__ import annotations

import json
import logging
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

from .cartographer import CartographerInput, CartographerOptions, plan_edits
from .distiller import (
    DEFAULT_STEP_LIMIT,
    DistillerOptions,
    DistillerReport,
    Trajectory,
    distill,
)
from .edits import DEFAULT_ITEM_CAP, EditOutcome, EditSet, apply_edits
from .evictor import TagDelta, apply_tags, evict_to_budget
from .jsonextract import ResponseParseError
from .model import (
    ContextMap,
    MapError,
    MapItem,
    TokenCounter,
    approx_token_count,
    init_map,
    map_tokens,
    render_map,
)
from .providers import Provider, ProviderError

logger = logging.getLogger(__name__)


class AgentRunError(Exception):
    """An agent run failed; ``trajectory`` holds whatever steps were produced."""

    def __init__(self, message: str, trajectory: Trajectory | None = None):
        super().__init__(message)
        self.trajectory = trajectory


class AgentRunner(Protocol):
    def run(self, system_prefix: str, task: str, context_handle: Any) -> tuple[str, Trajectory]: ...


@dataclass
class PolicyConfig:
    budget: int = 1024
    evolve_steps: int = 1
    tag_delta: TagDelta = field(default_factory=TagDelta)
    item_cap: int = DEFAULT_ITEM_CAP
    step_limit: int = DEFAULT_STEP_LIMIT
    model: str = "gpt-5-mini"
    temperature: float | None = None
    fail_fast: bool = False
    counter: TokenCounter = approx_token_count

    def __post_init__(self):
        if self.evolve_steps < 0:
            raise ValueError("evolve_steps must be >= 0")

    def distiller_options(self) -> DistillerOptions:
        return DistillerOptions(step_limit=self.step_limit, model=self.model, temperature=self.temperature)

    def cartographer_options(self) -> CartographerOptions:
        return CartographerOptions(model=self.model, temperature=self.temperature)


@dataclass
class UpdateRecord:
    cycle: int
    stages: list[str] = field(default_factory=list)
    report: DistillerReport | None = None
    edits: EditSet | None = None
    outcome: EditOutcome | None = None
    evicted: list[MapItem] = field(default_factory=list)
    tokens_before: int = 0
    tokens_after: int = 0
    warnings: list[str] = field(default_factory=list)
    error: str | None = None
    timestamp: float = 0.0

    def to_dict(self) -> dict:
        return {
            "cycle": self.cycle,
            "timestamp": self.timestamp,
            "stages": self.stages,
            "report": self.report.to_dict() if self.report else None,
            "edits": self.edits.to_dict() if self.edits else None,
            "outcome": self.outcome.to_dict() if self.outcome else None,
            "evicted": [str(it.id) for it in self.evicted],
            "tokens_before": self.tokens_before,
            "tokens_after": self.tokens_after,
            "warnings": self.warnings,
            "error": self.error,
        }


def run_task(cmap: ContextMap, task: str, runner: AgentRunner, context_handle: Any = None) -> tuple[str, Trajectory]:
    prefix = render_map(cmap)
    try:
        return runner.run(prefix, task, context_handle)
    except AgentRunError:
        raise
    except Exception as exc:
        partial = getattr(exc, "trajectory", None) or Trajectory(task)
        raise AgentRunError(f"agent run failed: {exc}", partial) from exc


STAGE_ERRORS = (ProviderError, ResponseParseError, MapError, ValueError)


def update_cycle(
    cmap: ContextMap,
    trajectory: Trajectory,
    config: PolicyConfig,
    provider: Provider,
) -> tuple[ContextMap, UpdateRecord]:
    """One atomic update. On any stage error the input map comes back untouched."""
    counter = config.counter
    record = UpdateRecord(cycle=cmap.update_seq + 1, timestamp=time.time())
    record.tokens_before = record.tokens_after = map_tokens(cmap, counter)
    try:
        record.stages.append("distill")
        report = distill(trajectory, cmap, provider, config.distiller_options())
        record.report = report
        record.warnings.extend(report.warnings)

        record.stages.append("tag")
        tagged = apply_tags(cmap, report.item_tags, config.tag_delta, record.warnings)

        record.stages.append("plan")
        inp = CartographerInput.build(report, tagged, trajectory.task_text, counter)
        edits = plan_edits(inp, provider, config.cartographer_options())
        record.edits = edits
        record.warnings.extend(edits.warnings)

        record.stages.append("apply")
        outcome = apply_edits(tagged, edits, counter, config.item_cap)
        record.outcome = outcome
        if outcome.error:
            raise MapError(f"edit application aborted: {outcome.error}")

        record.stages.append("evict")
        evicted_map, evicted = evict_to_budget(outcome.map_after, counter)
        record.evicted = evicted
    except STAGE_ERRORS as exc:
        record.error = f"{record.stages[-1]}: {type(exc).__name__}: {exc}"
        logger.error("update cycle %d failed at %s", record.cycle, record.error)
        return cmap, record

    new_map = ContextMap(
        budget=evicted_map.budget,
        sections=evicted_map.sections,
        next_serial=evicted_map.next_serial,
        update_seq=cmap.update_seq + 1,
    )
    record.tokens_after = map_tokens(new_map, counter)
    return new_map, record


@dataclass
class PolicyResult:
    answers: list[str | None]
    map: ContextMap
    records: list[UpdateRecord]
    errors: list[tuple[int, str]] = field(default_factory=list)
    snapshots: list[ContextMap] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors and all(r.error is None for r in self.records)


def run_policy(
    context_handle: Any,
    tasks: Sequence[str],
    config: PolicyConfig,
    runner: AgentRunner,
    provider: Provider,
    cmap: ContextMap | None = None,
    persist: Callable[[ContextMap, UpdateRecord], None] | None = None,
) -> PolicyResult:
    """Run ``tasks`` in order, updating the map after each of the first
    ``config.evolve_steps`` tasks and reusing it frozen afterwards.

    ``persist`` is called after every update cycle (successful or not) with the
    map to store and the cycle's record. ``snapshots[i]`` is the map after task i.
    """
    if not tasks:
        raise ValueError("run_policy needs at least one task")
    current = cmap if cmap is not None else init_map(config.budget, config.counter)
    result = PolicyResult(answers=[], map=current, records=[])
    for i, task in enumerate(tasks, 1):
        try:
            answer, traj = run_task(current, task, runner, context_handle)
        except AgentRunError as exc:
            logger.error("task %d failed: %s", i, exc)
            result.errors.append((i, str(exc)))
            result.answers.append(None)
            result.snapshots.append(current)
            if config.fail_fast:
                break
            continue
        result.answers.append(answer)
        if i <= config.evolve_steps:
            current, record = update_cycle(current, traj, config, provider)
            result.records.append(record)
            if persist is not None:
                persist(current, record)
            if record.error and config.fail_fast:
                result.snapshots.append(current)
                break
        result.snapshots.append(current)
    result.map = current
    return result


# -- runners -----------------------------------------------------------------


def trajectory_from_doc(doc: dict, task: str | None = None) -> tuple[str, Trajectory]:
    """Parse ``{task, answer, steps: [{actor, content}]}``; returns (answer, trajectory)."""
    if not isinstance(doc, dict):
        raise ValueError("trajectory document must be an object")
    steps = doc.get("steps")
    if not isinstance(steps, list):
        raise ValueError("trajectory document needs a steps array")
    task_text = task if task is not None else doc.get("task")
    if not isinstance(task_text, str):
        raise ValueError("trajectory document needs a task string")
    answer = doc.get("answer", "")
    if not isinstance(answer, str):
        raise ValueError("answer must be a string")
    return answer, Trajectory.from_steps(task_text, steps, answer)


def load_trajectory(path: str | Path) -> tuple[str, Trajectory]:
    with open(path, encoding="utf-8") as fh:
        return trajectory_from_doc(json.load(fh))


class ScriptedRunner:
    """Replays canned runs. Scripts are matched to tasks by their ``task`` text.

    A script may set ``fail_after: k`` to raise after emitting its first k steps.
    ``prefixes`` keeps the system prefix seen by every run.
    """

    def __init__(self, scripts: Sequence[dict]):
        self.scripts = {s["task"]: s for s in scripts}
        self.prefixes: list[str] = []

    @classmethod
    def from_dir(cls, directory: str | Path) -> "ScriptedRunner":
        docs = []
        for p in sorted(Path(directory).glob("*.json")):
            with open(p, encoding="utf-8") as fh:
                docs.append(json.load(fh))
        return cls(docs)

    def run(self, system_prefix: str, task: str, context_handle: Any = None) -> tuple[str, Trajectory]:
        self.prefixes.append(system_prefix)
        script = self.scripts.get(task)
        if script is None:
            raise AgentRunError(f"no script for task {task!r}", Trajectory(task))
        fail_after = script.get("fail_after")
        if fail_after is not None:
            partial = dict(script, steps=script["steps"][:fail_after])
            _, traj = trajectory_from_doc(partial, task)
            raise AgentRunError(f"scripted failure after {fail_after} steps", traj)
        return trajectory_from_doc(script, task)


class CommandRunner:
    """Runs an external agent per task: writes ``{system_prefix, task, context}``
    as one JSON line to its stdin and reads ``{answer, steps}`` from stdout."""

    def __init__(self, command: Sequence[str], timeout: float | None = None):
        self.command = list(command)
        self.timeout = timeout

    def run(self, system_prefix: str, task: str, context_handle: Any = None) -> tuple[str, Trajectory]:
        request = {"system_prefix": system_prefix, "task": task}
        if context_handle is not None:
            request["context"] = str(context_handle)
        try:
            proc = subprocess.run(
                self.command,
                input=json.dumps(request, ensure_ascii=False) + "\n",
                capture_output=True,
                text=True,
                encoding="utf-8",
                timeout=self.timeout,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise AgentRunError(f"agent command failed: {exc}", Trajectory(task)) from exc
        if proc.returncode != 0:
            raise AgentRunError(f"agent exited {proc.returncode}: {proc.stderr.strip()[:500]}", Trajectory(task))
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if not lines:
            raise AgentRunError("agent produced no output", Trajectory(task))
        try:
            return trajectory_from_doc(json.loads(lines[-1]), task)
        except ValueError as exc:
            raise AgentRunError(f"bad agent output: {exc}", Trajectory(task)) from exc
