"""Command-line interface.

    contextmap init    --dir WS [--budget N]
    contextmap render  --dir WS
    contextmap inspect --dir WS
    contextmap update  --dir WS --trajectory FILE (--replay FIXTURE | --live [--record FILE])
    contextmap run     --dir WS --tasks FILE --runner scripted|command ... (--replay PATH | --live)
    contextmap evict   --dir WS [--budget N]

Exit codes: 0 success, 1 hard failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path

from .evictor import BudgetInfeasibleError, eviction_order, evict_to_budget
from .model import MapError, map_tokens, render_map
from .policy import (
    CommandRunner,
    PolicyConfig,
    ScriptedRunner,
    UpdateRecord,
    load_trajectory,
    run_policy,
    update_cycle,
)
from .providers import HTTPProvider, RecordingProvider, ReplayError, ReplayProvider
from .workspace import DEFAULT_BUDGET, Workspace, WorkspaceError

logger = logging.getLogger("contextmap")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CommandError(Exception):
    pass


def _out(text: str = "") -> None:
    sys.stdout.write(text + "\n")


def _make_provider(ws: Workspace, args):
    if args.replay:
        path = Path(args.replay)
        if path.is_dir():
            path = path / "provider.jsonl"
        if not path.is_file():
            raise CommandError(f"replay fixture not found: {path}")
        return ReplayProvider(path)
    settings = ws.provider_settings()
    live = HTTPProvider(
        settings.get("api_base"),
        timeout=float(settings.get("timeout", 120.0)),
        max_attempts=int(settings.get("max_attempts", 3)),
    )
    if getattr(args, "record", None):
        return RecordingProvider(live, args.record)
    return live


def _summarize(record: UpdateRecord, budget: int) -> None:
    if record.outcome is not None:
        for op, item_id in record.outcome.applied:
            _out(f"applied  {op.kind.value:<7} {item_id}")
        for op, reason in record.outcome.rejected:
            target = op.item_id or op.section.value
            _out(f"rejected {op.kind.value:<7} {target}: {reason}")
    for item in record.evicted:
        _out(f"evicted  {item.id}")
    _out(f"tokens   {record.tokens_before} -> {record.tokens_after} / {budget}")
    if record.error:
        _out(f"error    {record.error}")


def cmd_init(args) -> int:
    Workspace.create(args.dir, args.budget)
    _out(f"initialized workspace {args.dir} (budget {args.budget})")
    return EXIT_OK


def cmd_render(args) -> int:
    ws = Workspace.open(args.dir)
    sys.stdout.write(render_map(ws.load_map()))
    return EXIT_OK


def cmd_inspect(args) -> int:
    ws = Workspace.open(args.dir)
    cmap = ws.load_map()
    _out(f"budget {cmap.budget}  tokens {map_tokens(cmap)}  update_seq {cmap.update_seq}  items {len(cmap)}")
    for item in cmap.items():
        _out(f"{item.id}  score={item.score:+d}  created={item.created_seq}  modified={item.modified_seq}  {item.text}")
    order = eviction_order(cmap)
    if order:
        _out("eviction order: " + " ".join(map(str, order)))
    return EXIT_OK


def cmd_update(args) -> int:
    ws = Workspace.open(args.dir)
    with ws.lock():
        cmap = ws.load_map()
        config = ws.policy_config(budget=cmap.budget)
        try:
            _, traj = load_trajectory(args.trajectory)
        except (OSError, ValueError) as exc:
            raise CommandError(f"cannot read trajectory {args.trajectory}: {exc}") from None
        provider = _make_provider(ws, args)
        new_map, record = update_cycle(cmap, traj, config, provider)
        if record.error is None:
            ws.save_map(new_map)
        ws.append_record(record)
    _summarize(record, cmap.budget)
    return EXIT_FAIL if record.error else EXIT_OK


def _read_tasks(path: str) -> list[str]:
    tasks = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("{"):
                row = json.loads(line)
                if not isinstance(row.get("task"), str):
                    raise ValueError("JSONL task rows need a 'task' string")
                tasks.append(row["task"])
            else:
                tasks.append(line)
    return tasks


def cmd_run(args) -> int:
    ws = Workspace.open(args.dir)
    try:
        tasks = _read_tasks(args.tasks)
    except (OSError, ValueError) as exc:
        raise CommandError(f"cannot read tasks {args.tasks}: {exc}") from None
    if not tasks:
        raise CommandError("tasks file is empty")
    if args.runner == "scripted":
        runner = ScriptedRunner.from_dir(args.scripts or ws.fixtures_dir / "scripts")
    else:
        if not args.command:
            raise CommandError("--runner command needs --command")
        runner = CommandRunner(shlex.split(args.command), timeout=args.timeout)

    with ws.lock():
        cmap = ws.load_map()
        config: PolicyConfig = ws.policy_config(budget=cmap.budget, evolve_steps=args.m)
        provider = _make_provider(ws, args)

        def persist(new_map, record):
            if record.error is None:
                ws.save_map(new_map)
            ws.append_record(record)

        result = run_policy(args.context, tasks, config, runner, provider, cmap=cmap, persist=persist)

    answers_path = Path(args.answers) if args.answers else ws.root / "answers.jsonl"
    with open(answers_path, "w", encoding="utf-8", newline="\n") as fh:
        errors = dict(result.errors)
        for i, (task, answer) in enumerate(zip(tasks, result.answers), 1):
            row = {"index": i, "task": task, "answer": answer, "error": errors.get(i)}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    for rec in result.records:
        _out(f"cycle {rec.cycle}")
        _summarize(rec, result.map.budget)
    for i, err in result.errors:
        _out(f"task {i} failed: {err}")
    _out(f"answers {len(result.answers)}/{len(tasks)} -> {answers_path}")
    return EXIT_OK if result.ok and len(result.answers) == len(tasks) else EXIT_FAIL


def cmd_evict(args) -> int:
    ws = Workspace.open(args.dir)
    with ws.lock():
        cmap = ws.load_map()
        target = cmap.with_budget(args.budget) if args.budget is not None else cmap
        try:
            new_map, evicted = evict_to_budget(target)
        except BudgetInfeasibleError as exc:
            raise CommandError(str(exc)) from None
        ws.save_map(new_map)
    for item in evicted:
        _out(f"evicted  {item.id}")
    _out(f"tokens   {map_tokens(new_map)} / {new_map.budget}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contextmap", description="Maintain a token-budgeted context map.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command_name", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dir", default=".", help="workspace directory (default: .)")

    def provider_flags(p, record=True):
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--replay", metavar="PATH", help="replay fixture (JSONL file, or directory with provider.jsonl)")
        g.add_argument("--live", action="store_true", help="call the OpenAI-compatible endpoint")
        if record:
            p.add_argument("--record", metavar="FILE", help="with --live, append exchanges to this fixture")

    p = sub.add_parser("init", parents=[common], help="create a workspace")
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("render", parents=[common], help="print the map as injected into the agent prompt")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("inspect", parents=[common], help="list items with scores and eviction order")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("update", parents=[common], help="run one update cycle from a trajectory file")
    p.add_argument("--trajectory", required=True)
    provider_flags(p)
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("run", parents=[common], help="run the policy loop over a task list")
    p.add_argument("--tasks", required=True, help="one task per line, or JSONL rows with a 'task' field")
    p.add_argument("--runner", choices=["scripted", "command"], default="scripted")
    p.add_argument("--scripts", help="directory of scripted-runner JSON files (default: WS/fixtures/scripts)")
    p.add_argument("--command", help="agent executable for --runner command")
    p.add_argument("--timeout", type=float, default=None, help="per-task timeout for --runner command")
    p.add_argument("--context", default=None, help="context handle passed through to the runner")
    p.add_argument("--m", type=int, default=None, help="evolve steps: update after the first M tasks only")
    p.add_argument("--answers", help="answers JSONL output (default: WS/answers.jsonl)")
    provider_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evict", parents=[common], help="enforce the budget, optionally changing it")
    p.add_argument("--budget", type=int, default=None)
    p.set_defaults(func=cmd_evict)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "m", None) is not None and args.m < 0:
        parser.error("--m must be >= 0")
    try:
        return args.func(args)
    except (CommandError, WorkspaceError, MapError, ReplayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
