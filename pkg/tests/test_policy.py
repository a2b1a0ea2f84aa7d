import json

import pytest

from contextmap.distiller import Trajectory
from contextmap.evictor import TagDelta
from contextmap.model import ContextMap, dumps_map, init_map, map_tokens, render_map
from contextmap.policy import (
    AgentRunError,
    CommandRunner,
    PolicyConfig,
    ScriptedRunner,
    run_policy,
    run_task,
    trajectory_from_doc,
    update_cycle,
)
from contextmap.providers import ProviderError, ReplayError, ReplayProvider, ScriptedProvider

from conftest import FIXTURES

SCENARIO = FIXTURES / "scenario"
TASKS = (SCENARIO / "tasks.txt").read_text(encoding="utf-8").splitlines()
GOLDEN = (SCENARIO / "golden_map.json").read_text(encoding="utf-8")


def scenario_runner():
    return ScriptedRunner.from_dir(SCENARIO / "scripts")


def replay():
    return ReplayProvider(SCENARIO / "provider.jsonl")


def simple_traj(task="t"):
    return Trajectory.from_steps(task, [{"actor": "model", "content": "look"}, {"actor": "environment", "content": "ok"}])


def distiller_reply(candidates=(), tags=None):
    return json.dumps(
        {
            "diagnosis": "d",
            "item_tags": tags or {},
            "cache_candidates": [
                {"section": s, "value": v, "transferability": "", "rationale": ""} for s, v in candidates
            ],
        }
    )


def cartographer_reply(ops):
    return json.dumps({"reasoning": "r", "operations": ops})


# -- run_task ------------------------------------------------------------------


def test_run_task_passes_rendered_map_as_prefix(skeleton):
    runner = scenario_runner()
    cmap = init_map(1024)
    answer, traj = run_task(cmap, TASKS[0], runner)
    assert runner.prefixes == [skeleton] == [render_map(cmap)]
    assert answer and traj.task_text == TASKS[0] and traj.steps


def test_run_task_failure_keeps_partial_trajectory():
    doc = {"task": "q", "answer": "", "fail_after": 2, "steps": [
        {"actor": "model", "content": "a"}, {"actor": "environment", "content": "b"}, {"actor": "model", "content": "c"}]}
    with pytest.raises(AgentRunError) as exc:
        run_task(init_map(1024), "q", ScriptedRunner([doc]))
    assert [s.content for s in exc.value.trajectory.steps] == ["a", "b"]


def test_run_task_wraps_foreign_exceptions():
    class Boom:
        def run(self, prefix, task, handle):
            raise RuntimeError("kaput")

    with pytest.raises(AgentRunError, match="kaput") as exc:
        run_task(init_map(1024), "q", Boom())
    assert exc.value.trajectory.task_text == "q"


def test_trajectory_doc_validation():
    with pytest.raises(ValueError):
        trajectory_from_doc({"task": "q"})
    with pytest.raises(ValueError):
        trajectory_from_doc({"task": "q", "steps": [{"actor": "robot", "content": "x"}]})
    answer, traj = trajectory_from_doc({"task": "q", "answer": "42", "steps": []})
    assert answer == "42" and traj.final_answer == "42"


# -- update_cycle --------------------------------------------------------------


def test_update_cycle_stage_order_and_success():
    provider = ScriptedProvider([
        distiller_reply([("context_roadmap", "388 records, one per line")]),
        cartographer_reply([{"type": "ADD", "section": "context_roadmap", "content": "388 records, one per line"}]),
    ])
    cmap = init_map(1024)
    new, rec = update_cycle(cmap, simple_traj(), PolicyConfig(), provider)
    assert rec.error is None
    assert rec.stages == ["distill", "tag", "plan", "apply", "evict"]
    assert new.update_seq == 1 and cmap.update_seq == 0
    assert [str(it.id) for it in new.items()] == ["cr-00001"]
    assert rec.tokens_after == map_tokens(new) > rec.tokens_before
    # the distiller sees the map, the cartographer sees the budget line
    assert "## CONTEXT ROADMAP" in provider.requests[0].messages[0].content
    assert "HARD BUDGET: 1024 tokens." in provider.requests[1].messages[0].content


@pytest.mark.parametrize(
    "replies,stage",
    [
        (["no json here", "still none"], "distill"),
        ([ProviderError("down")], "distill"),
        ([distiller_reply(), "garbage", "garbage"], "plan"),
        ([distiller_reply(), ReplayError("mismatch")], "plan"),
    ],
)
def test_update_cycle_failure_is_atomic(replies, stage, rng):
    from conftest import random_map

    cmap = random_map(rng, 8, budget=4096)
    before = dumps_map(cmap)
    new, rec = update_cycle(cmap, simple_traj(), PolicyConfig(budget=4096), ScriptedProvider(replies))
    assert new is cmap
    assert dumps_map(new) == before
    assert rec.error.startswith(stage + ":")
    assert rec.stages[-1] == stage


def test_update_cycle_tags_then_edits():
    cmap = init_map(1024)
    provider = ScriptedProvider([
        distiller_reply([("parsing_schema", "split on ||")]),
        cartographer_reply([{"type": "ADD", "section": "parsing_schema", "content": "split on ||"}]),
    ])
    cmap, _ = update_cycle(cmap, simple_traj(), PolicyConfig(), provider)
    provider = ScriptedProvider([
        distiller_reply(tags={"ps-00001": "harmful", "cr-00009": "helpful"}),
        cartographer_reply([]),
    ])
    cmap, rec = update_cycle(cmap, simple_traj(), PolicyConfig(tag_delta=TagDelta(harmful=-3, stale=-4)), provider)
    assert rec.error is None
    assert cmap.get(next(iter(cmap.items())).id).score == -3
    assert any("cr-00009" in w for w in rec.warnings)


def test_update_cycle_over_budget_evicts():
    base = init_map(1024)
    floor = map_tokens(base)
    long_text = "parsing detail " * 15
    ops = [{"type": "ADD", "section": "parsing_schema", "content": f"{long_text} {i}"} for i in range(4)]
    ops.append({"type": "ADD", "section": "context_roadmap", "content": "roadmap entry"})
    provider = ScriptedProvider([distiller_reply(), cartographer_reply(ops)])
    budget = floor + 60
    new, rec = update_cycle(base.with_budget(budget), simple_traj(), PolicyConfig(budget=budget), provider)
    assert rec.error is None
    assert rec.evicted and all(it.id.prefix == "ps" for it in rec.evicted)
    assert rec.tokens_after == map_tokens(new) <= budget
    assert any(it.id.prefix == "cr" for it in new.items())


def test_update_cycle_golden_scenario_step():
    runner = scenario_runner()
    _, traj = runner.run(render_map(init_map(1024)), TASKS[0])
    new, rec = update_cycle(init_map(1024), traj, PolicyConfig(budget=1024), replay())
    assert rec.error is None
    assert dumps_map(new) == GOLDEN
    # the duplicate roadmap ADD was dropped before application
    assert any("duplicate" in w for w in rec.warnings)


# -- run_policy ----------------------------------------------------------------


def test_golden_scenario_freeze_after_first_task():
    runner = scenario_runner()
    result = run_policy("context.txt", TASKS, PolicyConfig(budget=1024, evolve_steps=1), runner, replay())
    assert result.ok and len(result.records) == 1
    assert dumps_map(result.map) == GOLDEN
    snaps = [dumps_map(s) for s in result.snapshots]
    assert snaps[0] == snaps[1] == snaps[2] == GOLDEN
    # tasks 2 and 3 see the updated map as their prefix
    assert runner.prefixes[1] == runner.prefixes[2] == render_map(result.map)
    assert runner.prefixes[0] != runner.prefixes[1]


def test_m_zero_never_calls_provider(skeleton):
    provider = ScriptedProvider([])
    runner = scenario_runner()
    result = run_policy(None, TASKS, PolicyConfig(evolve_steps=0), runner, provider)
    assert result.ok and not result.records and not provider.requests
    assert runner.prefixes == [skeleton] * 3
    assert len(result.answers) == 3


def test_m_equals_n_updates_every_task():
    replies = []
    for i in range(3):
        replies += [distiller_reply(), cartographer_reply([{"type": "ADD", "section": "reusable_results", "content": f"r{i}"}])]
    result = run_policy(None, TASKS, PolicyConfig(evolve_steps=3), scenario_runner(), ScriptedProvider(replies))
    assert result.ok and len(result.records) == 3
    assert result.map.update_seq == 3
    assert [it.text for it in result.map.items()] == ["r0", "r1", "r2"]
    assert len({dumps_map(s) for s in result.snapshots}) == 3


def test_failed_task_is_recorded_and_loop_continues():
    scripts = [json.loads((SCENARIO / "scripts" / f"task{i}.json").read_text()) for i in (1, 2, 3)]
    scripts[0]["fail_after"] = 1
    provider = ScriptedProvider([distiller_reply(), cartographer_reply([])])
    result = run_policy(None, TASKS, PolicyConfig(evolve_steps=2), ScriptedRunner(scripts), provider)
    assert result.answers[0] is None and result.answers[1] and result.answers[2]
    assert [i for i, _ in result.errors] == [1]
    assert len(result.records) == 1 and not result.ok


def test_fail_fast_stops():
    result = run_policy(
        None, TASKS, PolicyConfig(evolve_steps=3, fail_fast=True), scenario_runner(), ScriptedProvider(["x", "y"])
    )
    assert len(result.answers) == 1 and result.records[0].error
    assert result.map.update_seq == 0


def test_persist_called_per_cycle():
    seen = []
    provider = ScriptedProvider([distiller_reply(), cartographer_reply([])] * 2)
    run_policy(None, TASKS, PolicyConfig(evolve_steps=2), scenario_runner(), provider, persist=lambda m, r: seen.append((m.update_seq, r.cycle)))
    assert seen == [(1, 1), (2, 2)]


def test_run_policy_requires_tasks():
    with pytest.raises(ValueError):
        run_policy(None, [], PolicyConfig(), scenario_runner(), ScriptedProvider([]))


# -- CommandRunner -------------------------------------------------------------

AGENT = r'''
import json, sys
req = json.loads(sys.stdin.readline())
print("thinking...")
print(json.dumps({"answer": str(len(req["system_prefix"])), "steps": [
    {"actor": "model", "content": "ctx=" + req.get("context", "")},
    {"actor": "environment", "content": req["task"]}]}))
'''


def test_command_runner_round_trip(tmp_path):
    import sys

    script = tmp_path / "agent.py"
    script.write_text(AGENT)
    cmap = init_map(1024)
    answer, traj = CommandRunner([sys.executable, str(script)]).run(render_map(cmap), "q?", "ctx.txt")
    assert answer == str(len(render_map(cmap)))
    assert [s.content for s in traj.steps] == ["ctx=ctx.txt", "q?"]


def test_command_runner_failures(tmp_path):
    import sys

    bad = tmp_path / "bad.py"
    bad.write_text("import sys; sys.stderr.write('nope'); sys.exit(3)")
    with pytest.raises(AgentRunError, match="exited 3"):
        CommandRunner([sys.executable, str(bad)]).run("p", "t")
    silent = tmp_path / "silent.py"
    silent.write_text("")
    with pytest.raises(AgentRunError, match="no output"):
        CommandRunner([sys.executable, str(silent)]).run("p", "t")
    with pytest.raises(AgentRunError):
        CommandRunner([str(tmp_path / "missing")]).run("p", "t")
    slow = tmp_path / "slow.py"
    slow.write_text("import time; time.sleep(5)")
    with pytest.raises(AgentRunError):
        CommandRunner([sys.executable, str(slow)], timeout=0.5).run("p", "t")
