"""Re-record the golden scenario fixtures.

Run only when a prompt or serialization change is intended:

    python tests/fixtures/scenario/regenerate.py

The canned model replies in responses/ play the part of the live provider;
the recorded provider.jsonl pins the exact prompts they answer.
"""

from pathlib import Path

from contextmap.model import dumps_map
from contextmap.policy import PolicyConfig, ScriptedRunner, run_policy
from contextmap.providers import RecordingProvider, ScriptedProvider

HERE = Path(__file__).parent


def main():
    tasks = (HERE / "tasks.txt").read_text(encoding="utf-8").splitlines()
    replies = [(HERE / "responses" / n).read_text(encoding="utf-8") for n in ("distiller_1.txt", "cartographer_1.txt")]
    fixture = HERE / "provider.jsonl"
    fixture.unlink(missing_ok=True)
    provider = RecordingProvider(ScriptedProvider(replies), fixture)
    runner = ScriptedRunner.from_dir(HERE / "scripts")
    result = run_policy("context.txt", tasks, PolicyConfig(budget=1024, evolve_steps=1), runner, provider)
    assert result.ok, result.records
    (HERE / "golden_map.json").write_text(dumps_map(result.map), encoding="utf-8")
    print(dumps_map(result.map))


if __name__ == "__main__":
    main()
