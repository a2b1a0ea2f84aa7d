"""On-disk workspace: map.json, config.toml, records.jsonl and fixtures/."""

from __future__ import annotations

import contextlib
import fcntl
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .distiller import DEFAULT_STEP_LIMIT
from .edits import DEFAULT_ITEM_CAP
from .evictor import TagDelta
from .model import ContextMap, dumps_map, init_map, loads_map
from .policy import PolicyConfig, UpdateRecord

MAP_FILE = "map.json"
CONFIG_FILE = "config.toml"
RECORDS_FILE = "records.jsonl"
FIXTURES_DIR = "fixtures"
LOCK_FILE = ".lock"

DEFAULT_BUDGET = 1024
DEFAULT_MODEL = "gpt-5-mini"


class WorkspaceError(Exception):
    pass


def atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def default_config_text(budget: int) -> str:
    d = TagDelta()
    return (
        f"budget = {budget}\n"
        f"evolve_steps = 1\n"
        f"item_cap = {DEFAULT_ITEM_CAP}\n"
        f"step_limit = {DEFAULT_STEP_LIMIT}\n"
        f"fail_fast = false\n"
        f"\n[tag_delta]\n"
        f"helpful = {d.helpful}\n"
        f"neutral = {d.neutral}\n"
        f"harmful = {d.harmful}\n"
        f"stale = {d.stale}\n"
        f"\n[provider]\n"
        f'model = "{DEFAULT_MODEL}"\n'
        f'# api_base = "https://api.openai.com"  (or set PEEK_API_BASE)\n'
        f"# temperature = 1.0\n"
        f"timeout = 120.0\n"
        f"max_attempts = 3\n"
    )


@dataclass
class Workspace:
    root: Path

    @property
    def map_path(self) -> Path:
        return self.root / MAP_FILE

    @property
    def config_path(self) -> Path:
        return self.root / CONFIG_FILE

    @property
    def records_path(self) -> Path:
        return self.root / RECORDS_FILE

    @property
    def fixtures_dir(self) -> Path:
        return self.root / FIXTURES_DIR

    @classmethod
    def create(cls, root: str | Path, budget: int = DEFAULT_BUDGET) -> "Workspace":
        root = Path(root)
        if root.exists() and (not root.is_dir() or any(root.iterdir())):
            raise WorkspaceError(f"{root} exists and is not an empty directory")
        cmap = init_map(budget)
        root.mkdir(parents=True, exist_ok=True)
        ws = cls(root)
        (root / FIXTURES_DIR).mkdir()
        atomic_write_text(ws.config_path, default_config_text(budget))
        ws.save_map(cmap)
        ws.records_path.touch()
        return ws

    @classmethod
    def open(cls, root: str | Path) -> "Workspace":
        ws = cls(Path(root))
        if not ws.map_path.is_file():
            raise WorkspaceError(f"no workspace at {root} (missing {MAP_FILE})")
        return ws

    def load_map(self) -> ContextMap:
        return loads_map(self.map_path.read_text(encoding="utf-8"))

    def save_map(self, cmap: ContextMap) -> None:
        atomic_write_text(self.map_path, dumps_map(cmap))

    def raw_config(self) -> dict[str, Any]:
        if not self.config_path.is_file():
            return {}
        with open(self.config_path, "rb") as fh:
            try:
                return tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise WorkspaceError(f"{self.config_path}: {exc}") from None

    def policy_config(self, **overrides) -> PolicyConfig:
        raw = self.raw_config()
        provider = raw.get("provider", {})
        try:
            cfg = PolicyConfig(
                budget=int(raw.get("budget", DEFAULT_BUDGET)),
                evolve_steps=int(raw.get("evolve_steps", 1)),
                tag_delta=TagDelta(**raw.get("tag_delta", {})),
                item_cap=int(raw.get("item_cap", DEFAULT_ITEM_CAP)),
                step_limit=int(raw.get("step_limit", DEFAULT_STEP_LIMIT)),
                fail_fast=bool(raw.get("fail_fast", False)),
                model=str(provider.get("model", DEFAULT_MODEL)),
                temperature=provider.get("temperature"),
            )
        except (TypeError, ValueError) as exc:
            raise WorkspaceError(f"{self.config_path}: {exc}") from None
        for key, value in overrides.items():
            if value is not None:
                setattr(cfg, key, value)
        return cfg

    def provider_settings(self) -> dict[str, Any]:
        return dict(self.raw_config().get("provider", {}))

    def append_record(self, record: UpdateRecord) -> None:
        with open(self.records_path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")

    @contextlib.contextmanager
    def lock(self) -> Iterator[None]:
        with open(self.root / LOCK_FILE, "a") as fh:
            try:
                fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
            except BlockingIOError:
                raise WorkspaceError(f"workspace {self.root} is locked by another command") from None
            try:
                yield
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)
