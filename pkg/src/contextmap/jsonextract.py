"""Pull the first JSON object out of free-form model output."""

from __future__ import annotations

import json
import re
from typing import Iterable, Iterator


class ResponseParseError(ValueError):
    """Model output did not contain a usable JSON object."""

    def __init__(self, message: str, snippet: str = ""):
        super().__init__(message)
        self.snippet = snippet


def snippet_of(text, limit: int = 200) -> str:
    text = text if isinstance(text, str) else repr(text)
    return text if len(text) <= limit else text[:limit] + "..."


def _balanced_end(text: str, start: int) -> int:
    """Index one past the brace closing the object opened at ``start``, or -1."""
    depth = 0
    in_str = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i + 1
    return -1


_FENCE_RE = re.compile(r"```[A-Za-z0-9_-]*[ \t]*\n(.*?)```", re.DOTALL)


def _objects(text: str) -> Iterator[dict]:
    pos = text.find("{")
    while pos != -1:
        end = _balanced_end(text, pos)
        if end != -1:
            try:
                obj = json.loads(text[pos:end])
            except json.JSONDecodeError:
                pass
            else:
                if isinstance(obj, dict):
                    yield obj
                    pos = text.find("{", end)
                    continue
        pos = text.find("{", pos + 1)


def extract_json_object(text: str, keys: Iterable[str] = ()) -> dict:
    """Return the first balanced ``{...}`` span that decodes to a JSON object.

    Fenced code blocks are searched before the raw text, so stray braces in
    surrounding prose do not capture the scan. When ``keys`` is given, objects
    carrying none of those keys are passed over.
    """
    if not isinstance(text, str):
        raise ResponseParseError("response is not text", snippet_of(text))
    wanted = set(keys)
    for region in [*_FENCE_RE.findall(text), text]:
        for obj in _objects(region):
            if not wanted or wanted & obj.keys():
                return obj
    what = f"JSON object with any of {sorted(wanted)}" if wanted else "JSON object"
    raise ResponseParseError(f"no {what} found in response", snippet_of(text))
