"""Context map data model: sections, stable item IDs, rendering, token accounting
and the versioned JSON store format.

Maps are immutable snapshots. Every operation that changes a map returns a new
``ContextMap``; the original is never touched, which is what makes update
cycles trivially atomic.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Any, Callable, Iterable, Iterator, Mapping

SCHEMA_VERSION = 1
MAX_SERIAL = 99999

TokenCounter = Callable[[str], int]


def approx_token_count(text: str) -> int:
    """Default counter: one token per four characters, rounded up."""
    return math.ceil(len(text) / 4)


class MapError(Exception):
    """Base class for context map errors."""


class MapConfigError(MapError):
    pass


class CapacityError(MapError):
    pass


class MapLoadError(MapError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class SectionKind(str, enum.Enum):
    CONTEXT_ROADMAP = "context_roadmap"
    CONTEXT_UNDERSTANDING = "context_understanding"
    DOMAIN_CONSTANTS = "domain_constants"
    PARSING_SCHEMA = "parsing_schema"
    ERROR_PATTERNS = "error_patterns"
    REUSABLE_RESULTS = "reusable_results"

    @property
    def prefix(self) -> str:
        return _PREFIXES[self]

    @property
    def heading(self) -> str:
        return "## " + self.value.replace("_", " ").upper()

    @property
    def description(self) -> str:
        return _DESCRIPTIONS[self]

    @classmethod
    def from_prefix(cls, prefix: str) -> "SectionKind":
        try:
            return _BY_PREFIX[prefix]
        except KeyError:
            raise ValueError(f"unknown section prefix {prefix!r}") from None


_PREFIXES = {
    SectionKind.CONTEXT_ROADMAP: "cr",
    SectionKind.CONTEXT_UNDERSTANDING: "cu",
    SectionKind.DOMAIN_CONSTANTS: "dc",
    SectionKind.PARSING_SCHEMA: "ps",
    SectionKind.ERROR_PATTERNS: "ep",
    SectionKind.REUSABLE_RESULTS: "rr",
}
_BY_PREFIX = {p: k for k, p in _PREFIXES.items()}

_DESCRIPTIONS = {
    SectionKind.CONTEXT_ROADMAP: "(Index of what the context contains and where to find it)",
    SectionKind.CONTEXT_UNDERSTANDING: (
        "(High-level understanding of the context: what it is, how it's organized, "
        "and what matters)"
    ),
    SectionKind.DOMAIN_CONSTANTS: (
        "(Exact parameters, formulas, thresholds, reference values, enum sets, "
        "and output field requirements defined by the context.)"
    ),
    SectionKind.PARSING_SCHEMA: "(How to parse and navigate the context's format)",
    SectionKind.ERROR_PATTERNS: "(Concrete, factual failure modes observed while processing the context)",
    SectionKind.REUSABLE_RESULTS: "(Reusable knowledge about the context)",
}

# Render order is the enum declaration order.
SECTION_ORDER: tuple[SectionKind, ...] = tuple(SectionKind)

_ID_RE = re.compile(r"^(cr|cu|dc|ps|ep|rr)-(\d{5})$")


@dataclass(frozen=True, order=True)
class ItemId:
    prefix: str
    serial: int

    def __post_init__(self):
        if self.prefix not in _BY_PREFIX:
            raise ValueError(f"unknown item id prefix {self.prefix!r}")
        if not 1 <= self.serial <= MAX_SERIAL:
            raise ValueError(f"item id serial out of range: {self.serial}")

    @classmethod
    def parse(cls, text: str) -> "ItemId":
        m = _ID_RE.match(text.strip()) if isinstance(text, str) else None
        if m is None:
            raise ValueError(f"malformed item id {text!r}")
        return cls(m.group(1), int(m.group(2)))

    @property
    def section(self) -> SectionKind:
        return _BY_PREFIX[self.prefix]

    def __str__(self) -> str:
        return f"{self.prefix}-{self.serial:05d}"


def clean_text(text: str) -> str:
    """Trim and fold line breaks so an item always renders as one bullet line."""
    return re.sub(r"\s*[\r\n]+\s*", " ", text.strip())


def normalize_text(text: str) -> str:
    """Comparison key for duplicate detection: lowercase, whitespace collapsed."""
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class MapItem:
    id: ItemId
    text: str
    created_seq: int
    modified_seq: int
    score: int = 0

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError(f"{self.id}: item text is empty")
        if self.created_seq > self.modified_seq:
            raise ValueError(f"{self.id}: created_seq > modified_seq")

    @property
    def section(self) -> SectionKind:
        return self.id.section

    def render(self) -> str:
        return f"- [{self.id}] {self.text}"


def _freeze_sections(sections: Mapping[SectionKind, Iterable[MapItem]]) -> Mapping[SectionKind, tuple]:
    out = {}
    for kind in SECTION_ORDER:
        items = tuple(sections.get(kind, ()))
        out[kind] = tuple(sorted(items, key=lambda it: (it.created_seq, it.id.serial)))
    return MappingProxyType(out)


@dataclass(frozen=True, eq=True)
class ContextMap:
    budget: int
    sections: Mapping[SectionKind, tuple] = field(default_factory=dict)
    next_serial: Mapping[str, int] = field(default_factory=dict)
    update_seq: int = 0

    __hash__ = None  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "sections", _freeze_sections(self.sections))
        serials = {p: int(self.next_serial.get(p, 1)) for p in _BY_PREFIX}
        object.__setattr__(self, "next_serial", MappingProxyType(serials))

    # -- queries -----------------------------------------------------------

    def items(self) -> Iterator[MapItem]:
        for kind in SECTION_ORDER:
            yield from self.sections[kind]

    def __len__(self) -> int:
        return sum(len(v) for v in self.sections.values())

    def get(self, item_id: ItemId) -> MapItem | None:
        for item in self.sections[item_id.section]:
            if item.id == item_id:
                return item
        return None

    def __contains__(self, item_id: object) -> bool:
        return isinstance(item_id, ItemId) and self.get(item_id) is not None

    # -- snapshot updates --------------------------------------------------

    def allocate_id(self, section: SectionKind) -> tuple[ItemId, "ContextMap"]:
        """Issue the next ID for ``section``; returns the ID and the map with its counter bumped."""
        prefix = section.prefix
        serial = self.next_serial[prefix]
        if serial > MAX_SERIAL:
            raise CapacityError(f"section {section.value} exhausted its {MAX_SERIAL} item ids")
        counters = dict(self.next_serial)
        counters[prefix] = serial + 1
        return ItemId(prefix, serial), replace(self, next_serial=counters)

    def with_item(self, item: MapItem) -> "ContextMap":
        """Insert or overwrite (by id) an item."""
        sections = dict(self.sections)
        kept = [it for it in sections[item.section] if it.id != item.id]
        sections[item.section] = (*kept, item)
        return replace(self, sections=sections)

    def without(self, item_ids: Iterable[ItemId]) -> "ContextMap":
        drop = set(item_ids)
        sections = {k: tuple(it for it in v if it.id not in drop) for k, v in self.sections.items()}
        return replace(self, sections=sections)

    def with_budget(self, budget: int) -> "ContextMap":
        return replace(self, budget=budget)

    def check_invariants(self) -> None:
        """Raise ``MapError`` if the snapshot violates a structural invariant."""
        seen = set()
        for kind, items in self.sections.items():
            for it in items:
                if it.id.prefix != kind.prefix:
                    raise MapError(f"{it.id} filed under {kind.value}")
                if it.id in seen:
                    raise MapError(f"duplicate id {it.id}")
                if it.id.serial >= self.next_serial[it.id.prefix]:
                    raise MapError(f"{it.id} was never allocated")
                seen.add(it.id)


def init_map(budget: int, counter: TokenCounter = approx_token_count) -> ContextMap:
    """Create an empty map with all sections present."""
    if not isinstance(budget, int) or budget <= 0:
        raise MapConfigError(f"budget must be a positive integer, got {budget!r}")
    cmap = ContextMap(budget=budget)
    floor = map_tokens(cmap, counter)
    if budget < floor:
        raise MapConfigError(f"budget {budget} is below the empty map's {floor} tokens")
    return cmap


def render_section(kind: SectionKind, items: Iterable[MapItem]) -> str:
    # The description line stays when items exist so that adding an item always
    # grows the rendering and removing one never does.
    lines = [kind.heading, kind.description]
    lines.extend(it.render() for it in items)
    return "\n".join(lines)


def render_map(cmap: ContextMap) -> str:
    blocks = [render_section(kind, cmap.sections[kind]) for kind in SECTION_ORDER]
    return "\n\n".join(blocks) + "\n"


def map_tokens(cmap: ContextMap, counter: TokenCounter = approx_token_count) -> int:
    return counter(render_map(cmap))


# -- persistence -------------------------------------------------------------


def serialize_map(cmap: ContextMap) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "budget": cmap.budget,
        "update_seq": cmap.update_seq,
        "next_serial": dict(cmap.next_serial),
        "sections": {
            kind.value: [
                {
                    "id": str(it.id),
                    "text": it.text,
                    "created_seq": it.created_seq,
                    "modified_seq": it.modified_seq,
                    "score": it.score,
                }
                for it in cmap.sections[kind]
            ]
            for kind in SECTION_ORDER
        },
    }


def _int_field(doc: Mapping, key: str, minimum: int, where: str = "") -> int:
    name = f"{where}{key}"
    if key not in doc:
        raise MapLoadError(name, "missing")
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise MapLoadError(name, f"expected integer, got {value!r}")
    if value < minimum:
        raise MapLoadError(name, f"must be >= {minimum}, got {value}")
    return value


def deserialize_map(doc: Any) -> ContextMap:
    if not isinstance(doc, Mapping):
        raise MapLoadError("document", "expected a JSON object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise MapLoadError("schema_version", f"unsupported schema version {doc.get('schema_version')!r}")
    budget = _int_field(doc, "budget", 1)
    update_seq = _int_field(doc, "update_seq", 0)

    raw_serials = doc.get("next_serial")
    if not isinstance(raw_serials, Mapping):
        raise MapLoadError("next_serial", "expected an object")
    unknown = set(raw_serials) - set(_BY_PREFIX)
    if unknown:
        raise MapLoadError("next_serial", f"unknown prefixes {sorted(unknown)}")
    serials = {p: _int_field(raw_serials, p, 1, "next_serial.") for p in _BY_PREFIX}

    raw_sections = doc.get("sections")
    if not isinstance(raw_sections, Mapping):
        raise MapLoadError("sections", "expected an object")
    sections: dict[SectionKind, list[MapItem]] = {}
    seen: set[ItemId] = set()
    for name, entries in raw_sections.items():
        try:
            kind = SectionKind(name)
        except ValueError:
            raise MapLoadError(f"sections.{name}", "unknown section") from None
        if not isinstance(entries, list):
            raise MapLoadError(f"sections.{name}", "expected an array")
        items = []
        for i, entry in enumerate(entries):
            where = f"sections.{name}[{i}]."
            if not isinstance(entry, Mapping):
                raise MapLoadError(where.rstrip("."), "expected an object")
            try:
                item_id = ItemId.parse(entry.get("id"))
            except ValueError as exc:
                raise MapLoadError(where + "id", str(exc)) from None
            if item_id.section is not kind:
                raise MapLoadError(where + "id", f"{item_id} does not belong to {name}")
            if item_id in seen:
                raise MapLoadError(where + "id", f"duplicate id {item_id}")
            if item_id.serial >= serials[item_id.prefix]:
                raise MapLoadError(where + "id", f"{item_id} not below next_serial")
            seen.add(item_id)
            text = entry.get("text")
            if not isinstance(text, str) or not text.strip():
                raise MapLoadError(where + "text", "expected non-empty string")
            created = _int_field(entry, "created_seq", 0, where)
            modified = _int_field(entry, "modified_seq", created, where)
            score = entry.get("score")
            if isinstance(score, bool) or not isinstance(score, int):
                raise MapLoadError(where + "score", f"expected integer, got {score!r}")
            items.append(MapItem(item_id, text, created, modified, score))
        sections[kind] = items
    return ContextMap(budget=budget, sections=sections, next_serial=serials, update_seq=update_seq)


def dumps_map(cmap: ContextMap) -> str:
    return json.dumps(serialize_map(cmap), indent=2, ensure_ascii=False) + "\n"


def loads_map(text: str) -> ContextMap:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MapLoadError("document", f"invalid JSON: {exc}") from None
    return deserialize_map(doc)
