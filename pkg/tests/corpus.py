"""Response-fixture corpus shared by the parser tests and the acceptance suite."""

import json

from conftest import FIXTURES

from contextmap.cartographer import parse_cartographer_response
from contextmap.distiller import parse_distiller_response
from contextmap.jsonextract import ResponseParseError

RESPONSES = FIXTURES / "responses"


def cases():
    expected = json.loads((RESPONSES / "expected.json").read_text(encoding="utf-8"))
    out = []
    for name, exp in expected.items():
        while isinstance(exp, dict) and "same_as" in exp:
            exp = expected[exp["same_as"]]
        out.append((name, exp))
    return out


def parse_fixture(name):
    text = (RESPONSES / name).read_text(encoding="utf-8")
    parse = parse_distiller_response if ".distiller." in name else parse_cartographer_response
    return parse(text)


def check_case(name, exp):
    """Return None when the fixture parses as expected, else a failure message."""
    try:
        got = parse_fixture(name)
    except ResponseParseError as exc:
        return None if exp == "error" else f"unexpected parse error: {exc}"
    except Exception as exc:  # parser totality: nothing else may escape
        return f"untyped exception {type(exc).__name__}: {exc}"
    if exp == "error":
        return "expected a parse error, got a result"
    doc = got.to_dict()
    n_warnings = len(doc.pop("warnings"))
    want = dict(exp)
    want_warnings = want.pop("n_warnings")
    if doc != want:
        return f"parsed {doc!r}, expected {want!r}"
    if n_warnings != want_warnings:
        return f"{n_warnings} warnings, expected {want_warnings}"
    return None
