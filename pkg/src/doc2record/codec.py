"""Serialize and parse records in the four structured output formats.

A Record is an ordered multiset of (key, value) pairs in either "dict"
shape (unique keys) or "tuple_set" shape (unique pairs, multi-value keys
allowed). Values are strings or numeric literals; numeric literals keep
their exact lexeme (a parsed `5.00` re-serializes as `5.00`, never
`5.0`), so evaluation stays string-exact.

Parsers are strict: anything outside the emitted grammar is a classified
failure, never a partial record. Equality across formats is *canonical*:
pair order is ignored and values compare by lexeme, since XML cannot
carry the string/number distinction.
"""

from __future__ import annotations

import json
import math
import random
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from xml.sax.saxutils import escape as xml_escape
from xml.sax.saxutils import quoteattr as xml_quoteattr

FORMATS = ("json", "xml", "yaml", "pyliteral")
SHAPES = ("dict", "tuple_set")

FAIL_TOKENIZER = "tokenizer-artifact"
FAIL_GRAMMAR = "grammar-violation"
FAIL_DUPLICATE = "duplicate-key"
FAIL_TYPE = "type-error"

_NUM_RE = re.compile(r"-?[0-9]+(\.[0-9]+)?")


class CodecError(Exception):
    pass


class Num(str):
    """Numeric literal kept verbatim as its decimal lexeme."""

    def __new__(cls, value):
        if isinstance(value, bool):
            raise CodecError("booleans are not record values")
        if isinstance(value, float):
            if not math.isfinite(value):
                raise CodecError(f"non-finite number {value!r}")
            value = repr(value)
        elif isinstance(value, int):
            value = str(value)
        s = str.__new__(cls, value)
        if not _NUM_RE.fullmatch(s):
            raise CodecError(f"{value!r} is not a decimal numeric literal")
        return s


Value = str  # plain string or Num


def _check_text(s: str, what: str):
    if any(ord(c) < 32 for c in s):
        raise CodecError(f"{what} contains control characters: {s!r}")


@dataclass
class Record:
    pairs: list[tuple[str, Value]]
    shape: str = "dict"

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise CodecError(f"unknown record shape {self.shape!r}")
        self.pairs = [(k, v) for k, v in self.pairs]
        for k, v in self.pairs:
            if not isinstance(k, str) or not k:
                raise CodecError(f"record key must be a nonempty string, got {k!r}")
            _check_text(k, "key")
            if not isinstance(v, str):
                raise CodecError(f"record value must be a string or Num, got {type(v).__name__}")
            _check_text(v, "value")
        if self.shape == "dict":
            keys = [k for k, _ in self.pairs]
            if len(set(keys)) != len(keys):
                raise CodecError("dict-shape record has duplicate keys")
        else:
            seen = set()
            for k, v in self.pairs:
                item = (k, str(v), isinstance(v, Num))
                if item in seen:
                    raise CodecError("tuple_set-shape record has duplicate pairs")
                seen.add(item)

    def __len__(self):
        return len(self.pairs)

    def keys(self):
        return [k for k, _ in self.pairs]


@dataclass
class ParseOutcome:
    record: Record | None
    failure_kind: str | None = None

    @property
    def ok(self) -> bool:
        return self.record is not None


def canonical_pairs(r: Record) -> list[tuple[str, str]]:
    """Pairs as plain-string lexemes, sorted; the order/type-insensitive view."""
    return sorted((k, str(v)) for k, v in r.pairs)


def canonicalize(r: Record) -> Record:
    ordered = sorted(r.pairs, key=lambda kv: (kv[0], str(kv[1])))
    return Record(pairs=ordered, shape=r.shape)


def records_equal(a: Record, b: Record) -> bool:
    return canonical_pairs(a) == canonical_pairs(b)


def shuffle_pairs(r: Record, seed: int) -> Record:
    """Seeded Fisher-Yates permutation of the pairs; multiset preserved."""
    pairs = list(r.pairs)
    rng = random.Random(seed)
    for i in range(len(pairs) - 1, 0, -1):
        j = rng.randrange(i + 1)
        pairs[i], pairs[j] = pairs[j], pairs[i]
    return Record(pairs=pairs, shape=r.shape)


# ---------------------------------------------------------------------------
# serialization


class _Builder:
    """String builder that records the span of every key's content."""

    def __init__(self):
        self.parts: list[str] = []
        self.pos = 0
        self.key_spans: list[tuple[int, int]] = []

    def emit(self, s: str):
        self.parts.append(s)
        self.pos += len(s)

    def emit_key(self, s: str):
        self.key_spans.append((self.pos, self.pos + len(s)))
        self.emit(s)

    def text(self) -> str:
        return "".join(self.parts)


def _py_quote(s: str) -> str:
    return s.replace("\\", "\\\\").replace("'", "\\'")


def _json_quote(s: str) -> str:
    return json.dumps(s)[1:-1]


_YAML_PLAIN = re.compile(r"[A-Za-z0-9_](?:[A-Za-z0-9_ .\-]*[A-Za-z0-9_.\-])?")


def _yaml_plain_ok(s: str, inline: bool) -> bool:
    if not _YAML_PLAIN.fullmatch(s):
        return False
    if inline and ("," in s or "[" in s or "]" in s):
        return False
    return True


def _serialize_spans(r: Record, fmt: str) -> tuple[str, list[tuple[int, int]]]:
    b = _Builder()

    def py_value(v):
        return str(v) if isinstance(v, Num) else "'" + _py_quote(v) + "'"

    def json_value(v):
        return str(v) if isinstance(v, Num) else '"' + _json_quote(v) + '"'

    def yaml_value(v, inline):
        if isinstance(v, Num):
            return str(v)
        if _yaml_plain_ok(v, inline):
            return v
        return "'" + v.replace("'", "''") + "'"

    if fmt == "pyliteral":
        b.emit("{")
        for i, (k, v) in enumerate(r.pairs):
            if i:
                b.emit(", ")
            if r.shape == "dict":
                b.emit("'")
                b.emit_key(_py_quote(k))
                b.emit("': ")
                b.emit(py_value(v))
            else:
                b.emit("('")
                b.emit_key(_py_quote(k))
                b.emit("', ")
                b.emit(py_value(v))
                b.emit(")")
        b.emit("}")
    elif fmt == "json":
        if r.shape == "dict":
            b.emit("{")
            for i, (k, v) in enumerate(r.pairs):
                if i:
                    b.emit(", ")
                b.emit('"')
                b.emit_key(_json_quote(k))
                b.emit('": ')
                b.emit(json_value(v))
            b.emit("}")
        else:
            b.emit("[")
            for i, (k, v) in enumerate(r.pairs):
                if i:
                    b.emit(", ")
                b.emit('["')
                b.emit_key(_json_quote(k))
                b.emit('", ')
                b.emit(json_value(v))
                b.emit("]")
            b.emit("]")
    elif fmt == "yaml":
        if not r.pairs:
            b.emit("{}" if r.shape == "dict" else "[]")
        elif r.shape == "dict":
            for i, (k, v) in enumerate(r.pairs):
                if i:
                    b.emit("\n")
                if _yaml_plain_ok(k, False):
                    b.emit_key(k)
                else:
                    b.emit("'")
                    b.emit_key(k.replace("'", "''"))
                    b.emit("'")
                b.emit(": ")
                b.emit(yaml_value(v, False))
        else:
            for i, (k, v) in enumerate(r.pairs):
                if i:
                    b.emit("\n")
                b.emit("- [")
                if _yaml_plain_ok(k, True):
                    b.emit_key(k)
                else:
                    b.emit("'")
                    b.emit_key(k.replace("'", "''"))
                    b.emit("'")
                b.emit(", ")
                b.emit(yaml_value(v, True))
                b.emit("]")
    elif fmt == "xml":
        b.emit("<record>")
        for k, v in r.pairs:
            quoted = xml_quoteattr(k)
            b.emit('<field name=')
            b.emit(quoted[0])
            b.emit_key(quoted[1:-1])
            b.emit(quoted[-1])
            b.emit(">")
            b.emit(xml_escape(str(v)))
            b.emit("</field>")
        b.emit("</record>")
    else:
        raise CodecError(f"unknown format {fmt!r}")
    return b.text(), b.key_spans


def serialize(r: Record, fmt: str) -> str:
    """Render the record; deterministic given pair order."""
    return _serialize_spans(r, fmt)[0]


def serialize_with_key_spans(r: Record, fmt: str) -> tuple[str, list[tuple[int, int]]]:
    """serialize() plus the character spans holding key content (for audits)."""
    return _serialize_spans(r, fmt)


# ---------------------------------------------------------------------------
# parsing


class _Fail(Exception):
    def __init__(self, kind: str):
        self.kind = kind


def _finish(pairs: list[tuple[str, Value]], shape: str) -> Record:
    for k, v in pairs:
        if not isinstance(k, str) or not k or isinstance(k, Num):
            raise _Fail(FAIL_TYPE)
        if not isinstance(v, str):
            raise _Fail(FAIL_TYPE)
    if shape == "dict":
        keys = [k for k, _ in pairs]
        if len(set(keys)) != len(keys):
            raise _Fail(FAIL_DUPLICATE)
    else:
        seen = set()
        for k, v in pairs:
            item = (k, str(v), isinstance(v, Num))
            if item in seen:
                raise _Fail(FAIL_DUPLICATE)
            seen.add(item)
    try:
        return Record(pairs=pairs, shape=shape)
    except CodecError:
        raise _Fail(FAIL_GRAMMAR) from None


class _PyScanner:
    """Strict scanner for the python-literal record grammar."""

    def __init__(self, s: str):
        self.s = s
        self.i = 0

    def eof(self) -> bool:
        return self.i >= len(self.s)

    def expect(self, lit: str):
        if not self.s.startswith(lit, self.i):
            raise _Fail(FAIL_GRAMMAR)
        self.i += len(lit)

    def peek(self) -> str:
        return self.s[self.i] if self.i < len(self.s) else ""

    def string(self) -> str:
        self.expect("'")
        out = []
        while True:
            if self.eof():
                raise _Fail(FAIL_GRAMMAR)
            c = self.s[self.i]
            if c == "\\":
                if self.i + 1 >= len(self.s):
                    raise _Fail(FAIL_GRAMMAR)
                nxt = self.s[self.i + 1]
                if nxt not in ("'", "\\"):
                    raise _Fail(FAIL_GRAMMAR)
                out.append(nxt)
                self.i += 2
            elif c == "'":
                self.i += 1
                return "".join(out)
            else:
                out.append(c)
                self.i += 1

    def value(self) -> Value:
        if self.peek() == "'":
            return self.string()
        m = _NUM_RE.match(self.s, self.i)
        if not m or m.start() != self.i:
            raise _Fail(FAIL_GRAMMAR)
        self.i = m.end()
        return Num(m.group(0))


def _parse_pyliteral(s: str, shape: str) -> list[tuple[str, Value]]:
    sc = _PyScanner(s)
    sc.expect("{")
    pairs: list[tuple[str, Value]] = []
    if sc.peek() == "}":
        sc.expect("}")
        if not sc.eof():
            raise _Fail(FAIL_GRAMMAR)
        return pairs
    while True:
        if shape == "dict":
            k = sc.string()
            sc.expect(": ")
            v = sc.value()
        else:
            sc.expect("(")
            k = sc.string()
            sc.expect(", ")
            v = sc.value()
            sc.expect(")")
        pairs.append((k, v))
        if sc.peek() == ",":
            sc.expect(", ")
        else:
            break
    sc.expect("}")
    if not sc.eof():
        raise _Fail(FAIL_GRAMMAR)
    return pairs


def _parse_json(s: str, shape: str) -> list[tuple[str, Value]]:
    def on_const(_):
        raise _Fail(FAIL_TYPE)  # NaN/Infinity

    try:
        data = json.loads(s, object_pairs_hook=lambda p: ("__obj__", p),
                          parse_int=Num, parse_float=Num, parse_constant=on_const)
    except _Fail:
        raise
    except (json.JSONDecodeError, CodecError):
        raise _Fail(FAIL_GRAMMAR) from None

    def is_obj(x):
        return isinstance(x, tuple) and len(x) == 2 and x[0] == "__obj__"

    if shape == "dict":
        if not is_obj(data):
            raise _Fail(FAIL_GRAMMAR)
        pairs = data[1]
        for _, v in pairs:
            if not isinstance(v, str):
                raise _Fail(FAIL_TYPE)
        return list(pairs)
    if not isinstance(data, list):
        raise _Fail(FAIL_GRAMMAR)
    pairs = []
    for item in data:
        if not isinstance(item, list) or len(item) != 2:
            raise _Fail(FAIL_TYPE)
        k, v = item
        if not isinstance(k, str) or isinstance(k, Num) or not isinstance(v, str):
            raise _Fail(FAIL_TYPE)
        pairs.append((k, v))
    return pairs


_YAML_QUOTED = re.compile(r"'((?:[^']|'')*)'")


def _yaml_scalar(tok: str, inline: bool) -> Value:
    if _NUM_RE.fullmatch(tok):
        return Num(tok)
    m = _YAML_QUOTED.fullmatch(tok)
    if m:
        return m.group(1).replace("''", "'")
    if _yaml_plain_ok(tok, inline):
        return tok
    raise _Fail(FAIL_GRAMMAR)


def _split_yaml_inline(body: str) -> tuple[str, str]:
    # split "key, value" at the first comma outside quotes
    i = 0
    in_q = False
    while i < len(body):
        c = body[i]
        if c == "'":
            if in_q and body.startswith("''", i):
                i += 2
                continue
            in_q = not in_q
        elif c == "," and not in_q:
            if not body.startswith(", ", i):
                raise _Fail(FAIL_GRAMMAR)
            return body[:i], body[i + 2:]
        i += 1
    raise _Fail(FAIL_GRAMMAR)


def _parse_yaml(s: str, shape: str) -> list[tuple[str, Value]]:
    if s == ("{}" if shape == "dict" else "[]"):
        return []
    pairs: list[tuple[str, Value]] = []
    for line in s.split("\n"):
        if shape == "dict":
            # key is either quoted or plain up to the first ": "
            if line.startswith("'"):
                m = _YAML_QUOTED.match(line)
                if not m or not line.startswith(": ", m.end()):
                    raise _Fail(FAIL_GRAMMAR)
                key = m.group(1).replace("''", "'")
                rest = line[m.end() + 2:]
            else:
                idx = line.find(": ")
                if idx <= 0:
                    raise _Fail(FAIL_GRAMMAR)
                key = line[:idx]
                if not _yaml_plain_ok(key, False):
                    raise _Fail(FAIL_GRAMMAR)
                rest = line[idx + 2:]
            val = _yaml_scalar(rest, False)
            if isinstance(key, Num):
                raise _Fail(FAIL_TYPE)
            pairs.append((key, val))
        else:
            if not line.startswith("- [") or not line.endswith("]"):
                raise _Fail(FAIL_GRAMMAR)
            ktok, vtok = _split_yaml_inline(line[3:-1])
            key = _yaml_scalar(ktok, True)
            if isinstance(key, Num):
                raise _Fail(FAIL_TYPE)
            pairs.append((key, _yaml_scalar(vtok, True)))
    return pairs


def _parse_xml(s: str, shape: str) -> list[tuple[str, Value]]:
    try:
        root = ET.fromstring(s)
    except ET.ParseError:
        raise _Fail(FAIL_GRAMMAR) from None
    if root.tag != "record" or root.attrib:
        raise _Fail(FAIL_GRAMMAR)
    if root.text not in (None, ""):
        raise _Fail(FAIL_GRAMMAR)
    pairs: list[tuple[str, Value]] = []
    for child in root:
        if child.tag != "field" or set(child.attrib) != {"name"}:
            raise _Fail(FAIL_GRAMMAR)
        if len(child) or child.tail not in (None, ""):
            raise _Fail(FAIL_GRAMMAR)
        pairs.append((child.attrib["name"], child.text or ""))
    return pairs


def parse(s: str, fmt: str, shape: str = "dict") -> ParseOutcome:
    """Strictly parse one serialized record; failures are classified, never raised."""
    if fmt not in FORMATS:
        raise CodecError(f"unknown format {fmt!r}")
    if shape not in SHAPES:
        raise CodecError(f"unknown record shape {shape!r}")
    try:
        if any(ord(c) < 32 and c != "\n" for c in s):
            raise _Fail(FAIL_TOKENIZER)
        if "\n" in s and fmt != "yaml":
            raise _Fail(FAIL_GRAMMAR)
        if fmt == "pyliteral":
            pairs = _parse_pyliteral(s, shape)
        elif fmt == "json":
            pairs = _parse_json(s, shape)
        elif fmt == "yaml":
            pairs = _parse_yaml(s, shape)
        else:
            pairs = _parse_xml(s, shape)
        return ParseOutcome(record=_finish(pairs, shape))
    except _Fail as f:
        return ParseOutcome(record=None, failure_kind=f.kind)
