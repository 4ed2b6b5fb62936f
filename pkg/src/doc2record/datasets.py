"""Synthetic standardization tasks and a long-document extraction task.

Each generator is a pure function of (n, seed) and emits (input, target)
string pairs consistent with its own standardization rule, so a
rule-based oracle can verify every example without any model. The
long-document generator additionally returns the gold record and the
character spans where each value was planted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

from .codec import Record

# ---------------------------------------------------------------------------
# dates

MONTHS = ("january", "february", "march", "april", "may", "june", "july",
          "august", "september", "october", "november", "december")
MONTH_ABBR = tuple(m[:3] for m in MONTHS)

DATE_RANGE = (date(1950, 1, 1), date(2021, 12, 31))


def _ordinal(day: int) -> str:
    if 10 <= day % 100 <= 20:
        return f"{day}th"
    return f"{day}{ {1: 'st', 2: 'nd', 3: 'rd'}.get(day % 10, 'th') }"


def _title(s: str) -> str:
    return s[0].upper() + s[1:]


# ten input formats: month-name, ordinal-day, two-digit-year and
# separator variants; surfaces are mutually unambiguous
DATE_FORMATS = (
    lambda d: f"{_title(MONTHS[d.month - 1])} {_ordinal(d.day)}, {d.year}",      # May 7th, 2019
    lambda d: f"{_title(MONTHS[d.month - 1])} {d.day:02d}, {d.year}",            # May 07, 2019
    lambda d: f"{d.day} {_title(MONTHS[d.month - 1])} {d.year}",                 # 7 May 2019
    lambda d: f"{d.year}-{d.month:02d}-{d.day:02d}",                             # 2019-05-07
    lambda d: f"{d.month:02d}/{d.day:02d}/{d.year}",                             # 05/07/2019
    lambda d: f"{d.day:02d}.{d.month:02d}.{d.year}",                             # 07.05.2019
    lambda d: f"the {_ordinal(d.day)} of {_title(MONTHS[d.month - 1])}, {d.year}",
    lambda d: f"{d.month:02d}/{d.day:02d}/{d.year % 100:02d}",                   # 05/07/19
    lambda d: f"{d.day:02d}-{_title(MONTH_ABBR[d.month - 1])}-{d.year}",         # 07-May-2019
    lambda d: f"{_title(MONTHS[d.month - 1])} {d.day} {d.year}",                 # May 7 2019
)


def canonical_date(d: date) -> str:
    return f"{d.year}/{d.month:02d}/{d.day:02d}"


def gen_dates(n: int, seed: int) -> list[tuple[str, str]]:
    """Random dates rendered in one of ten formats, target Y/m/d."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    span = (DATE_RANGE[1] - DATE_RANGE[0]).days + 1
    out = []
    for _ in range(n):
        d = DATE_RANGE[0] + timedelta(days=int(rng.integers(0, span)))
        fmt = DATE_FORMATS[int(rng.integers(0, len(DATE_FORMATS)))]
        out.append((fmt(d), canonical_date(d)))
    return out


# ---------------------------------------------------------------------------
# names

FIRST_NAMES = (
    "james", "mary", "robert", "patricia", "john", "jennifer", "michael",
    "linda", "david", "elizabeth", "william", "barbara", "richard", "susan",
    "joseph", "jessica", "thomas", "sarah", "charles", "karen", "christopher",
    "lisa", "daniel", "nancy", "matthew", "betty", "anthony", "sandra",
    "mark", "margaret", "donald", "ashley", "steven", "kimberly", "andrew",
    "emily", "paul", "donna", "joshua", "michelle", "kenneth", "carol",
    "kevin", "amanda", "brian", "melissa", "george", "deborah", "timothy",
    "stephanie", "ronald", "dorothy", "jason", "rebecca", "edward", "sharon",
    "jeffrey", "laura", "ryan", "cynthia", "jacob", "amy", "gary", "kathleen",
    "nicholas", "angela", "eric", "shirley", "jonathan", "brenda", "stephen",
    "emma", "larry", "anna", "justin", "pamela", "scott", "nicole", "brandon",
    "samantha", "benjamin", "katherine", "samuel", "christine", "gregory",
    "helen", "alexander", "debra", "patrick", "rachel", "frank", "carolyn",
    "raymond", "janet", "jack", "maria", "dennis", "olivia", "jerry",
    "heather", "tyler", "catherine", "aaron", "frances", "jose", "ann",
    "adam", "joyce", "nathan", "diane", "henry", "alice", "zachary", "julie",
    "douglas", "jean", "peter", "victoria", "kyle", "ruth", "noah", "judith",
    "ethan", "virginia", "jeremy", "lauren", "walter", "grace", "christian",
    "janice", "keith", "evelyn", "roger", "hannah", "terry", "andrea",
    "austin", "martha", "sean", "gloria", "gerald", "sophia", "carl",
    "denise", "harold", "jacqueline", "dylan", "teresa", "arthur", "irene",
)

LAST_NAMES = (
    "smith", "johnson", "williams", "brown", "jones", "garcia", "miller",
    "davis", "rodriguez", "martinez", "hernandez", "lopez", "gonzalez",
    "wilson", "anderson", "thomas", "taylor", "moore", "jackson", "martin",
    "lee", "perez", "thompson", "white", "harris", "sanchez", "clark",
    "ramirez", "lewis", "robinson", "walker", "young", "allen", "king",
    "wright", "scott", "torres", "nguyen", "hill", "flores", "green",
    "adams", "nelson", "baker", "hall", "rivera", "campbell", "mitchell",
    "carter", "roberts", "gomez", "phillips", "evans", "turner", "diaz",
    "parker", "cruz", "edwards", "collins", "reyes", "stewart", "morris",
    "morales", "murphy", "cook", "rogers", "gutierrez", "ortiz", "morgan",
    "cooper", "peterson", "bailey", "reed", "kelly", "howard", "ramos",
    "kim", "cox", "ward", "richardson", "watson", "brooks", "chavez",
    "wood", "james", "bennett", "gray", "mendoza", "ruiz", "hughes",
    "price", "alvarez", "castillo", "sanders", "patel", "myers", "long",
    "ross", "foster", "jimenez", "powell", "jenkins", "perry", "russell",
    "sullivan", "bell", "coleman", "butler", "henderson", "barnes",
    "fisher", "vasquez", "simmons", "romero", "jordan", "patterson",
    "alexander", "hamilton", "graham", "reynolds",
)

HELD_OUT_EVERY = 10  # every tenth gazetteer entry is reserved for eval


def gazetteer(split: str = "train") -> list[str]:
    """Two-token names; roughly 18,000 entries, split train/eval disjointly."""
    names = [f"{f} {l}" for f in FIRST_NAMES for l in LAST_NAMES]
    if split == "train":
        return [nm for i, nm in enumerate(names) if i % HELD_OUT_EVERY != 0]
    if split == "eval":
        return [nm for i, nm in enumerate(names) if i % HELD_OUT_EVERY == 0]
    raise ValueError(f"unknown split {split!r}")


def _cased(name: str, u: float) -> str:
    if u < 0.05:
        return name                      # 5% lowercase
    if u < 0.25:
        return name.upper()              # 20% uppercase
    return " ".join(_title(w) for w in name.split())  # 75% title case


def gen_names(n: int, seed: int, split: str = "train") -> list[tuple[str, str]]:
    """Names with 5/20/75 lower/upper/title casing; target is lowercase."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pool = gazetteer(split)
    out = []
    for _ in range(n):
        name = pool[int(rng.integers(0, len(pool)))]
        out.append((_cased(name, float(rng.random())), name))
    return out


# ---------------------------------------------------------------------------
# numbers

def format_number(value: int) -> str:
    return f"{value:,}.00"


def gen_numbers(n: int, seed: int) -> list[tuple[str, str]]:
    """Integers uniform in [1e3, 1e9]; target adds thousands commas and .00."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        v = int(rng.integers(1000, 10**9 + 1))
        out.append((str(v), format_number(v)))
    return out


# ---------------------------------------------------------------------------
# long documents

FILLER_TEMPLATES = (
    "the parties have reviewed the terms described in section {a} of this document .",
    "nothing in this clause shall limit the obligations agreed by the undersigned .",
    "records of prior correspondence are archived with the clerk for reference .",
    "each schedule attached hereto forms an integral part of the agreement .",
    "the committee met to discuss routine operational matters and adjourned .",
    "standard provisions regarding notice periods remain unchanged from the prior draft .",
    "all annexes were circulated to counsel before the signing session .",
    "the register of amendments lists minor clerical corrections only .",
    "ordinary business expenses are reported in the quarterly statement .",
    "this page intentionally summarises boilerplate provisions without effect .",
    "general definitions follow the usage established in clause {a} above .",
    "the custodian retains copies of all executed instruments for audit .",
    "routine filings were submitted to the registry within the usual deadline .",
    "the appendix enumerates exhibits referenced throughout the main body .",
    "counsel confirmed that no outstanding objections remain on record .",
    "the minutes note attendance and the approval of the previous session .",
)

FIELD_SENTENCES = {
    "party": "this agreement is entered into by {value} .",
    "total": "the total amount payable is {value} usd .",
    "due": "payment is due on {value} .",
}
DISTRACTOR_SENTENCE = "the subtotal listed is {value} usd ."


@dataclass
class LongDocExample:
    text: str
    record: Record
    spans: dict[str, list[tuple[int, int]]] = field(default_factory=dict)


def _gen_field_value(key: str, rng) -> tuple[str, str]:
    """Returns (surface form planted in text, standardized record value)."""
    if key == "party":
        pool = gazetteer("train")
        name = pool[int(rng.integers(0, len(pool)))]
        return " ".join(_title(w) for w in name.split()), name
    if key == "total":
        amount = f"{int(rng.integers(100, 10000))}.{int(rng.integers(0, 100)):02d}"
        return amount, amount
    if key == "due":
        span = (DATE_RANGE[1] - DATE_RANGE[0]).days + 1
        d = DATE_RANGE[0] + timedelta(days=int(rng.integers(0, span)))
        value = canonical_date(d)
        return value, value
    raise ValueError(f"unknown longdoc field {key!r}")


def gen_longdoc(n: int, seed: int, target_len_tokens: int = 256,
                fields: tuple[str, ...] = ("party", "total", "due")) -> list[LongDocExample]:
    """Filler documents with field values planted at random positions.

    Lengths are measured in whitespace words (a proxy for tokens under a
    word-merging vocab). Positions are uniform over the whole document,
    so values routinely land past the first chunk boundary. When "total"
    is among the fields, the same amount also appears on a subtotal line
    as a distractor, so exact string search finds it at least twice.
    """
    if target_len_tokens < 64:
        raise ValueError("target_len_tokens must be >= 64")
    if not fields:
        raise ValueError("fields must be nonempty")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        # (sentence, gold key or None, planted surface or None)
        sentences: list[tuple[str, str | None, str | None]] = []
        words = 0
        while words < target_len_tokens:
            tpl = FILLER_TEMPLATES[int(rng.integers(0, len(FILLER_TEMPLATES)))]
            s = tpl.format(a=int(rng.integers(1, 30)))
            sentences.append((s, None, None))
            words += len(s.split())

        pairs = []
        inserts = []
        for key in fields:
            surface, value = _gen_field_value(key, rng)
            pairs.append((key, value))
            pos = int(rng.integers(0, len(sentences) + 1))
            inserts.append((pos, (FIELD_SENTENCES[key].format(value=surface), key, surface)))
            if key == "total":
                # distractor: the same amount on a subtotal line, not gold
                pos2 = int(rng.integers(0, len(sentences) + 1))
                inserts.append((pos2, (DISTRACTOR_SENTENCE.format(value=surface), None, surface)))
        for pos, entry in sorted(inserts, key=lambda x: x[0], reverse=True):
            sentences.insert(pos, entry)

        spans: dict[str, list[tuple[int, int]]] = {}
        offset = 0
        parts = []
        for i, (s, key, surface) in enumerate(sentences):
            if key is not None:
                start = offset + s.index(surface)
                spans.setdefault(key, []).append((start, start + len(surface)))
            parts.append(s)
            offset += len(s) + 1  # joined by single spaces
        text = " ".join(parts)
        out.append(LongDocExample(text=text, record=Record(pairs, shape="dict"), spans=spans))
    return out


# ---------------------------------------------------------------------------
# dataset files: one JSON object per line, {"input": ..., "record": [[k, v], ...]}
# with an optional "spans" object of gold character offsets


def write_jsonl(path, examples):
    """examples: iterable of (input, Record) or LongDocExample."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            if isinstance(ex, LongDocExample):
                obj = {"input": ex.text,
                       "record": [[k, str(v)] for k, v in ex.record.pairs]}
                if ex.spans:
                    obj["spans"] = {k: [list(s) for s in v] for k, v in ex.spans.items()}
            else:
                text, rec = ex
                pairs = rec.pairs if isinstance(rec, Record) else rec
                obj = {"input": text, "record": [[k, str(v)] for k, v in pairs]}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_jsonl(path, shape: str = "dict") -> list[dict]:
    """Parsed dataset rows: input text, Record, optional gold spans."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = Record([(k, v) for k, v in obj["record"]], shape=shape)
            except Exception as exc:
                raise ValueError(f"{path}:{lineno}: bad dataset row: {exc}") from exc
            rows.append({"input": obj["input"], "record": rec,
                         "spans": {k: [tuple(s) for s in v]
                                   for k, v in obj.get("spans", {}).items()}})
    return rows


def pairs_to_target(pairs: list[tuple[str, str]]) -> Record:
    return Record(list(pairs), shape="dict")


def standardization_record(task: str, target: str) -> Record:
    """Single-field record wrapping a standardization target string."""
    key = {"dates": "date", "names": "name", "numbers": "number"}[task]
    return Record([(key, target)], shape="dict")
