import re
from collections import Counter
from datetime import date

import numpy as np
import pytest

from doc2record.datasets import (
    DATE_FORMATS, LongDocExample, canonical_date, gazetteer, gen_dates,
    gen_longdoc, gen_names, gen_numbers, read_jsonl, write_jsonl,
)
from doc2record.preprocess import strip_numeric_commas


def test_date_family_has_ten_formats():
    assert len(DATE_FORMATS) == 10


def test_date_formats_cover_required_variants():
    d = date(2019, 5, 7)
    rendered = [f(d) for f in DATE_FORMATS]
    assert "May 7th, 2019" in rendered           # ordinal day + month name
    assert any("/19" in r or r.endswith("19") and len(r) == 8 for r in rendered)  # 2-digit year
    assert any("." in r for r in rendered)       # separator variant
    assert len(set(rendered)) == 10              # pairwise distinct surfaces


def test_gen_dates_targets_canonical():
    pat = re.compile(r"^\d{4}/\d{2}/\d{2}$")
    for _, target in gen_dates(300, 5):
        assert pat.fullmatch(target)


def test_gen_dates_oracle_agreement():
    """Re-parse each rendered input with a rule-based reader and compare."""
    months = {m: i + 1 for i, m in enumerate(
        ["january", "february", "march", "april", "may", "june", "july",
         "august", "september", "october", "november", "december"])}
    abbr = {m[:3]: i for m, i in months.items()}

    def parse_any(s):
        s = s.lower().replace(",", "")
        s = re.sub(r"^the ", "", s).replace(" of ", " ")
        s = re.sub(r"(\d+)(st|nd|rd|th)", r"\1", s)
        if "-" in s and not s[0].isdigit() or "-" in s and s.count("-") == 2 and not s.split("-")[1].isdigit():
            pass
        for sep in ("-", ".", "/", " "):
            parts = [p for p in s.split(sep) if p] if sep in s else None
            if not parts or len(parts) != 3:
                continue
            a, b, c = parts
            if a.isdigit() and len(a) == 4:              # Y-m-d
                return int(a), int(b), int(c)
            if a in months or a in abbr:                 # May 7 2019
                return int(c), months.get(a, abbr.get(a)), int(b)
            if b in months or b in abbr:                 # 7 May 2019 / 07-May-2019
                return int(c), months.get(b, abbr.get(b)), int(a)
            if sep == ".":                               # d.m.Y
                return int(c), int(b), int(a)
            if sep == "/":                               # m/d/Y or m/d/y
                year = int(c) if len(c) == 4 else (1900 + int(c) if int(c) >= 50 else 2000 + int(c))
                return year, int(a), int(b)
        raise AssertionError(f"unparsed {s!r}")

    for text, target in gen_dates(500, 11):
        y, m, d = parse_any(text)
        assert canonical_date(date(y, m, d)) == target, text


def test_gazetteer_size_and_disjoint_splits():
    train, ev = gazetteer("train"), gazetteer("eval")
    assert len(train) + len(ev) == 18000
    assert 0.08 <= len(ev) / 18000 <= 0.12
    assert not set(train) & set(ev)


def test_gen_names_targets_lowercase_and_consistent():
    for text, target in gen_names(500, 7):
        assert target == target.lower()
        assert text.lower() == target


def test_gen_names_casing_distribution():
    n = 10000
    buckets = Counter()
    for text, target in gen_names(n, 13):
        if text == target:
            buckets["lower"] += 1
        elif text == target.upper():
            buckets["upper"] += 1
        else:
            buckets["title"] += 1
    assert abs(buckets["lower"] / n - 0.05) <= 0.02
    assert abs(buckets["upper"] / n - 0.20) <= 0.02
    assert abs(buckets["title"] / n - 0.75) <= 0.02


def test_gen_names_eval_split_held_out():
    ev = set(gazetteer("eval"))
    for _, target in gen_names(200, 3, split="eval"):
        assert target in ev


def test_gen_numbers_examples_and_inverse():
    for text, target in gen_numbers(500, 17):
        v = int(text)
        assert 1000 <= v <= 10**9
        assert strip_numeric_commas(target) == text + ".00"
    assert dict(gen_numbers(1, 0) + [("123456789", "123,456,789.00")])["123456789"] \
        == "123,456,789.00"


def test_generators_deterministic():
    assert gen_dates(50, 9) == gen_dates(50, 9)
    assert gen_names(50, 9) == gen_names(50, 9)
    assert gen_numbers(50, 9) == gen_numbers(50, 9)
    a = gen_longdoc(3, 9, 80)
    b = gen_longdoc(3, 9, 80)
    assert [x.text for x in a] == [x.text for x in b]


def test_longdoc_values_present_and_spans_correct():
    for ex in gen_longdoc(20, 21, target_len_tokens=100):
        rec = dict(ex.record.pairs)
        assert set(rec) == {"party", "total", "due"}
        for key, spans in ex.spans.items():
            for a, b in spans:
                surface = ex.text[a:b]
                assert surface.lower() == rec[key].lower()
        # distractor: the amount value appears at least twice verbatim
        assert ex.text.count(rec["total"]) >= 2


def test_longdoc_values_land_past_chunk_zero():
    docs = gen_longdoc(40, 5, target_len_tokens=160)
    beyond = 0
    for ex in docs:
        midpoint = len(ex.text) // 2
        if any(s[0] > midpoint for spans in ex.spans.values() for s in spans):
            beyond += 1
    assert beyond > 10  # uniform placement reaches deep positions routinely


def test_longdoc_rejects_tiny_target():
    with pytest.raises(ValueError):
        gen_longdoc(1, 0, target_len_tokens=32)


def test_jsonl_round_trip(tmp_path):
    docs = gen_longdoc(4, 2, 80)
    path = tmp_path / "docs.jsonl"
    write_jsonl(path, docs)
    rows = read_jsonl(path)
    assert len(rows) == 4
    for row, ex in zip(rows, docs):
        assert row["input"] == ex.text
        assert [(k, str(v)) for k, v in row["record"].pairs] == \
               [(k, str(v)) for k, v in ex.record.pairs]
        assert row["spans"] == {k: [tuple(s) for s in v] for k, v in ex.spans.items()}


def test_jsonl_bad_row_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"input": "x", "record": [["a", "1"]]}\nnot json\n')
    with pytest.raises(ValueError, match="bad.jsonl:2"):
        read_jsonl(path)
