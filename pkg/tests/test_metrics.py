import itertools
import random

import pytest

from doc2record.codec import Record
from doc2record.metrics import MetricReport, Span, entity_f1, fuzzy_align, score_alignment


# --- brute-force oracle for multiset pair matching ---------------------------

def brute_force_tp(pred_pairs, gold_pairs, cased=False):
    """Maximum number of pred pairs injectively matched to equal gold pairs,
    found by exhaustive search over assignments."""
    def norm(p):
        return p if cased else (p[0].casefold(), p[1].casefold())

    preds = [norm(p) for p in pred_pairs]
    golds = [norm(g) for g in gold_pairs]

    def go(i, used):
        if i == len(preds):
            return 0
        best = go(i + 1, used)
        for j in range(len(golds)):
            if j not in used and preds[i] == golds[j]:
                best = max(best, 1 + go(i + 1, used | {j}))
        return best

    return go(0, frozenset())


# --- fuzzy alignment ----------------------------------------------------------

def test_fuzzy_tolerates_case_and_punctuation():
    spans = fuzzy_align("ACME Corp.", "yesterday acme corp signed the deal")
    assert len(spans) == 1
    assert spans[0].matched_text == "acme corp"


def test_fuzzy_multi_match_subtotal_total():
    doc = "Subtotal: $100.00 tax: $3.50 Total: $100.00"
    spans = fuzzy_align("100.00", doc)
    assert len(spans) == 2


def test_fuzzy_reformatting_defeats_match():
    assert fuzzy_align("2019/05/07", "signed on May 7th, 2019 in springfield") == []


def test_fuzzy_spans_ordered_nonoverlapping():
    doc = "ab ab ab ab"
    spans = fuzzy_align("ab", doc)
    starts = [s.start for s in spans]
    assert starts == sorted(starts)
    for a, b in zip(spans, spans[1:]):
        assert a.end <= b.start


def test_fuzzy_gap_width_capped():
    assert fuzzy_align("ab", "a,, b") != []          # 3 inserted chars
    assert fuzzy_align("ab", "a..,, b") == []        # 5 inserted chars


def test_fuzzy_rejects_empty_value():
    with pytest.raises(ValueError):
        fuzzy_align("", "doc")


def test_fuzzy_all_punct_value():
    assert fuzzy_align("..", "anything..") == []


def test_score_alignment_cases():
    g = [Span(10, 20, "x")]
    assert score_alignment([Span(10, 20, "x")], g) == (1.0, 1.0)
    auto = [Span(0, 5, "a"), Span(12, 18, "b"), Span(30, 34, "c")]
    p, r = score_alignment(auto, g)
    assert (p, r) == (1 / 3, 1.0)
    assert score_alignment([], g) == (0.0, 0.0)


# --- entity F1 ----------------------------------------------------------------

def rec(pairs, shape="tuple_set"):
    return Record(list(pairs), shape=shape)


def test_entity_f1_partial_recall():
    report = entity_f1([rec([("a", "x")])], [rec([("a", "x"), ("b", "y")])])
    assert report.micro_precision == 1.0
    assert report.micro_recall == 0.5
    assert abs(report.micro_f1 - 2 / 3) < 1e-12


def test_entity_f1_uncased_matches():
    report = entity_f1([rec([("name", "ACME")])], [rec([("name", "acme")])], cased=False)
    assert report.micro_f1 == 1.0
    cased = entity_f1([rec([("name", "ACME")])], [rec([("name", "acme")])], cased=True)
    assert cased.micro_f1 == 0.0


def test_entity_f1_multiset_semantics():
    pred = rec([("k", "v"), ("k", "v2")])
    gold = rec([("k", "v")])
    report = entity_f1([pred], [gold])
    assert report.per_key["k"].tp == 1
    assert report.micro_precision == 0.5 and report.micro_recall == 1.0


def test_parse_failures_count_as_empty():
    report = entity_f1([None, rec([("a", "x")])],
                       [rec([("a", "x")]), rec([("a", "x")])])
    assert report.parse_failure_rate == 0.5
    assert report.micro_recall == 0.5


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        entity_f1([], [rec([("a", "x")])])


def test_f1_symmetry():
    a = [rec([("k", "1"), ("k", "2"), ("j", "3")])]
    b = [rec([("k", "1"), ("j", "9")])]
    ab = entity_f1(a, b)
    ba = entity_f1(b, a)
    assert ab.micro_precision == ba.micro_recall
    assert ab.micro_recall == ba.micro_precision
    assert ab.micro_f1 == ba.micro_f1


def test_adding_correct_pair_never_hurts():
    gold = [rec([("a", "1"), ("b", "2")])]
    before = entity_f1([rec([("a", "1")])], gold)
    after = entity_f1([rec([("a", "1"), ("b", "2")])], gold)
    assert after.micro_precision >= before.micro_precision
    assert after.micro_recall >= before.micro_recall
    assert after.micro_f1 >= before.micro_f1


def test_against_brute_force_oracle():
    rng = random.Random(0)
    keys = ["a", "b", "c"]
    vals = ["1", "2", "X", "x"]
    for _ in range(300):
        docs_pred, docs_gold = [], []
        total_tp = total_pred = total_gold = 0
        for _ in range(5):
            def sample():
                pairs = []
                for _ in range(rng.randrange(0, 4)):
                    pairs.append((rng.choice(keys), rng.choice(vals)))
                # tuple_set needs unique pairs
                return rec(list(dict.fromkeys(pairs)))
            p, g = sample(), sample()
            docs_pred.append(p)
            docs_gold.append(g)
            total_tp += brute_force_tp(p.pairs, g.pairs)
            total_pred += len(p.pairs)
            total_gold += len(g.pairs)
        report = entity_f1(docs_pred, docs_gold)
        expect_p = total_tp / total_pred if total_pred else 0.0
        expect_r = total_tp / total_gold if total_gold else 0.0
        assert abs(report.micro_precision - expect_p) < 1e-12
        assert abs(report.micro_recall - expect_r) < 1e-12


def test_report_rendering():
    report = entity_f1([rec([("a", "x")])], [rec([("a", "x"), ("b", "y")])])
    text = report.as_kv_text()
    assert "micro_f1=" in text and "key.a.f1=" in text
    table = report.as_table()
    assert "micro" in table and "parse-failures" in table
