"""Fuzzy value-to-span alignment and entity-level F1 scoring.

fuzzy_align is the heuristic the generation approach replaces: it finds
document spans equal to a stored value up to case and up to inserted or
deleted spaces, periods and commas between value characters. It
over-matches repeated values (precision loss) and cannot find values the
document shows in a different format (recall loss).

entity_f1 scores predicted records against gold records by exact
(key, value) string equality, case-folded when uncased, with multiset
semantics for multi-value keys.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

MAX_GAP = 3  # permitted run of space/period/comma between value characters


@dataclass
class Span:
    start: int
    end: int
    matched_text: str

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span [{self.start}, {self.end})")

    def overlaps(self, other: "Span") -> bool:
        return self.start < other.end and other.start < self.end


def _fuzzy_pattern(value: str) -> re.Pattern | None:
    core = [c for c in value if c not in " .,"]
    if not core:
        return None
    gap = "[ .,]{0,%d}" % MAX_GAP
    return re.compile(gap.join(re.escape(c) for c in core), re.IGNORECASE)


def fuzzy_align(value: str, document: str) -> list[Span]:
    """Non-overlapping matches of value in document, fuzzed over [ .,] and case.

    Greedy left-to-right with greedy gap widening, so spans come back in
    strictly increasing start order. Reformatting beyond punctuation and
    case (reordered dates, inserted digits) defeats the match, returning [].
    """
    if not value:
        raise ValueError("fuzzy_align needs a nonempty value")
    pat = _fuzzy_pattern(value)
    if pat is None:
        return []
    return [Span(m.start(), m.end(), m.group(0)) for m in pat.finditer(document)]


def score_alignment(auto: list[Span], gold: list[Span]) -> tuple[float, float]:
    """Overlap-based precision/recall of automatic spans against gold spans.

    A true positive is an auto span overlapping any gold span; recall
    counts gold spans overlapped by any auto span. Undefined ratios
    (no auto spans, or no gold spans) are reported as 0.
    """
    if not auto or not gold:
        return 0.0, 0.0
    tp = sum(1 for a in auto if any(a.overlaps(g) for g in gold))
    covered = sum(1 for g in gold if any(a.overlaps(g) for a in auto))
    return tp / len(auto), covered / len(gold)


# ---------------------------------------------------------------------------
# entity-level F1


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class KeyScore:
    precision: float
    recall: float
    f1: float
    tp: int
    n_pred: int
    n_gold: int


@dataclass
class MetricReport:
    per_key: dict[str, KeyScore]
    micro_precision: float
    micro_recall: float
    micro_f1: float
    macro_f1: float
    parse_failure_rate: float
    n_docs: int
    averaging: str = "micro"

    @property
    def f1(self) -> float:
        return self.micro_f1 if self.averaging == "micro" else self.macro_f1

    def as_kv_text(self) -> str:
        lines = [f"n_docs={self.n_docs}",
                 f"micro_precision={self.micro_precision:.6f}",
                 f"micro_recall={self.micro_recall:.6f}",
                 f"micro_f1={self.micro_f1:.6f}",
                 f"macro_f1={self.macro_f1:.6f}",
                 f"parse_failure_rate={self.parse_failure_rate:.6f}"]
        for key in sorted(self.per_key):
            s = self.per_key[key]
            lines.append(f"key.{key}.precision={s.precision:.6f}")
            lines.append(f"key.{key}.recall={s.recall:.6f}")
            lines.append(f"key.{key}.f1={s.f1:.6f}")
            lines.append(f"key.{key}.support={s.n_gold}")
        return "\n".join(lines) + "\n"

    def as_table(self) -> str:
        rows = [f"{'key':<16} {'P':>7} {'R':>7} {'F1':>7} {'gold':>6}"]
        for key in sorted(self.per_key):
            s = self.per_key[key]
            rows.append(f"{key:<16} {s.precision:>7.3f} {s.recall:>7.3f} {s.f1:>7.3f} {s.n_gold:>6}")
        rows.append(f"{'micro':<16} {self.micro_precision:>7.3f} {self.micro_recall:>7.3f} "
                    f"{self.micro_f1:>7.3f} {sum(s.n_gold for s in self.per_key.values()):>6}")
        rows.append(f"{'macro-f1':<16} {self.macro_f1:>31.3f}")
        rows.append(f"{'parse-failures':<16} {self.parse_failure_rate:>31.3f}")
        return "\n".join(rows)


def _pair_counts(record, cased: bool) -> dict[tuple[str, str], int]:
    counts: dict[tuple[str, str], int] = {}
    for k, v in record.pairs:
        key = (k, str(v)) if cased else (k.casefold(), str(v).casefold())
        counts[key] = counts.get(key, 0) + 1
    return counts


def entity_f1(predictions, golds, cased: bool = False,
              averaging: str = "micro") -> MetricReport:
    """Entity-level precision/recall/F1 over aligned prediction/gold records.

    predictions may contain None for unparseable outputs; those score as
    empty records and raise the parse-failure rate. Matching is exact
    string equality per (key, value), case-folded unless cased, each gold
    pair consumable once (multiset min).
    """
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions vs {len(golds)} golds")
    if averaging not in ("micro", "macro"):
        raise ValueError(f"unknown averaging {averaging!r}")

    tp: dict[str, int] = {}
    n_pred: dict[str, int] = {}
    n_gold: dict[str, int] = {}
    failures = 0
    for pred, gold in zip(predictions, golds):
        if pred is None:
            failures += 1
            pc: dict[tuple[str, str], int] = {}
        else:
            pc = _pair_counts(pred, cased)
        gc = _pair_counts(gold, cased)
        for (k, _), c in pc.items():
            n_pred[k] = n_pred.get(k, 0) + c
        for (k, _), c in gc.items():
            n_gold[k] = n_gold.get(k, 0) + c
        for kv, c in pc.items():
            hit = min(c, gc.get(kv, 0))
            if hit:
                tp[kv[0]] = tp.get(kv[0], 0) + hit

    keys = sorted(set(n_pred) | set(n_gold))
    per_key = {}
    for k in keys:
        t, p_n, g_n = tp.get(k, 0), n_pred.get(k, 0), n_gold.get(k, 0)
        p = t / p_n if p_n else 0.0
        r = t / g_n if g_n else 0.0
        per_key[k] = KeyScore(precision=p, recall=r, f1=_f1(p, r),
                              tp=t, n_pred=p_n, n_gold=g_n)

    total_tp = sum(tp.values())
    total_pred = sum(n_pred.values())
    total_gold = sum(n_gold.values())
    mp = total_tp / total_pred if total_pred else 0.0
    mr = total_tp / total_gold if total_gold else 0.0
    macro = sum(s.f1 for s in per_key.values()) / len(per_key) if per_key else 0.0
    return MetricReport(per_key=per_key, micro_precision=mp, micro_recall=mr,
                        micro_f1=_f1(mp, mr), macro_f1=macro,
                        parse_failure_rate=failures / len(golds) if golds else 0.0,
                        n_docs=len(golds), averaging=averaging)
