"""Greedy merge-vocabulary tokenizer with two regimes.

The default regime learns multi-character tokens by frequency merges
(numbers and cased words fragment unpredictably, which is the behaviour
under study); `digit_split=True` forbids any multi-character token that
contains a digit, so numeric spans always tokenize one character at a
time and can be copied token-for-token.

Whitespace attaches to the following word (" obama" style tokens), so a
case change can shift token boundaries. Structural symbols for output
formats get dedicated reserved ids that always match atomically.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
SPECIALS = ("<pad>", "<bos>", "<eos>")

# every printable character is always encodable, plus tab/newline
FALLBACK_CHARS = tuple(sorted(set(string.printable) - set("\r\x0b\x0c")))


class TokenizerError(Exception):
    pass


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    reserved: dict[str, int] = field(default_factory=dict)
    digit_split: bool = False

    def __post_init__(self):
        if self.tokens[:3] != SPECIALS:
            raise TokenizerError("vocab must start with <pad>, <bos>, <eos> at ids 0,1,2")
        if len(set(self.tokens)) != len(self.tokens):
            raise TokenizerError("vocab contains duplicate tokens")

    def __len__(self):
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.tokens.index(token)


@dataclass
class TokenSeq:
    """Token ids plus the character span each token covered (for debugging)."""

    ids: np.ndarray
    offsets: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids.tolist())


def coverage_minimum() -> int:
    return len(SPECIALS) + len(FALLBACK_CHARS)


def _split_units(text: str) -> list[str]:
    """Words carry their single leading space; other whitespace stands alone."""
    units = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == " " and i + 1 < n and not text[i + 1].isspace():
            j = i + 1
            while j < n and not text[j].isspace():
                j += 1
            units.append(text[i:j])
            i = j
        elif ch.isspace():
            units.append(ch)
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace():
                j += 1
            units.append(text[i:j])
            i = j
    return units


def _has_digit(s: str) -> bool:
    return any(c in "0123456789" for c in s)


def build_vocab(corpus, size: int, digit_split: bool = False) -> Vocab:
    """Learn a merge vocabulary of at most `size` tokens from a text stream.

    Greedy highest-frequency adjacent-pair merges, ties broken
    lexicographically so identical corpora give identical vocabs. Merges
    never cross word-unit boundaries. With digit_split no merged token
    may contain a digit.
    """
    if isinstance(corpus, str):
        corpus = [corpus]
    min_size = coverage_minimum()
    if size < min_size:
        raise TokenizerError(f"vocab size {size} below character-coverage minimum {min_size}")

    unit_freq: dict[str, int] = {}
    extra_chars: set[str] = set()
    for text in corpus:
        for u in _split_units(text):
            unit_freq[u] = unit_freq.get(u, 0) + 1
        extra_chars.update(c for c in text if c not in FALLBACK_CHARS)

    fallback = tuple(sorted(set(FALLBACK_CHARS) | extra_chars))
    base = list(SPECIALS) + list(fallback)
    budget = size - len(base)

    # symbol sequences per unique unit, with incremental pair bookkeeping
    units: list[list[str]] = [list(u) for u in unit_freq]
    freqs: list[int] = list(unit_freq.values())
    pair_counts: dict[tuple[str, str], int] = {}
    pair_units: dict[tuple[str, str], set[int]] = {}

    def add_pairs(idx: int):
        syms = units[idx]
        for a, b in zip(syms, syms[1:]):
            pair_counts[(a, b)] = pair_counts.get((a, b), 0) + freqs[idx]
            pair_units.setdefault((a, b), set()).add(idx)

    def drop_pairs(idx: int):
        syms = units[idx]
        for a, b in zip(syms, syms[1:]):
            pair_counts[(a, b)] -= freqs[idx]
            if pair_counts[(a, b)] <= 0:
                del pair_counts[(a, b)]
                pair_units.pop((a, b), None)

    for i in range(len(units)):
        add_pairs(i)

    merges: list[str] = []
    banned: set[tuple[str, str]] = set()
    while len(merges) < budget and pair_counts:
        candidates = [(cnt, pair) for pair, cnt in pair_counts.items() if pair not in banned]
        if not candidates:
            break
        best = max(candidates, key=lambda x: (x[0], tuple(-ord(c) for c in x[1][0] + x[1][1])))
        pair = best[1]
        merged = pair[0] + pair[1]
        if digit_split and len(merged) > 1 and _has_digit(merged):
            banned.add(pair)
            continue
        merges.append(merged)
        for idx in sorted(pair_units.get(pair, ())):
            drop_pairs(idx)
            syms = units[idx]
            out: list[str] = []
            k = 0
            while k < len(syms):
                if k + 1 < len(syms) and syms[k] == pair[0] and syms[k + 1] == pair[1]:
                    out.append(merged)
                    k += 2
                else:
                    out.append(syms[k])
                    k += 1
            units[idx] = out
            add_pairs(idx)

    return Vocab(tokens=tuple(base + merges), digit_split=digit_split)


def inject_structural_tokens(v: Vocab, symbols: list[str]) -> Vocab:
    """Assign dedicated reserved ids to structural symbols (sorted order).

    Reserved symbols tokenize atomically, taking precedence over learned
    tokens. Re-injecting a symbol that is already reserved is an error.
    """
    if not symbols:
        raise TokenizerError("no structural symbols given")
    reserved = dict(v.reserved)
    tokens = list(v.tokens)
    for sym in sorted(symbols):
        if sym in reserved:
            raise TokenizerError(f"structural symbol {sym!r} already reserved")
        reserved[sym] = len(tokens)
        tokens.append(f"<sym:{sym}>")
    return Vocab(tokens=tuple(tokens), reserved=reserved, digit_split=v.digit_split)


class _Matcher:
    """Longest-match index over a vocab, cached per Vocab instance."""

    def __init__(self, v: Vocab):
        self.by_first: dict[str, list[tuple[str, int]]] = {}
        for tid, tok in enumerate(v.tokens):
            if tid < 3 or tid in v.reserved.values():
                continue
            if tok.startswith("<sym:"):
                continue
            self.by_first.setdefault(tok[0], []).append((tok, tid))
        for lst in self.by_first.values():
            lst.sort(key=lambda t: len(t[0]), reverse=True)
        self.reserved = sorted(v.reserved.items(), key=lambda kv: len(kv[0]), reverse=True)


_matcher_cache: dict[int, tuple[Vocab, _Matcher]] = {}


def _matcher(v: Vocab) -> _Matcher:
    hit = _matcher_cache.get(id(v))
    if hit is not None and hit[0] is v:
        return hit[1]
    if len(_matcher_cache) > 64:
        _matcher_cache.clear()
    m = _Matcher(v)
    _matcher_cache[id(v)] = (v, m)
    return m


def tokenize(text: str, v: Vocab) -> TokenSeq:
    """Greedy longest-match tokenization; lossless under detokenize."""
    m = _matcher(v)
    ids: list[int] = []
    offsets: list[tuple[int, int]] = []
    i, n = 0, len(text)
    while i < n:
        matched = False
        for sym, tid in m.reserved:
            if text.startswith(sym, i):
                ids.append(tid)
                offsets.append((i, i + len(sym)))
                i += len(sym)
                matched = True
                break
        if matched:
            continue
        for tok, tid in m.by_first.get(text[i], ()):
            if text.startswith(tok, i):
                ids.append(tid)
                offsets.append((i, i + len(tok)))
                i += len(tok)
                matched = True
                break
        if not matched:
            raise TokenizerError(f"character {text[i]!r} not covered by vocab")
    return TokenSeq(ids=np.asarray(ids, dtype=np.int32), offsets=offsets)


def detokenize(seq, v: Vocab) -> str:
    ids = seq.ids.tolist() if isinstance(seq, TokenSeq) else list(seq)
    rev = {tid: sym for sym, tid in v.reserved.items()}
    parts = []
    for tid in ids:
        if tid in (PAD_ID, BOS_ID, EOS_ID):
            continue
        if tid in rev:
            parts.append(rev[tid])
        else:
            parts.append(v.tokens[tid])
    return "".join(parts)


# --- vocab file format -------------------------------------------------------
# One escaped token per line in id order, then a `#RESERVED` section of
# "id<TAB>escaped-symbol" lines, then `#DIGIT_SPLIT true|false`.

def _escape(tok: str) -> str:
    out = (tok.replace("\\", "\\\\").replace("\n", "\\n")
           .replace("\t", "\\t").replace("\r", "\\r"))
    if out.startswith("#"):
        out = "\\" + out
    return out


def _unescape(line: str) -> str:
    out = []
    i = 0
    while i < len(line):
        c = line[i]
        if c == "\\" and i + 1 < len(line):
            nxt = line[i + 1]
            out.append({"n": "\n", "t": "\t", "r": "\r", "\\": "\\", "#": "#"}.get(nxt, nxt))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def save_vocab(v: Vocab, path):
    with open(path, "w", encoding="utf-8") as f:
        for tok in v.tokens:
            f.write(_escape(tok) + "\n")
        f.write("#RESERVED\n")
        for sym, tid in sorted(v.reserved.items(), key=lambda kv: kv[1]):
            f.write(f"{tid}\t{_escape(sym)}\n")
        f.write(f"#DIGIT_SPLIT {'true' if v.digit_split else 'false'}\n")


def load_vocab(path) -> Vocab:
    tokens: list[str] = []
    reserved: dict[str, int] = {}
    digit_split = False
    section = "tokens"
    with open(path, encoding="utf-8") as f:
        for raw in f.read().split("\n")[:-1]:
            if raw == "#RESERVED":
                section = "reserved"
                continue
            if raw.startswith("#DIGIT_SPLIT"):
                digit_split = raw.split(" ", 1)[1] == "true"
                continue
            if section == "tokens":
                tokens.append(_unescape(raw))
            else:
                tid, sym = raw.split("\t", 1)
                reserved[_unescape(sym)] = int(tid)
    return Vocab(tokens=tuple(tokens), reserved=reserved, digit_split=digit_split)
