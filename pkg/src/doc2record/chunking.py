"""Fixed-width chunking of long token sequences and the attention cost law.

A document becomes m chunks of exactly c token slots (last chunk
right-padded); the encoder attends densely only within a chunk, so
attention memory grows as m*c^2 instead of (m*c)^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tokenizer import PAD_ID, TokenSeq
from . import tensor as T


@dataclass
class ChunkBatch:
    chunks: np.ndarray      # (m, c) int32 token ids, pad-filled
    pad_mask: np.ndarray    # (m, c) bool, True where a real token sits
    m: int
    c: int
    truncated: bool = False

    def __post_init__(self):
        assert self.chunks.shape == (self.m, self.c) == self.pad_mask.shape


@dataclass
class CostReport:
    """Exact attention-score entry and FLOP counts for one configuration.

    Entry counts are per full encoder (all layers and heads); FLOPs count
    the multiply-adds of the QK^T score matrix and the probs@V aggregation
    (4 * d_head per score entry).
    """

    chunk_size: int
    n_chunks: int
    n_layers: int
    n_heads: int
    d_head: int
    encoder_attn_entries: int
    dense_attn_entries: int
    encoder_attn_flops: int
    dense_attn_flops: int

    @property
    def ratio(self) -> float:
        return self.dense_attn_entries / self.encoder_attn_entries

    def as_kv_text(self) -> str:
        fields = [
            ("chunk_size", self.chunk_size), ("n_chunks", self.n_chunks),
            ("n_layers", self.n_layers), ("n_heads", self.n_heads),
            ("d_head", self.d_head),
            ("encoder_attn_entries", self.encoder_attn_entries),
            ("dense_attn_entries", self.dense_attn_entries),
            ("ratio", self.ratio),
            ("encoder_attn_flops", self.encoder_attn_flops),
            ("dense_attn_flops", self.dense_attn_flops),
        ]
        return "\n".join(f"{k}={v}" for k, v in fields) + "\n"


def chunk_document(tokens, c: int, m_max: int) -> ChunkBatch:
    """Split ids into ceil(len/c) chunks of width c, truncating at m_max.

    An empty sequence still yields one all-pad chunk so downstream shapes
    hold. Truncation keeps the document head (the slot prefix lives there).
    """
    if c < 1:
        raise ValueError("chunk size must be >= 1")
    ids = tokens.ids if isinstance(tokens, TokenSeq) else np.asarray(tokens, dtype=np.int32)
    n = len(ids)
    truncated = False
    if n > c * m_max:
        ids = ids[:c * m_max]
        n = len(ids)
        truncated = True
    m = max(1, -(-n // c))
    chunks = np.full((m, c), PAD_ID, dtype=np.int32)
    mask = np.zeros((m, c), dtype=bool)
    if n:
        flat = chunks.reshape(-1)
        flat[:n] = ids
        mask.reshape(-1)[:n] = True
    return ChunkBatch(chunks=chunks, pad_mask=mask, m=m, c=c, truncated=truncated)


def unchunk(batch: ChunkBatch) -> np.ndarray:
    """Inverse of chunk_document up to truncation."""
    return batch.chunks.reshape(-1)[batch.pad_mask.reshape(-1)]


def fuse_encodings(encodings: list[T.Node], pad_masks: np.ndarray) -> tuple[T.Node, np.ndarray]:
    """Concatenate per-chunk encodings into one (m*c, d_model) decoder memory.

    Returns the fused memory and a flat validity mask; padded positions are
    excluded from cross-attention by the caller via this mask.
    """
    if not encodings:
        raise ValueError("fuse_encodings needs at least one chunk encoding")
    c, d = encodings[0].value.shape
    for e in encodings[1:]:
        if e.value.shape != (c, d):
            raise T.ShapeError(
                f"fuse_encodings: chunk encodings disagree: {(c, d)} vs {e.value.shape}")
    memory = encodings[0] if len(encodings) == 1 else T.concat(encodings, axis=0)
    valid = np.asarray(pad_masks, dtype=bool).reshape(-1)
    if valid.shape[0] != memory.value.shape[0]:
        raise T.ShapeError("fuse_encodings: pad mask does not match fused memory rows")
    return memory, valid


def attention_cost(config, m: int) -> CostReport:
    """Closed-form encoder attention cost versus a dense full-sequence encoder."""
    if m < 1:
        raise ValueError("chunk count must be >= 1")
    c = config.chunk_size
    L, H = config.n_enc_layers, config.n_heads
    dh = config.d_model // config.n_heads
    enc_entries = L * H * m * c * c
    dense_entries = L * H * (m * c) ** 2
    return CostReport(
        chunk_size=c, n_chunks=m, n_layers=L, n_heads=H, d_head=dh,
        encoder_attn_entries=enc_entries,
        dense_attn_entries=dense_entries,
        encoder_attn_flops=4 * dh * enc_entries,
        dense_attn_flops=4 * dh * dense_entries,
    )
