"""Small encoder-decoder transformer over the autodiff graph.

Pre-layer-norm residual blocks; learned absolute positions within each
chunk; a learned chunk-index embedding added to encoder outputs before
fusion; decoder with causal self-attention plus cross-attention over the
fused memory; output projection tied to the input embedding.

Every forward helper advertises the interior-activation scalars it
allocates (the *_interior_scalars functions) so the checkpoint scheduler
can predict peak memory in closed form. Keep those counts in sync with
the op sequences here; the scheduler tests compare them exactly.

Dropout masks are derived from (seed, step, site) counters, never fresh
randomness, so checkpoint replays and direct runs see identical masks.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tokenizer import BOS_ID, EOS_ID, PAD_ID

NEG_INF = -1e9


@dataclass
class ModelConfig:
    d_model: int
    n_heads: int
    n_enc_layers: int
    n_dec_layers: int
    d_ff: int
    vocab_size: int
    chunk_size: int
    max_chunks: int
    max_target_len: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.chunk_size < 1 or self.max_chunks < 1:
            raise ValueError("chunk_size and max_chunks must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "d_model", "n_heads", "n_enc_layers", "n_dec_layers", "d_ff",
            "vocab_size", "chunk_size", "max_chunks", "max_target_len", "dropout")}


ModelParams = dict[str, T.Node]


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Gaussian(0, 0.02) weights, unit layer-norm gains, zero biases."""
    rng = np.random.default_rng(seed)
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    params: ModelParams = {}

    def normal(name, shape):
        params[name] = T.leaf(rng.normal(0.0, 0.02, shape).astype(np.float32),
                              name=name, is_param=True)

    def ln(prefix):
        params[f"{prefix}.g"] = T.leaf(np.ones(d, np.float32), name=f"{prefix}.g", is_param=True)
        params[f"{prefix}.b"] = T.leaf(np.zeros(d, np.float32), name=f"{prefix}.b", is_param=True)

    def attn(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            normal(f"{prefix}.{w}", (d, d))

    def ffn(prefix):
        normal(f"{prefix}.w1", (d, f))
        params[f"{prefix}.b1"] = T.leaf(np.zeros(f, np.float32), name=f"{prefix}.b1", is_param=True)
        normal(f"{prefix}.w2", (f, d))
        params[f"{prefix}.b2"] = T.leaf(np.zeros(d, np.float32), name=f"{prefix}.b2", is_param=True)

    normal("embed", (v, d))
    normal("enc_pos", (config.chunk_size, d))
    normal("chunk_pos", (config.max_chunks, d))
    normal("dec_pos", (config.max_target_len, d))
    for i in range(config.n_enc_layers):
        ln(f"enc{i}.ln1")
        attn(f"enc{i}.attn")
        ln(f"enc{i}.ln2")
        ffn(f"enc{i}.ffn")
    ln("enc_ln")
    for i in range(config.n_dec_layers):
        ln(f"dec{i}.ln1")
        attn(f"dec{i}.self")
        ln(f"dec{i}.ln2")
        attn(f"dec{i}.cross")
        ln(f"dec{i}.ln3")
        ffn(f"dec{i}.ffn")
    ln("dec_ln")
    return params


# ---------------------------------------------------------------------------
# deterministic dropout


def _site_seed(seed: int, step: int, site: str) -> int:
    h = hashlib.blake2b(f"{seed}/{step}/{site}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@dataclass
class RunState:
    """Per-call forward settings; `train` gates dropout."""

    train: bool = False
    step: int = 0
    seed: int = 0


def _dropout(x: T.Node, rate: float, state: RunState, site: str) -> T.Node:
    if not state.train or rate <= 0.0:
        return x
    rng = np.random.default_rng(_site_seed(state.seed, state.step, site))
    keep = (rng.random(x.value.shape) >= rate).astype(np.float32) / np.float32(1.0 - rate)
    return T.mul(x, T.const(keep))


# ---------------------------------------------------------------------------
# shared blocks


def _layer_norm(x: T.Node, params: ModelParams, prefix: str) -> T.Node:
    h = T.layer_norm(x, axis=-1)
    return T.add(T.mul(h, params[f"{prefix}.g"]), params[f"{prefix}.b"])


def _mha(xq: T.Node, xkv: T.Node, params: ModelParams, prefix: str,
         n_heads: int, bias: T.Node | None, tag: str) -> T.Node:
    tq, d = xq.value.shape
    tk = xkv.value.shape[0]
    dh = d // n_heads

    def heads(x, w, t):
        p = T.matmul(x, params[w])
        return T.transpose(T.reshape(p, (t, n_heads, dh)), (1, 0, 2))

    q = heads(xq, f"{prefix}.wq", tq)
    k = heads(xkv, f"{prefix}.wk", tk)
    v = heads(xkv, f"{prefix}.wv", tk)
    kt = T.transpose(k, (0, 2, 1))
    scores = T.scale(T.matmul(q, kt), 1.0 / math.sqrt(dh))
    tr = T.active_trace()
    if tr is not None:
        tr.count_attn(tag, n_heads * tq * tk)
    if bias is not None:
        scores = T.add(scores, bias)
    probs = T.softmax(scores, axis=-1)
    ctx = T.matmul(probs, v)
    merged = T.reshape(T.transpose(ctx, (1, 0, 2)), (tq, d))
    return T.matmul(merged, params[f"{prefix}.wo"])


def _ffn(x: T.Node, params: ModelParams, prefix: str) -> T.Node:
    h = T.gelu(T.add(T.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return T.add(T.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def mha_interior_scalars(tq: int, tk: int, d: int, n_heads: int, masked: bool) -> int:
    # q/k/v projections+reshapes+transposes, kT, score chain, context merge, wo
    per_head_entries = n_heads * tq * tk
    n = (3 * tq * d) + (2 * 3 * tk * d)          # q (3 nodes), k,v (3 nodes each)
    n += tk * d                                   # kT transpose
    n += per_head_entries * (3 if not masked else 4)  # matmul, scale, (+bias), softmax
    n += 3 * tq * d                               # ctx, transpose, reshape
    n += tq * d                                   # output projection
    return n


def ffn_interior_scalars(t: int, d: int, f: int) -> int:
    return 3 * t * f + 2 * t * d


def _ln_scalars(t: int, d: int) -> int:
    return 3 * t * d


# ---------------------------------------------------------------------------
# encoder


def _enc_block(x: T.Node, params: ModelParams, config: ModelConfig,
               layer: int, bias: T.Node, state: RunState, tag: str) -> T.Node:
    tr = T.active_trace()
    if tr is not None:
        tr.count_forward(tag)
    h = _layer_norm(x, params, f"enc{layer}.ln1")
    a = _mha(h, h, params, f"enc{layer}.attn", config.n_heads, bias, "enc.self")
    a = _dropout(a, config.dropout, state, f"{tag}.attn")
    x = T.add(x, a)
    h2 = _layer_norm(x, params, f"enc{layer}.ln2")
    fo = _ffn(h2, params, f"enc{layer}.ffn")
    fo = _dropout(fo, config.dropout, state, f"{tag}.ffn")
    return T.add(x, fo)


def enc_block_interior_scalars(config: ModelConfig, dropout_active: bool) -> int:
    c, d, f = config.chunk_size, config.d_model, config.d_ff
    n = _ln_scalars(c, d)
    n += mha_interior_scalars(c, c, d, config.n_heads, masked=True)
    n += c * d  # residual add
    n += _ln_scalars(c, d)
    n += ffn_interior_scalars(c, d, f)
    n += c * d  # residual add
    if dropout_active:
        n += 2 * c * d
    return n


def encode_chunk(chunk_ids, pad_mask, chunk_index: int, params: ModelParams,
                 config: ModelConfig, state: RunState | None = None,
                 plan=None) -> T.Node:
    """Encode one chunk independently; returns a (c, d_model) node.

    Dense self-attention stays inside the chunk; padded positions are
    masked out of attention and zeroed in the output. The chunk-index
    embedding is added before fusion so the decoder can tell chunks apart.
    """
    state = state or RunState()
    c = config.chunk_size
    ids = np.asarray(chunk_ids, dtype=np.int64)
    mask = np.asarray(pad_mask, dtype=bool)
    if len(ids) > c:
        raise T.ShapeError(f"chunk of length {len(ids)} exceeds chunk_size {c}")
    if len(ids) < c:
        ids = np.concatenate([ids, np.full(c - len(ids), PAD_ID, np.int64)])
        mask = np.concatenate([mask, np.zeros(c - len(mask), bool)])
    if chunk_index >= config.max_chunks:
        raise T.ShapeError(f"chunk index {chunk_index} exceeds max_chunks {config.max_chunks}")

    attn_bias = T.const(np.where(mask, 0.0, NEG_INF)[None, :].repeat(c, 0))
    out_mask = T.const(mask[:, None].astype(np.float32))

    def body():
        x = T.embedding_lookup(params["embed"], ids)
        x = T.add(x, params["enc_pos"])
        for layer in range(config.n_enc_layers):
            tag = f"enc.c{chunk_index}.l{layer}"
            if plan is not None and plan.encoder_block_segments:
                (x,) = T.checkpoint_segment(
                    lambda xx, lay=layer, tg=tag: _enc_block(
                        xx, params, config, lay, attn_bias, state, tg), [x])
            else:
                x = _enc_block(x, params, config, layer, attn_bias, state, tag)
        x = _layer_norm(x, params, "enc_ln")
        row = T.slice_(params["chunk_pos"], (slice(chunk_index, chunk_index + 1),))
        x = T.add(x, row)
        return T.mul(x, out_mask)

    if plan is not None and plan.encoder_chunk_segments:
        (out,) = T.checkpoint_segment(lambda: body(), [])
        return out
    return body()


def enc_chunk_extra_scalars(config: ModelConfig) -> int:
    """Interior scalars a chunk allocates outside its encoder blocks."""
    c, d = config.chunk_size, config.d_model
    # embedding, +pos, final ln, chunk-pos slice/add, output mask
    return 2 * c * d + _ln_scalars(c, d) + d + c * d + c * d


# ---------------------------------------------------------------------------
# decoder


def _dec_block(x: T.Node, memory: T.Node, params: ModelParams, config: ModelConfig,
               layer: int, causal_bias: T.Node, mem_bias: T.Node,
               state: RunState, tag: str) -> T.Node:
    tr = T.active_trace()
    if tr is not None:
        tr.count_forward(tag)
    h = _layer_norm(x, params, f"dec{layer}.ln1")
    a = _mha(h, h, params, f"dec{layer}.self", config.n_heads, causal_bias, "dec.self")
    a = _dropout(a, config.dropout, state, f"{tag}.self")
    x = T.add(x, a)
    h2 = _layer_norm(x, params, f"dec{layer}.ln2")
    ca = _mha(h2, memory, params, f"dec{layer}.cross", config.n_heads, mem_bias, "dec.cross")
    ca = _dropout(ca, config.dropout, state, f"{tag}.cross")
    x = T.add(x, ca)
    h3 = _layer_norm(x, params, f"dec{layer}.ln3")
    fo = _ffn(h3, params, f"dec{layer}.ffn")
    fo = _dropout(fo, config.dropout, state, f"{tag}.ffn")
    return T.add(x, fo)


def dec_block_interior_scalars(config: ModelConfig, t: int, mem_rows: int,
                               dropout_active: bool) -> int:
    d, f = config.d_model, config.d_ff
    n = _ln_scalars(t, d)
    n += mha_interior_scalars(t, t, d, config.n_heads, masked=True)
    n += t * d
    n += _ln_scalars(t, d)
    n += mha_interior_scalars(t, mem_rows, d, config.n_heads, masked=True)
    n += t * d
    n += _ln_scalars(t, d)
    n += ffn_interior_scalars(t, d, f)
    n += t * d
    if dropout_active:
        n += 3 * t * d
    return n


def _decoder_hidden(dec_in: np.ndarray, memory: T.Node, memory_valid: np.ndarray,
                    params: ModelParams, config: ModelConfig, state: RunState,
                    plan=None) -> T.Node:
    t = len(dec_in)
    if memory.value.shape[0] == 0 or not memory_valid.any():
        raise T.ShapeError("decoder memory is empty")
    if t > config.max_target_len:
        raise T.ShapeError(f"target length {t} exceeds max_target_len {config.max_target_len}")

    causal = np.triu(np.full((t, t), NEG_INF, np.float32), k=1)
    causal_bias = T.const(causal)
    mem_bias = T.const(np.where(memory_valid, 0.0, NEG_INF)[None, :].repeat(t, 0))

    x = T.embedding_lookup(params["embed"], dec_in)
    pos = T.slice_(params["dec_pos"], (slice(0, t),))
    x = T.add(x, pos)
    for layer in range(config.n_dec_layers):
        tag = f"dec.l{layer}"
        if plan is not None and plan.decoder_block_segments:
            (x,) = T.checkpoint_segment(
                lambda xx, mem, lay=layer, tg=tag: _dec_block(
                    xx, mem, params, config, lay, causal_bias, mem_bias, state, tg),
                [x, memory])
        else:
            x = _dec_block(x, memory, params, config, layer, causal_bias, mem_bias, state, tag)
    return _layer_norm(x, params, "dec_ln")


def _logits(hidden: T.Node, params: ModelParams) -> T.Node:
    return T.matmul(hidden, T.transpose(params["embed"], (1, 0)))


def dec_extra_scalars(config: ModelConfig, t: int) -> int:
    """Decoder interiors outside the blocks (prefix, final ln, tied head, loss)."""
    d, v = config.d_model, config.vocab_size
    n = 3 * t * d            # embedding, pos slice, add
    n += _ln_scalars(t, d)   # final layer norm
    n += v * d + t * v       # tied projection transpose + logits
    n += 1                   # loss scalar
    return n


def decode_teacher_forced(memory: T.Node, memory_valid: np.ndarray, target_ids,
                          params: ModelParams, config: ModelConfig,
                          state: RunState | None = None, plan=None):
    """Teacher-forced loss over the target sequence (ending in eos).

    Returns (loss node, logits node). The decoder input is the target
    shifted right behind bos; loss is mean token cross-entropy with pad
    positions ignored.
    """
    state = state or RunState()
    labels = np.asarray(target_ids, dtype=np.int64)
    if labels.size == 0:
        raise T.ShapeError("empty target sequence")
    dec_in = np.concatenate([[BOS_ID], labels[:-1]])
    hidden = _decoder_hidden(dec_in, memory, memory_valid, params, config, state, plan)
    logits = _logits(hidden, params)
    loss = T.cross_entropy(logits, labels, pad_id=PAD_ID)
    return loss, logits


@dataclass
class GenerationResult:
    ids: list[int]
    score: float
    truncated: bool
    raw_scores: list[float] = field(default_factory=list)


def _next_logprobs(prefix: list[int], memory, memory_valid, params, config) -> np.ndarray:
    dec_in = np.asarray([BOS_ID] + prefix, dtype=np.int64)
    hidden = _decoder_hidden(dec_in, memory, memory_valid, params, config, RunState())
    logits = _logits(hidden, params).value[-1]
    m = logits.max()
    return logits - (m + np.log(np.exp(logits - m).sum()))


def generate(memory: T.Node, memory_valid: np.ndarray, params: ModelParams,
             config: ModelConfig, beam_size: int = 1,
             max_len: int | None = None) -> GenerationResult:
    """Greedy (beam_size=1) or length-normalized beam decoding.

    Stops each hypothesis at eos; `truncated` flags hypotheses cut off at
    max_len. Scores are mean token log-probability including eos.
    """
    if beam_size < 1:
        raise ValueError("beam size must be >= 1")
    max_len = max_len or config.max_target_len

    beams: list[tuple[list[int], float, bool]] = [([], 0.0, False)]
    for _ in range(max_len):
        if all(done for _, _, done in beams):
            break
        candidates: list[tuple[list[int], float, bool]] = []
        for ids, logp, done in beams:
            if done:
                candidates.append((ids, logp, True))
                continue
            lp = _next_logprobs(ids, memory, memory_valid, params, config)
            order = np.argsort(-lp, kind="stable")[:beam_size]
            for tok in order:
                tok = int(tok)
                candidates.append((ids + [tok], logp + float(lp[tok]), tok == EOS_ID))
        candidates.sort(key=lambda cand: (-cand[1] / max(len(cand[0]), 1),
                                          cand[0]))
        beams = candidates[:beam_size]

    best = max(beams, key=lambda cand: cand[1] / max(len(cand[0]), 1))
    ids, logp, done = best
    return GenerationResult(ids=ids, score=logp / max(len(ids), 1), truncated=not done)
