"""Two-level gradient-checkpointing schedule for chunked training.

The full plan caches only per-chunk encoder outputs and decoder
inter-block activations on the first forward pass. Gradients then need a
second forward through each decoder block, and for the encoder a
recompute of each chunk (caching its inter-block activations) plus a
recompute of each block interior, so every encoder block runs forward
three times and every decoder block twice. Gradients match the
unscheduled step to float32 rounding; the forward loss is bitwise
identical.

Memory is accounted as live interior activation scalars (see
tensor.GraphTrace), not process RSS: forward-cached activations stay
live through the backward sweep, segment interiors are transient. The
closed-form predictor below walks the same alloc/free schedule the
implementation follows, using the per-block scalar counts published by
the model module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .chunking import ChunkBatch, fuse_encodings
from . import model as M


@dataclass(frozen=True)
class CheckpointPlan:
    """Which graph levels get recompute boundaries.

    The default is the full two-level scheme: a segment per (chunk,
    encoder block), a segment per whole chunk, and a segment per decoder
    block. Layer counts, when set, pin the plan to one model shape.
    """

    encoder_chunk_segments: bool = True
    encoder_block_segments: bool = True
    decoder_block_segments: bool = True
    n_enc_layers: int | None = None
    n_dec_layers: int | None = None

    @classmethod
    def for_config(cls, config: M.ModelConfig, **kw) -> "CheckpointPlan":
        return cls(n_enc_layers=config.n_enc_layers, n_dec_layers=config.n_dec_layers, **kw)

    def validate(self, config: M.ModelConfig):
        if self.n_enc_layers is not None and self.n_enc_layers != config.n_enc_layers:
            raise T.GraphError(
                f"plan expects {self.n_enc_layers} encoder blocks, model has {config.n_enc_layers}")
        if self.n_dec_layers is not None and self.n_dec_layers != config.n_dec_layers:
            raise T.GraphError(
                f"plan expects {self.n_dec_layers} decoder blocks, model has {config.n_dec_layers}")

    def cached_set(self) -> list[str]:
        cached = []
        if self.encoder_chunk_segments:
            cached.append("per-chunk encoder outputs")
        if self.decoder_block_segments:
            cached.append("decoder inter-block activations")
        if self.encoder_block_segments and not self.encoder_chunk_segments:
            cached.append("encoder inter-block activations")
        return cached or ["every interior activation (no checkpointing)"]


@dataclass
class MemoryTrace:
    peak_live_scalars: int
    final_live_scalars: int
    attn_entries: dict[str, int]
    forward_counts: dict[str, int]

    def as_kv_text(self) -> str:
        lines = [f"peak_live_scalars={self.peak_live_scalars}",
                 f"final_live_scalars={self.final_live_scalars}"]
        for k in sorted(self.attn_entries):
            lines.append(f"attn_entries.{k}={self.attn_entries[k]}")
        for k in sorted(self.forward_counts):
            lines.append(f"forward_passes.{k}={self.forward_counts[k]}")
        return "\n".join(lines) + "\n"


@dataclass
class StepResult:
    loss: float
    grads: dict[str, np.ndarray]
    trace: MemoryTrace


def forward_loss(batch: ChunkBatch, target_ids, params: M.ModelParams,
                 config: M.ModelConfig, state: M.RunState | None = None,
                 plan: CheckpointPlan | None = None) -> T.Node:
    """Encode every chunk, fuse, and compute the teacher-forced loss."""
    state = state or M.RunState()
    encodings = [
        M.encode_chunk(batch.chunks[i], batch.pad_mask[i], i, params, config, state, plan)
        for i in range(batch.m)
    ]
    memory, valid = fuse_encodings(encodings, batch.pad_mask)
    loss, _ = M.decode_teacher_forced(memory, valid, target_ids, params, config, state, plan)
    return loss


def train_step(batch: ChunkBatch, target_ids, params: M.ModelParams,
               config: M.ModelConfig, state: M.RunState | None = None,
               plan: CheckpointPlan | None = None) -> StepResult:
    """One forward+backward pass; plan=None runs without checkpointing."""
    if plan is not None:
        plan.validate(config)
    with T.trace() as tr:
        loss = forward_loss(batch, target_ids, params, config, state, plan)
        forward_live = tr.live
        grads = T.parameter_grads(T.backward(loss))
    trace = MemoryTrace(peak_live_scalars=tr.peak, final_live_scalars=forward_live,
                        attn_entries=dict(tr.attn_entries),
                        forward_counts=dict(tr.forward_counts))
    return StepResult(loss=float(loss.value.item()), grads=grads, trace=trace)


def train_step_checkpointed(batch, target_ids, params, config,
                            state: M.RunState | None = None,
                            plan: CheckpointPlan | None = None) -> StepResult:
    return train_step(batch, target_ids, params, config, state,
                      plan if plan is not None else CheckpointPlan())


def recompute_passes(plan: CheckpointPlan | None) -> dict[str, int]:
    """Forward executions per block implied by the plan, per training step."""
    if plan is None:
        return {"full_forwards": 1, "encoder_block_forwards": 1, "decoder_block_forwards": 1}
    enc = 1 + int(plan.encoder_chunk_segments) + int(plan.encoder_block_segments)
    dec = 1 + int(plan.decoder_block_segments)
    return {"full_forwards": 1, "encoder_block_forwards": enc, "decoder_block_forwards": dec}


# ---------------------------------------------------------------------------
# closed-form peak prediction


def _phase_totals(config: M.ModelConfig, m: int, t: int, dropout_active: bool):
    c, d = config.chunk_size, config.d_model
    le, ld = config.n_enc_layers, config.n_dec_layers
    mem_rows = m * c
    b_enc = M.enc_block_interior_scalars(config, dropout_active)
    b_dec = M.dec_block_interior_scalars(config, t, mem_rows, dropout_active)
    enc_extra = M.enc_chunk_extra_scalars(config)
    dec_extra = M.dec_extra_scalars(config, t)
    fuse = mem_rows * d if m > 1 else 0
    return c, d, le, ld, mem_rows, b_enc, b_dec, enc_extra, dec_extra, fuse


def peak_activation_model(config: M.ModelConfig, m: int, t: int | None = None,
                          dropout_active: bool = False,
                          plan: CheckpointPlan | None = CheckpointPlan()) -> int:
    """Predicted peak live interior scalars for one training step.

    Mirrors the alloc/free schedule: chunk outputs O(m*c*d) persist, one
    block's interior is transient, decoder caches and the tied head stay
    live through backward. plan=None predicts the no-checkpoint step
    (everything stays live).
    """
    if m < 1:
        raise ValueError("chunk count must be >= 1")
    t = t if t is not None else config.max_target_len
    (c, d, le, ld, mem_rows, b_enc, b_dec,
     enc_extra, dec_extra, fuse) = _phase_totals(config, m, t, dropout_active)

    if plan is None:
        total_enc = m * (le * b_enc + enc_extra)
        total_dec = ld * b_dec + dec_extra
        return total_enc + fuse + total_dec

    if not (plan.encoder_chunk_segments and plan.encoder_block_segments
            and plan.decoder_block_segments):
        raise ValueError("closed-form prediction covers the full two-level plan only")

    # within one chunk segment: prefix, earlier block boundaries, block interior
    chunk_fwd_blocks = 2 * c * d + (le - 1) * c * d + b_enc
    chunk_fwd_done = enc_extra + le * c * d
    chunk_scope_fwd = max(chunk_fwd_blocks, chunk_fwd_done)

    # forward phase peaks
    f_enc = (m - 1) * c * d + chunk_scope_fwd
    enc_cached = m * c * d
    dec_fwd = enc_cached + fuse + 3 * t * d + (ld - 1) * t * d + b_dec
    after_forward = enc_cached + fuse + ld * t * d + dec_extra

    # backward phase: forward-cached set stays live, one segment replays at a time
    b_dec_peak = after_forward + b_dec
    chunk_scope_bwd = chunk_fwd_done + b_enc  # replay done, one block interior rebuilt
    b_enc_peak = after_forward + max(chunk_scope_fwd, chunk_scope_bwd)

    return max(f_enc, dec_fwd, after_forward, b_dec_peak, b_enc_peak)
