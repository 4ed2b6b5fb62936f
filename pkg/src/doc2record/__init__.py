"""Document-to-record extraction at desk scale.

A seq2seq system that reads a document and generates its structured
record directly: chunked independent encoding fused in the decoder,
two-level gradient checkpointing for long inputs, strict structured
output codecs, learned-standardization synthetic tasks, and the fuzzy
span-alignment baseline with entity-level F1 evaluation.
"""

from .codec import Num, ParseOutcome, Record, canonicalize, parse, serialize, shuffle_pairs
from .chunking import ChunkBatch, CostReport, attention_cost, chunk_document, fuse_encodings
from .checkpointing import CheckpointPlan, MemoryTrace, peak_activation_model, recompute_passes, train_step
from .metrics import MetricReport, Span, entity_f1, fuzzy_align, score_alignment
from .model import GenerationResult, ModelConfig, decode_teacher_forced, encode_chunk, generate, init_params
from .persistence import load_model, save_model
from .tokenizer import TokenSeq, Vocab, build_vocab, detokenize, inject_structural_tokens, tokenize
from .training import Adam, RunConfig, evaluate, predict_text, train

__version__ = "0.1.0"

__all__ = [
    "Adam", "ChunkBatch", "CheckpointPlan", "CostReport", "GenerationResult",
    "MemoryTrace", "MetricReport", "ModelConfig", "Num", "ParseOutcome",
    "Record", "RunConfig", "Span", "TokenSeq", "Vocab", "attention_cost",
    "build_vocab", "canonicalize", "chunk_document", "decode_teacher_forced",
    "detokenize", "encode_chunk", "entity_f1", "evaluate", "fuse_encodings",
    "fuzzy_align", "generate", "init_params", "inject_structural_tokens",
    "load_model", "parse", "peak_activation_model", "predict_text",
    "recompute_passes", "save_model", "score_alignment", "serialize",
    "shuffle_pairs", "tokenize", "train", "train_step",
]
