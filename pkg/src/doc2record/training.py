"""Training, prediction and evaluation driver wiring all components.

Per example the pipeline is: transform the record (ablations apply to
record values and keys, keeping the output grammar intact), serialize it
to the target string, preprocess and tokenize the input, chunk, encode
each chunk (optionally under the checkpoint plan), fuse, teacher-forced
loss, one Adam step at batch size 1. With shuffle_epochs the pair order
is re-drawn per (seed, epoch, example), so every epoch trains on a
different serialization of the same record.

Runs are deterministic: same RunConfig and seed give identical weights
and identical log bytes.
"""

from __future__ import annotations

import os
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpointing import CheckpointPlan, train_step
from .chunking import chunk_document, fuse_encodings
from .codec import Record, canonical_pairs, parse, serialize, shuffle_pairs
from .datasets import (gen_dates, gen_longdoc, gen_names, gen_numbers,
                       read_jsonl, standardization_record)
from .metrics import entity_f1
from .model import ModelConfig, RunState, encode_chunk, generate, init_params
from .preprocess import lowercase_transform, prepend_slots, strip_numeric_commas
from .tokenizer import (EOS_ID, Vocab, build_vocab, coverage_minimum,
                        detokenize, inject_structural_tokens, tokenize)

STRUCTURAL_SYMBOLS = {
    "pyliteral": ["{", "}", "(", ")", "'", ":", ","],
    "json": ["{", "}", "[", "]", '"', ":", ","],
    "yaml": [":", ",", "[", "]", "-", "'"],
    "xml": ["<", ">", "/", "=", '"'],
}

TASK_SLOTS = {"dates": ["date"], "names": ["name"], "numbers": ["number"],
              "longdoc": ["party", "total", "due"]}


class TrainingError(Exception):
    pass


@dataclass
class RunConfig:
    task: str = "dates"                 # dates|names|numbers|longdoc|custom
    # model dimensions
    d_model: int = 128
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 256
    chunk_size: int = 48
    max_chunks: int = 4
    max_target_len: int = 64
    vocab_size: int = 0                 # 0 = character-level (coverage minimum)
    dropout: float = 0.0
    # optimization (Adam at batch size 1)
    learning_rate: float = 6.25e-5
    epochs: int = 4
    beam_size: int = 1
    seed: int = 0
    # ablation toggles
    lowercase: bool = True
    strip_commas: bool = False
    shuffle_epochs: bool = False
    slot_prefix: bool = False
    digit_split: bool = True
    checkpointing: bool = False
    trace_memory: bool = False
    # output format
    fmt: str = "pyliteral"
    shape: str = "dict"
    # data
    n_train: int = 2500
    n_eval: int = 500
    n_dev: int = 64
    dev_every: int = 1                  # evaluate dev EM every k epochs
    longdoc_len: int = 120
    data_path: str | None = None
    eval_path: str | None = None
    # artifacts
    model_path: str = "model.d2d"
    report_path: str | None = None

    def __post_init__(self):
        env_seed = os.environ.get("D2D_SEED")
        if env_seed:
            self.seed = int(env_seed)
        if self.beam_size < 1 or self.epochs < 1:
            raise ValueError("beam size and epochs must be >= 1")

    def slots(self) -> list[str]:
        return TASK_SLOTS.get(self.task, [])

    def model_config(self, vocab_len: int) -> ModelConfig:
        return ModelConfig(
            d_model=self.d_model, n_heads=self.n_heads,
            n_enc_layers=self.n_enc_layers, n_dec_layers=self.n_dec_layers,
            d_ff=self.d_ff, vocab_size=vocab_len, chunk_size=self.chunk_size,
            max_chunks=self.max_chunks, max_target_len=self.max_target_len,
            dropout=self.dropout)


def _epoch_shuffle_seed(run_seed: int, epoch: int, index: int) -> int:
    return zlib.crc32(f"{run_seed}/{epoch}/{index}".encode())


def preprocess_input(text: str, rc: RunConfig) -> str:
    if rc.lowercase:
        text = lowercase_transform(text)
    if rc.strip_commas:
        text = strip_numeric_commas(text)
    if rc.slot_prefix and rc.slots():
        text = prepend_slots(rc.slots(), text)
    return text


def transform_record(rec: Record, rc: RunConfig) -> Record:
    """Apply the target-side ablations to record keys/values.

    Transforms run on the values before serialization so the output
    grammar's own separators are never touched.
    """
    pairs = []
    for k, v in rec.pairs:
        if rc.lowercase:
            k, v = lowercase_transform(k), type(v)(lowercase_transform(str(v)))
        if rc.strip_commas:
            v = type(v)(strip_numeric_commas(str(v)))
        pairs.append((k, v))
    return Record(pairs, shape=rc.shape)


def target_string(rec: Record, rc: RunConfig, epoch: int = 0, index: int = 0) -> str:
    r = transform_record(rec, rc)
    if rc.shuffle_epochs and len(r) > 1:
        r = shuffle_pairs(r, _epoch_shuffle_seed(rc.seed, epoch, index))
    return serialize(r, rc.fmt)


# ---------------------------------------------------------------------------
# data


def generate_rows(task: str, n: int, seed: int, rc: RunConfig, split: str = "train"):
    if task == "dates":
        return [{"input": i, "record": standardization_record("dates", t), "spans": {}}
                for i, t in gen_dates(n, seed)]
    if task == "names":
        return [{"input": i, "record": standardization_record("names", t), "spans": {}}
                for i, t in gen_names(n, seed, split="eval" if split == "eval" else "train")]
    if task == "numbers":
        return [{"input": i, "record": standardization_record("numbers", t), "spans": {}}
                for i, t in gen_numbers(n, seed)]
    if task == "longdoc":
        return [{"input": ex.text, "record": ex.record, "spans": ex.spans}
                for ex in gen_longdoc(n, seed, target_len_tokens=rc.longdoc_len)]
    raise TrainingError(f"task {task!r} cannot be generated (use a dataset file)")


def load_rows(rc: RunConfig, split: str):
    if split == "train":
        if rc.data_path:
            return read_jsonl(rc.data_path, shape=rc.shape)
        return generate_rows(rc.task, rc.n_train, rc.seed, rc, "train")
    if rc.eval_path:
        return read_jsonl(rc.eval_path, shape=rc.shape)
    # held-out data: disjoint seed stream, and held-out gazetteer names
    return generate_rows(rc.task, rc.n_eval if split == "eval" else rc.n_dev,
                         rc.seed + (986527 if split == "eval" else 104729), rc, split)


def build_task_vocab(rows, rc: RunConfig) -> Vocab:
    size = rc.vocab_size or coverage_minimum()
    corpus = []
    for i, row in enumerate(rows):
        corpus.append(preprocess_input(row["input"], rc))
        corpus.append(target_string(row["record"], rc, 0, i))
    vocab = build_vocab(corpus, size, digit_split=rc.digit_split)
    return inject_structural_tokens(vocab, STRUCTURAL_SYMBOLS[rc.fmt])


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction; beta 0.9/0.999, eps 1e-8."""

    def __init__(self, params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.value) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.value) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correct1 = 1.0 - b1 ** self.t
        correct2 = 1.0 - b2 ** self.t
        for name, node in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (m / correct1) / (np.sqrt(v / correct2) + self.eps)
            node.value = (node.value - self.lr * update).astype(np.float32)


# ---------------------------------------------------------------------------
# prediction


@dataclass
class Prediction:
    record: Record
    raw: str
    failure_kind: str | None
    truncated_input: bool
    truncated_output: bool

    @property
    def parse_failed(self) -> bool:
        return self.failure_kind is not None


def predict_text(text: str, params, config: ModelConfig, vocab: Vocab,
                 rc: RunConfig) -> Prediction:
    """Full pipeline: preprocess, chunk, encode, fuse, generate, parse."""
    processed = preprocess_input(text, rc)
    seq = tokenize(processed, vocab)
    batch = chunk_document(seq, config.chunk_size, config.max_chunks)
    encodings = [encode_chunk(batch.chunks[i], batch.pad_mask[i], i, params, config)
                 for i in range(batch.m)]
    memory, valid = fuse_encodings(encodings, batch.pad_mask)
    if not valid.any():
        valid = valid.copy()
        valid[0] = True  # fully-empty input: attend to the single pad row
    gen = generate(memory, valid, params, config, beam_size=rc.beam_size,
                   max_len=config.max_target_len)
    raw = detokenize([i for i in gen.ids if i != EOS_ID], vocab)
    outcome = parse(raw, rc.fmt, rc.shape)
    record = outcome.record if outcome.ok else Record([], shape=rc.shape)
    return Prediction(record=record, raw=raw, failure_kind=outcome.failure_kind,
                      truncated_input=batch.truncated, truncated_output=gen.truncated)


def exact_match(pred: Prediction, gold: Record, rc: RunConfig) -> bool:
    if pred.parse_failed:
        return False
    return canonical_pairs(pred.record) == canonical_pairs(transform_record(gold, rc))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    params: dict
    config: ModelConfig
    vocab: Vocab
    log_lines: list[str] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_em: float = 0.0
    memory_traces: list[str] = field(default_factory=list)

    @property
    def log_text(self) -> str:
        return "\n".join(self.log_lines) + "\n"


def _dev_exact_match(rows, params, config, vocab, rc) -> float:
    hits = 0
    for row in rows:
        pred = predict_text(row["input"], params, config, vocab, rc)
        hits += exact_match(pred, row["record"], rc)
    return hits / len(rows) if rows else 0.0


def train(rc: RunConfig, log=None) -> TrainResult:
    """Train per RunConfig; keeps the epoch with best dev exact match."""
    t0 = time.time()
    rows = load_rows(rc, "train")
    if not rows:
        raise TrainingError("empty training dataset")
    if rc.data_path and len(rows) > 2 * rc.n_dev:
        # file-based datasets carve dev off the training tail
        dev_rows, rows = rows[-rc.n_dev:], rows[:-rc.n_dev]
    else:
        dev_rows = load_rows(rc, "dev")
    vocab = build_task_vocab(rows, rc)
    config = rc.model_config(len(vocab))
    params = init_params(config, rc.seed)
    adam = Adam(params, rc.learning_rate)
    plan = CheckpointPlan.for_config(config) if rc.checkpointing else None

    result = TrainResult(params=params, config=config, vocab=vocab)

    def emit(line: str):
        result.log_lines.append(line)
        if log:
            log(line)

    emit(f"task={rc.task} examples={len(rows)} vocab={len(vocab)} "
         f"params={sum(p.value.size for p in params.values())} "
         f"checkpointing={'on' if plan else 'off'}")

    # inputs are epoch-invariant; targets may reshuffle per epoch
    batches = [chunk_document(tokenize(preprocess_input(row["input"], rc), vocab),
                              config.chunk_size, config.max_chunks)
               for row in rows]
    best = {k: v.value.copy() for k, v in params.items()}
    step_counter = 0
    for epoch in range(rc.epochs):
        total_loss = 0.0
        for idx, row in enumerate(rows):
            try:
                tstr = target_string(row["record"], rc, epoch, idx)
                target_ids = list(tokenize(tstr, vocab).ids) + [EOS_ID]
            except Exception as exc:
                raise TrainingError(
                    f"example {idx + 1} (dataset line {idx + 1}): "
                    f"record failed serialization: {exc}") from exc
            if len(target_ids) > config.max_target_len:
                raise TrainingError(
                    f"example {idx + 1}: target needs {len(target_ids)} tokens, "
                    f"max_target_len is {config.max_target_len}")
            state = RunState(train=True, step=step_counter, seed=rc.seed)
            try:
                res = train_step(batches[idx], target_ids, params, config, state, plan)
            except T.NumericError as exc:
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} example {idx + 1}: {exc}") from exc
            adam.step(res.grads)
            total_loss += res.loss
            step_counter += 1
            if rc.trace_memory:
                result.memory_traces.append(
                    f"step={step_counter}\n{res.trace.as_kv_text()}")
        line = f"epoch={epoch} mean_loss={total_loss / len(rows):.6f}"
        if epoch % rc.dev_every == 0 or epoch == rc.epochs - 1:
            dev_em = _dev_exact_match(dev_rows, params, config, vocab, rc)
            line += f" dev_em={dev_em:.4f}"
            # ties go to the later epoch (loss keeps improving after EM saturates)
            if dev_em >= result.best_dev_em:
                result.best_dev_em = dev_em
                result.best_epoch = epoch
                best = {k: v.value.copy() for k, v in params.items()}
        emit(line)

    for k, node in params.items():
        node.value = best[k]
    emit(f"best_epoch={result.best_epoch} best_dev_em={result.best_dev_em:.4f}")
    if log:  # wall time is display-only; log bytes stay run-deterministic
        log(f"wall_s={time.time() - t0:.1f}")
    return result


def evaluate(rows, params, config, vocab, rc: RunConfig):
    """Predict over rows; returns (MetricReport, exact-match rate)."""
    preds, golds = [], []
    em = 0
    for row in rows:
        pred = predict_text(row["input"], params, config, vocab, rc)
        preds.append(None if pred.parse_failed else pred.record)
        golds.append(transform_record(row["record"], rc))
        em += exact_match(pred, row["record"], rc)
    report = entity_f1(preds, golds, cased=False)
    return report, em / len(rows) if rows else 0.0
