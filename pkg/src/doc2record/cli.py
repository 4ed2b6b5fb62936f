"""Command-line driver: gen-data, train, predict, eval, align, cost.

A trained model is three files: `<path>` (weights + model config),
`<path>.vocab` (tokenizer) and `<path>.run.json` (run settings needed to
reproduce the inference pipeline).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .chunking import attention_cost
from .codec import FORMATS
from .datasets import write_jsonl
from .metrics import Span, fuzzy_align, score_alignment
from .model import ModelConfig
from .persistence import load_model, save_model
from .tokenizer import load_vocab, save_vocab
from .training import (RunConfig, TrainingError, evaluate, generate_rows,
                       load_rows, predict_text, train)

SHAPE_NAMES = {"dict": "dict", "tuples": "tuple_set"}


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--task", default="dates",
                   choices=["dates", "names", "numbers", "longdoc", "custom"])
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--enc-layers", type=int, default=2)
    p.add_argument("--dec-layers", type=int, default=2)
    p.add_argument("--d-ff", type=int, default=256)
    p.add_argument("--chunk-size", "-c", type=int, default=48)
    p.add_argument("--max-chunks", "-m", type=int, default=4)
    p.add_argument("--max-target-len", type=int, default=64)
    p.add_argument("--vocab-size", type=int, default=0,
                   help="0 means character-level (coverage minimum)")
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--lr", type=float, default=6.25e-5)
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=2500)
    p.add_argument("--n-eval", type=int, default=500)
    p.add_argument("--n-dev", type=int, default=64)
    p.add_argument("--dev-every", type=int, default=1)
    p.add_argument("--longdoc-len", type=int, default=120)
    p.add_argument("--format", default="pyliteral", choices=FORMATS)
    p.add_argument("--shape", default="dict", choices=sorted(SHAPE_NAMES))
    for toggle, default in [("lowercase", True), ("strip-commas", False),
                            ("shuffle-epochs", False), ("slot-prefix", False),
                            ("digit-split", True), ("checkpointing", False),
                            ("trace-memory", False)]:
        p.add_argument(f"--{toggle}", action=argparse.BooleanOptionalAction, default=default)


def _run_config(args, **overrides) -> RunConfig:
    kw = dict(
        task=args.task, d_model=args.d_model, n_heads=args.n_heads,
        n_enc_layers=args.enc_layers, n_dec_layers=args.dec_layers,
        d_ff=args.d_ff, chunk_size=args.chunk_size, max_chunks=args.max_chunks,
        max_target_len=args.max_target_len, vocab_size=args.vocab_size,
        dropout=args.dropout, learning_rate=args.lr, epochs=args.epochs,
        beam_size=args.beam, seed=args.seed, n_train=args.n_train,
        n_eval=args.n_eval, n_dev=args.n_dev, dev_every=args.dev_every,
        longdoc_len=args.longdoc_len, fmt=args.format,
        shape=SHAPE_NAMES[args.shape], lowercase=args.lowercase,
        strip_commas=args.strip_commas, shuffle_epochs=args.shuffle_epochs,
        slot_prefix=args.slot_prefix, digit_split=args.digit_split,
        checkpointing=args.checkpointing, trace_memory=args.trace_memory,
    )
    kw.update(overrides)
    return RunConfig(**kw)


def _save_artifacts(path: str, result, rc: RunConfig):
    save_model(path, result.params, result.config)
    save_vocab(result.vocab, path + ".vocab")
    manifest = dataclasses.asdict(rc)
    with open(path + ".run.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load_artifacts(path: str, **overrides):
    params, config = load_model(path)
    vocab = load_vocab(path + ".vocab")
    with open(path + ".run.json") as fh:
        manifest = json.load(fh)
    names = {f.name for f in dataclasses.fields(RunConfig)}
    manifest = {k: v for k, v in manifest.items() if k in names}
    manifest.update(overrides)
    rc = RunConfig(**manifest)
    if config.vocab_size != len(vocab):
        raise TrainingError(
            f"model expects vocab of {config.vocab_size}, file has {len(vocab)}")
    return params, config, vocab, rc


def cmd_gen_data(args) -> int:
    rc = _run_config(args)
    rows = generate_rows(rc.task, args.n, args.seed, rc,
                         "eval" if args.split == "eval" else "train")
    from .codec import Record
    write_jsonl(args.out, [(r["input"], r["record"]) for r in rows]
                if not any(r["spans"] for r in rows) else
                [_row_to_example(r) for r in rows])
    print(f"wrote {len(rows)} examples to {args.out}")
    return 0


def _row_to_example(row):
    from .datasets import LongDocExample
    return LongDocExample(text=row["input"], record=row["record"], spans=row["spans"])


def cmd_train(args) -> int:
    rc = _run_config(args, data_path=args.data, model_path=args.model_path,
                     report_path=args.report)
    result = train(rc, log=print)
    _save_artifacts(rc.model_path, result, rc)
    if rc.report_path:
        with open(rc.report_path, "w") as fh:
            fh.write(result.log_text)
            for trace in result.memory_traces:
                fh.write(trace)
    print(f"saved model to {rc.model_path}")
    return 0


def cmd_predict(args) -> int:
    params, config, vocab, rc = _load_artifacts(
        args.model, **({"beam_size": args.beam} if args.beam else {}))
    text = args.input if args.input is not None else sys.stdin.read()
    pred = predict_text(text, params, config, vocab, rc)
    out = {
        "record": [[k, str(v)] for k, v in pred.record.pairs],
        "raw": pred.raw,
        "parse_failure": pred.failure_kind,
        "truncated_input": pred.truncated_input,
        "truncated_output": pred.truncated_output,
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_eval(args) -> int:
    params, config, vocab, rc = _load_artifacts(args.model)
    if args.data:
        rc = dataclasses.replace(rc, eval_path=args.data)
    rows = load_rows(rc, "eval")
    report, em = evaluate(rows, params, config, vocab, rc)
    text = report.as_table() + f"\n{'exact-match':<16} {em:>31.3f}\n"
    print(text)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text + "\n" + report.as_kv_text() + f"exact_match={em:.6f}\n")
        print(f"wrote report to {args.report}")
    return 0


def cmd_align(args) -> int:
    from .datasets import read_jsonl
    rows = read_jsonl(args.data)
    stats: dict[str, dict[str, float]] = {}
    have_gold = False
    for row in rows:
        for key, value in row["record"].pairs:
            auto = fuzzy_align(str(value), row["input"])
            s = stats.setdefault(key, {"auto": 0, "tp": 0, "gold": 0, "covered": 0,
                                       "values": 0, "matched_values": 0})
            s["values"] += 1
            s["matched_values"] += bool(auto)
            s["auto"] += len(auto)
            gold_spans = [Span(a, b, row["input"][a:b])
                          for a, b in row["spans"].get(key, [])]
            if gold_spans:
                have_gold = True
                s["gold"] += len(gold_spans)
                s["tp"] += sum(1 for a in auto if any(a.overlaps(g) for g in gold_spans))
                s["covered"] += sum(1 for g in gold_spans
                                    if any(a.overlaps(g) for a in auto))
    lines = [f"{'key':<12} {'P':>7} {'R':>7} {'auto':>6} {'gold':>6} {'hit%':>6}"]
    kv = []
    for key in sorted(stats):
        s = stats[key]
        p = s["tp"] / s["auto"] if s["auto"] else 0.0
        r = s["covered"] / s["gold"] if s["gold"] else 0.0
        hit = s["matched_values"] / s["values"] if s["values"] else 0.0
        lines.append(f"{key:<12} {p:>7.3f} {r:>7.3f} {int(s['auto']):>6} "
                     f"{int(s['gold']):>6} {hit:>6.1%}")
        kv += [f"key.{key}.precision={p:.6f}", f"key.{key}.recall={r:.6f}",
               f"key.{key}.auto_spans={int(s['auto'])}",
               f"key.{key}.value_hit_rate={hit:.6f}"]
    if not have_gold:
        lines.append("(no gold spans in dataset; P/R reported as 0)")
    text = "\n".join(lines)
    print(text)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write("\n".join(kv) + "\n")
        print(f"wrote report to {args.report}")
    return 0


def cmd_cost(args) -> int:
    config = ModelConfig(
        d_model=args.d_model, n_heads=args.n_heads, n_enc_layers=args.enc_layers,
        n_dec_layers=args.dec_layers, d_ff=args.d_ff or 4 * args.d_model,
        vocab_size=32000, chunk_size=args.chunk_size, max_chunks=max(args.chunks, 1),
        max_target_len=8, dropout=0.0)
    report = attention_cost(config, args.chunks)
    sys.stdout.write(report.as_kv_text())
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="doc2record",
        description="train and evaluate document-to-record extraction models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic task dataset")
    _add_run_flags(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--split", default="train", choices=["train", "eval"])
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    _add_run_flags(p)
    p.add_argument("--data", default=None, help="JSONL dataset (default: generate)")
    p.add_argument("--model-path", default="model.d2d")
    p.add_argument("--report", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="run one document through a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", default=None, help="document text (default: stdin)")
    p.add_argument("--beam", type=int, default=None)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("eval", help="evaluate a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=None, help="JSONL dataset (default: generate eval split)")
    p.add_argument("--report", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("align", help="fuzzy-align record values to document spans")
    p.add_argument("--data", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(fn=cmd_align)

    p = sub.add_parser("cost", help="closed-form attention cost report")
    p.add_argument("--chunk-size", "-c", type=int, default=512)
    p.add_argument("--chunks", "-m", type=int, default=64)
    p.add_argument("--d-model", type=int, default=512)
    p.add_argument("--n-heads", type=int, default=8)
    p.add_argument("--enc-layers", type=int, default=12)
    p.add_argument("--dec-layers", type=int, default=12)
    p.add_argument("--d-ff", type=int, default=0)
    p.set_defaults(fn=cmd_cost)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
