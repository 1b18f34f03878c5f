"""Command-line interface: ``sdse <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .corpus import SynthSpec, TASKS, gen_synthetic, load_corpus
from .decode import write_trace
from .errors import DataError, NumericError
from .estimator import SyntacticSummarizer
from .rouge import corpus_rouge
from .train import TrainConfig, full_model_gradcheck, write_curve

log = logging.getLogger("sdse")

GRADCHECK_TOL = 1e-4
GRADCHECK_DEFAULTS = dict(hidden=8, embed=6, vocab=24, seed=1, coverage_weight=1.0, attention="additive")
DECODE_KEYS = ("beam_width", "max_decode_len")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# ------------------------------------------------------------------ config

def _field_types():
    out = {f.name: type(f.default) for f in dataclasses.fields(TrainConfig)}
    out.update(beam_width=int, max_decode_len=int, drop_root=bool)
    return out


FIELD_TYPES = _field_types()


def _coerce(key, value: str):
    kind = FIELD_TYPES[key]
    if kind is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {value!r}")
    try:
        return kind(value.strip())
    except ValueError:
        raise UsageError(f"{key}: expected {kind.__name__}, got {value!r}") from None


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment. Unknown keys are fatal."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise DataError(f"cannot read config {path}: {err}") from err
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in FIELD_TYPES:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_config(args, keys, defaults=None) -> dict:
    """Defaults, then the config file, then explicit flags."""
    defaults = {**SyntacticSummarizer().get_params(), **(defaults or {})}
    cfg = {k: defaults[k] for k in keys}
    if getattr(args, "config", None):
        from_file = read_config_file(args.config)
        extra = set(from_file) - set(keys)
        if extra:
            raise UsageError(f"config keys not used by {args.command}: {', '.join(sorted(extra))}")
        cfg.update(from_file)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _print_config(command, cfg):
    items = " ".join(f"{k}={v}" for k, v in cfg.items())
    print(f"[{command}] config: {items}", file=sys.stderr)


def _add_train_flags(p, keys=None):
    keys = keys or TrainConfig.field_names()
    for k in keys:
        flag = "--" + k.replace("_", "-")
        kind = FIELD_TYPES[k]
        if kind is bool:
            p.add_argument(flag, dest=k, action="store_true", default=None)
        elif k == "attention":
            p.add_argument(flag, dest=k, choices=("additive", "literal"), default=None)
        else:
            p.add_argument(flag, dest=k, type=kind, default=None, metavar=k.upper())
    p.add_argument("--config", help="file of key=value lines; flags take precedence")


def _add_decode_flags(p):
    p.add_argument("--beam-width", dest="beam_width", type=int, default=None)
    p.add_argument("--max-decode-len", dest="max_decode_len", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sdse", description="Syntax-aware selective-gate summarizer.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synthetic", help="write a synthetic JSONL corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-docs", type=int, default=100)
    p.add_argument("--sentences", type=int, default=3)
    p.add_argument("--nonce-rate", type=float, default=0.0)
    p.add_argument("--task", choices=TASKS, default="copy_first_sentence")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("preprocess", help="serialize a corpus and build the vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="serialized JSONL")
    p.add_argument("--vocab-out", required=True, help="vocabulary file, one token per line in id order")
    _add_train_flags(p, ["vocab", "max_src_len", "no_syntax"])

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--curve", help="loss curve TSV (default: <out>.curve.tsv)")
    _add_train_flags(p)

    p = sub.add_parser("summarize", help="beam-search summaries for a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", help="JSONL output (default: stdout)")
    _add_decode_flags(p)

    p = sub.add_parser("evaluate", help="corpus ROUGE of predictions against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", help="TSV output (default: stdout)")

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    _add_train_flags(p, list(GRADCHECK_DEFAULTS))
    p.add_argument("--eps", type=float, default=1e-5)

    p = sub.add_parser("trace-gates", help="dump mean gate activations as TSV")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", help="TSV output (default: stdout)")
    p.add_argument("--doc-id", help="document to trace (default: the first)")
    p.add_argument("--decoded", action="store_true",
                   help="trace along the beam-search output instead of the gold summary")
    _add_decode_flags(p)
    return parser


# ---------------------------------------------------------------- commands

def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    try:
        return open(path, "w", encoding="utf-8"), True
    except OSError as err:
        raise DataError(f"cannot write {path}: {err}") from err


def cmd_gen_synthetic(args):
    spec = SynthSpec(args.n_docs, args.sentences, args.nonce_rate, args.task, args.k, args.seed)
    _print_config(args.command, dataclasses.asdict(spec))
    gen_synthetic(spec, args.out)
    print(f"wrote {spec.n_docs} documents to {args.out}", file=sys.stderr)


def cmd_preprocess(args):
    cfg = resolve_config(args, ["vocab", "max_src_len", "no_syntax"])
    _print_config(args.command, cfg)
    est = SyntacticSummarizer(**cfg)
    docs = list(load_corpus(args.corpus, require_summary=False))
    est.vocab_ = est.build_vocabulary([d.serialize(est.drop_root) for d in docs])
    _, examples = est.examples(docs)
    fh, close = _open_out(args.out)
    try:
        for ex in examples:
            toks = [est.vocab_.id_to_word[i] if i < len(est.vocab_) else ex.extended.word(i)
                    for i in ex.ext_ids.tolist()]
            fh.write(json.dumps({"id": ex.doc_id, "tokens": toks, "ids": ex.ids.tolist(),
                                 "word_mask": ex.word_mask.astype(int).tolist()}) + "\n")
    finally:
        if close:
            fh.close()
    with open(args.vocab_out, "w", encoding="utf-8") as vf:
        for w in est.vocab_.id_to_word:
            vf.write(w + "\n")
    print(f"{len(examples)} documents, vocabulary {len(est.vocab_)}", file=sys.stderr)


def cmd_train(args):
    cfg = resolve_config(args, TrainConfig.field_names())
    _print_config(args.command, cfg)
    est = SyntacticSummarizer(**cfg)
    docs = list(load_corpus(args.corpus))

    def progress(p):
        print(f"step {p.step}\tloss {p.loss:.4f}\tnll {p.nll:.4f}\tcov {p.coverage:.4f}", file=sys.stderr)

    def checkpoint(step, e):
        e.save(args.out)
        print(f"checkpoint at step {step} -> {args.out}", file=sys.stderr)

    est.fit(docs, progress=progress, checkpoint=checkpoint)
    est.save(args.out)
    write_curve(est.curve_, args.curve or f"{args.out}.curve.tsv")
    print(f"saved {args.out}", file=sys.stderr)


def _load_model(args):
    est = SyntacticSummarizer.load(args.model)
    for k in DECODE_KEYS:
        if getattr(args, k, None) is not None:
            setattr(est, k, getattr(args, k))
    _print_config(args.command, est.get_params())
    return est


def cmd_summarize(args):
    est = _load_model(args)
    docs = list(load_corpus(args.corpus, require_summary=False))
    fh, close = _open_out(args.out)
    try:
        for i, doc in enumerate(docs, 1):
            (s,) = est.summarize([doc])
            fh.write(json.dumps({"id": doc.id, "summary": s.text}, ensure_ascii=False) + "\n")
            fh.flush()
            print(f"summarized {i}/{len(docs)}", file=sys.stderr)
    finally:
        if close:
            fh.close()


def _read_summaries(path) -> dict[str, str]:
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as err:
        raise DataError(f"cannot open {path}: {err}") from err
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataError(f"{path}:{lineno}: {err.msg}") from None
            if not isinstance(obj, dict) or "id" not in obj or "summary" not in obj:
                raise DataError(f"{path}:{lineno}: expected an object with 'id' and 'summary'")
            out[str(obj["id"])] = obj["summary"]
    return out


def cmd_evaluate(args):
    _print_config(args.command, {"pred": args.pred, "ref": args.ref})
    pred, ref = _read_summaries(args.pred), _read_summaries(args.ref)
    missing = [k for k in ref if k not in pred]
    if missing:
        raise DataError(f"{len(missing)} reference ids have no prediction, e.g. {missing[0]!r}")
    scores = corpus_rouge((pred[k], ref[k]) for k in ref)
    fh, close = _open_out(args.out)
    try:
        fh.write("metric\tprecision\trecall\tf1\n")
        for name, s in scores.items():
            fh.write(f"{name}\t{s.precision:.6f}\t{s.recall:.6f}\t{s.f1:.6f}\n")
    finally:
        if close:
            fh.close()
    print(f"evaluated {len(ref)} documents", file=sys.stderr)


def cmd_gradcheck(args):
    cfg = resolve_config(args, list(GRADCHECK_DEFAULTS), GRADCHECK_DEFAULTS)
    cfg["eps"] = args.eps
    _print_config(args.command, cfg)
    report = full_model_gradcheck(cfg["hidden"], cfg["embed"], cfg["vocab"], cfg["seed"],
                                  cfg["eps"], cfg["coverage_weight"], cfg["attention"])
    idx = tuple(int(i) for i in report.worst_index)
    print(f"max relative error {report.max_rel_error:.3e} ({report.worst_param}"
          f"{list(idx)}, {report.n_coords} coordinates)")
    if not report.max_rel_error < GRADCHECK_TOL:
        raise NumericError(f"gradient check failed: {report.max_rel_error:.3e} >= {GRADCHECK_TOL}")


def cmd_trace_gates(args):
    est = _load_model(args)
    docs = list(load_corpus(args.corpus, require_summary=False))
    if not docs:
        raise DataError("corpus is empty")
    if args.doc_id is None:
        doc = docs[0]
    else:
        found = [d for d in docs if d.id == args.doc_id]
        if not found:
            raise DataError(f"no document with id {args.doc_id!r}")
        doc = found[0]
    if args.decoded or not doc.summary:
        (s,) = est.summarize([doc])
        rows, words = s.gates, est.examples([doc])[1][0].source_words
    else:
        rows, words = est.trace_gates(doc)
    fh, close = _open_out(args.out)
    try:
        write_trace(rows, words, fh)
    finally:
        if close:
            fh.close()


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "summarize": cmd_summarize,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "trace-gates": cmd_trace_gates,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except NumericError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return 3
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except ValueError as err:
        # invalid hyperparameter values
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
