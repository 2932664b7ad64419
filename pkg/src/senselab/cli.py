"""``senselab`` command line: build-vocab, train-lm, build-senses, disambiguate,
propagate, score, synth, selfcheck.

Exit status is 0 on success, 1 on usage errors and 2 on data errors.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from . import corpus as corpus_mod
from .corpus import (CorpusError, Vocabulary, build_vocabulary, chunk_sentences, encode,
                     format_annotated_corpus, format_key_file, parse_key_file, read_annotated_corpus,
                     tokenize)
from .evaluation import (PseudoCorpusError, default_pseudo_spec, format_predictions, make_pseudo_corpus,
                         parse_predictions, score)
from .lstm_lm import (BACKEND, CheckpointError, ModelConfig, TrainingError, load_checkpoint,
                      save_checkpoint, train)
from .lstm_lm.checkpoint import atomic_write
from .wsd import (LabelPropagationError, SenseEmbeddingTable, SenseTableError, build_sense_table,
                  disambiguate, mfs_from_instances, propagate_instances)

log = logging.getLogger("senselab")

SEED_ENV = "SENSELAB_SEED"
DATA_ERRORS = (CorpusError, CheckpointError, SenseTableError, TrainingError, LabelPropagationError,
               PseudoCorpusError, ValueError, OSError)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------- config file


def parse_config(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.split("\n"), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _truthy(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {value!r}")


# --------------------------------------------------------------------------- helpers


def _require(path: str | None, what: str) -> str:
    if not path:
        raise UsageError(f"missing required --{what}")
    if not os.path.exists(path):
        raise DataError(f"input file not found: {path}")
    return path


def _digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_text(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    atomic_write(path, text.encode("utf-8"))


def write_manifest(out_path: str, command: str, args: argparse.Namespace, inputs: dict[str, str]) -> None:
    """``<out>.manifest``: resolved options, seed, kernel backend and input digests."""
    skip = {"command", "config", "quiet", "threads", "func"}
    lines = [f"command = {command}", f"kernel_backend = {BACKEND}"]
    for k in sorted(vars(args)):
        if k not in skip:
            lines.append(f"{k} = {getattr(args, k)}")
    for name in sorted(inputs):
        lines.append(f"input.{name}.sha256 = {_digest(inputs[name])}")
    _write_text(out_path + ".manifest", "\n".join(lines) + "\n")


def _read_bytes(path: str) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def _load_lm_sentences(path: str, lowercase: bool, max_len: int) -> list[list[str]]:
    return chunk_sentences(tokenize(_read_bytes(path), lowercase=lowercase), max_len)


def _model_and_vocab(args):
    vocab = Vocabulary.load(_require(args.vocab, "vocab"))
    params, _ = load_checkpoint(_require(args.model, "model"), vocab.digest)
    return params, vocab


# --------------------------------------------------------------------------- subcommands


def cmd_build_vocab(args) -> int:
    src = _require(args.corpus, "corpus")
    sents = _load_lm_sentences(src, not args.no_lowercase, args.max_len)
    vocab = build_vocabulary(sents, args.max_size, args.min_count)
    _write_text(args.out, vocab.to_text())
    write_manifest(args.out, "build-vocab", args, {"corpus": src})
    log.info("vocabulary: %d entries -> %s", len(vocab), args.out)
    return 0


def cmd_train_lm(args) -> int:
    src = _require(args.corpus, "corpus")
    vocab_path = _require(args.vocab, "vocab")
    vocab = Vocabulary.load(vocab_path)
    sents = _load_lm_sentences(src, not args.no_lowercase, args.max_len)
    data = [encode(s, vocab) for s in sents]
    config = ModelConfig(
        V=len(vocab), p=args.p, h=args.h, learning_rate=args.learning_rate, clip_norm=args.clip_norm,
        batch_size=args.batch_size, epochs=args.epochs, seed=args.seed, max_len=args.max_len,
        max_sentences=args.max_sentences, optimizer=args.optimizer,
    )
    params, losses = train(config, data, vocab, log_every=args.log_every)
    save_checkpoint(params, config, vocab.digest, args.out)
    _write_text(args.out + ".loss.tsv", "".join(f"{i + 1}\t{l!r}\n" for i, l in enumerate(losses)))
    write_manifest(args.out, "train-lm", args, {"corpus": src, "vocab": vocab_path})
    log.info("trained %d epochs, final loss %.4f -> %s", len(losses), losses[-1], args.out)
    return 0


def _encode_opts(args) -> dict:
    return {"lowercase": not args.no_lowercase, "max_len": args.max_len}


def cmd_build_senses(args) -> int:
    params, vocab = _model_and_vocab(args)
    xml, keys = _require(args.xml, "xml"), _require(args.keys, "keys")
    instances = [i for i in read_annotated_corpus(xml, keys) if i.gold_keys]
    table = build_sense_table(instances, params, vocab, **_encode_opts(args))
    _write_text(args.out, table.to_text())
    write_manifest(args.out, "build-senses", args,
                   {"model": args.model, "vocab": args.vocab, "xml": xml, "keys": keys})
    log.info("%d sense embeddings from %d instances -> %s", len(table.by_key), len(instances), args.out)
    return 0


def _merge_mfs(args, table: SenseEmbeddingTable, inputs: dict) -> None:
    if args.mfs_xml:
        inputs["mfs_xml"] = _require(args.mfs_xml, "mfs-xml")
        inputs["mfs_keys"] = _require(args.mfs_keys, "mfs-keys")
        table.merge_mfs(mfs_from_instances(read_annotated_corpus(args.mfs_xml, args.mfs_keys)))


def cmd_disambiguate(args) -> int:
    params, vocab = _model_and_vocab(args)
    senses, xml = _require(args.senses, "senses"), _require(args.xml, "xml")
    table = SenseEmbeddingTable.load(senses)
    inputs = {"model": args.model, "vocab": args.vocab, "senses": senses, "xml": xml}
    _merge_mfs(args, table, inputs)
    instances = read_annotated_corpus(xml)
    preds = disambiguate(instances, params, table, vocab, fallback=not args.no_fallback, **_encode_opts(args))
    _write_text(args.out, format_predictions(preds))
    write_manifest(args.out, "disambiguate", args, inputs)
    log.info("%d/%d instances attempted -> %s", sum(p.attempted for p in preds), len(preds), args.out)
    return 0


def cmd_propagate(args) -> int:
    params, vocab = _model_and_vocab(args)
    txml, tkeys, xml = (_require(args.train_xml, "train-xml"), _require(args.train_keys, "train-keys"),
                        _require(args.xml, "xml"))
    inputs = {"model": args.model, "vocab": args.vocab, "train_xml": txml, "train_keys": tkeys, "xml": xml}
    labelled = read_annotated_corpus(txml, tkeys)
    table = None
    if not args.no_fallback:
        # MFS backoff for lemmas with no labelled neighbours
        table = SenseEmbeddingTable(params.E.shape[1])
        table.merge_mfs(mfs_from_instances(labelled))
        _merge_mfs(args, table, inputs)
    sigma = None if str(args.sigma).lower() == "auto" else float(args.sigma)
    preds = propagate_instances(labelled, read_annotated_corpus(xml), params, vocab, k=args.k, sigma=sigma,
                                tol=args.tol, max_iter=args.max_iter, table=table, **_encode_opts(args))
    _write_text(args.out, format_predictions(preds))
    write_manifest(args.out, "propagate", args, inputs)
    log.info("%d/%d instances attempted -> %s", sum(p.attempted for p in preds), len(preds), args.out)
    return 0


def cmd_score(args) -> int:
    pred_path, gold_path = _require(args.pred, "pred"), _require(args.gold, "gold")
    preds = parse_predictions(corpus_mod.decode_utf8(_read_bytes(pred_path)))
    gold = parse_key_file(_read_bytes(gold_path))
    pos_of = None
    if args.xml:
        pos_of = {i.instance_id: i.pos for i in read_annotated_corpus(_require(args.xml, "xml"))}
    report = score(preds, gold, pos_of)
    sys.stdout.write(report.to_text())
    if args.report:
        _write_text(args.report, report.to_tsv())
    return 0


def cmd_synth(args) -> int:
    spec = default_pseudo_spec(n_train_lm=args.n_lm, n_train_annotated=args.n_train, n_test=args.n_test,
                               seed=args.seed)
    pc = make_pseudo_corpus(spec)
    d = args.out_dir
    os.makedirs(d, exist_ok=True)
    files = {
        "lm.txt": "".join(" ".join(s) + "\n" for s in pc.lm_sentences),
        "train.xml": format_annotated_corpus(pc.train),
        "train.key": format_key_file({i.instance_id: i.gold_keys for i in pc.train}),
        "test.xml": format_annotated_corpus(pc.test),
        "test.key": format_key_file(pc.gold),
    }
    for name, text in files.items():
        _write_text(os.path.join(d, name), text)
    write_manifest(os.path.join(d, "synth"), "synth", args, {})
    log.info("pseudoword %r: %d LM sentences, %d train, %d test -> %s", spec.surface, len(pc.lm_sentences),
             len(pc.train), len(pc.test), d)
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_all

    results = run_all()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} checks passed (kernel backend: {BACKEND})")
    return 0 if failed == 0 else 2


# --------------------------------------------------------------------------- parser


def _add_model_opts(p):
    p.add_argument("--p", type=int, default=32, help="embedding / context dimension")
    p.add_argument("--h", type=int, default=64, help="LSTM hidden dimension")
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--max-sentences", type=int, default=None, help="train on a seeded subsample")
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--log-every", type=int, default=500, help="log progress every N batches")


def _add_text_opts(p):
    p.add_argument("--no-lowercase", action="store_true", help="keep case when mapping words to ids")
    p.add_argument("--max-len", type=int, default=100)


def _add_wsd_inputs(p):
    p.add_argument("--model")
    p.add_argument("--vocab")
    _add_text_opts(p)


def _add_fallback_opts(p):
    p.add_argument("--no-fallback", action="store_true", help="abstain instead of backing off to MFS")
    p.add_argument("--mfs-xml", help="extra annotated XML used only for MFS backoff")
    p.add_argument("--mfs-keys")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' file; flags override it")
    common.add_argument("--quiet", action="store_true", help="only log warnings")
    common.add_argument("--threads", type=int, default=1, help="cap BLAS worker threads")
    common.add_argument("--seed", type=int, default=0)

    parser = _Parser(prog="senselab", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("build-vocab", parents=[common], help="vocabulary from a plain-text LM corpus")
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--max-size", type=int, default=20000)
    p.add_argument("--min-count", type=int, default=1)
    _add_text_opts(p)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train-lm", parents=[common], help="train the held-out-word LSTM")
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--out", required=True)
    _add_model_opts(p)
    _add_text_opts(p)
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("build-senses", parents=[common], help="sense embeddings from annotated data")
    _add_wsd_inputs(p)
    p.add_argument("--xml")
    p.add_argument("--keys")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_senses)

    p = sub.add_parser("disambiguate", parents=[common], help="nearest-neighbour sense prediction")
    _add_wsd_inputs(p)
    p.add_argument("--senses")
    p.add_argument("--xml")
    p.add_argument("--out", required=True)
    _add_fallback_opts(p)
    p.set_defaults(func=cmd_disambiguate)

    p = sub.add_parser("propagate", parents=[common], help="label-propagation sense prediction")
    _add_wsd_inputs(p)
    p.add_argument("--train-xml")
    p.add_argument("--train-keys")
    p.add_argument("--xml")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--sigma", default="auto", help="kernel bandwidth or 'auto' (median distance)")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=1000)
    _add_fallback_opts(p)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("score", parents=[common], help="precision / recall / F1 against a gold key file")
    p.add_argument("--pred")
    p.add_argument("--gold")
    p.add_argument("--xml", help="annotated XML for the per-POS breakdown")
    p.add_argument("--report", help="write 'metric<TAB>value' lines here")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("synth", parents=[common], help="generate the pseudoword benchmark")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-lm", type=int, default=2000)
    p.add_argument("--n-train", type=int, default=20, help="annotated training instances per sense")
    p.add_argument("--n-test", type=int, default=100)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("selfcheck", parents=[common], help="run the gradient and oracle checks")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Install config-file values (and SENSELAB_SEED) as subcommand defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    sub = next((a for a in parser._actions if isinstance(a, argparse._SubParsersAction)), None)
    if sub is None or known.command not in sub.choices:
        return
    subparser = sub.choices[known.command]
    values: dict = {}
    if known.config:
        if not os.path.exists(known.config):
            raise DataError(f"config file not found: {known.config}")
        values = parse_config(corpus_mod.decode_utf8(_read_bytes(known.config)))
    if os.environ.get(SEED_ENV):
        values["seed"] = os.environ[SEED_ENV]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r} for {known.command}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = _truthy(value)
        elif action.type is not None:
            try:
                defaults[key] = action.type(value)
            except (TypeError, ValueError):
                raise UsageError(f"bad value for {key}: {value!r}") from None
        else:
            defaults[key] = value
    # required flags given in the config no longer need to be on the command line
    for key in defaults:
        actions[key].required = False
    subparser.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except UsageError as e:
        print(f"senselab: error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"senselab: error: {e}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            return args.func(args)
    except UsageError as e:
        print(f"senselab {args.command}: error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"senselab {args.command}: error: {e}", file=sys.stderr)
        return 2
    except DATA_ERRORS as e:
        print(f"senselab {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
