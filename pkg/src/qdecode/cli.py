"""Command-line entry point: ``qdecode <command> [options]``.

Commands and the files they write (all under ``--out``):

=============  ==========================================================
make-corpus    corpus.txt, manifest.txt, train.txt, validation.txt,
               seen_test.txt, unseen_test.txt
pretrain       vocab.txt, stategf.ckpt, pretrain.csv
train-dqn      qnet.ckpt, dqn.csv
decode         decoded.txt (or ``--output``)
eval           eval.csv
sweep-epsilon  sweep.csv
=============  ==========================================================

CSV columns:

* pretrain.csv: ``epoch,cost,train_bleu``
* dqn.csv: ``epoch,mean_reward,mean_bleu,epsilon``
* eval.csv: ``split,baseline_bleu,dqn_bleu`` with rows ``seen`` and ``unseen``
* sweep.csv: ``epsilon,avg_bleu``

Exit codes: 0 success, 1 usage or configuration error (including missing or
mismatched input files), 2 runtime error. Outputs are written only after a
command succeeds, each one atomically.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import logging
import os
import sys
import tempfile
from dataclasses import fields
from pathlib import Path

from . import stategf as sgf
from .checkpoint import dumps
from .config import RunConfig, load_config
from .corpus import (
    PAIR_SEPARATOR,
    Vocab,
    build_vocab,
    decode_sentence,
    encode_pairs,
    encode_sentence,
    format_pair,
    manifest_text,
    read_corpus,
    split_dataset,
    synthesize_corpus,
)
from .dqn import StateCache, decode_iterative, epsilon_sweep, evaluate, load_qnet, train_dqn
from .errors import InvalidArgument
from .metric import corpus_average_bleu

log = logging.getLogger("qdecode")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([[repr(v) if isinstance(v, float) else v for v in row] for row in rows])
    return buf.getvalue().encode("utf-8")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _require_file(path, what: str) -> Path:
    if path is None:
        raise InvalidArgument(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise InvalidArgument(f"{what} file not found: {p}")
    return p


def _load_vocab(path) -> tuple[Vocab, str]:
    p = _require_file(path, "vocab")
    return Vocab.load(p), _sha256(p)


def _load_stategf(path, vocab: Vocab, vocab_hash: str):
    params, meta = sgf.load(_require_file(path, "stategf"))
    if params.vocab_size != len(vocab):
        raise InvalidArgument(f"StateGF checkpoint has vocabulary size {params.vocab_size}, vocab file has {len(vocab)}")
    if meta.get("vocab_sha256") not in (None, vocab_hash):
        raise InvalidArgument("StateGF checkpoint was trained with a different vocabulary file")
    return sgf.freeze(params)


def _load_qnet(path, stategf_path, stategf):
    qnet, meta = load_qnet(_require_file(path, "qnet"))
    if qnet.hidden_dim != stategf.hidden_dim:
        raise InvalidArgument("Q-network and StateGF hidden sizes differ")
    if meta.get("stategf_sha256") not in (None, _sha256(stategf_path)):
        raise InvalidArgument("Q-network was trained against a different StateGF checkpoint")
    return qnet


def _eval_seed(cfg: RunConfig) -> int:
    return int(cfg.rng("eval").integers(2**31))


def _encoded_corpus(path, vocab: Vocab, cfg: RunConfig, what: str):
    pairs = read_corpus(_require_file(path, what), cfg.max_length)
    if not pairs:
        raise InvalidArgument(f"{what} corpus {path} is empty")
    return encode_pairs(vocab, pairs)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_make_corpus(args, cfg: RunConfig) -> dict[str, bytes]:
    rng = cfg.rng("corpus")
    pairs = synthesize_corpus(cfg.synthetic_spec(), rng)
    splits = split_dataset(pairs, (cfg.train_size, cfg.valid_size, cfg.unseen_size), cfg.seen_size, rng)
    out = {}
    for name, part in (("corpus.txt", pairs), ("train.txt", splits.train), ("validation.txt", splits.validation),
                       ("seen_test.txt", splits.seen_test), ("unseen_test.txt", splits.unseen_test)):
        out[name] = "".join(format_pair(s, t) + "\n" for s, t in part).encode("utf-8")
    out["manifest.txt"] = manifest_text(splits.indices).encode("utf-8")
    return out


def cmd_pretrain(args, cfg: RunConfig) -> dict[str, bytes]:
    raw = read_corpus(_require_file(args.train, "train"), cfg.max_length)
    if not raw:
        raise InvalidArgument("training corpus is empty")
    if args.vocab:
        vocab, _ = _load_vocab(args.vocab)
    else:
        vocab = build_vocab([s for s, _ in raw] + [t for _, t in raw], cfg.vocab_size)
    vocab_text = "".join(f"{tok}\n" for tok in vocab.id_to_token[4:]).encode("utf-8")
    corpus = encode_pairs(vocab, raw)
    rng = cfg.rng("pretrain")
    params = sgf.StateGFParams.init(len(vocab), cfg.embed_dim, cfg.hidden_dim, cfg.init_halfwidth, rng)
    report = sgf.pretrain(params, corpus, cfg.pretrain_config(), rng)
    meta = {"vocab_sha256": hashlib.sha256(vocab_text).hexdigest(), "seed": cfg.seed, "epochs": cfg.pretrain_epochs}
    meta.update(kind="stategf", vocab_size=params.vocab_size, hidden_dim=params.hidden_dim)
    ckpt = dumps(params.named_arrays(), meta)
    rows = [(i + 1, c, b) for i, (c, b) in enumerate(zip(report.per_epoch_cost, report.per_epoch_train_bleu))]
    return {
        "vocab.txt": vocab_text,
        "stategf.ckpt": ckpt,
        "pretrain.csv": _csv_bytes(("epoch", "cost", "train_bleu"), rows),
    }


def cmd_train_dqn(args, cfg: RunConfig) -> dict[str, bytes]:
    vocab, vocab_hash = _load_vocab(args.vocab)
    stategf = _load_stategf(args.stategf, vocab, vocab_hash)
    corpus = _encoded_corpus(args.train, vocab, cfg, "train")
    qnet, train_log = train_dqn(stategf, corpus, cfg.dqn_config(), cfg.rng("dqn"))
    meta = {"kind": "qnet", "hidden_dim": qnet.hidden_dim, "stategf_sha256": _sha256(args.stategf),
            "seed": cfg.seed, "epochs": cfg.dqn_epochs}
    return {
        "qnet.ckpt": dumps(qnet.named_arrays(), meta),
        "dqn.csv": _csv_bytes(("epoch", "mean_reward", "mean_bleu", "epsilon"), train_log.rows()),
    }


def cmd_decode(args, cfg: RunConfig) -> dict[str, bytes]:
    vocab, vocab_hash = _load_vocab(args.vocab)
    stategf = _load_stategf(args.stategf, vocab, vocab_hash)
    qnet = _load_qnet(args.qnet, args.stategf, stategf) if args.mode == "dqn" else None
    dqn_cfg = cfg.dqn_config()
    cache = StateCache(stategf, dqn_cfg.candidate_rule)
    path = _require_file(args.input, "input")
    lines = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        text = line.split(PAIR_SEPARATOR, 1)[0]
        if not text.strip():
            log.warning("%s:%d: skipping empty line", path, lineno)
            continue
        src = encode_sentence(vocab, text)
        if len(src) > cfg.max_length:
            raise InvalidArgument(f"{path}:{lineno}: sentence longer than max_length={cfg.max_length}")
        if qnet is None:
            ids = list(cache.greedy(src, cfg.max_length))
        else:
            ids = decode_iterative(qnet, stategf, src, 0.0, dqn_cfg, cache=cache)
        lines.append(" ".join(decode_sentence(vocab, ids)) + "\n")
    return {args.output or "decoded.txt": "".join(lines).encode("utf-8")}


def cmd_eval(args, cfg: RunConfig) -> dict[str, bytes]:
    vocab, vocab_hash = _load_vocab(args.vocab)
    seen = _encoded_corpus(args.seen, vocab, cfg, "seen")
    unseen = _encoded_corpus(args.unseen, vocab, cfg, "unseen")
    rows = []
    if args.reference_as_candidate:
        for name, data in (("seen", seen), ("unseen", unseen)):
            score = corpus_average_bleu([(t, t) for _, t in data])
            rows.append((name, score, score))
    else:
        stategf = _load_stategf(args.stategf, vocab, vocab_hash)
        qnet = _load_qnet(args.qnet, args.stategf, stategf)
        dqn_cfg = cfg.dqn_config()
        cache = StateCache(stategf, dqn_cfg.candidate_rule)
        for name, data in (("seen", seen), ("unseen", unseen)):
            base = evaluate(None, stategf, data, 0.0, dqn_cfg, _eval_seed(cfg), cache)
            dqn = evaluate(qnet, stategf, data, 0.0, dqn_cfg, _eval_seed(cfg), cache)
            rows.append((name, base, dqn))
    return {"eval.csv": _csv_bytes(("split", "baseline_bleu", "dqn_bleu"), rows)}


def cmd_sweep_epsilon(args, cfg: RunConfig) -> dict[str, bytes]:
    vocab, vocab_hash = _load_vocab(args.vocab)
    stategf = _load_stategf(args.stategf, vocab, vocab_hash)
    qnet = _load_qnet(args.qnet, args.stategf, stategf)
    test = _encoded_corpus(args.test, vocab, cfg, "test")
    rows = epsilon_sweep(qnet, stategf, test, cfg.epsilon_list(), cfg.dqn_config(), _eval_seed(cfg))
    return {"sweep.csv": _csv_bytes(("epsilon", "avg_bleu"), rows)}


COMMANDS = {
    "make-corpus": (cmd_make_corpus, "write a synthetic regeneration corpus and its splits"),
    "pretrain": (cmd_pretrain, "train the encoder-decoder StateGF"),
    "train-dqn": (cmd_train_dqn, "train the Q-network against a frozen StateGF"),
    "decode": (cmd_decode, "decode sentences with the greedy baseline or the DQN"),
    "eval": (cmd_eval, "seen/unseen corpus BLEU for baseline and DQN decoding"),
    "sweep-epsilon": (cmd_sweep_epsilon, "DQN test BLEU for several exploration rates"),
}

FILE_FLAGS = {
    "pretrain": ("train", "vocab"),
    "train-dqn": ("train", "vocab", "stategf"),
    "decode": ("vocab", "stategf", "qnet", "input", "output"),
    "eval": ("vocab", "stategf", "qnet", "seen", "unseen"),
    "sweep-epsilon": ("vocab", "stategf", "qnet", "test"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qdecode", description="Q-learning sentence decoder.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="run seed (overrides the config file)")
        p.add_argument("--out", default=".", help="output directory (default: current directory)")
        p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
        for flag in FILE_FLAGS.get(name, ()):
            p.add_argument(f"--{flag}", help=f"{flag} file")
        if name == "decode":
            p.add_argument("--mode", choices=("baseline", "dqn"), default="dqn")
        if name == "eval":
            p.add_argument("--reference-as-candidate", action="store_true",
                           help="score each reference against itself (sanity check)")
        hp = p.add_argument_group("hyperparameter overrides")
        for f in fields(RunConfig):
            if f.name != "seed":
                hp.add_argument(f"--{f.name.replace('_', '-')}", dest=f"hp_{f.name}", metavar="V")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        overrides = {k[3:]: v for k, v in vars(args).items() if k.startswith("hp_")}
        overrides["seed"] = args.seed
        cfg = load_config(args.config, overrides)
        handler = COMMANDS[args.command][0]
        outputs = handler(args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"qdecode: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidArgument as exc:
        print(f"qdecode: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"qdecode: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        out_dir = Path(args.out)
        for name, data in outputs.items():
            _write_atomic(out_dir / name, data)
    except OSError as exc:
        print(f"qdecode: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
