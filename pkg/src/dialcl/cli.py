"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or runtime error.  Options come
from flags, then an optional ``key = value`` config file, then defaults;
the resolved configuration is printed to stderr before any work starts.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .augment import ViewStrategy, make_views
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import (ConfigError, CorpusError, Diagnostics, Vocab, build_vocab, context_groups, format_tsv_line,
                     pair_hard_negatives, read_dataset, write_dataset)
from .metrics import COLUMNS
from .posttrain import generate_post_training, preview, write_records
from .rng import SeedTree
from .train import (DEFAULT_CELLS, FULL_GRID, TrainConfig, TrainingError, ablate, evaluate, format_ablation,
                    params_from_tensors, train)

log = logging.getLogger("dialcl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


_DEFAULTS = TrainConfig()


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--strategy", choices=[s.value for s in ViewStrategy], default=_DEFAULTS.strategy)
    g.add_argument("--tau", type=float, default=_DEFAULTS.tau, help="contrastive temperature")
    g.add_argument("--alpha", type=float, default=_DEFAULTS.alpha, help="hard-negative penalty")
    g.add_argument("--lambda", dest="lam", type=float, default=_DEFAULTS.lam, help="cross-entropy weight")
    g.add_argument("--no-scl", dest="use_scl", action="store_false", help="drop the contrastive term (CE only)")
    g.add_argument("--ce-views", dest="ce_views", action="store_true", default=None,
                   help="include augmented views in the cross-entropy term")
    g.add_argument("--batch-size", type=int, default=_DEFAULTS.batch_size)
    g.add_argument("--lr", type=float, default=_DEFAULTS.lr)
    g.add_argument("--epochs", type=int, default=_DEFAULTS.epochs)
    g.add_argument("--eval-interval", type=int, default=_DEFAULTS.eval_interval)
    g.add_argument("--seed", type=int, default=_DEFAULTS.seed)
    g.add_argument("--dim", type=int, default=_DEFAULTS.dim)
    g.add_argument("--hidden", type=int, default=_DEFAULTS.hidden)
    g.add_argument("--max-len", type=int, default=_DEFAULTS.max_len)
    g.add_argument("--dropout", type=float, default=_DEFAULTS.dropout)
    g.add_argument("--vocab-size", type=int, default=_DEFAULTS.vocab_size)
    g.add_argument("--min-freq", type=int, default=_DEFAULTS.min_freq)
    g.add_argument("--clip-norm", type=float, default=_DEFAULTS.clip_norm,
                   help="global gradient-norm clip; default 5.0 when tau < 1, 0 disables")
    g.add_argument("--group-size", type=int, default=_DEFAULTS.group_size,
                   help="candidates per evaluation group (default: contiguous context blocks)")


def build_parser() -> _Parser:
    parser = _Parser(prog="dialcl", description="Two-level supervised contrastive learning for response selection.")
    parser.add_argument("--version", action="version", version=f"dialcl {__version__}")
    parser.add_argument("--config", help="key = value file; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("prepare", help="corpus statistics and vocabulary")
    p.add_argument("--input", help="TSV corpus (optionally gzipped)")
    p.add_argument("--split", choices=["train", "dev", "test"], default="train")
    p.add_argument("--vocab-out", help="write the vocabulary here")
    p.add_argument("--vocab-size", type=int, default=_DEFAULTS.vocab_size)
    p.add_argument("--min-freq", type=int, default=_DEFAULTS.min_freq)
    p.add_argument("--group-size", type=int, default=None)
    p.add_argument("--diagnostics", help="write the diagnostics report here")
    p.add_argument("--synthetic", type=int, metavar="N", help="generate N template dialogues instead of reading --input")
    p.add_argument("--out-dir", help="directory for --synthetic output (train.tsv, dev.tsv)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train and keep the best dev checkpoint")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--vocab", help="vocabulary file (default: built from --train)")
    p.add_argument("--out", required=True, help="best checkpoint path; vocabulary goes to OUT.vocab")
    p.add_argument("--state-out", help="also write the final resumable state here")
    p.add_argument("--resume", help="resume from a state checkpoint")
    p.add_argument("--history", help="append metric records (JSON lines) here")
    _add_training_flags(p)

    p = sub.add_parser("eval", help="rank a test file with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--vocab", help="default: CHECKPOINT.vocab")
    p.add_argument("--group-size", type=int, default=None)
    p.add_argument("--pairwise", action="store_true", help="restrict groups to first positive + first negative (R_2@k)")
    p.add_argument("--records", help="write JSON-line metric records here")

    p = sub.add_parser("augment-preview", help="print anchors next to their views")
    p.add_argument("--input", required=True)
    p.add_argument("--strategy", choices=[s.value for s in ViewStrategy], default="tl")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=5)

    p = sub.add_parser("postgen", help="generate post-training (MLM/NSP) examples")
    p.add_argument("--input", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="binary record file")
    p.add_argument("--vocab", help="default: built from --input")
    p.add_argument("--vocab-size", type=int, default=_DEFAULTS.vocab_size)
    p.add_argument("--max-len", type=int, default=_DEFAULTS.max_len)
    p.add_argument("--preview", action="store_true", help="print examples instead of / as well as writing them")

    p = sub.add_parser("ablate", help="train a grid of (strategy, SCL on/off) cells and tabulate")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test")
    p.add_argument("--name", default="data", help="dataset label for the table")
    p.add_argument("--cells", help="comma list of STRATEGY:on|off (default: the six standard rows); 'full' for the whole grid")
    p.add_argument("--records", help="write JSON-line metric records here")
    _add_training_flags(p)
    return parser


def _option_dests(parser: argparse.ArgumentParser) -> dict:
    return {a.dest: a for a in parser._actions if a.option_strings and a.dest not in ("help", "version")}


def read_config_file(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(action: argparse.Action, raw: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        truthy = raw.lower() in ("1", "true", "yes", "on")
        if not truthy and raw.lower() not in ("0", "false", "no", "off"):
            raise UsageError(f"config key {action.dest!r}: expected a boolean, got {raw!r}")
        return truthy if isinstance(action, argparse._StoreTrueAction) else not truthy
    value = action.type(raw) if action.type else raw
    if action.choices is not None and value not in action.choices:
        raise UsageError(f"config key {action.dest!r}: {raw!r} is not one of {list(action.choices)}")
    return value


def _subparser(parser, name):
    for a in parser._actions:
        if isinstance(a, argparse._SubParsersAction):
            return a.choices[name]
    raise KeyError(name)


def parse(argv):
    """Returns ``(args, sources)``; ``sources`` maps each option to flag/config/default."""
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = _subparser(parser, args.command)
    dests = _option_dests(sub)
    given = set()
    for dest, action in dests.items():
        for tok in argv:
            if any(tok == o or tok.startswith(o + "=") for o in action.option_strings):
                given.add(dest)
    cfg_values = {}
    if args.config:
        try:
            cfg_values = read_config_file(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc.strerror}") from None
        aliases = {"lambda": "lam", "scl": "use_scl"}
        for key, raw in cfg_values.items():
            dest = aliases.get(key, key)
            if dest not in dests:
                raise UsageError(f"unknown key {key!r} in config file {args.config} for command {args.command!r}")
            if dest not in given:
                if dest == "use_scl":
                    setattr(args, dest, raw.lower() in ("1", "true", "yes", "on"))
                else:
                    setattr(args, dest, _coerce(dests[dest], raw))
        cfg_values = {aliases.get(k, k): v for k, v in cfg_values.items()}
    sources = {d: "flag" if d in given else "config" if d in cfg_values else "default" for d in dests}
    return args, sources


def print_banner(args, sources, stream=None) -> None:
    stream = stream or sys.stderr
    print(f"# dialcl {args.command}: resolved configuration (flag > config file > default)", file=stream)
    for dest in sorted(sources):
        print(f"#   {dest} = {getattr(args, dest)!r}  [{sources[dest]}]", file=stream)


def train_config_from(args) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    kw = {k: getattr(args, k) for k in names if hasattr(args, k)}
    if kw.get("clip_norm") is not None and kw["clip_norm"] == 0:
        kw["clip_norm"] = 0.0
    return TrainConfig(**kw)


# -- commands ----------------------------------------------------------------

def cmd_prepare(args) -> int:
    diag = Diagnostics()
    if args.synthetic:
        from .synthetic import make_corpus
        if not args.out_dir:
            raise UsageError("--synthetic needs --out-dir")
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tr, dv = make_corpus(args.synthetic, seed=args.seed)
        write_dataset(tr, out / "train.tsv")
        write_dataset(dv, out / "dev.tsv")
        print(f"wrote {len(tr)} train and {len(dv)} dev lines to {out}")
        datasets = [("train", tr), ("dev", dv)]
    else:
        if not args.input:
            raise UsageError("prepare needs --input or --synthetic")
        datasets = [(args.split, read_dataset(args.input, args.split))]
    for split, ds in datasets:
        groups = context_groups(ds.examples, args.group_size)
        print(f"{split}: {len(ds)} examples, {ds.n_pos} positive, {ds.n_neg} negative, Pos:Neg {ds.ratio_text()}, "
              f"{len(groups)} context groups")
        if split == "train":
            try:
                pairs = pair_hard_negatives(ds, diag)
                print(f"{split}: {len(pairs)} positive/hard-negative pairs")
            except CorpusError as exc:
                diag.add("pairing_failed", str(exc))
    if args.vocab_out:
        vocab = build_vocab(datasets[0][1], args.vocab_size, args.min_freq)
        vocab.save(args.vocab_out)
        print(f"vocabulary: {len(vocab)} tokens -> {args.vocab_out}")
    if args.diagnostics:
        diag.write(args.diagnostics)
    return 0


def cmd_train(args) -> int:
    cfg = train_config_from(args)
    train_set = read_dataset(args.train, "train")
    dev_set = read_dataset(args.dev, "dev") if args.dev else None
    vocab = Vocab.load(args.vocab) if args.vocab else build_vocab(train_set, cfg.vocab_size, cfg.min_freq)
    resume = load_checkpoint(args.resume) if args.resume else None
    sink = open(args.history, "a", encoding="utf-8") if args.history else None
    try:
        res = train(cfg, train_set, dev_set, vocab=vocab, resume=resume, history_sink=sink)
    finally:
        if sink:
            sink.close()
    save_checkpoint(res.best, args.out)
    vocab.save(str(args.out) + ".vocab")
    if args.state_out:
        save_checkpoint(res.last, args.state_out)
    losses = [r["value"] for r in res.history if r["metric"] == "loss"]
    print(f"trained {res.last.step} steps; final loss {losses[-1]:.4f}" if losses else "no training steps")
    if res.best_report is not None:
        print(f"best dev R@1 {res.best_report.r1:.4f} at step {res.best.step}")
    print(f"checkpoint -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    vocab = Vocab.load(args.vocab or str(args.checkpoint) + ".vocab")
    if ckpt.header.get("vocab_digest") != vocab.digest():
        raise CorpusError("vocabulary does not match the checkpoint (digest mismatch)")
    params = params_from_tensors(ckpt.tensors, "param")
    cfg = ckpt.header.get("config", {})
    test = read_dataset(args.test, "test")
    rep = evaluate(params, test.examples, vocab, int(cfg.get("max_len", params.P.shape[0])),
                   args.group_size, pairwise=args.pairwise)
    print(rep.table())
    if args.records:
        Path(args.records).write_text("".join(r + "\n" for r in rep.records(split="test", step=ckpt.step)),
                                      encoding="utf-8")
    return 0


def cmd_augment_preview(args) -> int:
    ds = read_dataset(args.input)
    pairs = pair_hard_negatives(ds, Diagnostics())[: args.limit]
    if len(pairs) < 1:
        raise CorpusError("nothing to preview")
    xs = [p.positive for p in pairs]
    vb = make_views((xs, [p.hard_negative for p in pairs]), args.strategy, SeedTree(args.seed).rng("augmentation"))
    for i, (a, v) in enumerate(zip(vb.anchors, vb.views)):
        print(f"anchor[{i}]\t{format_tsv_line(a)}")
        print(f"view[{i}]\t{format_tsv_line(v)}")
    return 0


def cmd_postgen(args) -> int:
    if not args.out and not args.preview:
        raise UsageError("postgen needs --out, --preview, or both")
    ds = read_dataset(args.input)
    vocab = Vocab.load(args.vocab) if args.vocab else build_vocab(ds, args.vocab_size)
    diag = Diagnostics()
    examples = list(generate_post_training(ds.examples, args.count, args.seed, vocab, args.max_len, diag))
    if args.out:
        with open(args.out, "wb") as fh:
            n = write_records(examples, fh)
        print(f"wrote {n} examples to {args.out}", file=sys.stderr)
    if args.preview:
        for ex in examples:
            print(preview(ex, vocab))
    return 0


def _parse_cells(cells_arg: str | None):
    if not cells_arg:
        return DEFAULT_CELLS
    if cells_arg == "full":
        return FULL_GRID
    cells = []
    for item in cells_arg.split(","):
        strategy, _, flag = item.strip().partition(":")
        if flag not in ("on", "off"):
            raise UsageError(f"bad cell {item!r}; expected STRATEGY:on or STRATEGY:off")
        try:
            ViewStrategy.parse(strategy)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        cells.append((strategy, flag == "on"))
    return tuple(cells)


def cmd_ablate(args) -> int:
    cells = _parse_cells(args.cells)
    cfg = train_config_from(args)
    tr = read_dataset(args.train, "train")
    dv = read_dataset(args.dev, "dev")
    te = read_dataset(args.test, "test") if args.test else None
    rows = ablate(cells, {args.name: (tr, dv, te)}, cfg)
    print(format_ablation(rows))
    if args.records:
        with open(args.records, "w", encoding="utf-8") as fh:
            for r in rows:
                for line in r.report.records(data=r.data, model=r.label):
                    fh.write(line + "\n")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "augment-preview": cmd_augment_preview,
    "postgen": cmd_postgen,
    "ablate": cmd_ablate,
}


def dispatch(argv) -> int:
    argv = list(argv)
    try:
        args, sources = parse(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        print_banner(args, sources)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (CorpusError, CheckpointError, TrainingError, ConfigError, ValueError, FloatingPointError) as exc:
        print(f"dialcl: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"dialcl: error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
