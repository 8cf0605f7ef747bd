"""Command line interface: train, eval, inspect, and gradcheck.

Every option can also come from a flat key=value config file passed with
--config; explicit flags override file values, which override built-in
defaults. The data root falls back to the MEMQA_DATA environment variable
when neither a flag nor the config file names it.
"""

from __future__ import annotations

import argparse
import os
import sys

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import build_vocabulary, encode_corpus, load_task
from .episodic import MODEL_KINDS, ModelConfig
from .errors import ArgumentError, ConfigError, MemQAError
from .gradcheck import TARGETS, TOLERANCE, run_target
from .scoring import SCORER_KINDS
from .training import evaluate, export_gate_trace, train

DATA_ENV = "MEMQA_DATA"


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _choice(options):
    def convert(text):
        if text not in options:
            raise ConfigError(f"expected one of {', '.join(options)}, got {text!r}")
        return text

    return convert


# converters for config-file values, keyed by option dest
_CONVERTERS = {
    "task": int, "hops": int, "hidden": int, "slices": int, "embed": int,
    "epochs": int, "seed": int, "batch": int, "index": int,
    "l2": float, "dropout": float, "lr": float, "clip_norm": float,
    "untied": _parse_bool, "three_way": _parse_bool,
    "model": _choice(MODEL_KINDS), "scorer": _choice(SCORER_KINDS),
    "data": str, "out": str, "ckpt": str,
}

_TRAIN_DEFAULTS = {
    "model": "dmtn", "hops": 5, "hidden": 40, "slices": 40, "embed": 50,
    "epochs": 150, "l2": 1e-4, "dropout": 0.0, "lr": 0.001, "batch": 32,
    "seed": 0, "clip_norm": 40.0, "untied": False,
}


def read_config_file(path):
    """Flat key=value lines; blank lines and # comments are skipped."""
    values = {}
    with open(path, encoding="utf-8") as handle:
        for number, raw in enumerate(handle, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path} line {number}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _merge_config(args, defaults):
    """Layer config-file values under explicit flags, then defaults."""
    known = {k for k in vars(args) if k not in ("config", "func")}
    if args.config is not None:
        for key, raw in read_config_file(args.config).items():
            if key not in known:
                raise ConfigError(f"config key {key!r} does not apply to this command")
            if getattr(args, key) is None:
                converter = _CONVERTERS.get(key, str)
                setattr(args, key, converter(raw))
    for key, value in defaults.items():
        if getattr(args, key) is None:
            setattr(args, key, value)


def _need(args, name):
    if getattr(args, name) is None:
        raise ConfigError(f"--{name.replace('_', '-')} is required")
    return getattr(args, name)


def _data_root(args):
    if args.data is not None:
        return args.data
    from_env = os.environ.get(DATA_ENV)
    if from_env:
        return from_env
    raise ConfigError(f"no data root: pass --data, set it in --config, or set {DATA_ENV}")


def _resolve_scorer(model, scorer):
    """Default the scorer from the model; reject it where meaningless."""
    if model == "memn2n":
        if scorer is not None:
            raise ConfigError("--scorer does not apply to memn2n (softmax attention)")
        return ModelConfig().scorer
    if scorer is None:
        return "dmn" if model == "dmn" else "ntn2"
    return scorer


def cmd_train(args):
    _merge_config(args, _TRAIN_DEFAULTS)
    task = _need(args, "task")
    out = _need(args, "out")
    root = _data_root(args)
    cfg = ModelConfig(
        model=args.model, scorer=_resolve_scorer(args.model, args.scorer),
        hidden=args.hidden, slices=args.slices, hops=args.hops, embed=args.embed,
        epochs=args.epochs, l2=args.l2, dropout=args.dropout, lr=args.lr,
        batch_size=args.batch, seed=args.seed, clip_norm=args.clip_norm,
    ).validate()
    train_stories, test_stories = load_task(root, task)
    vocab = build_vocabulary(train_stories, test_stories)
    train_set = encode_corpus(train_stories, vocab)

    def log(stats):
        print(
            f"epoch {stats.epoch}/{cfg.epochs} steps {stats.steps} "
            f"loss {stats.loss:.4f} acc {stats.accuracy:.1f}%"
        )

    store, _ = train(cfg, train_set, vocab, tied=not args.untied, log_fn=log)
    save_checkpoint(store, cfg, vocab, out)
    print(f"saved checkpoint to {out}")
    return 0


def cmd_eval(args):
    _merge_config(args, {})
    ckpt = load_checkpoint(_need(args, "ckpt"))
    task = _need(args, "task")
    _, test_stories = load_task(_data_root(args), task)
    test_set = encode_corpus(test_stories, ckpt.vocab)
    report = evaluate(ckpt.store, ckpt.config, test_set, task=task)
    print(report.to_json())
    return 0 if report.passed else 1


def cmd_inspect(args):
    _merge_config(args, {})
    ckpt = load_checkpoint(_need(args, "ckpt"))
    task = _need(args, "task")
    index = _need(args, "index")
    out = _need(args, "out")
    _, test_stories = load_task(_data_root(args), task)
    test_set = encode_corpus(test_stories, ckpt.vocab)
    if not 0 <= index < len(test_set):
        raise ArgumentError(f"--index {index} outside [0, {len(test_set)})")
    export_gate_trace(ckpt.store, ckpt.config, ckpt.vocab, test_set[index], out)
    print(f"wrote gate trace for test sample {index} to {out}")
    return 0


def cmd_gradcheck(args):
    _merge_config(args, {"three_way": False})
    target = args.scorer if args.scorer is not None else "all"
    if args.three_way:
        if target not in ("ntn2", "ntn3"):
            raise ConfigError("--three-way applies to the tensor gate (ntn2/ntn3)")
        target = "ntn3"
    names = TARGETS if target == "all" else (target,)
    worst = 0.0
    for name in names:
        err = run_target(name)
        status = "ok" if err <= TOLERANCE else "FAIL"
        print(f"{name}: max relative error {err:.3e} {status}")
        worst = max(worst, err)
    return 0 if worst <= TOLERANCE else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="memqa",
        description="Train and inspect memory-network question answering models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on one task and save a checkpoint")
    t.add_argument("--config", default=None, help="key=value file; flags override it")
    t.add_argument("--data", default=None, help=f"corpus root (fallback: ${DATA_ENV})")
    t.add_argument("--task", type=int, default=None, help="task number (1..20)")
    t.add_argument("--model", choices=MODEL_KINDS, default=None)
    t.add_argument("--scorer", choices=SCORER_KINDS, default=None,
                   help="gate scorer (episodic models only)")
    t.add_argument("--hops", type=int, default=None)
    t.add_argument("--hidden", type=int, default=None)
    t.add_argument("--slices", type=int, default=None)
    t.add_argument("--embed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--l2", type=float, default=None)
    t.add_argument("--dropout", type=float, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--batch", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--clip-norm", dest="clip_norm", type=float, default=None)
    t.add_argument("--untied", action="store_const", const=True, default=None,
                   help="memn2n only: separate tables per hop role")
    t.add_argument("--out", default=None, help="checkpoint path to write")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint; prints one JSON report line")
    e.add_argument("--config", default=None)
    e.add_argument("--ckpt", default=None)
    e.add_argument("--data", default=None)
    e.add_argument("--task", type=int, default=None)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="export one test sample's gate trace as CSV")
    i.add_argument("--config", default=None)
    i.add_argument("--ckpt", default=None)
    i.add_argument("--data", default=None)
    i.add_argument("--task", type=int, default=None)
    i.add_argument("--index", type=int, default=None)
    i.add_argument("--out", default=None, help="CSV path to write")
    i.set_defaults(func=cmd_inspect)

    g = sub.add_parser("gradcheck", help="finite-difference checks; nonzero exit above 1e-4")
    g.add_argument("--config", default=None)
    g.add_argument("--scorer", choices=TARGETS + ("all",), default=None,
                   help="one target, or 'all' (default)")
    g.add_argument("--three-way", dest="three_way", action="store_const", const=True,
                   default=None, help="check the three-way tensor gate")
    g.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MemQAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
