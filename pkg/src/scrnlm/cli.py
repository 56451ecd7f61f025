"""Command-line interface: train, eval, info, gradcheck.

Configuration comes from a flat ``key=value`` file overridden by
``--key value`` flags (defaults < file < flags); unknown keys are usage
errors.  Exit codes: 0 success, 1 usage error, 2 data/file error,
3 numeric failure.

numpy is imported lazily so the worker-count setting (which only
controls BLAS threading) can be exported to the environment first.
``SCRNLM_DETERMINISTIC=1`` forces a single worker, the reference mode
for reproducibility.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

DETERMINISTIC_ENV = "SCRNLM_DETERMINISTIC"
_THREAD_ENV_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")

CHECKPOINT_NAME = "model.ckpt"
METRICS_NAME = "metrics.jsonl"
VOCAB_NAME = "vocab.txt"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_optional_int(text: str):
    return None if text.strip() in ("", "none", "auto") else int(text)


# key -> (converter from string, default). The split between model
# hyperparameters and experiment plumbing mirrors TrainConfig.
CONFIG_KEYS = {
    "arch": (str, "scrn"),
    "m": (int, 100),
    "p": (int, 40),
    "alpha": (float, 0.95),
    "bptt": (_parse_optional_int, None),   # auto: 10 for srn, 50 otherwise
    "update_every": (int, 5),
    "batch": (int, 32),
    "lr": (float, 0.05),
    "lr_decay": (float, 1.5),
    "clip": (float, 5.0),
    "max_epochs": (int, 20),
    "seed": (int, 1),
    "precision": (str, "float32"),
    "hsm": (_parse_bool, False),
    "classes": (_parse_optional_int, None),  # auto: ceil(sqrt(vocab size))
    "truncation": (str, "sliding"),
    "train": (str, None),
    "valid": (str, None),
    "test": (str, None),
    "vocab": (str, None),                   # auto: <ckpt_dir>/vocab.txt
    "ckpt_dir": (str, "run"),
    "eos": (_parse_bool, False),
    "min_count": (int, 5),
    "log_format": (str, "text"),            # report style on stdout: text | jsonl
    "workers": (int, 1),
}


@dataclass
class ExperimentConfig:
    values: dict

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def train_config(self):
        from .trainer import TrainConfig
        return TrainConfig(
            arch=self.arch, hidden_size=self.m, context_size=self.p,
            alpha=self.alpha, bptt_span=self.bptt,
            update_interval=self.update_every, num_streams=self.batch,
            learning_rate=self.lr, lr_decay_divisor=self.lr_decay,
            clip_norm=self.clip, max_epochs=self.max_epochs, seed=self.seed,
            precision=self.precision, hsm=self.hsm, num_classes=self.classes,
            truncation=self.truncation)


def parse_config_file(path) -> dict:
    raw = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read config file {path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        raw[key] = value.strip()
    return raw


def resolve_config(config_path, flag_values: dict) -> ExperimentConfig:
    """defaults < config file < command-line flags."""
    raw = {}
    if config_path is not None:
        raw.update(parse_config_file(config_path))
    for key, value in flag_values.items():
        if value is not None:
            if key not in CONFIG_KEYS:
                raise UsageError(f"unknown config key {key!r}")
            raw[key] = value
    values = {}
    for key, (convert, default) in CONFIG_KEYS.items():
        if key in raw:
            try:
                values[key] = convert(raw[key])
            except ValueError as e:
                raise UsageError(f"bad value for {key!r}: {e}") from e
        else:
            values[key] = default
    return ExperimentConfig(values)


def _configure_workers(workers: int) -> None:
    if os.environ.get(DETERMINISTIC_ENV, "").strip() not in ("", "0"):
        workers = 1
    if workers < 1:
        raise UsageError("workers must be >= 1")
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(workers)


def _read_lines(path, what: str) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read().splitlines()
    except OSError as e:
        raise DataError(f"cannot read {what} file {path}: {e}") from e


def _default_num_classes(vocab_size: int) -> int:
    return math.ceil(math.sqrt(vocab_size))


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, _flag_overrides(args))
    _configure_workers(cfg.workers)
    if cfg.train is None or cfg.valid is None:
        raise UsageError("train and valid paths are required (train=..., valid=...)")

    from . import corpus
    from .checkpoint import load_checkpoint, save_checkpoint, verify_vocab_hash
    from .evaluator import perplexity
    from .models import create_model
    from .trainer import make_schedule, schedule_step, train_epoch

    tconfig = cfg.train_config()
    try:
        tconfig.validate()
    except ValueError as e:
        raise UsageError(str(e)) from e
    ckpt_dir = Path(cfg.ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = ckpt_dir / CHECKPOINT_NAME
    vocab_path = Path(cfg.vocab) if cfg.vocab else ckpt_dir / VOCAB_NAME

    train_lines = _read_lines(cfg.train, "training text")
    valid_lines = _read_lines(cfg.valid, "validation text")
    if vocab_path.exists():
        vocab = corpus.load_vocab(vocab_path)
    else:
        vocab = corpus.build_vocab(train_lines, min_count=cfg.min_count,
                                   add_eos=cfg.eos)
        corpus.save_vocab(vocab, vocab_path)
    train_ids = corpus.encode(train_lines, vocab)
    valid_ids = corpus.encode(valid_lines, vocab)
    streams = corpus.make_streams(train_ids, tconfig.num_streams)

    layout = None
    if tconfig.hsm:
        k = tconfig.num_classes or _default_num_classes(vocab.size)
        layout = corpus.build_frequency_classes(vocab, k)

    if args.resume:
        if not ckpt_path.exists():
            raise DataError(f"cannot resume: {ckpt_path} does not exist")
        model, tconfig, schedule = load_checkpoint(ckpt_path)
        verify_vocab_hash(model, vocab)
    else:
        model = create_model(tconfig.arch, vocab.size, tconfig.hidden_size,
                             tconfig.context_size, alpha=tconfig.alpha,
                             seed=tconfig.seed, dtype=tconfig.dtype(),
                             layout=layout, vocab_hash=vocab.fingerprint())
        schedule = make_schedule(tconfig)

    if tconfig.max_epochs == 0 or schedule.epoch >= tconfig.max_epochs:
        save_checkpoint(model, tconfig, schedule, ckpt_path)
        report = perplexity(model, valid_ids)
        print(f"epoch {schedule.epoch} (no training) valid {report.line()}")
        return 0

    metrics_path = ckpt_dir / METRICS_NAME
    with open(metrics_path, "a", encoding="utf-8") as metrics:
        while schedule.epoch < tconfig.max_epochs:
            lr_used = schedule.current_lr
            stats = train_epoch(model, streams, tconfig, schedule)
            report = perplexity(model, valid_ids)
            schedule, stop = schedule_step(schedule, report.perplexity, tconfig)
            metrics.write(json.dumps(
                {"epoch": schedule.epoch, "train_nll": stats.mean_nll,
                 "valid_ppl": report.perplexity, "lr": lr_used},
                sort_keys=True) + "\n")
            metrics.flush()
            save_checkpoint(model, tconfig, schedule, ckpt_path)
            print(f"epoch {schedule.epoch} train_nll {stats.mean_nll:.4f} "
                  f"valid_ppl {report.perplexity:.3f} lr {lr_used:.6g} "
                  f"({stats.tokens_per_second:.0f} tok/s)")
            if stop:
                break
    if cfg.test:
        test_ids = corpus.encode(_read_lines(cfg.test, "test text"), vocab)
        print(f"test {perplexity(model, test_ids).line()}")
    return 0


def cmd_eval(args) -> int:
    _configure_workers(args.workers)
    from . import corpus
    from .checkpoint import load_checkpoint, verify_vocab_hash
    from .evaluator import perplexity

    model, _, _ = load_checkpoint(args.model)
    vocab_path = args.vocab or str(Path(args.model).parent / VOCAB_NAME)
    if not Path(vocab_path).exists():
        raise DataError(f"vocabulary file {vocab_path} not found (pass --vocab)")
    vocab = corpus.load_vocab(vocab_path)
    verify_vocab_hash(model, vocab)
    ids = corpus.encode(_read_lines(args.text, "evaluation text"), vocab)
    if ids.size == 0:
        raise DataError(f"evaluation file {args.text} contains no tokens")
    report = perplexity(model, ids)
    print(report.json_line() if args.json else report.line())
    return 0


def cmd_info(args) -> int:
    _configure_workers(1)
    from .checkpoint import load_checkpoint

    model, tconfig, schedule = load_checkpoint(args.model)
    k = model.layout.num_classes if model.layout is not None else 0
    print(f"architecture      {model.arch}")
    print(f"vocabulary size   {model.vocab_size}")
    print(f"hidden units      {model.hidden_size}")
    print(f"context units     {model.context_size}")
    print(f"softmax           {'hierarchical, K=' + str(k) if k else 'full'}")
    print(f"precision         float{model.dtype.itemsize * 8}")
    print(f"alpha             {model.alpha}")
    print(f"parameter count   {model.parameter_count()}")
    print(f"bptt span         {tconfig.resolved_bptt()}")
    print(f"update interval   {tconfig.update_interval}")
    print(f"streams           {tconfig.num_streams}")
    print(f"learning rate     {schedule.current_lr:.6g} (initial {schedule.initial_lr:.6g})")
    print(f"epochs completed  {schedule.epoch}")
    if math.isfinite(schedule.best_ppl):
        print(f"best valid ppl    {schedule.best_ppl:.3f}")
    decays = model.learned_decays()
    if decays is not None:
        formatted = ", ".join(f"{v:.4f}" for v in sorted(decays))
        print(f"learned decays    [{formatted}]")
    return 0


def cmd_gradcheck(args) -> int:
    _configure_workers(1)
    from .gradcheck import check_all

    report = check_all(args.arch, args.softmax, seed=args.seed)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 3


def _flag_overrides(args) -> dict:
    return {key: getattr(args, f"opt_{key}") for key in CONFIG_KEYS}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scrnlm",
                     description="Recurrent language models with a slowly "
                                 "changing context layer.")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model from a config")
    train.add_argument("--config", help="flat key=value config file")
    train.add_argument("--resume", action="store_true",
                       help="continue from the checkpoint in ckpt_dir")
    for key in CONFIG_KEYS:
        train.add_argument(f"--{key}", dest=f"opt_{key}", metavar="V",
                           help=argparse.SUPPRESS)
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="perplexity of a checkpoint on a text file")
    ev.add_argument("--model", required=True, help="checkpoint path")
    ev.add_argument("--text", required=True, help="UTF-8 text file")
    ev.add_argument("--vocab", help="vocabulary file (default: next to checkpoint)")
    ev.add_argument("--json", action="store_true", help="JSON report line")
    ev.add_argument("--workers", type=int, default=1)
    ev.set_defaults(func=cmd_eval)

    info = sub.add_parser("info", help="describe a checkpoint")
    info.add_argument("--model", required=True, help="checkpoint path")
    info.set_defaults(func=cmd_info)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check")
    gc.add_argument("--arch", required=True,
                    choices=["srn", "scrn", "scrn-adaptive", "lstm"])
    gc.add_argument("--softmax", choices=["full", "hsm"], default="full")
    gc.add_argument("--seed", type=int, default=7)
    gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except FloatingPointError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # checkpoint/divergence types import numpy, hence lazily
        from .checkpoint import CheckpointError
        from .trainer import TrainDivergence
        if isinstance(e, TrainDivergence):
            print(f"numeric failure: {e}", file=sys.stderr)
            return 3
        if isinstance(e, (CheckpointError, ValueError)):
            print(f"data error: {e}", file=sys.stderr)
            return 2
        raise


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
