"""Truncated-backprop SGD training loop.

The loop follows a fixed recipe: several parallel streams advance in
lock step, the loss for each position is taken before the token is
consumed, and an update fires every ``update_interval`` steps using the
losses gathered since the previous update.  Each loss contributes to
exactly one update; the backprop window slides (default) or tiles over
the step history.  Gradients are summed over the update's steps,
averaged across streams, and globally renormalized before SGD.

Learning-rate decay starts on the first epoch whose validation
perplexity fails to improve by at least 0.1% relative; the rate after
``n`` cuts is computed as ``initial / divisor**n`` rather than by
repeated division, so it is exact.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import cells
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: F401 (public surface)
from .corpus import StreamSet
from .models import LanguageModel

IMPROVEMENT_THRESHOLD = 1e-3  # relative validation gain below this is "no improvement"
PATIENCE = 2                  # consecutive bad epochs before stopping, once decay began

TRUNCATION_MODES = ("sliding", "tiling")


class TrainDivergence(RuntimeError):
    """Raised when the loss turns non-finite; names the failing position."""

    def __init__(self, step: int, stream: int):
        super().__init__(
            f"non-finite loss at step {step}, stream {stream}; "
            "lower the learning rate or tighten clip_norm")
        self.step = step
        self.stream = stream


@dataclass
class TrainConfig:
    arch: str = "scrn"
    hidden_size: int = 100
    context_size: int = 40
    alpha: float = 0.95
    bptt_span: int | None = None   # None resolves to 10 for srn, 50 otherwise
    update_interval: int = 5
    num_streams: int = 32
    learning_rate: float = 0.05
    lr_decay_divisor: float = 1.5
    clip_norm: float = 5.0
    max_epochs: int = 20
    seed: int = 1
    precision: str = "float32"
    hsm: bool = False
    num_classes: int | None = None  # None resolves to ceil(sqrt(vocab)) when hsm
    truncation: str = "sliding"

    def resolved_bptt(self) -> int:
        if self.bptt_span is not None:
            return self.bptt_span
        return 10 if self.arch == cells.ARCH_SRN else 50

    def dtype(self):
        if self.precision == "float32":
            return np.float32
        if self.precision == "float64":
            return np.float64
        raise ValueError(f"unknown precision {self.precision!r}")

    def validate(self) -> None:
        if self.arch not in cells.ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.truncation not in TRUNCATION_MODES:
            raise ValueError(f"truncation must be one of {TRUNCATION_MODES}")
        if self.update_interval < 1:
            raise ValueError("update_interval must be positive")
        if self.resolved_bptt() < self.update_interval:
            raise ValueError("bptt_span must be at least update_interval, "
                             "otherwise some losses would never reach an update")
        if self.num_streams < 1:
            raise ValueError("num_streams must be positive")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive (or None to disable)")
        if self.lr_decay_divisor <= 1.0:
            raise ValueError("lr_decay_divisor must exceed 1")
        self.dtype()


@dataclass
class ScheduleState:
    initial_lr: float
    current_lr: float
    best_ppl: float = math.inf
    decay_started: bool = False
    bad_epochs: int = 0
    num_decays: int = 0
    epoch: int = 0


def make_schedule(config: TrainConfig) -> ScheduleState:
    return ScheduleState(initial_lr=config.learning_rate,
                         current_lr=config.learning_rate)


def schedule_step(schedule: ScheduleState, valid_ppl: float,
                  config: TrainConfig) -> tuple[ScheduleState, bool]:
    """Advance the schedule after one epoch's validation; returns
    (new schedule, stop flag).  The input schedule is not mutated."""
    if not (math.isfinite(valid_ppl) and valid_ppl > 0):
        raise ValueError(f"validation perplexity must be finite and positive, got {valid_ppl}")
    improved = valid_ppl < schedule.best_ppl * (1.0 - IMPROVEMENT_THRESHOLD)
    new = replace(schedule, epoch=schedule.epoch + 1)
    if improved:
        new.best_ppl = valid_ppl
        new.bad_epochs = 0
    else:
        new.bad_epochs = schedule.bad_epochs + 1
        new.decay_started = True
        new.num_decays = schedule.num_decays + 1
        new.current_lr = schedule.initial_lr / config.lr_decay_divisor ** new.num_decays
    stop = (new.decay_started and new.bad_epochs >= PATIENCE) or new.epoch >= config.max_epochs
    return new, stop


def renormalize_gradients(grads: dict[str, np.ndarray], clip_norm: float | None) -> float:
    """Scale all blocks in place so the global L2 norm is at most
    clip_norm; returns the pre-clip norm.  None or inf disables."""
    sq = 0.0
    for g in grads.values():
        g64 = g.astype(np.float64, copy=False)
        sq += float(np.dot(g64.ravel(), g64.ravel()))
    norm = math.sqrt(sq)
    if clip_norm is None or not math.isfinite(clip_norm) or norm <= clip_norm:
        return norm
    scale = clip_norm / norm
    for g in grads.values():
        g *= np.asarray(scale, dtype=g.dtype)
    return norm


def sgd_apply(model: LanguageModel, grads: dict[str, np.ndarray], lr: float) -> None:
    blocks = model.blocks()
    for name, g in grads.items():
        block = blocks[name]
        block -= np.asarray(lr, dtype=block.dtype) * g


@dataclass
class EpochStats:
    tokens: int
    total_nll: float
    seconds: float

    @property
    def mean_nll(self) -> float:
        return self.total_nll / self.tokens

    @property
    def tokens_per_second(self) -> float:
        return self.tokens / self.seconds if self.seconds > 0 else float("inf")


def train_epoch(model: LanguageModel, streams: StreamSet, config: TrainConfig,
                schedule: ScheduleState, grad_observer=None) -> EpochStats:
    """One pass over the streams.  State starts from zero (stream state
    does not survive epoch boundaries) and is carried across updates
    within the epoch.  ``grad_observer(step, grads)`` sees each update's
    merged, averaged, renormalized gradients before SGD applies them."""
    config.validate()
    if streams.num_streams != config.num_streams:
        raise ValueError(f"stream set has {streams.num_streams} streams, "
                         f"config expects {config.num_streams}")
    span = config.resolved_bptt()
    state = model.init_state(streams.num_streams)
    tape = cells.StepTape(span)
    pending_out: dict[str, np.ndarray] | None = None
    steps_since_update = 0
    steps_in_tile = 0
    total_nll = 0.0
    started = time.perf_counter()

    def apply_update(step_index: int) -> None:
        nonlocal pending_out, steps_since_update, steps_in_tile
        grads, _ = model.backward(tape)
        grads.update(pending_out)
        inv = 1.0 / streams.num_streams
        for g in grads.values():
            g *= np.asarray(inv, dtype=g.dtype)
        renormalize_gradients(grads, config.clip_norm)
        if grad_observer is not None:
            grad_observer(step_index, grads)
        sgd_apply(model, grads, schedule.current_lr)
        tape.clear_injections()
        pending_out = None
        steps_since_update = 0
        if config.truncation == "tiling" and steps_in_tile >= span:
            tape.clear()
            steps_in_tile = 0

    for t in range(streams.length):
        targets = streams.ids[:, t]
        nll, out_grads, dh, ds = model.loss(state, targets)
        finite = np.isfinite(nll)
        if not finite.all():
            raise TrainDivergence(t, int(np.argmin(finite)))
        total_nll += float(np.sum(nll, dtype=np.float64))
        if pending_out is None:
            pending_out = out_grads
        else:
            for name, g in out_grads.items():
                pending_out[name] += g
        state, entry = model.step(state, targets)
        entry.inj = (dh, ds)
        tape.append(entry)
        steps_since_update += 1
        steps_in_tile += 1
        if steps_since_update == config.update_interval:
            apply_update(t)
    if steps_since_update:
        apply_update(streams.length - 1)
    return EpochStats(tokens=streams.num_streams * streams.length,
                      total_nll=total_nll,
                      seconds=time.perf_counter() - started)
