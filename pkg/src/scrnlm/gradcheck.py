"""Finite-difference validation of every analytic gradient.

The check plays a short token window through a tiny 64-bit model,
summing the per-step nll over all streams and steps, and compares the
analytic gradients of that scalar against central differences taken
coordinate by coordinate.  It exists so the training loop never has to
be debugged through its own output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import cells
from .corpus import ClassLayout, Vocabulary, build_frequency_classes
from .models import LanguageModel, create_model

DEFAULT_EPSILON = 1e-4
DEFAULT_TOLERANCE = 1e-5
REL_FLOOR = 1e-8  # guards coordinates where both gradients are near zero

CHECK_STREAMS = 2  # more than one stream so batching bugs cannot hide


@dataclass
class BlockCheck:
    max_rel_error: float
    mean_rel_error: float
    worst_index: tuple[int, ...] | None


@dataclass
class GradReport:
    blocks: dict[str, BlockCheck]
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return max((b.max_rel_error for b in self.blocks.values()), default=0.0)

    @property
    def worst_block(self) -> str | None:
        if not self.blocks:
            return None
        return max(self.blocks, key=lambda n: self.blocks[n].max_rel_error)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def failing_blocks(self) -> list[str]:
        return sorted(n for n, b in self.blocks.items()
                      if b.max_rel_error > self.tolerance)

    def lines(self) -> list[str]:
        rows = []
        for name in sorted(self.blocks):
            b = self.blocks[name]
            verdict = "ok" if b.max_rel_error <= self.tolerance else "FAIL"
            rows.append(f"  {name:10s} max={b.max_rel_error:.3e} "
                        f"mean={b.mean_rel_error:.3e} worst={b.worst_index} {verdict}")
        rows.append(f"{'PASS' if self.passed else 'FAIL'}: "
                    f"max relative error {self.max_rel_error:.3e} "
                    f"(tolerance {self.tolerance:.1e})")
        return rows


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(loss_fn, params: dict[str, np.ndarray],
                     epsilon: float = DEFAULT_EPSILON) -> dict[str, np.ndarray]:
    """Central differences per coordinate, perturbing ``params`` in place
    and restoring them.

    Blocks must be float64 or wider.  The subtraction happens in the
    block's own precision: with extended-precision blocks and a loss_fn
    that returns an extended-precision scalar, cancellation noise drops
    below the 1e-5 tolerance even for near-zero gradient coordinates,
    which plain float64 cannot guarantee at epsilon = 1e-4.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError("epsilon outside the trustworthy range [1e-6, 1e-3]")
    grads = {}
    for name, block in params.items():
        if np.finfo(block.dtype).eps > np.finfo(np.float64).eps:
            raise ValueError(f"block {name} is {block.dtype}; checks need >= float64")
        g = np.zeros(block.shape, dtype=np.float64)
        flat = block.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_fn(params)
            flat[i] = orig - epsilon
            down = loss_fn(params)
            flat[i] = orig
            if not (math.isfinite(float(up)) and math.isfinite(float(down))):
                raise FloatingPointError(
                    f"non-finite loss while perturbing {name}[{i}]")
            gflat[i] = (up - down) / (2.0 * epsilon)
        grads[name] = g
    return grads


def compare_gradients(analytic: dict[str, np.ndarray],
                      numeric: dict[str, np.ndarray],
                      tolerance: float = DEFAULT_TOLERANCE) -> GradReport:
    if set(analytic) != set(numeric):
        raise ValueError(f"block sets differ: {sorted(analytic)} vs {sorted(numeric)}")
    blocks = {}
    for name, a in analytic.items():
        n = numeric[name]
        if a.size == 0:
            blocks[name] = BlockCheck(0.0, 0.0, None)
            continue
        rel = relative_errors(a, n)
        worst = np.unravel_index(int(np.argmax(rel)), rel.shape)
        blocks[name] = BlockCheck(float(rel.max()), float(rel.mean()), worst)
    return GradReport(blocks, tolerance)


def window_loss(model: LanguageModel, tokens: np.ndarray):
    """Sum of per-token nll over every stream and step of the window.

    Returned in the widest precision the model computes in, so
    central differences of this scalar stay meaningful.
    """
    acc_dtype = np.promote_types(model.dtype, np.float64)
    state = model.init_state(tokens.shape[0])
    total = acc_dtype.type(0.0)
    for t in range(tokens.shape[1]):
        total += np.sum(model.nll(state.h, state.s, tokens[:, t]), dtype=acc_dtype)
        state, _ = model.step(state, tokens[:, t])
    return total


def analytic_window_gradients(model: LanguageModel,
                              tokens: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of window_loss via the tape-based backward pass."""
    num_streams, window = tokens.shape
    state = model.init_state(num_streams)
    tape = cells.StepTape(window)
    out_grads: dict[str, np.ndarray] | None = None
    for t in range(window):
        _, ograds, dh, ds = model.loss(state, tokens[:, t])
        if out_grads is None:
            out_grads = ograds
        else:
            for name, g in ograds.items():
                out_grads[name] += g
        state, entry = model.step(state, tokens[:, t])
        entry.inj = (dh, ds)
        tape.append(entry)
    grads, _ = model.backward(tape)
    grads.update(out_grads)
    return grads


def _synthetic_layout(vocab_size: int, num_classes: int) -> ClassLayout:
    # Zipf-ish descending counts; any positive descending sequence works.
    counts = [max(1, (vocab_size * 7) // (i + 1)) for i in range(vocab_size)]
    vocab = Vocabulary(tokens=[f"w{i}" for i in range(vocab_size)],
                       counts=counts, unk_id=vocab_size - 1)
    return build_frequency_classes(vocab, num_classes)


def check_all(arch: str, softmax: str = "full", *, vocab_size: int = 13,
              hidden_size: int = 7, context_size: int = 5, num_classes: int = 4,
              window: int = 30, seed: int = 7, epsilon: float = DEFAULT_EPSILON,
              tolerance: float = DEFAULT_TOLERANCE) -> GradReport:
    """Build a tiny 64-bit model and check every block's gradient."""
    if vocab_size > 20 or hidden_size > 8 or context_size > 6 or window > 30:
        raise ValueError("check dims too large; the oracle is O(params * window)")
    if softmax not in ("full", "hsm"):
        raise ValueError(f"softmax must be 'full' or 'hsm', not {softmax!r}")
    if arch in (cells.ARCH_SRN, cells.ARCH_LSTM):
        context_size = 0
    layout = _synthetic_layout(vocab_size, num_classes) if softmax == "hsm" else None
    model = create_model(arch, vocab_size, hidden_size, context_size,
                         seed=seed, dtype=np.float64, layout=layout)
    rng = np.random.default_rng(seed + 1)
    tokens = rng.integers(0, vocab_size, size=(CHECK_STREAMS, window))
    analytic = analytic_window_gradients(model, tokens)

    # Differences are taken in extended precision; the analytic side
    # stays the production float64 path under test.
    fd_model = replace(model,
                       cell={k: v.astype(np.longdouble) for k, v in model.cell.items()},
                       out={k: v.astype(np.longdouble) for k, v in model.out.items()})

    def loss_fn(_params):
        return window_loss(fd_model, tokens)

    numeric = numeric_gradient(loss_fn, fd_model.blocks(), epsilon)
    return compare_gradients(analytic, numeric, tolerance)
