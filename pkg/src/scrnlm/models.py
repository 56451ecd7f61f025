"""Model assembly: cell parameters plus an output layer behind one interface.

A ``LanguageModel`` owns two parameter dicts (cell and output blocks),
dispatches forward steps to the right cell, and picks the full or
hierarchical softmax for the loss.  The convention throughout is
predict-then-consume: the loss for token ``x_t`` is computed from the
state *before* the step that consumes ``x_t``, so the first token of a
stream is scored from the zero state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cells, output
from .corpus import ClassLayout

DEFAULT_ALPHA = 0.95


@dataclass
class LanguageModel:
    arch: str
    vocab_size: int
    hidden_size: int
    context_size: int
    cell: dict[str, np.ndarray]
    out: dict[str, np.ndarray]
    alpha: float = DEFAULT_ALPHA
    layout: ClassLayout | None = None
    vocab_hash: int = 0

    @property
    def dtype(self):
        return self.out["U"].dtype

    @property
    def hsm(self) -> bool:
        return self.layout is not None

    def blocks(self) -> dict[str, np.ndarray]:
        """All trainable blocks (cell and output) in one view."""
        merged = dict(self.cell)
        merged.update(self.out)
        return merged

    def parameter_count(self) -> int:
        return sum(b.size for b in self.blocks().values())

    def init_state(self, num_streams: int) -> cells.CellState:
        return cells.init_state(self.arch, num_streams, self.hidden_size,
                                self.context_size, self.dtype)

    def step(self, state, tokens):
        return cells.step(self.arch, self.cell, self.alpha, state, tokens)

    def loss(self, state, targets):
        """nll per stream plus output-parameter grads and (dh, ds)."""
        if self.layout is not None:
            return output.hsm_loss(state.h, state.s, self.out, self.layout, targets)
        return output.full_softmax_loss(state.h, state.s, self.out, targets)

    def nll(self, h_rows, s_rows, targets):
        """Forward-only nll for stacked state rows (evaluation path)."""
        if self.layout is not None:
            return output.hsm_nll(h_rows, s_rows, self.out, self.layout, targets)
        return output.full_softmax_nll(h_rows, s_rows, self.out, targets)

    def backward(self, tape, out_grads=None, final_state_grad=None):
        return cells.backward_window(self.arch, self.cell, self.alpha, tape,
                                     out_grads, final_state_grad)

    def next_token_distribution(self, state, stream: int = 0) -> np.ndarray:
        """Full distribution over the vocabulary for one stream."""
        h, s = state.h[stream], state.s[stream]
        if self.layout is not None:
            return output.hsm_full_distribution(h, s, self.out, self.layout)
        return output.full_softmax_probs(h[None], s[None], self.out)[0]

    def learned_decays(self) -> np.ndarray | None:
        """sigmoid(beta) for the adaptive architecture, else None."""
        if "beta" in self.cell:
            return np.asarray(cells.decay_vector(self.cell, self.alpha))
        return None


def create_model(arch, vocab_size, hidden_size, context_size, *,
                 alpha=DEFAULT_ALPHA, seed=1, dtype=np.float32,
                 layout: ClassLayout | None = None, vocab_hash=0) -> LanguageModel:
    """Seeded construction; blocks are drawn from one generator in a
    fixed order (cell blocks, then U, V, then class matrices), so the
    same seed reproduces the same model bit for bit."""
    if arch not in cells.ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {cells.ARCHITECTURES}")
    if arch in (cells.ARCH_SRN, cells.ARCH_LSTM) and context_size != 0:
        raise ValueError(f"{arch} does not use context units; set context_size=0")
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    cell = cells.init_cell_params(arch, vocab_size, hidden_size, context_size, rng, dtype)
    u = lambda r, c: cells.seeded_uniform(r, c, cells.INIT_HALF_WIDTH, rng, dtype)
    out = {"U": u(hidden_size, vocab_size), "V": u(context_size, vocab_size)}
    if layout is not None:
        out["class_U"] = u(hidden_size, layout.num_classes)
        out["class_V"] = u(context_size, layout.num_classes)
    return LanguageModel(arch, vocab_size, hidden_size, context_size,
                         cell, out, alpha, layout, vocab_hash)
