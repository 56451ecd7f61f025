"""Perplexity evaluation over a single token stream.

Evaluation never mutates the model.  The stream is consumed strictly
left to right with state carried across chunk boundaries, so the chunk
size changes memory use but not the result.  Every token is scored,
including the first (from the zero state).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .models import LanguageModel


@dataclass
class EvalReport:
    tokens: int
    total_nll: float
    perplexity: float

    def line(self) -> str:
        return f"ppl={self.perplexity:.6f} tokens={self.tokens} nll={self.total_nll:.6f}"

    def json_line(self) -> str:
        return json.dumps({"ppl": self.perplexity, "tokens": self.tokens,
                           "nll": self.total_nll}, sort_keys=True)


def evaluate_ids(model: LanguageModel, ids: np.ndarray, *, state=None,
                 chunk_size: int = 512):
    """Score ``ids`` as one stream; returns (EvalReport, final state).

    Pass the returned state back in to continue the same stream.  nll is
    accumulated in float64 regardless of the model precision.
    """
    ids = np.asarray(ids)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("expected a non-empty 1-D id array")
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    if state is None:
        state = model.init_state(1)
    total = 0.0
    for start in range(0, ids.size, chunk_size):
        chunk = ids[start:start + chunk_size]
        n = chunk.size
        h_rows = np.empty((n, model.hidden_size), dtype=model.dtype)
        s_rows = np.empty((n, model.context_size), dtype=model.dtype)
        for t in range(n):
            h_rows[t] = state.h[0]
            s_rows[t] = state.s[0]
            state, _ = model.step(state, chunk[t:t + 1])
        total += float(np.sum(model.nll(h_rows, s_rows, chunk), dtype=np.float64))
    report = EvalReport(tokens=int(ids.size), total_nll=total,
                        perplexity=math.exp(total / ids.size))
    return report, state


def perplexity(model: LanguageModel, ids: np.ndarray, chunk_size: int = 512) -> EvalReport:
    report, _ = evaluate_ids(model, ids, chunk_size=chunk_size)
    return report
