"""Recurrent cells: forward steps, cached tapes, and analytic backward passes.

Four architectures share one calling convention:

* ``srn``            h = sigmoid(A[x] + h @ R)
* ``scrn``           s = (1-a) * B[x] + a * s;  h = sigmoid(A[x] + h @ R + s @ P)
* ``scrn-adaptive``  as ``scrn`` with a per-unit decay sigmoid(beta) in place of a
* ``lstm``           gated cell with sigmoid gates, tanh candidate, tanh output

States are batched row-wise: ``h`` has shape (streams, m) and ``s`` shape
(streams, p), with p = 0 for architectures without context units.  Weight
matrices are stored input-major, i.e. applying a map is ``state @ W``.
The context update multiplies the *new* ``s`` into the hidden
pre-activation, so the constrained-matrix form of the model folds the
decay into the cross block (see ``block_matrix``).

All backward passes are exact reverse-mode differentiation of the
forward code and are validated against finite differences by the
``gradcheck`` module.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .numerics import seeded_uniform, sigmoid

ARCH_SRN = "srn"
ARCH_SCRN = "scrn"
ARCH_SCRN_ADAPTIVE = "scrn-adaptive"
ARCH_LSTM = "lstm"
ARCHITECTURES = (ARCH_SRN, ARCH_SCRN, ARCH_SCRN_ADAPTIVE, ARCH_LSTM)

INIT_HALF_WIDTH = 0.1
# Learned decays start evenly spread over this range so the context
# units cover multiple time scales from the first update.
ADAPTIVE_DECAY_RANGE = (0.5, 0.99)


@dataclass
class CellState:
    """Per-stream recurrent state: hidden h, context s, lstm memory c."""

    h: np.ndarray  # (streams, m)
    s: np.ndarray  # (streams, p)
    c: np.ndarray | None = None  # (streams, m), lstm only

    def copy(self) -> "CellState":
        return CellState(self.h.copy(), self.s.copy(), None if self.c is None else self.c.copy())


@dataclass
class TapeEntry:
    """Activations cached by one forward step, plus the loss gradient
    (with respect to the step's *input* state) injected by the output
    layer before the step consumed its tokens."""

    tokens: np.ndarray  # (streams,)
    h_prev: np.ndarray
    s_prev: np.ndarray
    h_new: np.ndarray
    s_new: np.ndarray
    # lstm extras (post-activation gates and cell memory)
    c_prev: np.ndarray | None = None
    c_new: np.ndarray | None = None
    gate_i: np.ndarray | None = None
    gate_f: np.ndarray | None = None
    gate_o: np.ndarray | None = None
    cand: np.ndarray | None = None
    tanh_c: np.ndarray | None = None
    # loss injection (dh, ds) or None
    inj: tuple[np.ndarray, np.ndarray] | None = None


class StepTape:
    """Sliding window of cached steps, bounded by the BPTT span."""

    def __init__(self, max_steps: int):
        if max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        self.max_steps = max_steps
        self.entries: deque[TapeEntry] = deque(maxlen=max_steps)

    def append(self, entry: TapeEntry) -> None:
        self.entries.append(entry)

    def clear(self) -> None:
        self.entries.clear()

    def clear_injections(self) -> None:
        for e in self.entries:
            e.inj = None

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def init_state(arch: str, num_streams: int, m: int, p: int, dtype) -> CellState:
    """Zero state at stream start."""
    h = np.zeros((num_streams, m), dtype=dtype)
    s = np.zeros((num_streams, p), dtype=dtype)
    c = np.zeros((num_streams, m), dtype=dtype) if arch == ARCH_LSTM else None
    return CellState(h, s, c)


def init_cell_params(arch, vocab_size, m, p, rng, dtype=np.float32):
    """Weight matrices i.i.d. uniform in [-0.1, 0.1], drawn in a fixed
    block order from ``rng``; lstm biases start at 0 except the forget
    gate at 1, and adaptive decays start spread over
    ``ADAPTIVE_DECAY_RANGE``.
    """
    d = vocab_size
    u = lambda r, c: seeded_uniform(r, c, INIT_HALF_WIDTH, rng, dtype)
    if arch == ARCH_SRN:
        if p != 0:
            raise ValueError("srn has no context units (p must be 0)")
        return {"A": u(d, m), "R": u(m, m)}
    if arch in (ARCH_SCRN, ARCH_SCRN_ADAPTIVE):
        if p < 1:
            raise ValueError("scrn needs at least one context unit")
        params = {"A": u(d, m), "B": u(d, p), "P": u(p, m), "R": u(m, m)}
        if arch == ARCH_SCRN_ADAPTIVE:
            lo, hi = ADAPTIVE_DECAY_RANGE
            decays = np.linspace(lo, hi, p)
            params["beta"] = np.log(decays / (1.0 - decays)).astype(dtype)
        return params
    if arch == ARCH_LSTM:
        if p != 0:
            raise ValueError("lstm has no context units (p must be 0)")
        params = {}
        for g in ("c", "f", "i", "o"):
            params[f"Wx{g}"] = u(d, m)
        for g in ("c", "f", "i", "o"):
            params[f"Wh{g}"] = u(m, m)
        for g in ("c", "i", "o"):
            params[f"b{g}"] = np.zeros(m, dtype=dtype)
        params["bf"] = np.ones(m, dtype=dtype)
        return params
    raise ValueError(f"unknown architecture {arch!r}")


def decay_vector(params, alpha: float) -> np.ndarray | float:
    """Per-unit context decay: sigmoid(beta) when learned, else alpha."""
    if "beta" in params:
        return sigmoid(params["beta"])
    return alpha


def scrn_step(params, alpha, state: CellState, tokens) -> tuple[CellState, TapeEntry]:
    """One context-layer step; the hidden update sees the new ``s``."""
    tokens = np.atleast_1d(np.asarray(tokens))
    a = decay_vector(params, alpha)
    e = params["B"][tokens]
    s_new = (1.0 - a) * e + a * state.s
    z = params["A"][tokens] + state.h @ params["R"] + s_new @ params["P"]
    h_new = sigmoid(z)
    entry = TapeEntry(tokens, state.h, state.s, h_new, s_new)
    return CellState(h_new, s_new), entry


def srn_step(params, state: CellState, tokens) -> tuple[CellState, TapeEntry]:
    tokens = np.atleast_1d(np.asarray(tokens))
    z = params["A"][tokens] + state.h @ params["R"]
    h_new = sigmoid(z)
    entry = TapeEntry(tokens, state.h, state.s, h_new, state.s)
    return CellState(h_new, state.s), entry


def lstm_step(params, state: CellState, tokens) -> tuple[CellState, TapeEntry]:
    tokens = np.atleast_1d(np.asarray(tokens))
    h, c = state.h, state.c
    gi = sigmoid(params["Wxi"][tokens] + h @ params["Whi"] + params["bi"])
    gf = sigmoid(params["Wxf"][tokens] + h @ params["Whf"] + params["bf"])
    go = sigmoid(params["Wxo"][tokens] + h @ params["Who"] + params["bo"])
    cand = np.tanh(params["Wxc"][tokens] + h @ params["Whc"] + params["bc"])
    c_new = gf * c + gi * cand
    tanh_c = np.tanh(c_new)
    h_new = go * tanh_c
    entry = TapeEntry(
        tokens, h, state.s, h_new, state.s,
        c_prev=c, c_new=c_new, gate_i=gi, gate_f=gf, gate_o=go, cand=cand, tanh_c=tanh_c,
    )
    return CellState(h_new, state.s, c_new), entry


def step(arch, params, alpha, state, tokens):
    """Architecture dispatch for one forward step."""
    if arch == ARCH_SRN:
        return srn_step(params, state, tokens)
    if arch in (ARCH_SCRN, ARCH_SCRN_ADAPTIVE):
        return scrn_step(params, alpha, state, tokens)
    if arch == ARCH_LSTM:
        return lstm_step(params, state, tokens)
    raise ValueError(f"unknown architecture {arch!r}")


def block_matrix(params, alpha) -> np.ndarray:
    """Constrained recurrent matrix over the stacked state [h; s].

    Returned in the mathematical (column-vector) convention, so with
    stored input-major weights the blocks are::

        [ R.T     P.T @ diag(a) ]
        [ 0       diag(a)       ]

    where ``a`` is the context decay (scalar alpha or sigmoid(beta)).
    The decay appears in the cross block because the hidden update reads
    the already-decayed context state.  With p = 0 this is just R.T.
    """
    r = params["R"]
    m = r.shape[0]
    p = params["P"].shape[0] if "P" in params else 0
    mm = np.zeros((m + p, m + p), dtype=r.dtype)
    mm[:m, :m] = r.T
    if p:
        a = decay_vector(params, alpha)
        a_diag = np.full(p, a, dtype=r.dtype) if np.isscalar(a) else a.astype(r.dtype)
        mm[:m, m:] = params["P"].T * a_diag
        mm[m:, m:] = np.diag(a_diag)
    return mm


def block_input_matrix(params, alpha) -> np.ndarray:
    """Input injection matching ``block_matrix``: column ``x`` of the
    result is what a one-hot token ``x`` adds to the stacked
    pre-activation, i.e. rows ``[A.T + P.T @ ((1-a) B.T); (1-a) B.T]``.
    """
    a_mat = params["A"]
    d, m = a_mat.shape
    p = params["P"].shape[0] if "P" in params else 0
    w = np.zeros((m + p, d), dtype=a_mat.dtype)
    w[:m] = a_mat.T
    if p:
        a = decay_vector(params, alpha)
        scaled_b = ((1.0 - a) * params["B"]).T  # (p, d)
        w[:m] += params["P"].T @ scaled_b
        w[m:] = scaled_b
    return w


def zero_gradients(params) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def backward_window(arch, params, alpha, tape, out_grads=None,
                    final_state_grad=None):
    """Reverse-mode gradients of the window's injected losses.

    ``tape`` is a StepTape or list of TapeEntry; ``out_grads`` optionally
    overrides the entries' stored injections (a list aligned with the
    tape, each item ``(dh, ds)`` or None).  Each injected loss gradient
    refers to the state *before* its step and is propagated back through
    every older cached step.  ``final_state_grad``, when given, is an
    extra ``(dh, ds)`` on the newest state (the output of the last
    entry).  Returns ``(grads, state_grad)`` where ``state_grad`` is a
    CellState holding the gradient with respect to the window-initial
    state.
    """
    entries = list(tape)
    if not entries:
        raise ValueError("empty tape")
    if out_grads is None:
        out_grads = [e.inj for e in entries]
    if len(out_grads) != len(entries):
        raise ValueError("out_grads length must match tape length")
    if arch == ARCH_LSTM:
        return _lstm_backward(params, entries, out_grads, final_state_grad)
    return _srn_scrn_backward(arch, params, alpha, entries, out_grads,
                              final_state_grad)


def _srn_scrn_backward(arch, params, alpha, entries, out_grads, final_state_grad):
    first = entries[0]
    num_streams, m = first.h_prev.shape
    p = first.s_prev.shape[1]
    dtype = first.h_prev.dtype
    grads = zero_gradients(params)
    adaptive = "beta" in params
    a = decay_vector(params, alpha)
    one_minus = 1.0 - a
    ddecay = np.zeros(p, dtype=np.float64) if adaptive else None

    dh = np.zeros((num_streams, m), dtype=dtype)
    ds = np.zeros((num_streams, p), dtype=dtype)
    if final_state_grad is not None:
        dh = dh + final_state_grad[0]
        ds = ds + final_state_grad[1]
    for entry, og in zip(reversed(entries), reversed(out_grads)):
        dz = dh * entry.h_new * (1.0 - entry.h_new)
        np.add.at(grads["A"], entry.tokens, dz)
        grads["R"] += entry.h_prev.T @ dz
        dh_prev = dz @ params["R"].T
        if p:
            grads["P"] += entry.s_new.T @ dz
            ds_new = ds + dz @ params["P"].T
            if adaptive:
                emb = params["B"][entry.tokens]
                ddecay += np.sum(ds_new * (entry.s_prev - emb), axis=0)
            np.add.at(grads["B"], entry.tokens, one_minus * ds_new)
            ds_prev = a * ds_new
        else:
            ds_prev = ds
        if og is not None:
            dh_prev = dh_prev + og[0]
            ds_prev = ds_prev + og[1]
        dh, ds = dh_prev, ds_prev
    if adaptive:
        grads["beta"] = (ddecay * a * one_minus).astype(dtype)
    return grads, CellState(dh, ds)


def _lstm_backward(params, entries, out_grads, final_state_grad):
    first = entries[0]
    num_streams, m = first.h_prev.shape
    dtype = first.h_prev.dtype
    grads = zero_gradients(params)

    dh = np.zeros((num_streams, m), dtype=dtype)
    dc = np.zeros((num_streams, m), dtype=dtype)
    if final_state_grad is not None:
        dh = dh + final_state_grad[0]
    for entry, og in zip(reversed(entries), reversed(out_grads)):
        do = dh * entry.tanh_c
        dc_tot = dc + dh * entry.gate_o * (1.0 - entry.tanh_c**2)
        dpre = {
            "i": dc_tot * entry.cand * entry.gate_i * (1.0 - entry.gate_i),
            "f": dc_tot * entry.c_prev * entry.gate_f * (1.0 - entry.gate_f),
            "o": do * entry.gate_o * (1.0 - entry.gate_o),
            "c": dc_tot * entry.gate_i * (1.0 - entry.cand**2),
        }
        dh_prev = np.zeros_like(dh)
        for g, dp in dpre.items():
            np.add.at(grads[f"Wx{g}"], entry.tokens, dp)
            grads[f"Wh{g}"] += entry.h_prev.T @ dp
            grads[f"b{g}"] += dp.sum(axis=0)
            dh_prev += dp @ params[f"Wh{g}"].T
        dc_prev = dc_tot * entry.gate_f
        if og is not None:
            dh_prev = dh_prev + og[0]
        dh, dc = dh_prev, dc_prev
    empty_s = np.zeros((num_streams, 0), dtype=dtype)
    return grads, CellState(dh, empty_s, dc)
