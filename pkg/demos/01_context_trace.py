"""What the context layer remembers.

The context state is a leaky average of token embeddings: each step it
keeps a fraction alpha of itself and mixes in (1 - alpha) of the current
token's context embedding.  Unrolled, that is a geometric series over
the history, so the layer is literally an exponentially decaying bag of
words.  This script makes that concrete in three ways:

1. feed the same token forever and watch the state converge to its
   embedding along a geometric curve,
2. check the unrolled closed form against the recurrence on random text,
3. show the equivalent single-matrix recurrence: the whole model can be
   written as one constrained recurrent step whose transition matrix has
   a diagonal decay block.

Run:  python3 demos/01_context_trace.py
"""

import numpy as np

from scrnlm.cells import (CellState, block_input_matrix, block_matrix,
                          init_cell_params, step)
from scrnlm.models import create_model

rng = np.random.default_rng(0)

# --- 1. constant input: geometric approach to the embedding -----------
d, m, p, alpha = 12, 6, 3, 0.9
model = create_model("scrn", d, m, p, alpha=alpha, seed=1, dtype=np.float64)
token = np.array([4])
target = model.cell["B"][4]

state = model.init_state(1)
print(f"distance of context state from the token embedding (alpha={alpha}):")
for t in range(1, 31):
    state, _ = model.step(state, token)
    gap = np.abs(state.s[0] - target).max()
    if t in (1, 2, 5, 10, 20, 30):
        # after t repeats the gap shrinks like alpha**t
        print(f"  step {t:2d}: max gap {gap:.2e}   alpha**t = {alpha**t:.2e}")

# --- 2. closed form on random text ------------------------------------
tokens = rng.integers(0, d, size=100)
state = model.init_state(1)
for tok in tokens:
    state, _ = model.step(state, np.array([tok]))
closed = np.zeros(p)
for k, tok in enumerate(reversed(tokens)):
    closed += (1 - alpha) * alpha**k * model.cell["B"][tok]
err = np.abs(state.s[0] - closed).max()
print(f"\nrecurrence vs unrolled geometric series over 100 random tokens:")
print(f"  max abs difference {err:.2e}  (linearity makes this exact)")

# --- 3. the one-matrix view -------------------------------------------
params = init_cell_params("scrn", d, m, p, rng=np.random.default_rng(2),
                          dtype=np.float64)
big_m = block_matrix(params, alpha)
big_w = block_input_matrix(params, alpha)
print(f"\nsingle-matrix form: transition matrix is {big_m.shape}, input map {big_w.shape}")
print("bottom-right corner of the transition matrix (the decay block):")
print(np.array_str(big_m[-p:, -p:], precision=3, suppress_small=True))

h = rng.normal(size=(1, m))
s = rng.normal(size=(1, p))
x = rng.integers(0, d, size=1)
new_state, _ = step("scrn", params, alpha, CellState(h, s), x)
z = np.concatenate([h[0], s[0]])
pre = big_m @ z + big_w[:, x[0]]
merged = np.concatenate([1 / (1 + np.exp(-pre[:m])), pre[m:]])
flat = np.concatenate([new_state.h[0], new_state.s[0]])
print(f"\ncell step vs single-matrix step: max abs difference "
      f"{np.abs(flat - merged).max():.2e}")
