"""A complete training run in fifty lines.

Builds a vocabulary from raw text, trains a small recurrent model with
truncated backpropagation and the validation-driven learning-rate
schedule, then evaluates perplexity and peeks at the model's next-token
beliefs.  The corpus here is a built-in synthetic one (topic-flavored
articles over a 1000-word vocabulary) so the demo is self-contained;
swap in your own files for real data.

Run:  python3 demos/03_train_small_model.py   (about a minute)
"""

import numpy as np

from scrnlm.corpus import build_vocab, encode, make_streams
from scrnlm.evaluator import evaluate_ids
from scrnlm.models import create_model
from scrnlm.synthcorpus import generate_text
from scrnlm.trainer import (TrainConfig, make_schedule, schedule_step,
                            train_epoch)

# --- data --------------------------------------------------------------
# One stream, sliced: train and validation must come from the same
# generated "language" (same topics and successor tables).
text = generate_text(132_000, seed=1).splitlines()
train_text, valid_text = text[:120], text[120:]

vocab = build_vocab(train_text, min_count=3)
train_ids = encode(train_text, vocab)
valid_ids = encode(valid_text, vocab)
print(f"vocabulary {vocab.size} types, train {train_ids.size} tokens, "
      f"valid {valid_ids.size} tokens")

# --- model and recipe ----------------------------------------------------
config = TrainConfig(arch="scrn", hidden_size=40, context_size=10,
                     num_streams=16, max_epochs=8)
model = create_model(config.arch, vocab.size, config.hidden_size,
                     config.context_size, seed=config.seed,
                     dtype=config.dtype())
print(f"{config.arch} with {model.parameter_count()} parameters, "
      f"bptt span {config.resolved_bptt()}")

streams = make_streams(train_ids, config.num_streams)
schedule = make_schedule(config)
while schedule.epoch < config.max_epochs:
    stats = train_epoch(model, streams, config, schedule)
    report, _ = evaluate_ids(model, valid_ids)
    schedule, stop = schedule_step(schedule, report.perplexity, config)
    print(f"epoch {schedule.epoch}: train nll/token {stats.mean_nll:.3f} "
          f"valid ppl {report.perplexity:7.2f} lr {schedule.current_lr:.4f} "
          f"({stats.tokens_per_second:,.0f} tok/s)")
    if stop:
        break

# --- what does it believe? ----------------------------------------------
state = model.init_state(1)
for tok in train_ids[:200]:
    state, _ = model.step(state, np.array([tok]))
dist = model.next_token_distribution(state, 0)
top = np.argsort(dist)[::-1][:5]
print("\nafter 200 tokens of context, the five most expected next words:")
for t in top:
    print(f"  {vocab.tokens[t]:>12s}  p = {dist[t]:.4f}")
