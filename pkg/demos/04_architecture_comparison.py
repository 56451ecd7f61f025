"""Do context units pay their rent?

Trains three small models of comparable parameter count on the same
synthetic corpus and compares validation perplexity:

  srn            plain sigmoid recurrence, hidden state only
  scrn           sigmoid recurrence plus a slowly decaying context layer
  scrn-adaptive  the same, but each context unit learns its own decay

The corpus interleaves topic-flavored articles with word-to-word
bigram structure, so there is information at both short and long range.
The hidden layer picks up the short-range part quickly; the context
layer is what tracks the slowly changing topic, and the perplexity gap
between srn and scrn is exactly that contribution.

Run:  python3 demos/04_architecture_comparison.py   (a few minutes)
"""

import numpy as np

from scrnlm.corpus import make_streams
from scrnlm.evaluator import perplexity
from scrnlm.models import create_model
from scrnlm.synthcorpus import VOCAB_SIZE, generate_ids
from scrnlm.trainer import (TrainConfig, make_schedule, schedule_step,
                            train_epoch)

EPOCHS = 4
ids = generate_ids(330_000, seed=5)
train_ids, valid_ids = ids[:300_000], ids[300_000:]
vocab_size = VOCAB_SIZE

results = {}
for arch, m, p in (("srn", 50, 0), ("scrn", 40, 10), ("scrn-adaptive", 40, 10)):
    config = TrainConfig(arch=arch, hidden_size=m, context_size=p,
                         max_epochs=EPOCHS)
    model = create_model(arch, vocab_size, m, p, seed=1, dtype=config.dtype())
    streams = make_streams(train_ids, config.num_streams)
    schedule = make_schedule(config)
    print(f"-- {arch} (m={m}, p={p}, {model.parameter_count()} parameters)")
    for _ in range(EPOCHS):
        stats = train_epoch(model, streams, config, schedule)
        ppl = perplexity(model, valid_ids).perplexity
        schedule, stop = schedule_step(schedule, ppl, config)
        print(f"   epoch {schedule.epoch}: valid ppl {ppl:8.2f} "
              f"({stats.tokens_per_second:,.0f} tok/s)")
        if stop:
            break
    results[arch] = ppl
    if arch == "scrn-adaptive":
        decays = np.sort(model.learned_decays())
        print(f"   learned decay spectrum: {np.array_str(decays, precision=3)}")

print("\nvalidation perplexity after equal budget:")
for arch, ppl in sorted(results.items(), key=lambda kv: kv[1]):
    print(f"  {arch:14s} {ppl:8.2f}")
base, ctx = results["srn"], results["scrn"]
print(f"\ncontext layer improvement over the plain recurrence: "
      f"{100 * (base - ctx) / base:.1f}%")
