"""Deterministic synthetic corpus with short- and long-range structure.

Desk-scale experiments need a corpus whose statistics reward both a
bigram-speed memory and a slow topical memory, without shipping or
downloading any dataset.  The generator emits a Zipf-distributed word
stream organized into topic-coherent articles:

  * each token is drawn, with fixed probabilities, from the previous
    token's successor list (local structure), from the current
    article's topic lexicon (long-range structure), or from the global
    unigram distribution (noise floor);
  * successor lists are shared by a small number of word classes, so
    the local structure is low rank and a modest hidden layer captures
    all of it; extra hidden units buy nothing;
  * topic lexicons are disjoint mid-frequency word sets, so a decayed
    bag of recent words identifies the topic, and the topic pays off on
    a large share of all tokens; draws within a lexicon are geometric,
    so each topic concentrates most of its payoff on a few words and
    the signal stands far above the unigram floor;
  * articles are several hundred tokens long, so the topical signal
    persists across far more steps than any bigram window.

Everything is a pure function of the seed.  The same seed and length
always produce the same text, byte for byte.
"""

from __future__ import annotations

import numpy as np

VOCAB_SIZE = 1000
COMMON_HEAD = 50          # top ranks excluded from topic lexicons
NUM_TOPICS = 10
WORDS_PER_TOPIC = 80
SUCCESSOR_CLASSES = 30    # words sharing one successor list
SUCCESSORS_PER_CLASS = 12
SUCCESSOR_DECAY = 0.55    # geometric weight ratio across a successor list
WITHIN_TOPIC_DECAY = 0.85  # geometric weight ratio inside a lexicon
SUCCESSOR_SHARE = 0.30
TOPIC_SHARE = 0.45
ARTICLE_TOKENS = (500, 1500)
ZIPF_EXPONENT = 1.05
TOKENS_PER_LINE = 1000


def generate_ids(num_tokens: int, *, seed: int = 0, vocab_size: int = VOCAB_SIZE,
                 num_topics: int = NUM_TOPICS,
                 successor_share: float = SUCCESSOR_SHARE,
                 topic_share: float = TOPIC_SHARE) -> np.ndarray:
    """Word ranks (0 = most frequent) for a corpus of ``num_tokens``."""
    if num_tokens < 1:
        raise ValueError("num_tokens must be positive")
    if not 0 <= successor_share + topic_share <= 1:
        raise ValueError("mixture shares must sum to at most 1")
    if COMMON_HEAD + num_topics * WORDS_PER_TOPIC > vocab_size:
        raise ValueError("vocabulary too small for disjoint topic lexicons")
    rng = np.random.default_rng(seed)

    ranks = np.arange(vocab_size)
    weights = 1.0 / (ranks + 2.0) ** ZIPF_EXPONENT
    unigram_cdf = np.cumsum(weights / weights.sum())

    def draw_unigram(n):
        return np.searchsorted(unigram_cdf, rng.random(n)).astype(np.int64)

    # Local structure keyed on a coarse class of the previous word: the
    # next-word table has rank at most SUCCESSOR_CLASSES.
    word_class = rng.integers(0, SUCCESSOR_CLASSES, size=vocab_size).tolist()
    successors = draw_unigram(SUCCESSOR_CLASSES * SUCCESSORS_PER_CLASS)
    successors = successors.reshape(SUCCESSOR_CLASSES,
                                    SUCCESSORS_PER_CLASS).tolist()
    w = SUCCESSOR_DECAY ** np.arange(SUCCESSORS_PER_CLASS)
    successor_cdf = np.cumsum(w / w.sum())

    # Disjoint mid-frequency lexicons: a decayed bag of the last few
    # dozen words separates topics cleanly.
    lexicon_pool = COMMON_HEAD + rng.permutation(num_topics * WORDS_PER_TOPIC)
    topic_words = lexicon_pool.reshape(num_topics, WORDS_PER_TOPIC).tolist()
    tw = WITHIN_TOPIC_DECAY ** np.arange(WORDS_PER_TOPIC)
    topic_cdf = np.cumsum(tw / tw.sum())

    out = np.empty(num_tokens, dtype=np.int32)
    filled = 0
    prev = 0
    first = True
    while filled < num_tokens:
        # Draws are sized by the article, not by the remaining budget,
        # so a longer corpus extends a shorter one token for token.
        article = int(rng.integers(*ARTICLE_TOKENS))
        span = min(article, num_tokens - filled)
        lexicon = topic_words[int(rng.integers(num_topics))]
        mech = rng.random(article).tolist()
        unigram_draws = draw_unigram(article).tolist()
        successor_picks = np.searchsorted(successor_cdf,
                                          rng.random(article)).tolist()
        topic_picks = np.searchsorted(topic_cdf, rng.random(article)).tolist()
        for k in range(span):
            r = mech[k]
            if r < successor_share and not first:
                tok = successors[word_class[prev]][successor_picks[k]]
            elif r < successor_share + topic_share:
                tok = lexicon[topic_picks[k]]
            else:
                tok = unigram_draws[k]
            out[filled + k] = tok
            prev = tok
            first = False
        filled += span
    return out


def ids_to_text(ids: np.ndarray) -> str:
    """Render rank ids as words w0, w1, ... in lines of fixed width."""
    words = [f"w{i}" for i in ids]
    lines = [" ".join(words[i:i + TOKENS_PER_LINE])
             for i in range(0, len(words), TOKENS_PER_LINE)]
    return "\n".join(lines) + "\n"


def generate_text(num_tokens: int, *, seed: int = 0, **kwargs) -> str:
    return ids_to_text(generate_ids(num_tokens, seed=seed, **kwargs))


def write_corpus(path, num_tokens: int, *, seed: int = 0, **kwargs) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(generate_text(num_tokens, seed=seed, **kwargs))
