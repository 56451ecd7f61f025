"""Corpus handling: vocabulary, id streams, and frequency-based word classes.

Text is UTF-8, whitespace tokenized, one sentence per line when
end-of-sentence markers are enabled.  Token ids are assigned in
descending frequency order (ties broken lexicographically), which keeps
the members of every frequency class contiguous in id space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNK_TOKEN = "<unk>"
EOS_TOKEN = "</s>"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass
class Vocabulary:
    """Token <-> id bijection with occurrence counts.

    ``tokens[i]`` is the token with id ``i``; ids run 0..size-1 in
    descending frequency order.  The unknown token is always present.
    """

    tokens: list[str]
    counts: list[int]
    unk_id: int
    eos_id: int | None = None
    token_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.token_to_id:
            self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def serialize(self) -> bytes:
        """Canonical byte form: one ``token<TAB>count`` line per id."""
        lines = [f"{t}\t{c}\n" for t, c in zip(self.tokens, self.counts)]
        return "".join(lines).encode("utf-8")

    def fingerprint(self) -> int:
        """FNV-1a hash of the canonical serialization."""
        return fnv1a64(self.serialize())


def build_vocab(lines, min_count: int = 5, add_eos: bool = False) -> Vocabulary:
    """Count whitespace tokens and build a frequency-ordered vocabulary.

    Tokens occurring fewer than ``min_count`` times fold into the
    unknown token, which is present even when nothing folds into it.
    With ``add_eos`` every input line also contributes one
    end-of-sentence token.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: dict[str, int] = {}
    n_lines = 0
    n_tokens = 0
    for line in lines:
        words = line.split()
        n_lines += 1
        n_tokens += len(words)
        for w in words:
            counts[w] = counts.get(w, 0) + 1
    if n_tokens == 0:
        raise ValueError("empty input: no tokens found")
    if add_eos:
        counts[EOS_TOKEN] = counts.get(EOS_TOKEN, 0) + n_lines

    unk_count = counts.pop(UNK_TOKEN, 0)
    kept = {}
    for w, c in counts.items():
        if c >= min_count or (add_eos and w == EOS_TOKEN):
            kept[w] = c
        else:
            unk_count += c
    kept[UNK_TOKEN] = unk_count

    ordered = sorted(kept.items(), key=lambda item: (-item[1], item[0]))
    tokens = [t for t, _ in ordered]
    token_counts = [c for _, c in ordered]
    unk_id = tokens.index(UNK_TOKEN)
    eos_id = tokens.index(EOS_TOKEN) if add_eos else None
    return Vocabulary(tokens, token_counts, unk_id, eos_id)


def encode(lines, vocab: Vocabulary) -> np.ndarray:
    """Map text to an int32 id sequence; out-of-vocabulary tokens -> unk.

    Appends the end-of-sentence id after each line when the vocabulary
    was built with one.
    """
    get = vocab.token_to_id.get
    unk = vocab.unk_id
    ids: list[int] = []
    for line in lines:
        ids.extend(get(w, unk) for w in line.split())
        if vocab.eos_id is not None:
            ids.append(vocab.eos_id)
    return np.asarray(ids, dtype=np.int32)


def decode(ids, vocab: Vocabulary) -> list[str]:
    """Inverse of ``encode`` up to unk replacement (eos ids included)."""
    return [vocab.tokens[i] for i in ids]


@dataclass
class StreamSet:
    """Corpus ids retiled into ``num_streams`` parallel contiguous slices."""

    ids: np.ndarray  # (num_streams, length)

    @property
    def num_streams(self) -> int:
        return self.ids.shape[0]

    @property
    def length(self) -> int:
        return self.ids.shape[1]


def make_streams(ids, num_streams: int) -> StreamSet:
    """Split an id sequence into equal-length contiguous streams.

    Stream ``i`` covers ``ids[i*T : (i+1)*T]`` with ``T = len(ids) //
    num_streams``; the remainder is dropped.
    """
    ids = np.asarray(ids, dtype=np.int32)
    if num_streams < 1:
        raise ValueError("num_streams must be >= 1")
    if len(ids) < num_streams:
        raise ValueError(f"need at least {num_streams} ids, got {len(ids)}")
    t = len(ids) // num_streams
    grid = ids[: num_streams * t].reshape(num_streams, t)
    return StreamSet(grid.copy())


@dataclass
class ClassLayout:
    """Two-level partition of the vocabulary for the hierarchical softmax.

    Classes are contiguous runs of the frequency-sorted token order with
    near-equal cumulative frequency (greedy binning).
    """

    num_classes: int
    class_of: np.ndarray  # token id -> class id
    within_class_index: np.ndarray  # token id -> position inside its class
    class_members: list[np.ndarray]  # class id -> token ids


def build_frequency_classes(vocab: Vocabulary, num_classes: int) -> ClassLayout:
    """Greedy equal-cumulative-frequency binning into ``num_classes`` bins.

    Tokens are swept in descending frequency order; a class closes once
    its cumulative count reaches total/num_classes, except that classes
    are force-closed when exactly enough tokens remain to keep every
    later class non-empty.  The final class absorbs the tail.
    """
    d = vocab.size
    if not 1 <= num_classes <= d:
        raise ValueError(f"num_classes must be in [1, {d}], got {num_classes}")
    order = sorted(range(d), key=lambda i: (-vocab.counts[i], i))
    total = float(sum(vocab.counts))
    target = total / num_classes

    class_of = np.empty(d, dtype=np.int32)
    within = np.empty(d, dtype=np.int32)
    members: list[np.ndarray] = []
    current: list[int] = []
    acc = 0.0
    for pos, tok in enumerate(order):
        current.append(tok)
        acc += vocab.counts[tok]
        tokens_left = d - pos - 1
        classes_left = num_classes - len(members) - 1
        if len(members) < num_classes - 1 and (acc >= target or tokens_left == classes_left):
            members.append(np.asarray(current, dtype=np.int32))
            current = []
            acc = 0.0
    members.append(np.asarray(current, dtype=np.int32))

    for cid, toks in enumerate(members):
        class_of[toks] = cid
        within[toks] = np.arange(len(toks), dtype=np.int32)
    return ClassLayout(num_classes, class_of, within, members)


def save_vocab(vocab: Vocabulary, path) -> None:
    """Write the vocabulary file: ``token<TAB>count``, line index = id."""
    with open(path, "wb") as f:
        f.write(vocab.serialize())


def load_vocab(path) -> Vocabulary:
    """Read a vocabulary file written by ``save_vocab``."""
    tokens: list[str] = []
    counts: list[int] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            tok, cnt = line.rstrip("\n").split("\t")
            tokens.append(tok)
            counts.append(int(cnt))
    if UNK_TOKEN not in tokens:
        raise ValueError(f"vocabulary file {path} lacks {UNK_TOKEN}")
    unk_id = tokens.index(UNK_TOKEN)
    eos_id = tokens.index(EOS_TOKEN) if EOS_TOKEN in tokens else None
    return Vocabulary(tokens, counts, unk_id, eos_id)
