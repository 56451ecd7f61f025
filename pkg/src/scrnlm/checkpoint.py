"""Binary checkpoint format.

Layout (little-endian throughout):

    magic "SCRN" | version u32
    arch u32 | softmax u32 | precision u32 | d u32 | m u32 | p u32 | K u32
    vocab hash u64
    alpha f64 | lr f64 | lr_decay f64 | clip f64 | bptt f64 | update f64
    streams f64 | max_epochs f64 | seed f64 | truncation f64
    schedule: initial_lr f64 | current_lr f64 | best f64
              decay_started u8 | bad_epochs u32 | num_decays u32 | epoch u32
    if K > 0: class_of u32[d], within_class_index u32[d]
    block count u32, then per block (sorted by name):
        name_len u16 | name utf8 | ndim u8 | dims u32[ndim] | raw row-major data

All numeric hyperparameters are stored as 64-bit reals (integer-valued
ones exactly, since they are far below 2**53).  Saving is deterministic:
identical model + config + schedule produce identical bytes.
"""

from __future__ import annotations

import struct
from dataclasses import replace

import numpy as np

from .corpus import ClassLayout
from .models import LanguageModel

MAGIC = b"SCRN"
VERSION = 1

_ARCH_TAGS = {"srn": 0, "scrn": 1, "scrn-adaptive": 2, "lstm": 3}
_ARCH_FROM_TAG = {v: k for k, v in _ARCH_TAGS.items()}
_TRUNCATION_TAGS = {"sliding": 0.0, "tiling": 1.0}
_TRUNCATION_FROM_TAG = {v: k for k, v in _TRUNCATION_TAGS.items()}
_OUTPUT_BLOCKS = frozenset({"U", "V", "class_U", "class_V"})


class CheckpointError(Exception):
    """Base class for checkpoint problems."""


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes or a structurally malformed file."""


class CheckpointVersionError(CheckpointError):
    """Format version not understood by this code."""


class CheckpointTruncatedError(CheckpointError):
    """File ends before the declared content does."""


class VocabHashMismatchError(CheckpointError):
    """Checkpoint was trained against a different vocabulary."""


def save_checkpoint(model: LanguageModel, config, schedule, path) -> None:
    from .trainer import TrainConfig  # local import; trainer imports this module

    assert isinstance(config, TrainConfig)
    dtype = model.dtype
    precision = {np.dtype(np.float32): 32, np.dtype(np.float64): 64}[np.dtype(dtype)]
    k = model.layout.num_classes if model.layout is not None else 0
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(struct.pack(
        "<7I", _ARCH_TAGS[model.arch], 1 if model.layout is not None else 0,
        precision, model.vocab_size, model.hidden_size, model.context_size, k))
    parts.append(struct.pack("<Q", model.vocab_hash))
    clip = config.clip_norm if config.clip_norm is not None else float("inf")
    parts.append(struct.pack(
        "<10d", model.alpha, config.learning_rate, config.lr_decay_divisor,
        clip, float(config.resolved_bptt()), float(config.update_interval),
        float(config.num_streams), float(config.max_epochs),
        float(config.seed), _TRUNCATION_TAGS[config.truncation]))
    parts.append(struct.pack(
        "<3dBIII", schedule.initial_lr, schedule.current_lr, schedule.best_ppl,
        1 if schedule.decay_started else 0, schedule.bad_epochs,
        schedule.num_decays, schedule.epoch))
    if model.layout is not None:
        parts.append(np.ascontiguousarray(model.layout.class_of, dtype="<u4").tobytes())
        parts.append(np.ascontiguousarray(model.layout.within_class_index, dtype="<u4").tobytes())
    blocks = model.blocks()
    parts.append(struct.pack("<I", len(blocks)))
    for name in sorted(blocks):
        block = blocks[name]
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", block.ndim))
        parts.append(struct.pack(f"<{block.ndim}I", *block.shape))
        parts.append(np.ascontiguousarray(block).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Returns (model, config, schedule); bit-exact inverse of save."""
    from .trainer import ScheduleState, TrainConfig

    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic bytes)")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {VERSION}")
    arch_tag, softmax_tag, precision, d, m, p, k = reader.unpack("<7I")
    if arch_tag not in _ARCH_FROM_TAG or softmax_tag not in (0, 1) \
            or precision not in (32, 64):
        raise CheckpointFormatError(f"{path}: unrecognized header tags")
    (vocab_hash,) = reader.unpack("<Q")
    (alpha, lr, lr_decay, clip, bptt, update, streams, max_epochs, seed,
     trunc) = reader.unpack("<10d")
    (init_lr, cur_lr, best, decay_started, bad_epochs, num_decays,
     epoch) = reader.unpack("<3dBIII")
    layout = None
    if k > 0:
        class_of = np.frombuffer(reader.take(4 * d), dtype="<u4").astype(np.int64)
        within = np.frombuffer(reader.take(4 * d), dtype="<u4").astype(np.int64)
        sizes = np.bincount(class_of, minlength=k)
        members = [np.empty(sizes[c], dtype=np.int64) for c in range(k)]
        for token_id in range(d):
            members[class_of[token_id]][within[token_id]] = token_id
        layout = ClassLayout(num_classes=k, class_of=class_of,
                             within_class_index=within, class_members=members)
    dtype = np.float32 if precision == 32 else np.float64
    (num_blocks,) = reader.unpack("<I")
    cell: dict[str, np.ndarray] = {}
    out: dict[str, np.ndarray] = {}
    for _ in range(num_blocks):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        raw = reader.take(count * dtype().itemsize)
        block = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        (out if name in _OUTPUT_BLOCKS else cell)[name] = block
    if reader.pos != len(reader.data):
        raise CheckpointFormatError(f"{path}: {len(reader.data) - reader.pos} trailing bytes")
    if trunc not in _TRUNCATION_FROM_TAG:
        raise CheckpointFormatError(f"{path}: unrecognized truncation tag {trunc}")
    model = LanguageModel(arch=_ARCH_FROM_TAG[arch_tag], vocab_size=d,
                          hidden_size=m, context_size=p, cell=cell, out=out,
                          alpha=alpha, layout=layout, vocab_hash=vocab_hash)
    config = TrainConfig(arch=model.arch, hidden_size=m, context_size=p,
                         alpha=alpha, bptt_span=int(bptt),
                         update_interval=int(update), num_streams=int(streams),
                         learning_rate=lr, lr_decay_divisor=lr_decay,
                         clip_norm=clip, max_epochs=int(max_epochs),
                         seed=int(seed), precision=f"float{precision}",
                         hsm=softmax_tag == 1,
                         num_classes=k if k > 0 else None,
                         truncation=_TRUNCATION_FROM_TAG[trunc])
    schedule = ScheduleState(initial_lr=init_lr, current_lr=cur_lr,
                             best_ppl=best, decay_started=bool(decay_started),
                             bad_epochs=bad_epochs, num_decays=num_decays,
                             epoch=epoch)
    return model, config, schedule


def verify_vocab_hash(model: LanguageModel, vocab) -> None:
    actual = vocab.fingerprint()
    if model.vocab_hash != actual:
        raise VocabHashMismatchError(
            f"checkpoint vocabulary hash {model.vocab_hash:#018x} does not match "
            f"the supplied vocabulary ({actual:#018x})")
