"""Desk-scale datasets: synthetic long-range tasks and character-level text.

Three kinds, all deterministic given a seed:

- ``copy_task``: sequences ``prefix SEP prefix`` for causal language modeling;
  the model must reproduce the prefix after the separator.
- ``long_range_recall``: classification where a key token placed in the first
  half of the sequence determines the label; everything after it is
  distractor noise, so the answer sits at least half a sequence away.
- ``char_text``: character-level ids over a user-supplied text, cut into
  fixed-length windows.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .grid import coerce_enum
from .validation import check_positive


class DatasetKind(str, enum.Enum):
    CHAR_TEXT = "char_text"
    COPY_TASK = "copy_task"
    LONG_RANGE_RECALL = "long_range_recall"
    CUSTOM = "custom"  # caller-supplied arrays, e.g. via the estimator facade


@dataclass
class Dataset:
    """Token sequences split into train/validation, plus labels for classification."""

    kind: DatasetKind
    vocab_size: int
    train_tokens: np.ndarray  # (n_train, T) int64
    val_tokens: np.ndarray  # (n_val, T)
    train_labels: np.ndarray | None = None  # (n_train,) for classification
    val_labels: np.ndarray | None = None
    char_to_id: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("train_tokens", "val_tokens"):
            arr = np.asarray(getattr(self, name))
            if arr.ndim != 2:
                raise ConfigError(f"{name} must be (n, T), got shape {arr.shape}")
            if arr.size and (arr.min() < 0 or arr.max() >= self.vocab_size):
                raise ConfigError(f"{name} contains ids outside [0, {self.vocab_size})")
            setattr(self, name, arr.astype(np.int64))

    @property
    def seq_len(self) -> int:
        return int(self.train_tokens.shape[1])

    @property
    def is_classification(self) -> bool:
        return self.train_labels is not None

    def decode(self, ids) -> str:
        if not self.char_to_id:
            raise ConfigError("decode is only available for char_text datasets")
        id_to_char = {i: c for c, i in self.char_to_id.items()}
        return "".join(id_to_char[int(i)] for i in np.asarray(ids).ravel())

    def encode(self, text: str) -> np.ndarray:
        if not self.char_to_id:
            raise ConfigError("encode is only available for char_text datasets")
        try:
            return np.array([self.char_to_id[c] for c in text], dtype=np.int64)
        except KeyError as exc:
            raise ConfigError(f"character {exc.args[0]!r} not in vocabulary") from None


def _split(n: int, val_fraction: float, rng: np.random.Generator):
    order = rng.permutation(n)
    n_val = max(1, int(round(n * val_fraction)))
    if n_val >= n:
        raise ConfigError(f"dataset of {n} sequences too small for a validation split")
    return order[n_val:], order[:n_val]


def make_copy_task(n_sequences: int = 256, prefix_len: int = 8, vocab_size: int = 16,
                   seed: int = 0, val_fraction: float = 0.2) -> Dataset:
    """``prefix SEP prefix`` sequences; the separator is the last vocab id."""
    check_positive(prefix_len, "prefix_len")
    check_positive(n_sequences, "n_sequences")
    if vocab_size < 3:
        raise ConfigError("copy_task needs vocab_size >= 3 (symbols plus separator)")
    rng = np.random.default_rng(seed)
    sep = vocab_size - 1
    prefixes = rng.integers(0, sep, size=(n_sequences, prefix_len))
    tokens = np.concatenate(
        [prefixes, np.full((n_sequences, 1), sep), prefixes], axis=1)
    train_idx, val_idx = _split(n_sequences, val_fraction, rng)
    return Dataset(DatasetKind.COPY_TASK, vocab_size,
                   tokens[train_idx], tokens[val_idx])


def make_long_range_recall(n_sequences: int = 256, seq_len: int = 128,
                           vocab_size: int = 16, seed: int = 0,
                           val_fraction: float = 0.2) -> Dataset:
    """Binary key token in the first half of the sequence sets the label.

    Token 0/1 is the key; distractors are drawn from the rest of the
    vocabulary, so the label is recoverable only from the key position,
    which sits at least ``seq_len/2`` tokens before the end.
    """
    if seq_len < 4:
        raise ConfigError("long_range_recall needs seq_len >= 4")
    if vocab_size < 4:
        raise ConfigError("long_range_recall needs vocab_size >= 4")
    rng = np.random.default_rng(seed)
    tokens = rng.integers(2, vocab_size, size=(n_sequences, seq_len))
    keys = rng.integers(0, 2, size=n_sequences)
    positions = rng.integers(0, seq_len // 2, size=n_sequences)
    tokens[np.arange(n_sequences), positions] = keys
    train_idx, val_idx = _split(n_sequences, val_fraction, rng)
    return Dataset(DatasetKind.LONG_RANGE_RECALL, vocab_size,
                   tokens[train_idx], tokens[val_idx],
                   train_labels=keys[train_idx], val_labels=keys[val_idx])


def make_char_text(text: str, seq_len: int = 64, seed: int = 0,
                   val_fraction: float = 0.2) -> Dataset:
    """Character-level windows over ``text`` with a sorted-codepoint vocabulary."""
    check_positive(seq_len, "seq_len")
    if not text:
        raise ConfigError("char_text needs non-empty text")
    chars = sorted(set(text))
    char_to_id = {c: i for i, c in enumerate(chars)}
    ids = np.array([char_to_id[c] for c in text], dtype=np.int64)
    n_windows = len(ids) // seq_len
    if n_windows < 2:
        raise ConfigError(
            f"text of {len(ids)} characters yields {n_windows} windows of "
            f"length {seq_len}; need at least 2")
    tokens = ids[: n_windows * seq_len].reshape(n_windows, seq_len)
    rng = np.random.default_rng(seed)
    train_idx, val_idx = _split(n_windows, val_fraction, rng)
    return Dataset(DatasetKind.CHAR_TEXT, len(chars),
                   tokens[train_idx], tokens[val_idx], char_to_id=char_to_id)


def make_char_text_file(path, seq_len: int = 64, seed: int = 0,
                        val_fraction: float = 0.2) -> Dataset:
    with open(path, "r", encoding="utf-8") as handle:
        return make_char_text(handle.read(), seq_len=seq_len, seed=seed,
                              val_fraction=val_fraction)


def make_dataset(kind, seed: int = 0, **params) -> Dataset:
    """Dispatch on dataset kind; see the individual constructors for params."""
    kind = coerce_enum(DatasetKind, kind, "dataset kind")
    if kind is DatasetKind.COPY_TASK:
        return make_copy_task(seed=seed, **params)
    if kind is DatasetKind.LONG_RANGE_RECALL:
        return make_long_range_recall(seed=seed, **params)
    if kind is DatasetKind.CHAR_TEXT:
        if "path" in params:
            return make_char_text_file(params.pop("path"), seed=seed, **params)
        return make_char_text(seed=seed, **params)
    raise ConfigError(f"dataset kind {kind.value!r} has no synthesizer; "
                      f"construct a Dataset directly")
