"""Closed vocabulary, sentinel-wrapped token sequences, and permutations.

Conventions used across the package:

* every sequence is 0-indexed;
* a source sentence of core length ``n`` starts with ``<s>`` at position 0
  and ends with ``</s>`` at position ``n - 1``;
* ``s`` insertion placeholders ``<ins:1> .. <ins:s>`` are appended after the
  core, occupying positions ``n .. n+s-1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

BOS = "<s>"
EOS = "</s>"
MSK = "<msk>"
PAD = "<pad>"
UNK = "<unk>"

RESERVED = (BOS, EOS, MSK, PAD, UNK)


def ins_token(k: int) -> str:
    """Surface form of the k-th insertion placeholder (1-based)."""
    return f"<ins:{k}>"


class EmptyInput(ValueError):
    """Raised when a sentence is empty after trimming."""


class InvalidPermutation(ValueError):
    """Raised when an index sequence violates the permutation contract."""


@dataclass(frozen=True)
class Vocab:
    """Closed token inventory with reserved specials at fixed low ids."""

    tokens: tuple[str, ...]
    s_count: int
    id_of: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        mapping = {tok: i for i, tok in enumerate(self.tokens)}
        if len(mapping) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")
        for tok in RESERVED:
            if tok not in mapping:
                raise ValueError(f"missing reserved token {tok!r}")
        for k in range(1, self.s_count + 1):
            if ins_token(k) not in mapping:
                raise ValueError(f"missing insertion token {ins_token(k)!r}")
        object.__setattr__(self, "id_of", mapping)

    @classmethod
    def build(cls, words: Iterable[str], s_count: int = 8) -> "Vocab":
        """Build a vocabulary from corpus words, specials first."""
        tokens = list(RESERVED) + [ins_token(k) for k in range(1, s_count + 1)]
        seen = set(tokens)
        for w in words:
            if w not in seen:
                seen.add(w)
                tokens.append(w)
        return cls(tokens=tuple(tokens), s_count=s_count)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def bos_id(self) -> int:
        return self.id_of[BOS]

    @property
    def eos_id(self) -> int:
        return self.id_of[EOS]

    @property
    def msk_id(self) -> int:
        return self.id_of[MSK]

    @property
    def pad_id(self) -> int:
        return self.id_of[PAD]

    @property
    def unk_id(self) -> int:
        return self.id_of[UNK]

    def ins_id(self, k: int) -> int:
        """Id of the k-th insertion placeholder (1-based)."""
        if not 1 <= k <= self.s_count:
            raise ValueError(f"insertion index {k} out of range 1..{self.s_count}")
        return self.id_of[ins_token(k)]

    @property
    def ins_ids(self) -> tuple[int, ...]:
        return tuple(self.ins_id(k) for k in range(1, self.s_count + 1))

    def is_ins(self, token_id: int) -> bool:
        first = self.id_of[ins_token(1)] if self.s_count else -1
        return self.s_count > 0 and first <= token_id < first + self.s_count

    def save(self, path: str | Path) -> None:
        """Write one token per line; line number equals id."""
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        s_count = sum(1 for t in tokens if t.startswith("<ins:"))
        return cls(tokens=tuple(tokens), s_count=s_count)


@dataclass(frozen=True)
class SourceSentence:
    """Token ids of length ``n + s``: sentinel-wrapped core plus insertion block."""

    ids: tuple[int, ...]
    n: int

    @property
    def s(self) -> int:
        return len(self.ids) - self.n

    @property
    def core(self) -> tuple[int, ...]:
        return self.ids[: self.n]


def tokenize(text: str, vocab: Vocab) -> SourceSentence:
    """Lowercase whitespace tokenization into a sentinel-wrapped id sequence.

    Out-of-vocabulary words map to ``<unk>``; the insertion block is appended
    after the closing sentinel.
    """
    words = text.strip().lower().split()
    if not words:
        raise EmptyInput("empty sentence")
    core = [vocab.bos_id]
    core += [vocab.id_of.get(w, vocab.unk_id) for w in words]
    core.append(vocab.eos_id)
    ids = tuple(core) + vocab.ins_ids
    return SourceSentence(ids=ids, n=len(core))


def wrap_tokens(words: Sequence[str], vocab: Vocab) -> SourceSentence:
    """Like :func:`tokenize` but for an already-split token list."""
    if not words:
        raise EmptyInput("empty token list")
    core = [vocab.bos_id]
    core += [vocab.id_of.get(w, vocab.unk_id) for w in words]
    core.append(vocab.eos_id)
    ids = tuple(core) + vocab.ins_ids
    return SourceSentence(ids=ids, n=len(core))


def validate_permutation(pi: Sequence[int], n: int, s: int) -> None:
    """Check the permutation contract, raising :class:`InvalidPermutation`.

    A valid permutation starts at position 0, ends at ``n - 1``, repeats no
    index, uses insertion positions (``>= n``) in strictly increasing order,
    and never places two insertion positions adjacently.
    """
    if len(pi) < 2:
        raise InvalidPermutation("permutation must cover both sentinels")
    if pi[0] != 0:
        raise InvalidPermutation(f"must start at 0, got {pi[0]}")
    if pi[-1] != n - 1:
        raise InvalidPermutation(f"must end at {n - 1}, got {pi[-1]}")
    if len(set(pi)) != len(pi):
        raise InvalidPermutation("repeated index")
    prev_ins = -1
    for j, idx in enumerate(pi):
        if not 0 <= idx < n + s:
            raise InvalidPermutation(f"index {idx} out of range for n+s={n + s}")
        if idx >= n:
            if idx <= prev_ins:
                raise InvalidPermutation("insertion positions out of order")
            if j > 0 and pi[j - 1] >= n:
                raise InvalidPermutation("adjacent insertion positions")
            prev_ins = idx


def apply_permutation(src: SourceSentence, pi: Sequence[int]) -> tuple[int, ...]:
    """Reorder source ids along ``pi`` (``out[k] = src.ids[pi[k]]``)."""
    validate_permutation(pi, src.n, src.s)
    return tuple(src.ids[i] for i in pi)


def expand_insertions(
    permuted: Sequence[int], vocab: Vocab, msk_per_ins: int = 3
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Replace each insertion placeholder with a run of ``<msk>`` tokens.

    Returns the expanded id sequence and the indices of the mask slots.
    """
    out: list[int] = []
    positions: list[int] = []
    for tid in permuted:
        if vocab.is_ins(tid):
            positions.extend(range(len(out), len(out) + msk_per_ins))
            out.extend([vocab.msk_id] * msk_per_ins)
        else:
            out.append(tid)
    return tuple(out), tuple(positions)


def dec_source_positions(pi: Sequence[int], n: int, msk_per_ins: int = 3) -> tuple[int, ...]:
    """Source position each decoder slot is anchored to.

    Span tokens carry their own source index.  The k-th mask slot of an
    insertion anchors at the k-th core position after the preceding span
    token (clamped to the closing sentinel): for single-token replacements
    the first slot lands exactly on the dropped source token, which makes
    the copy alignment a positional lookup.  Aligned one-to-one with the
    expanded decoder input.
    """
    out: list[int] = []
    for j, idx in enumerate(pi):
        if idx >= n:
            left = pi[j - 1]  # core by the adjacency invariant
            out.extend(min(left + k, n - 1) for k in range(1, msk_per_ins + 1))
        else:
            out.append(idx)
    return tuple(out)


def surface(ids: Sequence[int], vocab: Vocab) -> str:
    """Render ids as text, dropping sentinels, placeholders, and padding."""
    hidden = {vocab.bos_id, vocab.eos_id, vocab.msk_id, vocab.pad_id}
    words = [
        vocab.tokens[i]
        for i in ids
        if i not in hidden and not vocab.is_ins(i)
    ]
    return " ".join(words)


@dataclass(frozen=True)
class TrainingExample:
    """Oracle supervision for one sentence pair.

    ``dec_input`` is the permuted source with each insertion placeholder
    replaced by three ``<msk>``; ``dec_output`` carries the same tokens with
    the mask slots filled (padded with ``<pad>`` where the infill is short).
    ``lossy`` marks examples whose target cannot be reconstructed exactly
    (a gap longer than three tokens, or more gaps than placeholders).
    """

    source: SourceSentence
    pi: tuple[int, ...]
    dec_input: tuple[int, ...]
    dec_output: tuple[int, ...]
    lossy: bool = False

    def msk_positions(self, vocab: Vocab) -> tuple[int, ...]:
        return tuple(i for i, t in enumerate(self.dec_input) if t == vocab.msk_id)
