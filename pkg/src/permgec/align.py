"""Oracle permutation construction from (errorful, corrected) sentence pairs.

Three stages: greedy longest-first span matching between source and target,
dynamic-programming selection of a locality-constrained span subsequence, and
assembly of the permutation plus decoder supervision.  Unmatched target runs
between selected spans become insertion sites infilled by the decoder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .vocab import TrainingExample, Vocab, validate_permutation, wrap_tokens

MSK_PER_INS = 3

# Distinct hide markers so claimed source never matches claimed target.
_HIDE_SRC = -1
_HIDE_TGT = -2


@dataclass(frozen=True)
class AlignedSpan:
    """A matched run: ``length`` tokens at ``start_src`` / ``start_tgt``."""

    start_src: int
    start_tgt: int
    length: int

    @property
    def end_tgt(self) -> int:
        return self.start_tgt + self.length - 1

    @property
    def end_src(self) -> int:
        return self.start_src + self.length - 1


def _find_contiguous(needle: Sequence[int], hay: list[int]) -> int:
    """Leftmost index where ``needle`` occurs contiguously in ``hay``, else -1."""
    m, n = len(needle), len(hay)
    for start in range(n - m + 1):
        if hay[start : start + m] == list(needle):
            return start
    return -1


def match_spans(x: Sequence[int], y: Sequence[int]) -> list[AlignedSpan]:
    """Greedy longest-first matching of target spans against the source.

    Target spans are tried from longest to shortest, start ascending; a span
    is claimed at its leftmost contiguous occurrence in the still-unclaimed
    source, and both sides are then hidden.  Sentinel tokens always match, so
    the result is never empty.  Spans are returned sorted by target start.
    """
    msk_x = list(x)
    msk_y = list(y)
    spans: list[AlignedSpan] = []
    for length in range(len(y), 0, -1):
        for i in range(0, len(y) - length + 1):
            window = msk_y[i : i + length]
            if any(t == _HIDE_TGT for t in window):
                continue
            start = _find_contiguous(window, msk_x)
            if start == -1:
                continue
            spans.append(AlignedSpan(start_src=start, start_tgt=i, length=length))
            msk_x[start : start + length] = [_HIDE_SRC] * length
            msk_y[i : i + length] = [_HIDE_TGT] * length
    spans.sort(key=lambda sp: sp.start_tgt)
    return spans


def source_ranks(spans: Sequence[AlignedSpan]) -> list[int]:
    """Rank of each span's source start among all spans (double argsort)."""
    order = sorted(range(len(spans)), key=lambda i: spans[i].start_src)
    ranks = [0] * len(spans)
    for rank, i in enumerate(order):
        ranks[i] = rank
    return ranks


def optimal_subsequence(
    ranks: Sequence[int], lengths: Sequence[int], window: int
) -> list[int]:
    """Indices of the max-total-length subsequence under a rank window.

    Consecutive picks must have ranks differing by at most ``window``.  Ties
    on total length prefer fewer rank descents, then the earlier chain.
    """
    k = len(ranks)
    # best[i]: (total_length, -descents) for a selection ending at i
    best: list[tuple[int, int]] = [(lengths[i], 0) for i in range(k)]
    back: list[int] = [-1] * k
    for i in range(k):
        for j in range(i):
            if abs(ranks[i] - ranks[j]) > window:
                continue
            descent = 1 if ranks[j] > ranks[i] else 0
            cand = (best[j][0] + lengths[i], best[j][1] - descent)
            if cand > best[i]:
                best[i] = cand
                back[i] = j

    end = max(range(k), key=lambda i: best[i])
    chosen = []
    at = end
    while at != -1:
        chosen.append(at)
        at = back[at]
    chosen.reverse()
    return chosen


def select_spans(
    spans: Sequence[AlignedSpan], max_len: int, strict: bool = False
) -> list[AlignedSpan]:
    """Pick the span subsequence with maximal total token length.

    Spans are kept in target order; consecutive selected spans must have
    source ranks differing by at most ``max_len`` (strictly less when
    ``strict``).  The first and last spans (which carry the sentinels) are
    forced in afterwards if the optimum skipped them.
    """
    if not spans:
        return []
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ranks = source_ranks(spans)
    limit = max_len - 1 if strict else max_len
    chosen = optimal_subsequence(ranks, [sp.length for sp in spans], limit)

    selected = set(chosen)
    selected.add(0)
    selected.add(len(spans) - 1)
    return [spans[i] for i in sorted(selected)]


def build_example(
    x: Sequence[int],
    y: Sequence[int],
    vocab: Vocab,
    max_len: int = 2,
    s: int | None = None,
    strict: bool = False,
) -> TrainingExample:
    """Construct oracle supervision for a sentinel-wrapped id pair.

    Walks the selected spans in target order.  A target gap of one or more
    tokens between consecutive spans emits the next insertion position and a
    three-slot infill (gap tokens padded with ``<pad>``, truncated to three).
    Gaps longer than three tokens or beyond the placeholder budget mark the
    example lossy.
    """
    if s is None:
        s = vocab.s_count
    spans = select_spans(match_spans(x, y), max_len=max_len, strict=strict)

    n = len(x)
    pi: list[int] = []
    dec_input: list[int] = []
    dec_output: list[int] = []
    last_tgt = -1
    k = 1
    lossy = False
    for span in spans:
        gap = span.start_tgt - last_tgt - 1
        if last_tgt != -1 and gap >= 1:
            if k > s:
                lossy = True
            else:
                pi.append(n + k - 1)
                k += 1
                ins_seq = list(y[last_tgt + 1 : span.start_tgt])
                if len(ins_seq) > MSK_PER_INS:
                    lossy = True
                ins_seq += [vocab.pad_id, vocab.pad_id]
                dec_output.extend(ins_seq[:MSK_PER_INS])
                dec_input.extend([vocab.msk_id] * MSK_PER_INS)
        pi.extend(range(span.start_src, span.start_src + span.length))
        dec_input.extend(x[span.start_src : span.start_src + span.length])
        dec_output.extend(x[span.start_src : span.start_src + span.length])
        last_tgt = span.end_tgt

    source = _as_source(x, vocab, s)
    validate_permutation(pi, n, s)
    return TrainingExample(
        source=source,
        pi=tuple(pi),
        dec_input=tuple(dec_input),
        dec_output=tuple(dec_output),
        lossy=lossy,
    )


def _as_source(x: Sequence[int], vocab: Vocab, s: int):
    from .vocab import SourceSentence

    ids = tuple(x) + tuple(vocab.ins_id(k) for k in range(1, s + 1))
    return SourceSentence(ids=ids, n=len(x))


def build_example_from_words(
    src_words: Sequence[str],
    tgt_words: Sequence[str],
    vocab: Vocab,
    max_len: int = 2,
    s: int | None = None,
    strict: bool = False,
) -> TrainingExample:
    """Convenience wrapper: wrap both sides with sentinels, then build."""
    x = wrap_tokens(src_words, vocab)
    y = wrap_tokens(tgt_words, vocab)
    return build_example(x.core, y.core, vocab, max_len=max_len, s=s, strict=strict)


def reconstruct_target(example: TrainingExample, vocab: Vocab) -> tuple[int, ...]:
    """Fill mask slots of ``dec_input`` from ``dec_output`` and drop padding.

    For a non-lossy example this recovers the target sentence exactly.
    """
    out: list[int] = []
    for tin, tout in zip(example.dec_input, example.dec_output):
        tok = tout if tin == vocab.msk_id else tin
        if tok != vocab.pad_id:
            out.append(tok)
    return tuple(out)


def felix_style_example(
    x: Sequence[int],
    y: Sequence[int],
    vocab: Vocab,
    s: int | None = None,
) -> TrainingExample:
    """Baseline aligner: per-token greedy leftmost matching, no span merging.

    Kept for ablation comparisons only; it yields valid permutations but
    tends to scatter repeated tokens instead of preserving long spans.
    """
    if s is None:
        s = vocab.s_count
    n = len(x)
    claimed = [False] * n
    pi: list[int] = []
    dec_input: list[int] = []
    dec_output: list[int] = []
    pending: list[int] = []
    k = 1
    lossy = False

    def flush_pending() -> None:
        nonlocal k, lossy
        if not pending:
            return
        if k > s or not pi:
            lossy = True
        else:
            pi.append(n + k - 1)
            k += 1
            seq = pending[:MSK_PER_INS]
            if len(pending) > MSK_PER_INS:
                lossy = True
            seq = seq + [vocab.pad_id, vocab.pad_id]
            dec_output.extend(seq[:MSK_PER_INS])
            dec_input.extend([vocab.msk_id] * MSK_PER_INS)
        pending.clear()

    for tok in y:
        pos = next(
            (i for i in range(n) if not claimed[i] and x[i] == tok), None
        )
        if pos is None:
            pending.append(tok)
            continue
        flush_pending()
        claimed[pos] = True
        pi.append(pos)
        dec_input.append(tok)
        dec_output.append(tok)
    flush_pending()

    validate_permutation(pi, n, s)
    return TrainingExample(
        source=_as_source(x, vocab, s),
        pi=tuple(pi),
        dec_input=tuple(dec_input),
        dec_output=tuple(dec_output),
        lossy=lossy,
    )
