"""End-to-end correction: encode once, search permutations, infill masks.

The encoder runs exactly once per sentence; beam search works off the single
pointer matrix, and the decoder only runs when the chosen permutation
contains insertion placeholders.  All forward-pass counts are tracked so
decoding cost can be reported as operation counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .infill import DecodeState, finalize, refine
from .metrics import Candidate, select_hypothesis
from .model import Model
from .search import beam_search
from .vocab import (
    Vocab,
    apply_permutation,
    dec_source_positions,
    expand_insertions,
    tokenize,
)


@dataclass(frozen=True)
class CorrectOptions:
    beam_width: int = 4
    confidence_bias: float = 0.2
    length_norm: bool = True
    refine_steps: int = 2
    topk: int = 1
    sinkhorn_steps: int = 0
    select_mode: str = "rescore"
    lambda_resc: float = 1.0


@dataclass
class DecodedCandidate:
    pi: tuple[int, ...]
    perm_score: float
    perm_logp: float
    tokens: tuple[int, ...]
    text: str
    dec_logprob: float
    decoder_calls: int


@dataclass
class SentenceCorrection:
    text: str
    chosen: int
    candidates: list[DecodedCandidate]
    encoder_passes: int = 1
    decoder_passes: int = 0
    beam_step_evals: int = 0

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(self.text.split())


def correct_sentence(
    model: Model,
    vocab: Vocab,
    text: str,
    opts: CorrectOptions | None = None,
    reference: Sequence[str] | None = None,
) -> SentenceCorrection:
    """Correct one sentence, returning ranked candidates and cost counters.

    ``reference`` is only consulted by the oracle selection mode.
    """
    if opts is None:
        opts = CorrectOptions()
    src = tokenize(text, vocab)
    h = model.encode(src.ids)
    pmat = model.pointer(h, src.n, src.s, sinkhorn_steps=opts.sinkhorn_steps)
    stats: dict = {}
    beam = beam_search(
        pmat,
        width=max(opts.beam_width, opts.topk),
        c=opts.confidence_bias,
        length_norm=opts.length_norm,
        stats=stats,
    )

    decoder_passes = 0
    candidates: list[DecodedCandidate] = []
    for hyp in beam[: opts.topk]:
        permuted = apply_permutation(src, hyp.pi)
        expanded, msk = expand_insertions(permuted, vocab)
        src_pos = dec_source_positions(hyp.pi, src.n)
        calls = 0
        dec_logprob = 0.0
        if msk:
            result = refine(
                DecodeState(tokens=list(expanded), msk_positions=msk),
                lambda ids, sp=src_pos: model.decode(ids, sp, src.ids, h),
                steps=opts.refine_steps,
            )
            calls = result.calls
            decoder_passes += result.calls
            tokens = result.tokens
            if result.step_probs is not None:
                for pos in msk:
                    dec_logprob += float(
                        np.log(max(result.step_probs[pos, tokens[pos]], 1e-300))
                    )
        else:
            tokens = expanded
        candidates.append(
            DecodedCandidate(
                pi=hyp.pi,
                perm_score=hyp.score,
                perm_logp=hyp.logp,
                tokens=tokens,
                text=finalize(tokens, vocab),
                dec_logprob=dec_logprob,
                decoder_calls=calls,
            )
        )

    chosen = select_hypothesis(
        [Candidate(c.perm_score, c.dec_logprob, tuple(c.text.split())) for c in candidates],
        mode=opts.select_mode,
        lambda_resc=opts.lambda_resc,
        source=tuple(text.strip().lower().split()),
        reference=tuple(reference) if reference is not None else None,
    )
    return SentenceCorrection(
        text=candidates[chosen].text,
        chosen=chosen,
        candidates=candidates,
        encoder_passes=1,
        decoder_passes=decoder_passes,
        beam_step_evals=stats.get("step_evals", 0),
    )


@dataclass
class BenchRow:
    """Per-sentence decoding cost, with a simulated one-token-per-pass
    autoregressive comparator on the same output length."""

    core_length: int
    bucket: int
    encoder_passes: int
    decoder_passes: int
    beam_step_evals: int
    ar_passes: int


def bench_forward_counts(
    sentences: Sequence[str],
    model: Model,
    vocab: Vocab,
    opts: CorrectOptions | None = None,
    bucket_size: int = 10,
) -> list[BenchRow]:
    """Operation counts per sentence.

    The comparator charges one decoder pass per output token including the
    stop sentinel, which is what a greedy left-to-right decoder would need
    for the same output.
    """
    rows = []
    for text in sentences:
        out = correct_sentence(model, vocab, text, opts)
        core_len = len(text.strip().split())
        rows.append(
            BenchRow(
                core_length=core_len,
                bucket=(core_len // bucket_size) * bucket_size,
                encoder_passes=out.encoder_passes,
                decoder_passes=out.decoder_passes,
                beam_step_evals=out.beam_step_evals,
                ar_passes=len(out.words) + 1,
            )
        )
    return rows


def bucket_means(rows: Sequence[BenchRow]) -> dict[int, dict[str, float]]:
    """Mean counters per length bucket."""
    grouped: dict[int, list[BenchRow]] = {}
    for row in rows:
        grouped.setdefault(row.bucket, []).append(row)
    out = {}
    for bucket in sorted(grouped):
        group = grouped[bucket]
        out[bucket] = {
            "count": float(len(group)),
            "encoder_passes": sum(r.encoder_passes for r in group) / len(group),
            "decoder_passes": sum(r.decoder_passes for r in group) / len(group),
            "beam_step_evals": sum(r.beam_step_evals for r in group) / len(group),
            "ar_passes": sum(r.ar_passes for r in group) / len(group),
        }
    return out
