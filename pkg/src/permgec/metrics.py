"""Edit extraction, F-beta scoring, n-gram quality, hypothesis selection.

The edit scorer is a deliberately simplified stand-in for the ecosystem GEC
scorers: token-level alignment with equal costs, adjacent operations merged
into spans, exact edit matching.  Reports are tagged ``scorer=simplified``
and are not comparable with numbers from the official tools.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

Edit = tuple[int, int, tuple[str, ...]]  # src[start:end] -> replacement


def extract_edits(src: Sequence[str], hyp: Sequence[str]) -> tuple[Edit, ...]:
    """Token edits turning ``src`` into ``hyp``.

    Unit-cost alignment (substitution preferred over insert+delete, ties
    broken toward the leftmost placement), with maximal runs of changed
    tokens merged into single span edits.
    """
    m, n = len(src), len(hyp)
    cost = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        cost[i][0] = i
    for j in range(1, n + 1):
        cost[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            sub = cost[i - 1][j - 1] + (src[i - 1] != hyp[j - 1])
            cost[i][j] = min(sub, cost[i - 1][j] + 1, cost[i][j - 1] + 1)

    # backtrace, diagonal first so substitutions beat insert+delete pairs
    ops: list[tuple[str, int, int]] = []
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i][j] == cost[i - 1][j - 1] + (src[i - 1] != hyp[j - 1]):
            ops.append(("match" if src[i - 1] == hyp[j - 1] else "sub", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and cost[i][j] == cost[i - 1][j] + 1:
            ops.append(("del", i - 1, j))
            i -= 1
        else:
            ops.append(("ins", i, j - 1))
            j -= 1
    ops.reverse()

    edits: list[Edit] = []
    run_start = run_end = None
    run_repl: list[str] = []
    for op, si, hj in ops:
        if op == "match":
            if run_start is not None:
                edits.append((run_start, run_end, tuple(run_repl)))
                run_start = run_end = None
                run_repl = []
            continue
        s_from = si
        s_to = si + 1 if op in ("sub", "del") else si
        if run_start is None:
            run_start, run_end = s_from, s_to
        else:
            run_end = max(run_end, s_to)
        if op in ("sub", "ins"):
            run_repl.append(hyp[hj])
    if run_start is not None:
        edits.append((run_start, run_end, tuple(run_repl)))
    return tuple(edits)


def apply_edits(src: Sequence[str], edits: Sequence[Edit]) -> list[str]:
    """Splice replacements into the source (edits sorted, non-overlapping)."""
    out = list(src)
    for start, end, repl in sorted(edits, reverse=True):
        out[start:end] = list(repl)
    return out


@dataclass(frozen=True)
class ScoreReport:
    precision: float
    recall: float
    f_beta: float
    tp: int
    fp: int
    fn: int
    beta: float = 0.5
    scorer: str = "simplified"


def f_beta_score(
    hyp_edits: Sequence[Edit], gold_edits: Sequence[Edit], beta: float = 0.5
) -> ScoreReport:
    """Edit-level F-beta.  Empty denominators default to perfect precision
    or recall (the usual no-proposals / no-gold conventions)."""
    hyp_set, gold_set = set(hyp_edits), set(gold_edits)
    tp = len(hyp_set & gold_set)
    fp = len(hyp_set - gold_set)
    fn = len(gold_set - hyp_set)
    p = tp / (tp + fp) if (tp + fp) else 1.0
    r = tp / (tp + fn) if (tp + fn) else 1.0
    b2 = beta * beta
    f = (1 + b2) * p * r / (b2 * p + r) if (b2 * p + r) > 0 else 0.0
    return ScoreReport(precision=p, recall=r, f_beta=f, tp=tp, fp=fp, fn=fn, beta=beta)


def aggregate_score(
    pairs: Sequence[tuple[Sequence[Edit], Sequence[Edit]]], beta: float = 0.5
) -> ScoreReport:
    """Corpus-level report from per-sentence (hypothesis, gold) edit sets."""
    tp = fp = fn = 0
    for hyp_edits, gold_edits in pairs:
        hyp_set, gold_set = set(hyp_edits), set(gold_edits)
        tp += len(hyp_set & gold_set)
        fp += len(hyp_set - gold_set)
        fn += len(gold_set - hyp_set)
    p = tp / (tp + fp) if (tp + fp) else 1.0
    r = tp / (tp + fn) if (tp + fn) else 1.0
    b2 = beta * beta
    f = (1 + b2) * p * r / (b2 * p + r) if (b2 * p + r) > 0 else 0.0
    return ScoreReport(precision=p, recall=r, f_beta=f, tp=tp, fp=fp, fn=fn, beta=beta)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def gleu(
    hyp: Sequence[str],
    src: Sequence[str],
    refs: Sequence[Sequence[str]],
    max_n: int = 4,
) -> float:
    """N-gram correction quality in [0, 1].

    Per order n: credit hypothesis n-grams found in a reference, penalize
    those shared with the source but absent from every reference; clip at
    zero, take the geometric mean over orders, and apply the usual brevity
    penalty against the closest reference length.
    """
    if not refs:
        raise ValueError("at least one reference required")
    precisions = []
    for n in range(1, max_n + 1):
        h = _ngrams(hyp, n)
        if not h:
            break
        s = _ngrams(src, n)
        r: Counter = Counter()
        for ref in refs:
            for g, c in _ngrams(ref, n).items():
                r[g] = max(r[g], c)
        match = sum(min(c, r[g]) for g, c in h.items())
        penalty = sum(min(c, s[g]) for g, c in h.items() if r[g] == 0)
        precisions.append(max(0.0, (match - penalty)) / sum(h.values()))
    if not precisions or any(p == 0.0 for p in precisions):
        return 0.0
    geo = math.exp(sum(math.log(p) for p in precisions) / len(precisions))
    ref_len = min((len(r) for r in refs), key=lambda L: (abs(L - len(hyp)), L))
    bp = 1.0 if len(hyp) >= ref_len else math.exp(1.0 - ref_len / max(len(hyp), 1))
    return bp * geo


@dataclass(frozen=True)
class Candidate:
    """One beam hypothesis after decoding."""

    perm_score: float
    dec_logprob: float
    words: tuple[str, ...]


def select_hypothesis(
    candidates: Sequence[Candidate],
    mode: str = "rescore",
    lambda_resc: float = 1.0,
    source: Sequence[str] | None = None,
    reference: Sequence[str] | None = None,
) -> int:
    """Index of the winning candidate.

    ``rescore`` blends the permutation score with the decoder log-probability
    (weight 1 reproduces the pure beam ranking exactly); ``oracle_gleu``
    picks the candidate with the best n-gram score against the reference.
    Ties go to the earlier candidate.
    """
    if not candidates:
        raise ValueError("no candidates")
    if mode == "rescore":
        if not 0.0 <= lambda_resc <= 1.0:
            raise ValueError("lambda_resc must lie in [0, 1]")
        scores = [
            lambda_resc * c.perm_score + (1.0 - lambda_resc) * c.dec_logprob
            for c in candidates
        ]
    elif mode == "oracle_gleu":
        if source is None or reference is None:
            raise ValueError("oracle mode needs source and reference")
        scores = [gleu(c.words, source, [reference]) for c in candidates]
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    best = 0
    for i, sc in enumerate(scores):
        if sc > scores[best]:
            best = i
    return best
