"""Permutation scoring and beam search over a pointer score matrix.

The pointer matrix holds log-domain transition scores between positions of a
source sentence extended with insertion placeholders.  A permutation is read
off autoregressively: the row of the last visited position is masked at
already-visited columns (plus placeholder ordering rules) and normalized with
a softmax; a permutation's log-probability is the sum of its step terms.
Beam search finds high-scoring permutations from a single matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .vocab import validate_permutation


class DeadEnd(RuntimeError):
    """All positions masked; signals a malformed matrix or prefix."""


class SearchExhausted(RuntimeError):
    """Beam search finished no hypothesis within the step budget."""


@dataclass(frozen=True)
class PointerMatrix:
    """(n+s) x (n+s) matrix of log-domain pointer scores."""

    a: np.ndarray
    n: int
    s: int

    def __post_init__(self):
        size = self.n + self.s
        if self.a.shape != (size, size):
            raise ValueError(f"expected shape {(size, size)}, got {self.a.shape}")
        if not np.all(np.isfinite(self.a)):
            raise ValueError("pointer matrix entries must be finite")


@dataclass
class Hypothesis:
    """Partial permutation with accumulated log-probability."""

    pi: tuple[int, ...]
    logp: float
    done: bool = False


def allowed_positions(n: int, s: int, visited: Sequence[int]) -> np.ndarray:
    """Boolean mask of legal next positions after the given prefix.

    Visited positions are excluded; insertion placeholders are only reachable
    in order and never directly after another placeholder.
    """
    allowed = np.ones(n + s, dtype=bool)
    for idx in visited:
        allowed[idx] = False
    last = visited[-1]
    next_ins = n + sum(1 for idx in visited if idx >= n)
    for j in range(n, n + s):
        if j != next_ins or last >= n:
            allowed[j] = False
    return allowed


def right_position(n: int, visited: Sequence[int]) -> int:
    """Smallest unvisited core position after the last visited one.

    Clamped to the core sentence; falls back to the closing sentinel when
    every later core position has been visited.
    """
    last = visited[-1]
    seen = set(visited)
    for j in range(last + 1, n):
        if j not in seen:
            return j
    return n - 1


def step_distribution(
    a: PointerMatrix, prefix: Sequence[int], c: float = 0.0
) -> np.ndarray:
    """Distribution over next positions given a prefix.

    Softmax of the masked pointer row, blended with weight ``c`` toward a
    one-hot on the nearest unvisited position to the right (the confidence
    bias: ``c = 1`` forces the identity successor).
    """
    if not prefix:
        raise ValueError("prefix must be non-empty")
    if not 0.0 <= c <= 1.0:
        raise ValueError("confidence bias must lie in [0, 1]")
    allowed = allowed_positions(a.n, a.s, prefix)
    if not allowed.any():
        raise DeadEnd(f"no legal successor for prefix {tuple(prefix)}")
    row = a.a[prefix[-1]]
    scores = np.where(allowed, row, -np.inf)
    scores = scores - scores.max()
    p = np.exp(scores)
    p /= p.sum()
    if c > 0.0:
        p = (1.0 - c) * p
        p[right_position(a.n, prefix)] += c
    return p


def score_permutation(a: PointerMatrix, pi: Sequence[int], c: float = 0.0) -> float:
    """Log-probability of a full permutation (sum of step log-terms)."""
    validate_permutation(pi, a.n, a.s)
    total = 0.0
    for i in range(1, len(pi)):
        p = step_distribution(a, pi[:i], c=c)[pi[i]]
        if p <= 0.0:
            return -np.inf
        total += float(np.log(p))
    return total


@dataclass(frozen=True)
class BeamResult:
    """Finished hypothesis: permutation, raw log-probability, ranking score."""

    pi: tuple[int, ...]
    logp: float
    score: float


def beam_search(
    a: PointerMatrix,
    width: int = 4,
    c: float = 0.0,
    length_norm: bool = True,
    stats: dict | None = None,
) -> list[BeamResult]:
    """Top-``width`` permutations of the pointer matrix, best first.

    A hypothesis finishes once it points at the closing sentinel.  Live
    hypotheses are pruned by accumulated log-probability; the returned
    ranking divides by hypothesis length when ``length_norm`` is set, which
    reorders results but never changes the reachable set.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    eos = a.n - 1
    live = [Hypothesis(pi=(0,), logp=0.0)]
    finished: list[Hypothesis] = []
    step_evals = 0

    for _ in range(a.n + a.s):
        if not live:
            break
        expansions: list[Hypothesis] = []
        for hyp in live:
            dist = step_distribution(a, hyp.pi, c=c)
            step_evals += 1
            for idx in np.flatnonzero(dist > 0.0):
                idx = int(idx)
                cand = Hypothesis(
                    pi=hyp.pi + (idx,),
                    logp=hyp.logp + float(np.log(dist[idx])),
                    done=idx == eos,
                )
                (finished if cand.done else expansions).append(cand)
        expansions.sort(key=lambda h: (-h.logp, h.pi))
        live = expansions[:width]

    if stats is not None:
        stats["step_evals"] = step_evals
    if not finished:
        raise SearchExhausted("no hypothesis reached the closing sentinel")

    def key(h: Hypothesis) -> float:
        return h.logp / len(h.pi) if length_norm else h.logp

    finished.sort(key=lambda h: (-key(h), h.pi))
    return [BeamResult(pi=h.pi, logp=h.logp, score=key(h)) for h in finished[:width]]


def enumerate_valid_permutations(n: int, s: int) -> list[tuple[int, ...]]:
    """Every permutation satisfying the structural contract (reference only).

    Generated combinatorially, independent of any scoring: depth-first over
    index sequences that start at 0, end at the closing sentinel, repeat
    nothing, and use insertion positions in order with core separation.
    """
    results: list[tuple[int, ...]] = []
    eos = n - 1

    def extend(seq: list[int], used: set[int]) -> None:
        last = seq[-1]
        if last == eos:
            results.append(tuple(seq))
            return
        candidates = [j for j in range(1, n) if j not in used]
        next_ins = n + sum(1 for i in seq if i >= n)
        if next_ins < n + s and last < n:
            candidates.append(next_ins)
        for j in candidates:
            seq.append(j)
            used.add(j)
            extend(seq, used)
            used.discard(j)
            seq.pop()

    extend([0], {0})
    return results


def sinkhorn(a: PointerMatrix, steps: int) -> PointerMatrix:
    """Alternating log-domain column/row normalization of the score matrix.

    Each step subtracts the column-wise then the row-wise log-sum-exp; as the
    step count grows, the exponentiated matrix approaches doubly stochastic.
    Zero steps return the input unchanged.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    m = a.a
    for _ in range(steps):
        m = m - logsumexp(m, axis=0, keepdims=True)
        m = m - logsumexp(m, axis=1, keepdims=True)
    return PointerMatrix(a=m, n=a.n, s=a.s)
