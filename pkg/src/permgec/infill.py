"""Iterative infill decoding: unrolled training loss and mask-slot refinement.

The decoder only ever touches positions that started as ``<msk>``.  Training
runs the decoder twice: the second pass consumes tokens sampled from the
first, which exposes the model to its own predictions (mode ``sundae``); with
``lambda0 = 1`` the second pass vanishes and training reduces to a single
conditionally-independent pass (mode ``vanilla``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .vocab import Vocab, surface

ScoreFn = Callable[[Sequence[int]], np.ndarray]


@dataclass(frozen=True)
class SundaeConfig:
    """Decoder schedule: unrolled-loss weight, refinement steps, and mode."""

    lambda0: float = 0.25
    steps: int = 2
    mode: str = "sundae"
    sample_temperature: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lambda0 <= 1.0:
            raise ValueError("lambda0 must lie in [0, 1]")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.mode not in ("vanilla", "sundae"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "vanilla" and (self.steps != 1 or self.lambda0 != 1.0):
            raise ValueError("vanilla mode requires steps=1 and lambda0=1")


@dataclass
class DecodeState:
    """Token sequence plus the frozen set of refinable positions."""

    tokens: list[int]
    msk_positions: tuple[int, ...]
    step: int = 0

    def __post_init__(self):
        for p in self.msk_positions:
            if not 0 <= p < len(self.tokens):
                raise ValueError(f"mask position {p} out of range")


def masked_cross_entropy(
    probs: np.ndarray, target: Sequence[int], msk_positions: Sequence[int]
) -> float:
    """Cross-entropy of the target tokens, summed over mask slots only."""
    total = 0.0
    for pos in msk_positions:
        total -= float(np.log(max(probs[pos, target[pos]], 1e-300)))
    return total


def unrolled_loss(
    probs_pass1: np.ndarray,
    probs_pass2: np.ndarray | None,
    target: Sequence[int],
    msk_positions: Sequence[int],
    lambda0: float,
) -> tuple[float, float, float]:
    """Two-pass denoising loss and the per-pass gradient weights.

    Returns ``(loss, w1, w2)`` with
    ``loss = lambda0 * CE(pass1) + (1 - lambda0) * CE(pass2)``, both terms
    summed over mask slots.  ``lambda0 = 1`` reduces to the single-pass loss
    and ``probs_pass2`` may be omitted.  No gradient flows through the
    sampling that produced the second pass's input.
    """
    if not msk_positions:
        return 0.0, lambda0, 1.0 - lambda0
    ce1 = masked_cross_entropy(probs_pass1, target, msk_positions)
    if lambda0 == 1.0:
        return ce1, 1.0, 0.0
    if probs_pass2 is None:
        raise ValueError("second pass required when lambda0 < 1")
    ce2 = masked_cross_entropy(probs_pass2, target, msk_positions)
    return lambda0 * ce1 + (1.0 - lambda0) * ce2, lambda0, 1.0 - lambda0


def sample_tokens(
    probs: np.ndarray,
    msk_positions: Sequence[int],
    rng: np.random.Generator,
    temperature: float = 1.0,
) -> list[int]:
    """Draw one token per mask slot by inverse-CDF sampling."""
    out = []
    for pos in msk_positions:
        p = probs[pos].astype(float)
        if temperature != 1.0:
            p = np.power(p, 1.0 / temperature)
        p = p / p.sum()
        u = rng.random()
        out.append(int(np.searchsorted(np.cumsum(p), u)))
    return out


@dataclass
class RefineResult:
    tokens: tuple[int, ...]
    calls: int = 0
    step_probs: np.ndarray | None = field(default=None, repr=False)


def refine(state: DecodeState, score_fn: ScoreFn, steps: int) -> RefineResult:
    """Iteratively replace mask-slot tokens with the scorer's argmax.

    Each step rescores the full sequence from the previous step and rewrites
    only the frozen mask positions.  With no mask positions the input is
    returned untouched and the scorer is never called.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    tokens = list(state.tokens)
    if not state.msk_positions:
        return RefineResult(tokens=tuple(tokens), calls=0)
    calls = 0
    probs = None
    for _ in range(steps):
        probs = np.asarray(score_fn(tokens))
        calls += 1
        for pos in state.msk_positions:
            tokens[pos] = int(np.argmax(probs[pos]))
        state.step += 1
    return RefineResult(tokens=tuple(tokens), calls=calls, step_probs=probs)


def finalize(tokens: Sequence[int], vocab: Vocab) -> str:
    """Render decoded ids as text, dropping padding, masks, and sentinels."""
    return surface(tokens, vocab)
