"""Staged training loop over oracle-built examples."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .align import build_example_from_words
from .corpus import StagePhase
from .infill import SundaeConfig
from .model import Model, total_loss
from .optim import AdamW
from .vocab import TrainingExample, Vocab


@dataclass(frozen=True)
class TrainSettings:
    batch_size: int = 16
    lambda_per: float = 5.0
    sundae: SundaeConfig = field(default_factory=SundaeConfig)
    sinkhorn_steps: int = 0
    rank_window: int = 2
    rank_window_strict: bool = False
    drop_lossy: bool = False
    seed: int = 0


@dataclass
class StageCurve:
    tag: str
    losses: list[float] = field(default_factory=list)
    seconds: float = 0.0


@dataclass
class TrainResult:
    model: Model
    optimizer: AdamW
    curves: list[StageCurve]


def build_examples(
    pairs: Sequence[tuple[str, str]],
    vocab: Vocab,
    settings: TrainSettings,
) -> list[TrainingExample]:
    """Oracle supervision for every usable pair.

    Pairs whose sides are empty after lowercasing are skipped; lossy
    examples are kept unless the settings say otherwise.
    """
    out = []
    for src, tgt in pairs:
        src_words = src.lower().split()
        tgt_words = tgt.lower().split()
        if not src_words or not tgt_words:
            continue
        ex = build_example_from_words(
            src_words, tgt_words, vocab,
            max_len=settings.rank_window, strict=settings.rank_window_strict,
        )
        if ex.lossy and settings.drop_lossy:
            continue
        out.append(ex)
    return out


def train_stages(
    model: Model,
    vocab: Vocab,
    plan: Sequence[StagePhase],
    settings: TrainSettings | None = None,
    optimizer: AdamW | None = None,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Run the staged schedule in place, returning per-stage loss curves.

    Deterministic for fixed seeds: batch order, second-pass sampling, and
    dropout all draw from generators derived from the settings seed.
    """
    if settings is None:
        settings = TrainSettings()
    if optimizer is None:
        optimizer = AdamW(model.params, weight_decay=0.01)
    curves: list[StageCurve] = []

    for stage_idx, phase in enumerate(plan):
        examples = build_examples(phase.pairs, vocab, settings)
        curve = StageCurve(tag=phase.tag)
        start = time.time()
        sample_rng = np.random.default_rng([settings.seed, 7, stage_idx])
        dropout_rng = np.random.default_rng([settings.seed, 11, stage_idx])
        step = 0
        for epoch in range(phase.epochs):
            order_rng = np.random.default_rng([settings.seed, 13, stage_idx, epoch])
            order = order_rng.permutation(len(examples))
            for lo in range(0, len(order), settings.batch_size):
                batch = [examples[i] for i in order[lo : lo + settings.batch_size]]
                step += 1
                if phase.warmup_steps:
                    optimizer.lr = phase.lr * min(1.0, step / phase.warmup_steps)
                else:
                    optimizer.lr = phase.lr
                loss, grads, _ = total_loss(
                    model.params, model.cfg, batch, vocab,
                    lambda_per=settings.lambda_per,
                    sundae=settings.sundae,
                    rng=sample_rng,
                    training=True,
                    dropout_rng=dropout_rng,
                    sinkhorn_steps=settings.sinkhorn_steps,
                )
                optimizer.step(model.params, grads)
                curve.losses.append(loss)
            if log:
                recent = curve.losses[-50:]
                log(
                    f"stage {phase.tag} epoch {epoch + 1}/{phase.epochs}: "
                    f"loss {sum(recent) / len(recent):.4f} ({len(examples)} examples)"
                )
        curve.seconds = time.time() - start
        curves.append(curve)
    return TrainResult(model=model, optimizer=optimizer, curves=curves)


def write_curves(path, curves: Sequence[StageCurve]) -> None:
    """Loss curves as plain text: stage, step, loss."""
    with open(path, "w", encoding="utf-8") as f:
        for curve in curves:
            for step, loss in enumerate(curve.losses):
                f.write(f"stage={curve.tag} step={step} loss={loss:.6f}\n")
