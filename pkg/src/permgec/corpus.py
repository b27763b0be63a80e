"""Parallel-corpus loading, synthetic error injection, and stage planning."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

STAGE_TAGS = ("I", "II", "III")
MAX_SENTENCE_TOKENS = 70


class CorpusRejected(ValueError):
    """Too many malformed lines to trust the file."""


class PlanError(ValueError):
    """The staged training plan cannot be assembled."""


@dataclass(frozen=True)
class ParallelCorpus:
    """(source, target) sentence pairs belonging to one training stage."""

    pairs: tuple[tuple[str, str], ...]
    stage_tag: str

    def __post_init__(self):
        if self.stage_tag not in STAGE_TAGS:
            raise ValueError(f"stage tag must be one of {STAGE_TAGS}")
        for src, tgt in self.pairs:
            if not src.strip() or not tgt.strip():
                raise ValueError("empty corpus side")

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class NoiseConfig:
    """Per-token corruption probabilities and replacement candidates."""

    p_drop: float = 0.02
    p_dup: float = 0.06
    p_swap: float = 0.06
    p_replace: float = 0.30
    confusion_sets: dict[str, tuple[str, ...]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        probs = (self.p_drop, self.p_dup, self.p_swap, self.p_replace)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("corruption probabilities must lie in [0, 1]")
        if sum(probs) > 1.0:
            raise ValueError("per-token corruption probabilities must sum to <= 1")


def inject_errors(
    clean: Sequence[str], cfg: NoiseConfig, rng: np.random.Generator | None = None
) -> list[str]:
    """Corrupt a token list with independent per-token events.

    Each token draws once: it may be dropped, duplicated, swapped with the
    following token (consuming both), or replaced from its confusion set.
    Tokens without a confusion set ignore replacement draws.  Deterministic
    for a fixed seed; may return the input unchanged.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    t_drop = cfg.p_drop
    t_dup = t_drop + cfg.p_dup
    t_swap = t_dup + cfg.p_swap
    t_replace = t_swap + cfg.p_replace

    out: list[str] = []
    i = 0
    while i < len(clean):
        tok = clean[i]
        u = rng.random()
        if u < t_drop:
            i += 1
        elif u < t_dup:
            out += [tok, tok]
            i += 1
        elif u < t_swap and i + 1 < len(clean):
            out += [clean[i + 1], tok]
            i += 2
        elif t_swap <= u < t_replace and tok in cfg.confusion_sets:
            cands = cfg.confusion_sets[tok]
            out.append(cands[int(rng.integers(len(cands)))])
            i += 1
        else:
            out.append(tok)
            i += 1
    return out


@dataclass
class LoadReport:
    corpus: ParallelCorpus
    rejects: list[tuple[int, str]]
    dropped_long: int


def load_tsv(
    path: str | Path,
    stage_tag: str = "II",
    max_tokens: int = MAX_SENTENCE_TOKENS,
    reject_threshold: float = 0.10,
) -> LoadReport:
    """Read one tab-separated (source, target) pair per UTF-8 line.

    Malformed lines (wrong field count, empty side) go to the rejects report;
    more than ``reject_threshold`` of them fails the whole file.  Pairs with
    a side longer than ``max_tokens`` are dropped and counted.  CR/LF endings
    are normalized.
    """
    text = Path(path).read_text(encoding="utf-8")
    pairs: list[tuple[str, str]] = []
    rejects: list[tuple[int, str]] = []
    dropped_long = 0
    lines = [ln for ln in text.splitlines()]
    total = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        total += 1
        fields = line.split("\t")
        if len(fields) != 2:
            rejects.append((lineno, f"expected 2 tab-separated fields, got {len(fields)}"))
            continue
        src, tgt = fields[0].strip(), fields[1].strip()
        if not src or not tgt:
            rejects.append((lineno, "empty side"))
            continue
        if len(src.split()) > max_tokens or len(tgt.split()) > max_tokens:
            dropped_long += 1
            continue
        pairs.append((src, tgt))
    if total and len(rejects) > reject_threshold * total:
        raise CorpusRejected(
            f"{len(rejects)}/{total} malformed lines in {path} (threshold {reject_threshold:.0%})"
        )
    return LoadReport(
        corpus=ParallelCorpus(pairs=tuple(pairs), stage_tag=stage_tag),
        rejects=rejects,
        dropped_long=dropped_long,
    )


@dataclass(frozen=True)
class StagePhase:
    """One phase of the coarse-to-fine schedule."""

    tag: str
    pairs: tuple[tuple[str, str], ...]
    epochs: int
    lr: float
    warmup_steps: int


@dataclass(frozen=True)
class StageSchedule:
    epochs_stage1: int = 1
    epochs_stage2: int = 3
    epochs_stage3: int = 3
    lr_stage12: float = 1e-3
    lr_stage3: float = 3e-4
    warmup_steps: int = 200


def make_stage_plan(
    corpora: Sequence[ParallelCorpus], schedule: StageSchedule | None = None
) -> list[StagePhase]:
    """Order corpora into the coarse-to-fine plan.

    Stage II data is mandatory; stages I and III are optional (dropping
    stage I reproduces the two-phase schedule studied as an ablation).
    The later stage runs at a lower constant rate with no warmup.
    """
    if schedule is None:
        schedule = StageSchedule()
    by_tag: dict[str, list[tuple[str, str]]] = {t: [] for t in STAGE_TAGS}
    for corpus in corpora:
        by_tag[corpus.stage_tag].extend(corpus.pairs)
    if not by_tag["II"]:
        raise PlanError("stage II data is mandatory")

    plan: list[StagePhase] = []
    if by_tag["I"]:
        plan.append(
            StagePhase("I", tuple(by_tag["I"]), schedule.epochs_stage1,
                       schedule.lr_stage12, schedule.warmup_steps)
        )
    plan.append(
        StagePhase("II", tuple(by_tag["II"]), schedule.epochs_stage2,
                   schedule.lr_stage12, schedule.warmup_steps)
    )
    if by_tag["III"]:
        plan.append(
            StagePhase("III", tuple(by_tag["III"]), schedule.epochs_stage3,
                       schedule.lr_stage3, 0)
        )
    return plan
