"""Deterministic toy language for end-to-end training and evaluation.

A small template grammar with hard agreement rules: copulas and verb forms
are fixed by the subject and the clause-final time word, and articles by the
noun's number, so most corruptions have a unique correction.  Error
injection reuses the generic corruption machinery with confusion sets built
from the grammar tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import NoiseConfig, ParallelCorpus, inject_errors
from .vocab import Vocab

PRONOUNS = {
    # pronoun: (present copula, past copula, verb slot)
    "i": ("am", "was", "base"),
    "you": ("are", "were", "base"),
    "we": ("are", "were", "base"),
    "they": ("are", "were", "base"),
    "he": ("is", "was", "3sg"),
    "she": ("is", "was", "3sg"),
}

VERBS = {
    # lemma: (base, 3sg, past)
    "like": ("like", "likes", "liked"),
    "watch": ("watch", "watches", "watched"),
    "play": ("play", "plays", "played"),
    "enjoy": ("enjoy", "enjoys", "enjoyed"),
    "need": ("need", "needs", "needed"),
}

NOUNS = {
    # lemma: (singular, plural)
    "film": ("film", "films"),
    "song": ("song", "songs"),
    "game": ("game", "games"),
    "book": ("book", "books"),
    "story": ("story", "stories"),
}

ADJECTIVES = ("busy", "happy", "tired", "young", "old", "kind", "calm", "glad")
# skewed so a dropped word has a clear most-likely reconstruction
ADJECTIVE_WEIGHTS = (0.30, 0.20, 0.14, 0.10, 0.08, 0.07, 0.06, 0.05)
NOUN_WEIGHTS = (0.32, 0.24, 0.18, 0.14, 0.12)
PRESENT_TIME = ("today", "now")
PRESENT_TIME_WEIGHTS = (0.8, 0.2)
PAST_TIME = "yesterday"
DEGREE = "very"
CONJ = "and"

COPULAS = ("am", "is", "are", "was", "were")
ERROR_COPULA = "be"


def vocabulary_words() -> list[str]:
    """Every surface form the grammar or its corruptions can produce."""
    words: list[str] = []
    words += list(PRONOUNS)
    words += list(COPULAS) + [ERROR_COPULA]
    for forms in VERBS.values():
        words += list(forms)
    for forms in NOUNS.values():
        words += list(forms)
    words += list(ADJECTIVES)
    words += list(PRESENT_TIME) + [PAST_TIME, DEGREE, CONJ, "the", "a"]
    return words


def build_vocab(s_count: int = 8) -> Vocab:
    return Vocab.build(vocabulary_words(), s_count=s_count)


def confusion_sets() -> dict[str, tuple[str, ...]]:
    """Replacement candidates: agreement-breaking but always correctable."""
    sets: dict[str, tuple[str, ...]] = {}
    for cop in COPULAS:
        sets[cop] = tuple(c for c in COPULAS if c != cop) + (ERROR_COPULA,)
    for forms in VERBS.values():
        for form in forms:
            sets[form] = tuple(f for f in forms if f != form)
    sets["the"] = ("a",)
    sets["a"] = ("the",)
    return sets


def synthetic_noise(seed: int = 0) -> NoiseConfig:
    """Aggressive corruption for the pretraining stage."""
    return NoiseConfig(
        p_drop=0.02, p_dup=0.06, p_swap=0.06, p_replace=0.30,
        confusion_sets=confusion_sets(), seed=seed,
    )


def domain_noise(seed: int = 0) -> NoiseConfig:
    """Lighter corruption for the in-domain stages."""
    return NoiseConfig(
        p_drop=0.006, p_dup=0.04, p_swap=0.04, p_replace=0.22,
        confusion_sets=confusion_sets(), seed=seed,
    )


def _weighted(rng: np.random.Generator, items, weights):
    return items[int(rng.choice(len(items), p=np.asarray(weights) / sum(weights)))]


def sample_clause(rng: np.random.Generator) -> list[str]:
    pron = list(PRONOUNS)[int(rng.integers(len(PRONOUNS)))]
    present_cop, past_cop, verb_slot = PRONOUNS[pron]
    past = rng.random() < 0.5
    time = PAST_TIME if past else _weighted(rng, PRESENT_TIME, PRESENT_TIME_WEIGHTS)
    if rng.random() < 0.5:
        cop = past_cop if past else present_cop
        words = [pron, cop]
        if rng.random() < 0.3:
            words.append(DEGREE)
        words.append(_weighted(rng, ADJECTIVES, ADJECTIVE_WEIGHTS))
    else:
        base, third, past_form = VERBS[list(VERBS)[int(rng.integers(len(VERBS)))]]
        if past:
            verb = past_form
        else:
            verb = third if verb_slot == "3sg" else base
        singular, plural = NOUNS[_weighted(rng, list(NOUNS), NOUN_WEIGHTS)]
        if rng.random() < 0.5:
            words = [pron, verb, "a", singular]
        else:
            words = [pron, verb, "the", plural]
    words.append(time)
    return words


def sample_sentence(rng: np.random.Generator, compound_prob: float = 0.15) -> list[str]:
    words = sample_clause(rng)
    if rng.random() < compound_prob:
        words += [CONJ] + sample_clause(rng)
    return words


@dataclass(frozen=True)
class ToyDataConfig:
    synthetic_pairs: int = 20000
    domain_pairs: int = 2000
    dev_size: int = 500
    test_size: int = 500
    errorful_fraction: float = 0.65
    compound_prob: float = 0.15
    seed: int = 0


@dataclass
class ToyData:
    stage1: ParallelCorpus
    stage2: ParallelCorpus
    stage3: ParallelCorpus
    dev_pairs: tuple[tuple[str, str], ...]
    test_pairs: tuple[tuple[str, str], ...]
    vocab: Vocab = field(repr=False)


def _errorful_pair(rng, noise, compound_prob, force_error: bool) -> tuple[str, str]:
    clean = sample_sentence(rng, compound_prob)
    corrupted = inject_errors(clean, noise, rng)
    if force_error:
        for _ in range(4):
            if corrupted != clean and corrupted:
                break
            corrupted = inject_errors(clean, noise, rng)
    if not corrupted:
        corrupted = clean
    return " ".join(corrupted), " ".join(clean)


def _domain_pairs(rng, cfg: ToyDataConfig, count: int) -> tuple[tuple[str, str], ...]:
    noise = domain_noise(cfg.seed)
    pairs = []
    for _ in range(count):
        if rng.random() < cfg.errorful_fraction:
            pairs.append(_errorful_pair(rng, noise, cfg.compound_prob, force_error=True))
        else:
            clean = " ".join(sample_sentence(rng, cfg.compound_prob))
            pairs.append((clean, clean))
    return tuple(pairs)


def make_toy_data(cfg: ToyDataConfig | None = None) -> ToyData:
    """Generate the staged corpora plus held-out splits, fully seeded.

    The pretraining stage is all-errorful synthetic text; the later stages
    share one in-domain set (reused, mirroring the staged schedule) and the
    held-out splits come from the same in-domain distribution.
    """
    if cfg is None:
        cfg = ToyDataConfig()
    rng1 = np.random.default_rng([cfg.seed, 1])
    noise = synthetic_noise(cfg.seed)
    stage1_pairs = tuple(
        _errorful_pair(rng1, noise, cfg.compound_prob, force_error=True)
        for _ in range(cfg.synthetic_pairs)
    )
    rng2 = np.random.default_rng([cfg.seed, 2])
    domain = _domain_pairs(rng2, cfg, cfg.domain_pairs)
    rng_dev = np.random.default_rng([cfg.seed, 3])
    dev = _domain_pairs(rng_dev, cfg, cfg.dev_size)
    rng_test = np.random.default_rng([cfg.seed, 4])
    test = _domain_pairs(rng_test, cfg, cfg.test_size)
    return ToyData(
        stage1=ParallelCorpus(pairs=stage1_pairs, stage_tag="I"),
        stage2=ParallelCorpus(pairs=domain, stage_tag="II"),
        stage3=ParallelCorpus(pairs=domain, stage_tag="III"),
        dev_pairs=dev,
        test_pairs=test,
        vocab=build_vocab(),
    )


def make_length_sweep(
    min_len: int = 10, max_len: int = 70, step: int = 10, seed: int = 0
) -> list[tuple[int, str]]:
    """Sentences near each target core length, for decoding-cost sweeps."""
    rng = np.random.default_rng([seed, 99])
    out = []
    for target in range(min_len, max_len + 1, step):
        words = sample_clause(rng)
        while len(words) < target:
            words += [CONJ] + sample_clause(rng)
        out.append((target, " ".join(words[:target] if len(words) > target else words)))
    return out
