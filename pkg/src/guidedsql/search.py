"""Search methods over a scorer's output distribution.

Four strategies produce finished hypotheses: plain/width-limited beam
search, complete-anytime-beam (CAB) search over an increasing schedule,
top-k and top-p sampling, and incremental sampling without replacement
backed by a residual-mass prefix trie.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .scorer import EOS, Hypothesis, Scorer, apply_temperature


def _hyp_order(h: Hypothesis):
    # score-descending, ties broken by lexicographic token order
    return (-h.logprob, h.tokens)


@dataclass
class CabSchedule:
    """Increasing beam sizes with per-element expansion widths."""

    beam_sizes: list[int]
    widths: list[int]

    def __post_init__(self) -> None:
        if not self.beam_sizes or len(self.beam_sizes) != len(self.widths):
            raise ValueError("beam_sizes and widths must be non-empty, same length")
        if any(b <= 0 for b in self.beam_sizes) or any(w <= 0 for w in self.widths):
            raise ValueError("beam sizes and widths must be positive")
        if any(a >= b for a, b in zip(self.beam_sizes, self.beam_sizes[1:])):
            raise ValueError("beam sizes must be strictly increasing")

    def capped(self, max_beam: int) -> "CabSchedule":
        """Schedule truncated to stages with beam size <= max_beam."""
        stages = [(b, w) for b, w in zip(self.beam_sizes, self.widths) if b <= max_beam]
        if not stages:
            stages = [(1, 1)]
        return CabSchedule([b for b, _ in stages], [w for _, w in stages])


# Appendix-style per-model schedules used in the original experiments.
SCHEDULE_PRESETS = {
    "t5": CabSchedule([2, 10, 100, 800], [2, 2, 2, 5]),
    "bridge": CabSchedule([1, 10, 100, 1000], [1, 2, 2, 5]),
    "sq-qdmr": CabSchedule([1, 100, 1000], [1, 5, 10]),
}


@dataclass
class SampleBudget:
    """Per-round sample counts for the sampling-based methods."""

    rounds: list[int]

    def __post_init__(self) -> None:
        if not self.rounds or any(r <= 0 for r in self.rounds):
            raise ValueError("sample counts must be positive")
        if any(a >= b for a, b in zip(self.rounds, self.rounds[1:])):
            raise ValueError("sample counts must be strictly increasing")

    @property
    def max_total(self) -> int:
        return self.rounds[-1]


def beam_search(
    scorer: Scorer,
    beam_size: int,
    width: int,
    temperature: float = 1.0,
    max_length: int | None = None,
) -> list[Hypothesis]:
    """Width-limited beam search; returns <= beam_size finished hypotheses
    sorted by score descending."""
    if beam_size < 1 or width < 1:
        raise ValueError("beam size and width must be >= 1")
    max_length = scorer.max_length if max_length is None else max_length
    eos_id = scorer.vocab.eos_id
    tokens = scorer.vocab.tokens

    active = [Hypothesis((), 0.0)]
    finished: list[Hypothesis] = []
    while active:
        candidates: list[Hypothesis] = []
        for hyp in active:
            dist = apply_temperature(scorer.next_distribution(hyp.tokens), temperature)
            if len(hyp.tokens) >= max_length:
                # out of budget for further tokens: force EOS
                if dist[eos_id] > 0:
                    candidates.append(
                        Hypothesis(hyp.tokens, hyp.logprob + math.log(dist[eos_id]), True)
                    )
                continue
            for tid in np.argsort(-dist, kind="stable")[:width]:
                p = dist[tid]
                if p <= 0:
                    break
                logprob = hyp.logprob + math.log(p)
                if tid == eos_id:
                    candidates.append(Hypothesis(hyp.tokens, logprob, True))
                else:
                    candidates.append(
                        Hypothesis(hyp.tokens + (tokens[tid],), logprob, False)
                    )
        finished.extend(c for c in candidates if c.finished)
        finished.sort(key=_hyp_order)
        del finished[beam_size:]
        active = sorted((c for c in candidates if not c.finished), key=_hyp_order)
        del active[beam_size:]
        if len(finished) >= beam_size:
            # an extension never raises the score, so prune dominated prefixes
            bound = finished[-1].logprob
            active = [h for h in active if h.logprob > bound + 1e-12]
    return finished


def greedy_decode(scorer: Scorer, temperature: float = 1.0,
                  max_length: int | None = None) -> Hypothesis:
    result = beam_search(scorer, 1, 1, temperature, max_length)
    if not result:
        return Hypothesis((), -math.inf, True)
    return result[0]


def cab_search(
    scorer: Scorer,
    schedule: CabSchedule,
    criterion: Callable[[Hypothesis], bool],
    temperature: float = 1.0,
    max_length: int | None = None,
) -> tuple[Hypothesis | None, list[Hypothesis]]:
    """Beam search per schedule stage, testing finished hypotheses in score
    order; stops at the first acceptance. Hypotheses already tested at an
    earlier stage are not re-tested."""
    tested: list[Hypothesis] = []
    seen: set[tuple[str, ...]] = set()
    for beam_size, width in zip(schedule.beam_sizes, schedule.widths):
        for hyp in beam_search(scorer, beam_size, width, temperature, max_length):
            if hyp.tokens in seen:
                continue
            seen.add(hyp.tokens)
            tested.append(hyp)
            if criterion(hyp):
                return hyp, tested
    return None, tested


def _sample_one(
    scorer: Scorer,
    rng: np.random.Generator,
    truncate: Callable[[np.ndarray], np.ndarray],
    temperature: float,
    max_length: int,
) -> Hypothesis:
    eos_id = scorer.vocab.eos_id
    prefix: tuple[str, ...] = ()
    logprob = 0.0
    while True:
        dist = apply_temperature(scorer.next_distribution(prefix), temperature)
        if len(prefix) >= max_length:
            logprob += math.log(dist[eos_id]) if dist[eos_id] > 0 else -math.inf
            return Hypothesis(prefix, logprob, True)
        kept = truncate(dist)
        tid = int(rng.choice(len(kept), p=kept))
        logprob += math.log(dist[tid]) if dist[tid] > 0 else -math.inf
        if tid == eos_id:
            return Hypothesis(prefix, logprob, True)
        prefix += (scorer.vocab.tokens[tid],)


def _topk_truncation(k: int, eos_id: int):
    def truncate(dist: np.ndarray) -> np.ndarray:
        order = np.argsort(-dist, kind="stable")
        kept = np.zeros_like(dist)
        kept[order[:k]] = dist[order[:k]]
        total = kept.sum()
        return kept / total if total > 0 else _eos_fallback(dist, eos_id)

    return truncate


def _topp_truncation(p: float, eos_id: int):
    def truncate(dist: np.ndarray) -> np.ndarray:
        order = np.argsort(-dist, kind="stable")
        cum = np.cumsum(dist[order])
        cutoff = int(np.searchsorted(cum, p - 1e-12)) + 1
        kept = np.zeros_like(dist)
        kept[order[:cutoff]] = dist[order[:cutoff]]
        total = kept.sum()
        return kept / total if total > 0 else _eos_fallback(dist, eos_id)

    return truncate


def _eos_fallback(dist: np.ndarray, eos_id: int) -> np.ndarray:
    out = np.zeros_like(dist)
    out[eos_id] = 1.0
    return out


def topk_sample(
    scorer: Scorer,
    k: int,
    num_samples: int,
    temperature: float = 1.0,
    seed: int = 0,
    max_length: int | None = None,
) -> list[Hypothesis]:
    """num_samples sequences, each step sampled from the renormalized top-k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    max_length = scorer.max_length if max_length is None else max_length
    truncate = _topk_truncation(k, scorer.vocab.eos_id)
    return [
        _sample_one(scorer, rng, truncate, temperature, max_length)
        for _ in range(num_samples)
    ]


def topp_sample(
    scorer: Scorer,
    p: float,
    num_samples: int,
    temperature: float = 1.0,
    seed: int = 0,
    max_length: int | None = None,
) -> list[Hypothesis]:
    """num_samples sequences from the minimal top mass >= p (nucleus)."""
    if not 0 < p <= 1:
        raise ValueError("p must be in (0, 1]")
    rng = np.random.default_rng(seed)
    max_length = scorer.max_length if max_length is None else max_length
    truncate = _topp_truncation(p, scorer.vocab.eos_id)
    return [
        _sample_one(scorer, rng, truncate, temperature, max_length)
        for _ in range(num_samples)
    ]


@dataclass
class SamplerState:
    """Residual-mass trie for sampling sequences without replacement.

    Emitting a sequence subtracts its absolute probability along every
    prefix on its path, so subsequent draws renormalize over what is left.
    """

    scorer: Scorer
    temperature: float = 1.0
    seed: int = 0
    max_length: int | None = None
    _sampled: dict[tuple[str, ...], float] = field(default_factory=dict)
    _rng: np.random.Generator = field(init=False)

    def __post_init__(self) -> None:
        self._rng = np.random.default_rng(self.seed)
        if self.max_length is None:
            self.max_length = self.scorer.max_length

    @property
    def residual_mass(self) -> float:
        return 1.0 - self._sampled.get((), 0.0)

    def exhausted(self) -> bool:
        return self.residual_mass <= 1e-9

    def draw(self) -> Hypothesis | None:
        """One sequence without replacement, or None on mass exhaustion."""
        if self.exhausted():
            return None
        eos_id = self.scorer.vocab.eos_id
        tokens = self.scorer.vocab.tokens
        prefix: tuple[str, ...] = ()
        path_prob = 1.0
        logprob = 0.0
        while True:
            dist = apply_temperature(
                self.scorer.next_distribution(prefix), self.temperature
            )
            if len(prefix) >= self.max_length:
                # treat the whole remaining subtree as terminating here
                emitted = path_prob - self._sampled.get(prefix, 0.0)
                logprob += math.log(dist[eos_id]) if dist[eos_id] > 0 else -math.inf
                self._credit(prefix, emitted)
                return Hypothesis(prefix, logprob, True)
            weights = np.empty(len(dist))
            for tid in range(len(dist)):
                absolute = dist[tid] * path_prob
                key = prefix + ((EOS,) if tid == eos_id else (tokens[tid],))
                weights[tid] = max(absolute - self._sampled.get(key, 0.0), 0.0)
            total = weights.sum()
            if total <= 0:
                return None
            tid = int(self._rng.choice(len(weights), p=weights / total))
            logprob += math.log(dist[tid]) if dist[tid] > 0 else -math.inf
            if tid == eos_id:
                self._credit(prefix, path_prob * dist[tid])
                return Hypothesis(prefix, logprob, True)
            path_prob *= dist[tid]
            prefix += (tokens[tid],)

    def _credit(self, sequence: tuple[str, ...], mass: float) -> None:
        for i in range(len(sequence) + 1):
            key = sequence[:i]
            self._sampled[key] = self._sampled.get(key, 0.0) + mass
        terminal = sequence + (EOS,)
        self._sampled[terminal] = self._sampled.get(terminal, 0.0) + mass


def unique_randomizer_sample(
    scorer: Scorer,
    state: SamplerState | None = None,
    max_iterations: int = 100,
    criterion: Callable[[Hypothesis], bool] | None = None,
    temperature: float = 1.0,
    seed: int = 0,
    max_length: int | None = None,
) -> tuple[Hypothesis | None, list[Hypothesis]]:
    """Draw pairwise-distinct sequences until the criterion accepts one, the
    probability mass is exhausted, or max_iterations draws were made."""
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    if state is None:
        state = SamplerState(scorer, temperature=temperature, seed=seed,
                             max_length=max_length)
    drawn: list[Hypothesis] = []
    for _ in range(max_iterations):
        hyp = state.draw()
        if hyp is None:
            break
        drawn.append(hyp)
        if criterion is not None and criterion(hyp):
            return hyp, drawn
    return None, drawn
