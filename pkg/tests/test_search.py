import itertools
import math
import zlib

import numpy as np
import pytest

from guidedsql.scorer import EOS, Scorer, TableScorer, Vocabulary, sequence_logprob
from guidedsql.search import (
    CabSchedule,
    SCHEDULE_PRESETS,
    SampleBudget,
    SamplerState,
    beam_search,
    cab_search,
    greedy_decode,
    topk_sample,
    topp_sample,
    unique_randomizer_sample,
)


class RandomScorer(Scorer):
    """Deterministic pseudo-random conditionals; a stand-in neural decoder."""

    def __init__(self, seed: int, vocab_tokens=("a", "b", "c"), max_length: int = 3):
        self.vocab = Vocabulary(list(vocab_tokens) + [EOS])
        self.max_length = max_length
        self.seed = seed

    def next_distribution(self, prefix):
        key = zlib.crc32(repr((self.seed, prefix)).encode())
        rng = np.random.default_rng(key)
        return rng.dirichlet(np.ones(len(self.vocab)))


def enumerate_sequences(scorer):
    """Brute-force oracle: every finished sequence with its log-probability,
    mirroring the forced-EOS convention at max length."""
    results = []

    def expand(prefix, logprob):
        dist = scorer.next_distribution(prefix)
        eos_p = dist[scorer.vocab.eos_id]
        if eos_p > 0:
            results.append((prefix, logprob + math.log(eos_p)))
        if len(prefix) >= scorer.max_length:
            return
        for tid, token in enumerate(scorer.vocab.tokens):
            if tid == scorer.vocab.eos_id or dist[tid] <= 0:
                continue
            expand(prefix + (token,), logprob + math.log(dist[tid]))

    expand((), 0.0)
    results.sort(key=lambda item: (-item[1], item[0]))
    return results


def test_beam_matches_enumeration_oracle():
    for seed in range(20):
        scorer = RandomScorer(seed)
        oracle = enumerate_sequences(scorer)
        hyps = beam_search(scorer, beam_size=len(oracle), width=len(scorer.vocab))
        assert [h.tokens for h in hyps] == [seq for seq, _ in oracle]
        for h, (_, lp) in zip(hyps, oracle):
            assert h.logprob == pytest.approx(lp)


def test_beam_top_slice_is_prefix_of_full_ranking():
    scorer = RandomScorer(7)
    oracle = enumerate_sequences(scorer)
    top = beam_search(scorer, beam_size=5, width=len(scorer.vocab))
    assert [h.tokens for h in top] == [seq for seq, _ in oracle[:5]]


def test_beam_rejects_bad_sizes():
    scorer = RandomScorer(0)
    with pytest.raises(ValueError):
        beam_search(scorer, 0, 1)
    with pytest.raises(ValueError):
        beam_search(scorer, 1, 0)


def test_greedy_follows_argmax_path():
    scorer = RandomScorer(3)
    prefix = ()
    logprob = 0.0
    while True:
        dist = scorer.next_distribution(prefix)
        tid = int(np.argmax(dist))
        logprob += math.log(dist[tid])
        if tid == scorer.vocab.eos_id or len(prefix) >= scorer.max_length:
            break
        prefix += (scorer.vocab.tokens[tid],)
    greedy = greedy_decode(scorer)
    assert greedy.tokens == prefix
    assert greedy.logprob == pytest.approx(logprob)


def test_cab_stops_at_first_acceptance():
    sc = TableScorer({("a", "b"): 0.6, ("a", "c"): 0.3, ("b",): 0.1})
    best, tested = cab_search(sc, CabSchedule([1, 3], [1, 3]),
                              lambda h: h.tokens == ("a", "c"))
    assert best.tokens == ("a", "c")
    assert [t.tokens for t in tested] == [("a", "b"), ("a", "c")]


def test_cab_never_retests_across_stages():
    sc = TableScorer({("a",): 0.7, ("b",): 0.2, ("c",): 0.1})
    counts = {}

    def never(h):
        counts[h.tokens] = counts.get(h.tokens, 0) + 1
        return False

    best, tested = cab_search(sc, CabSchedule([1, 2, 3], [1, 2, 3]), never)
    assert best is None
    assert set(counts.values()) == {1}
    assert len(tested) == 3


def test_cab_schedule_validation():
    with pytest.raises(ValueError):
        CabSchedule([], [])
    with pytest.raises(ValueError):
        CabSchedule([2, 2], [1, 1])
    with pytest.raises(ValueError):
        CabSchedule([1, 2], [1])
    with pytest.raises(ValueError):
        CabSchedule([1, 2], [1, 0])


def test_cab_schedule_capped():
    t5 = SCHEDULE_PRESETS["t5"]
    assert t5.beam_sizes == [2, 10, 100, 800] and t5.widths == [2, 2, 2, 5]
    capped = t5.capped(100)
    assert capped.beam_sizes == [2, 10, 100]
    assert t5.capped(1).beam_sizes == [1]
    assert SCHEDULE_PRESETS["bridge"].beam_sizes == [1, 10, 100, 1000]
    assert SCHEDULE_PRESETS["sq-qdmr"].widths == [1, 5, 10]


def test_sample_budget():
    assert SampleBudget([1, 10, 100]).max_total == 100
    with pytest.raises(ValueError):
        SampleBudget([10, 5])
    with pytest.raises(ValueError):
        SampleBudget([])


def test_topk_sampling_respects_truncation():
    sc = TableScorer({("a",): 0.5, ("b",): 0.3, ("c",): 0.2})
    samples = topk_sample(sc, k=2, num_samples=300, seed=0)
    drawn = {s.tokens for s in samples}
    # top-2 of the first step is {a, b}; c is cut off
    assert ("c",) not in drawn
    assert {("a",), ("b",)} <= drawn


def test_topk_one_is_deterministic_argmax():
    sc = TableScorer({("a",): 0.5, ("b",): 0.3, ("c",): 0.2})
    samples = topk_sample(sc, k=1, num_samples=20, seed=4)
    assert all(s.tokens == ("a",) for s in samples)


def test_topp_keeps_minimal_mass():
    sc = TableScorer({("a",): 0.5, ("b",): 0.3, ("c",): 0.2})
    samples = topp_sample(sc, p=0.6, num_samples=300, seed=1)
    drawn = {s.tokens for s in samples}
    # cumulative 0.5 < 0.6, so b joins; c never qualifies
    assert drawn == {("a",), ("b",)}
    everything = topp_sample(sc, p=1.0, num_samples=400, seed=1)
    assert {s.tokens for s in everything} == {("a",), ("b",), ("c",)}


def test_sampling_is_seed_deterministic():
    sc = TableScorer({("a", "b"): 0.6, ("a", "c"): 0.3, ("b",): 0.1})
    a = [s.tokens for s in topk_sample(sc, k=3, num_samples=10, seed=9)]
    b = [s.tokens for s in topk_sample(sc, k=3, num_samples=10, seed=9)]
    assert a == b
    c = [s.tokens for s in topp_sample(sc, p=0.9, num_samples=10, seed=9)]
    d = [s.tokens for s in topp_sample(sc, p=0.9, num_samples=10, seed=9)]
    assert c == d


def test_sampled_logprobs_match_chain_rule():
    sc = TableScorer({("a", "b"): 0.6, ("a", "c"): 0.3, ("b",): 0.1})
    for hyp in topp_sample(sc, p=1.0, num_samples=20, seed=2):
        assert hyp.logprob == pytest.approx(sequence_logprob(sc, hyp.tokens))


def test_sampler_state_enumerates_whole_support():
    sc = TableScorer({("a", "b"): 0.6, ("a", "c"): 0.3, ("b",): 0.1})
    for seed in range(30):
        state = SamplerState(sc, seed=seed)
        seen = []
        while not state.exhausted():
            hyp = state.draw()
            if hyp is None:
                break
            seen.append(hyp.tokens)
        assert sorted(seen) == [("a", "b"), ("a", "c"), ("b",)]
        assert state.residual_mass == pytest.approx(0.0, abs=1e-9)


def test_sampler_state_first_draw_logprob_is_original():
    sc = TableScorer({("a",): 0.7, ("b",): 0.3})
    state = SamplerState(sc, seed=0)
    first = state.draw()
    assert first.logprob == pytest.approx(sequence_logprob(sc, first.tokens))


def test_unique_randomizer_stops_on_acceptance():
    sc = TableScorer({("a",): 0.7, ("b",): 0.2, ("c",): 0.1})
    best, drawn = unique_randomizer_sample(
        sc, max_iterations=50, criterion=lambda h: h.tokens == ("c",), seed=12
    )
    assert best is not None and best.tokens == ("c",)
    assert drawn[-1].tokens == ("c",)
    assert len(drawn) == len({d.tokens for d in drawn}) <= 3


def test_unique_randomizer_exhausts_and_fails():
    sc = TableScorer({("a",): 0.7, ("b",): 0.3})
    best, drawn = unique_randomizer_sample(
        sc, max_iterations=50, criterion=lambda h: False, seed=0
    )
    assert best is None
    assert sorted(d.tokens for d in drawn) == [("a",), ("b",)]


def test_forced_eos_at_max_length():
    scorer = RandomScorer(11, max_length=2)
    for h in beam_search(scorer, beam_size=50, width=4):
        assert len(h.tokens) <= 2
    for h in topp_sample(scorer, p=1.0, num_samples=50, seed=0):
        assert len(h.tokens) <= 2
    state = SamplerState(scorer, seed=0)
    for _ in range(30):
        h = state.draw()
        if h is None:
            break
        assert len(h.tokens) <= 2
