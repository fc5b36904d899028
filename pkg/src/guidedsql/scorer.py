"""Autoregressive scoring contract and desk-scale reference scorers.

All search methods consume the Scorer interface: a per-step distribution
over a fixed vocabulary given a token prefix. The add-alpha n-gram scorer
stands in for large neural decoders; the replay scorer plays back
externally computed per-step distributions from a file.
"""

from __future__ import annotations

import json
import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EOS = "</s>"
BOS = "<s>"

_SQL_TOKEN_RE = re.compile(r"'(?:[^']|'')*'|\d+\.\d+|\d+|!=|<=|>=|<>|[A-Za-z_][A-Za-z_0-9.]*|\S")


def tokenize_sql(text: str) -> list[str]:
    """Whitespace + SQL-punctuation token split for the reference scorer."""
    return [t.lower() for t in _SQL_TOKEN_RE.findall(text)]


def detokenize_sql(tokens: list[str] | tuple[str, ...]) -> str:
    return " ".join(t for t in tokens if t not in (BOS, EOS))


class EmptyCorpus(ValueError):
    pass


class UnknownToken(KeyError):
    pass


@dataclass
class Vocabulary:
    tokens: list[str]  # EOS always included

    def __post_init__(self) -> None:
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        if EOS not in self.tokens:
            raise ValueError("vocabulary must contain the EOS marker")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.eos_id = self.index[EOS]

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise UnknownToken(token) from None


@dataclass(frozen=True)
class Hypothesis:
    """A token sequence with its cumulative log-probability."""

    tokens: tuple[str, ...]
    logprob: float
    finished: bool = False

    @property
    def text(self) -> str:
        return detokenize_sql(self.tokens)


class Scorer(ABC):
    """Distribution over the next token given a prefix (no BOS/EOS in it)."""

    vocab: Vocabulary
    max_length: int

    @abstractmethod
    def next_distribution(self, prefix: tuple[str, ...]) -> np.ndarray:
        """Probability vector over self.vocab; non-negative, sums to one."""


class NgramScorer(Scorer):
    """Add-alpha-smoothed n-gram model over a token-sequence corpus."""

    def __init__(self, corpus: list[list[str]], order: int = 3, alpha: float = 0.1,
                 max_length: int = 64):
        if order < 1:
            raise ValueError("order must be >= 1")
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        if not corpus:
            raise EmptyCorpus("training corpus is empty")
        tokens = sorted({t for seq in corpus for t in seq} - {BOS, EOS})
        self.vocab = Vocabulary(tokens + [EOS])
        self.order = order
        self.alpha = alpha
        self.max_length = max_length
        self._counts: dict[tuple[str, ...], np.ndarray] = {}
        for seq in corpus:
            padded = [BOS] * (order - 1) + [t for t in seq if t != EOS] + [EOS]
            for i in range(order - 1, len(padded)):
                context = tuple(padded[i - order + 1 : i])
                row = self._counts.get(context)
                if row is None:
                    row = np.zeros(len(self.vocab))
                    self._counts[context] = row
                row[self.vocab.id(padded[i])] += 1

    def _context(self, prefix: tuple[str, ...]) -> tuple[str, ...]:
        padded = (BOS,) * (self.order - 1) + prefix
        return padded[len(padded) - self.order + 1 :] if self.order > 1 else ()

    def next_distribution(self, prefix: tuple[str, ...]) -> np.ndarray:
        counts = self._counts.get(self._context(prefix))
        if counts is None:
            counts = np.zeros(len(self.vocab))
        dist = counts + self.alpha
        return dist / dist.sum()


class TableScorer(Scorer):
    """Deterministic scorer over an explicit finite sequence distribution.

    Takes {token-sequence: probability} (probabilities need not be
    normalized) and derives exact per-step conditionals, which makes ranks
    and residuals computable in closed form for tests and demos.
    """

    def __init__(self, sequence_probs: dict[tuple[str, ...], float]):
        if not sequence_probs:
            raise ValueError("need at least one sequence")
        total = sum(sequence_probs.values())
        self._probs = {seq: p / total for seq, p in sequence_probs.items()}
        tokens = sorted({t for seq in self._probs for t in seq} - {EOS})
        self.vocab = Vocabulary(tokens + [EOS])
        self.max_length = max(len(s) for s in self._probs) + 1
        # subtree mass per prefix
        self._mass: dict[tuple[str, ...], float] = {}
        for seq, p in self._probs.items():
            for i in range(len(seq) + 1):
                key = seq[:i]
                self._mass[key] = self._mass.get(key, 0.0) + p

    def sequences(self) -> dict[tuple[str, ...], float]:
        return dict(self._probs)

    def next_distribution(self, prefix: tuple[str, ...]) -> np.ndarray:
        dist = np.zeros(len(self.vocab))
        prefix_mass = self._mass.get(prefix)
        if prefix_mass is None or prefix_mass <= 0:
            dist[self.vocab.eos_id] = 1.0
            return dist
        terminal = self._probs.get(prefix, 0.0)
        dist[self.vocab.eos_id] = terminal / prefix_mass
        for i, token in enumerate(self.vocab.tokens):
            if token == EOS:
                continue
            child_mass = self._mass.get(prefix + (token,), 0.0)
            dist[i] = child_mass / prefix_mass
        return dist


class ReplayScorer(Scorer):
    """Plays back per-step distributions computed offline.

    File format: JSON lines. The first line is a header
    ``{"vocab": [...], "max_length": N}``; every following line is
    ``{"prefix": [token ids], "probs": [...]}``. Prefixes without a record
    fall back to deterministic EOS.
    """

    def __init__(self, path: str | Path):
        with open(path) as fh:
            header = json.loads(fh.readline())
            self.vocab = Vocabulary(header["vocab"])
            self.max_length = int(header["max_length"])
            self._table: dict[tuple[str, ...], np.ndarray] = {}
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                prefix = tuple(self.vocab.tokens[i] for i in rec["prefix"])
                self._table[prefix] = np.asarray(rec["probs"], dtype=float)

    @staticmethod
    def write(path: str | Path, vocab: Vocabulary, max_length: int,
              records: list[tuple[tuple[str, ...], np.ndarray]]) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"vocab": vocab.tokens, "max_length": max_length}) + "\n")
            for prefix, probs in records:
                fh.write(json.dumps({
                    "prefix": [vocab.id(t) for t in prefix],
                    "probs": [float(p) for p in probs],
                }) + "\n")

    def next_distribution(self, prefix: tuple[str, ...]) -> np.ndarray:
        dist = self._table.get(prefix)
        if dist is None:
            dist = np.zeros(len(self.vocab))
            dist[self.vocab.eos_id] = 1.0
        return dist


def apply_temperature(dist: np.ndarray, temperature: float) -> np.ndarray:
    """p_i^(1/T), renormalized; T=1 is the identity."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if temperature == 1.0:
        return dist
    with np.errstate(divide="ignore"):
        logits = np.where(dist > 0, np.log(np.maximum(dist, 1e-300)), -np.inf)
    logits = logits / temperature
    logits -= logits.max()
    out = np.exp(logits)
    out[dist <= 0] = 0.0
    return out / out.sum()


def sequence_logprob(scorer: Scorer, tokens: tuple[str, ...] | list[str],
                     temperature: float = 1.0) -> float:
    """Chain-rule log-probability of a full sequence (EOS-terminated)."""
    tokens = tuple(tokens)
    if not tokens or tokens[-1] != EOS:
        tokens = tokens + (EOS,)
    total = 0.0
    for i, token in enumerate(tokens):
        dist = apply_temperature(scorer.next_distribution(tokens[:i]), temperature)
        p = dist[scorer.vocab.id(token)]
        total += math.log(p) if p > 0 else -math.inf
    return total
