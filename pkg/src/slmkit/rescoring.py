"""Language models the lattice decoder can rescore with.

Every model answers ``log P(word | all previous words on the path)``. The
decoder calls :meth:`RescoringLM.link_logprob`, which lets the lattice's own
n-gram scores act as a model too.
"""

from __future__ import annotations

import math
from typing import Sequence

from .corpus import EOS
from .lattice import Link
from .ngram import NgramLM
from .slm.model import SLModel
from .slm.search import Beams, ParsePrefix, SearchError, advance, slm_word_logprob


class RescoringLM:
    def logprob(self, history: Sequence[str], word: str) -> float:
        raise NotImplementedError

    def link_logprob(self, history: Sequence[str], link: Link) -> float:
        return self.logprob(history, link.word)

    def reset(self) -> None:
        """Drop per-lattice caches."""


class LatticeNgramLM(RescoringLM):
    """Scores each link with its stored first-pass n-gram log-probability."""

    def logprob(self, history, word):
        raise TypeError("lattice n-gram scores live on links; use link_logprob")

    def link_logprob(self, history, link):
        return link.lm


class TrigramLM(RescoringLM):
    def __init__(self, lm: NgramLM):
        self.lm = lm

    def logprob(self, history, word):
        return self.lm.logprob(history, word)


class SLMRescorer(RescoringLM):
    """SLM with stacks cached on the prefix tree of word histories.

    The stack for a history extends the stack of its parent history by one
    word, so each new path prefix costs a single stack advance.
    """

    def __init__(self, model: SLModel, beams: Beams | None = None):
        self.model = model
        self.beams = beams or Beams()
        self._stacks: dict[tuple, list[ParsePrefix]] = {}

    def reset(self):
        self._stacks = {}

    def stack(self, history: Sequence[str]) -> list[ParsePrefix]:
        history = tuple(history)
        stack = self._stacks.get(history)
        if stack is None:
            if not history:
                stack = [ParsePrefix.initial()]
            else:
                if history[-1] == EOS:
                    raise SearchError("history already ended with </s>")
                stack = advance(self.stack(history[:-1]), self.model, history[-1], self.beams)
                if not stack:
                    raise SearchError(f"SLM stacks starved after {len(history)} words", len(history))
            self._stacks[history] = stack
        return stack

    def logprob(self, history, word):
        return slm_word_logprob(self.stack(history), self.model, word)


def _mix(lam: float, a: float, b: float) -> float:
    # exact at the endpoints so the lambda=1/0 columns equal the components
    if lam == 1.0:
        return a
    if lam == 0.0:
        return b
    x = math.log(lam) + a
    y = math.log1p(-lam) + b
    m = max(x, y)
    if m == -math.inf:
        return m
    return m + math.log(math.exp(x - m) + math.exp(y - m))


class InterpolatedLM(RescoringLM):
    """lambda * P_first + (1 - lambda) * P_second."""

    def __init__(self, first: RescoringLM, second: RescoringLM, lam: float):
        if not 0.0 <= lam <= 1.0:
            raise ValueError("interpolation weight must lie in [0, 1]")
        self.first = first
        self.second = second
        self.lam = lam

    def reset(self):
        self.first.reset()
        self.second.reset()

    def logprob(self, history, word):
        a = self.first.logprob(history, word) if self.lam > 0 else -math.inf
        b = self.second.logprob(history, word) if self.lam < 1 else -math.inf
        return _mix(self.lam, a, b)

    def link_logprob(self, history, link):
        a = self.first.link_logprob(history, link) if self.lam > 0 else -math.inf
        b = self.second.link_logprob(history, link) if self.lam < 1 else -math.inf
        return _mix(self.lam, a, b)


class TableLM(RescoringLM):
    """Explicit ``(history, word) -> logprob`` table with a default; handy for tests."""

    def __init__(self, table: dict, default: float = math.log(0.1)):
        self.table = {(tuple(h), w): lp for (h, w), lp in table.items()}
        self.default = default

    def logprob(self, history, word):
        return self.table.get((tuple(history), word), self.default)
