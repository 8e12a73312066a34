"""Deleted-interpolation conditional models and the trigram baseline.

A :class:`DIModel` estimates ``P(event | context)`` by mixing relative
frequencies over a chain of progressively shorter context prefixes, ending in
a uniform floor. Mixture weights are bucketed by the count of the context at
each level and tuned by EM on held-out data.
"""

from __future__ import annotations

import json
import logging
import math
import zlib
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Iterable, Sequence

from .corpus import BOS, EOS, Vocabulary

logger = logging.getLogger(__name__)

BOUNDARY = "<b>"
NUM_BUCKETS = 40
LAMBDA_CEILING = 1.0 - 1e-9

MAGIC = b"SLMKDI"
FORMAT_VERSION = 1


class DIError(ValueError):
    pass


@dataclass(frozen=True)
class ContextChain:
    """Context prefix length per level, most specific first.

    ``ContextChain((2, 1, 0))`` is the trigram chain
    ``(w-1, w-2) -> (w-1) -> () -> uniform``; the uniform floor is implicit.
    """

    lengths: tuple[int, ...]

    def __post_init__(self):
        if any(n < 0 for n in self.lengths):
            raise DIError("context lengths must be nonnegative")
        if any(a <= b for a, b in zip(self.lengths, self.lengths[1:])):
            raise DIError("context lengths must strictly decrease")

    @property
    def order(self) -> int:
        return self.lengths[0] if self.lengths else 0

    def reduce(self, context: tuple) -> list[tuple]:
        return [context[:n] for n in self.lengths]


def bucket_of(count: float) -> int:
    """Geometric buckets: 0 | 1 | 2-3 | 4-7 | ..."""
    if count <= 0:
        return 0
    if count < 2:
        return 1
    return min(NUM_BUCKETS - 1, int(math.floor(math.log2(count))) + 1)


def _freeze(x):
    if isinstance(x, list):
        return tuple(_freeze(v) for v in x)
    return x


class DIModel:
    """Trained deleted-interpolation table. Treat as immutable."""

    def __init__(self, events: Sequence[Hashable], chain: ContextChain,
                 counts: list[dict], lambdas: list[list[float]]):
        self.events = tuple(events)
        if not self.events:
            raise DIError("empty event vocabulary")
        self.event_index = {e: i for i, e in enumerate(self.events)}
        self.chain = chain
        self.counts = counts
        self.totals = [{ctx: sum(tab.values()) for ctx, tab in level.items()} for level in counts]
        self.lambdas = lambdas
        self.em_trace: list[float] = []
        self._cache: dict = {}

    @property
    def vocab_size(self) -> int:
        return len(self.events)

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_cache"] = {}
        return state

    def prob(self, context: tuple, event: Hashable) -> float:
        if event not in self.event_index:
            raise DIError(f"event {event!r} not in vocabulary")
        remaining = 1.0
        p = 0.0
        for level, n in enumerate(self.chain.lengths):
            ctx = context[:n]
            total = self.totals[level].get(ctx, 0.0)
            if total <= 0:
                continue
            lam = self.lambdas[level][bucket_of(total)]
            p += remaining * lam * (self.counts[level][ctx].get(event, 0.0) / total)
            remaining *= 1.0 - lam
        return p + remaining / len(self.events)

    def logprob(self, context: tuple, event: Hashable) -> float:
        key = (context, event)
        lp = self._cache.get(key)
        if lp is None:
            lp = math.log(self.prob(context, event))
            self._cache[key] = lp
        return lp

    def distribution(self, context: tuple) -> dict:
        return {e: self.prob(context, e) for e in self.events}

    def with_events(self, extra: Iterable[Hashable]) -> "DIModel":
        """Same counts and weights over an enlarged event vocabulary."""
        events = list(self.events)
        seen = set(events)
        for e in extra:
            if e not in seen:
                events.append(e)
                seen.add(e)
        return DIModel(events, self.chain, self.counts, [list(x) for x in self.lambdas])

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "events": list(self.events),
            "chain": list(self.chain.lengths),
            "counts": [
                [[list(ctx), [[e, c] for e, c in tab.items()]] for ctx, tab in level.items()]
                for level in self.counts
            ],
            "lambdas": self.lambdas,
        }

    @classmethod
    def from_json(cls, data: dict) -> "DIModel":
        if data.get("version") != FORMAT_VERSION:
            raise DIError(f"unsupported model version {data.get('version')}")
        counts = [
            {_freeze(ctx): {_freeze(e): c for e, c in tab} for ctx, tab in level}
            for level in data["counts"]
        ]
        return cls([_freeze(e) for e in data["events"]], ContextChain(tuple(data["chain"])),
                   counts, data["lambdas"])

    def to_bytes(self) -> bytes:
        payload = zlib.compress(json.dumps(self.to_json(), separators=(",", ":")).encode("utf-8"))
        return MAGIC + bytes([FORMAT_VERSION]) + payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DIModel":
        if not blob.startswith(MAGIC):
            raise DIError("not a DI model file (bad magic)")
        if blob[len(MAGIC)] != FORMAT_VERSION:
            raise DIError(f"unsupported model version {blob[len(MAGIC)]}")
        return cls.from_json(json.loads(zlib.decompress(blob[len(MAGIC) + 1:])))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "DIModel":
        return cls.from_bytes(Path(path).read_bytes())

    def dump_text(self) -> str:
        lines = [f"# DIModel v{FORMAT_VERSION}", f"events {len(self.events)}",
                 "chain " + " ".join(map(str, self.chain.lengths))]
        for level, n in enumerate(self.chain.lengths):
            lines.append(f"level {level} context-length {n}")
            for b in sorted({bucket_of(t) for t in self.totals[level].values()}):
                lines.append(f"  lambda bucket={b} {self.lambdas[level][b]!r}")
            for ctx in sorted(self.counts[level], key=repr):
                tab = self.counts[level][ctx]
                body = " ".join(f"{e}={c:g}" for e, c in sorted(tab.items(), key=lambda kv: repr(kv[0])))
                lines.append(f"  {ctx!r} total={self.totals[level][ctx]:g} | {body}")
        return "\n".join(lines) + "\n"


def _as_weighted(items: Iterable) -> Iterable[tuple[tuple, Hashable, float]]:
    for item in items:
        if len(item) == 3:
            yield item
        else:
            yield item[0], item[1], 1.0


def di_train(events: Iterable, chain: ContextChain, heldout: Iterable,
             vocab: Sequence[Hashable], max_iter: int = 100, tol: float = 1e-10,
             init_lambda: float = 0.5) -> DIModel:
    """Count ``(context, event[, weight])`` items and fit weights on held-out data.

    Returns a :class:`DIModel` whose ``em_trace`` lists the held-out
    log-likelihood before the first and after every EM iteration.
    """
    vocab = tuple(vocab)
    index = set(vocab)
    counts: list[dict] = [defaultdict(lambda: defaultdict(float)) for _ in chain.lengths]
    n_items = 0
    for context, event, weight in _as_weighted(events):
        if event not in index:
            raise DIError(f"event {event!r} out of range")
        if weight == 0:
            continue
        n_items += 1
        for level, n in enumerate(chain.lengths):
            counts[level][context[:n]][event] += weight
    if n_items == 0:
        raise DIError("empty training stream")
    frozen = [{ctx: dict(tab) for ctx, tab in level.items()} for level in counts]
    lambdas = [[0.0] + [init_lambda] * (NUM_BUCKETS - 1) for _ in chain.lengths]
    model = DIModel(vocab, chain, frozen, lambdas)

    held = []
    for context, event, weight in _as_weighted(heldout):
        if event not in index:
            raise DIError(f"held-out event {event!r} out of range")
        if weight == 0:
            continue
        levels = []
        for level, n in enumerate(chain.lengths):
            ctx = context[:n]
            total = model.totals[level].get(ctx, 0.0)
            if total > 0:
                levels.append((level, bucket_of(total), frozen[level][ctx].get(event, 0.0) / total))
        held.append((levels, weight))
    if not held:
        raise DIError("held-out stream is empty")

    model.em_trace = _fit_lambdas(model.lambdas, held, 1.0 / len(vocab), max_iter, tol)
    return model


def _fit_lambdas(lambdas: list[list[float]], held: list, floor: float,
                 max_iter: int, tol: float) -> list[float]:
    """Baum-Welch over the chain of keep/back-off decisions; updates in place."""

    def loglik() -> float:
        ll = 0.0
        for levels, weight in held:
            remaining = 1.0
            p = 0.0
            for level, b, f in levels:
                lam = lambdas[level][b]
                p += remaining * lam * f
                remaining *= 1.0 - lam
            ll += weight * math.log(p + remaining * floor)
        return ll

    trace = [loglik()]
    for _ in range(max_iter):
        chose = defaultdict(float)
        reached = defaultdict(float)
        for levels, weight in held:
            remaining = 1.0
            comps = []
            for level, b, f in levels:
                lam = lambdas[level][b]
                comps.append(remaining * lam * f)
                remaining *= 1.0 - lam
            comps.append(remaining * floor)
            total = sum(comps)
            # posterior mass of stopping at or below each level
            tail = total
            for (level, b, _), c in zip(levels, comps):
                reached[level, b] += weight * tail / total
                chose[level, b] += weight * c / total
                tail -= c
        for (level, b), r in reached.items():
            if r > 0:
                lambdas[level][b] = min(LAMBDA_CEILING, max(0.0, chose[level, b] / r))
        trace.append(loglik())
        if trace[-1] - trace[-2] < tol:
            break
    return trace


def split_heldout(items: Sequence, fraction: float = 0.05) -> tuple[list, list]:
    """Last ``fraction`` of ``items`` (at least one) is held out."""
    n = len(items)
    if n < 2:
        raise DIError("need at least two sentences to split off held-out data")
    n_held = min(n - 1, max(1, int(round(fraction * n))))
    return list(items[: n - n_held]), list(items[n - n_held:])


# ---------------------------------------------------------------------------
# trigram baseline

TRIGRAM_CHAIN = ContextChain((2, 1, 0))


def ngram_context(history: Sequence[str], order: int = 3) -> tuple:
    """``(w-1, w-2, ...)`` for the next word, ``<s>`` then boundary padded."""
    padded = [BOUNDARY] * (order - 1) + [BOS] + list(history)
    return tuple(reversed(padded[len(padded) - (order - 1):]))


def ngram_events(sentence: Sequence[str], order: int = 3):
    words = list(sentence) + [EOS]
    for k, w in enumerate(words):
        yield ngram_context(words[:k], order), w


class NgramLM:
    """Deleted-interpolation n-gram LM over a :class:`Vocabulary`."""

    def __init__(self, model: DIModel, vocab: Vocabulary, order: int = 3):
        self.model = model
        self.vocab = vocab
        self.order = order

    def logprob(self, history: Sequence[str], word: str) -> float:
        word = self.vocab.map_token(word)
        history = [self.vocab.map_token(w) for w in history[-(self.order - 1):]] if self.order > 1 else []
        return self.model.logprob(ngram_context(history, self.order), word)

    def sentence_logprobs(self, sentence: Sequence[str]) -> list[float]:
        words = [self.vocab.map_token(w) for w in sentence] + [EOS]
        return [self.model.logprob(ngram_context(words[:k], self.order), w) for k, w in enumerate(words)]

    def with_vocabulary(self, vocab: Vocabulary) -> "NgramLM":
        return NgramLM(self.model.with_events(vocab.predictable()), vocab, self.order)

    def save(self, path: str | Path) -> None:
        header = json.dumps({"order": self.order, "closed": self.vocab.closed,
                             "vocab": self.vocab.tokens}).encode("utf-8")
        Path(path).write_bytes(MAGIC + b"LM" + len(header).to_bytes(4, "big") + header + self.model.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "NgramLM":
        blob = Path(path).read_bytes()
        if not blob.startswith(MAGIC + b"LM"):
            raise DIError(f"{path}: not an n-gram LM file")
        off = len(MAGIC) + 2
        size = int.from_bytes(blob[off:off + 4], "big")
        header = json.loads(blob[off + 4: off + 4 + size])
        tokens = header["vocab"]
        vocab = Vocabulary([t for t in tokens if t not in (BOS, EOS, "<unk>")], closed=header["closed"])
        if vocab.tokens != tokens:
            raise DIError(f"{path}: vocabulary order mismatch")
        return cls(DIModel.from_bytes(blob[off + 4 + size:]), vocab, header["order"])


def train_trigram(sentences: Sequence[Sequence[str]], vocab: Vocabulary | None = None,
                  heldout_fraction: float = 0.05, order: int = 3) -> NgramLM:
    if vocab is None:
        vocab = Vocabulary.from_sentences(sentences)
    mapped = [[vocab.map_token(w) for w in s] for s in sentences]
    train, held = split_heldout(mapped, heldout_fraction)
    chain = ContextChain(tuple(range(order - 1, -1, -1)))

    def events(sents):
        for s in sents:
            yield from ngram_events(s, order)

    model = di_train(events(train), chain, events(held), vocab.predictable())
    return NgramLM(model, vocab, order)


def trigram_ppl(lm: NgramLM, corpus: Iterable[Sequence[str]]) -> float:
    """Perplexity counting every predicted token including ``</s>``."""
    total = 0.0
    n = 0
    for sent in corpus:
        lps = lm.sentence_logprobs(sent)
        total += sum(lps)
        n += len(lps)
    if n == 0:
        raise DIError("empty corpus")
    return math.exp(-total / n)
