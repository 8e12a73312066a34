"""A* lattice rescoring with a compensated n-gram lookahead.

Path score::

    f(p) = sum_i [ am_i + LMweight * log P_LM(w_i | w_0 .. w_{i-1}) - logP_IP ]

A prefix ``x`` ending at node ``v`` is ranked by ``g = f(x) + h_L(v)``, where
``h_L`` comes from :func:`slmkit.lattice.backward_pass`. The stack is a single
priority list capped in depth and in g-spread from the top entry.
"""

from __future__ import annotations

import bisect
import heapq
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .corpus import BOS, EOS
from .lattice import BackwardTable, Lattice, Link, backward_pass
from .rescoring import RescoringLM

logger = logging.getLogger(__name__)

FINAL_RULES = ("as-printed", "inclusive")
MARKERS = frozenset((BOS, EOS))


class DecodeError(RuntimeError):
    def __init__(self, message: str, stats: "SearchStats | None" = None):
        super().__init__(message)
        self.stats = stats


@dataclass(frozen=True)
class SearchConfig:
    lm_weight: float = 12.0
    ip: float = 10.0
    comp: float = 0.5
    final: float = 2.0
    stack_depth: int | None = 30
    stack_logp: float = 100.0
    final_rule: str = "as-printed"

    def __post_init__(self):
        if not self.lm_weight > 0:
            raise ValueError("LMweight must be > 0")
        for name in ("ip", "comp", "final"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.stack_depth is not None and (int(self.stack_depth) != self.stack_depth or self.stack_depth < 1):
            raise ValueError("stack depth threshold must be a positive integer")
        if not self.stack_logp > 0:
            raise ValueError("stack logP threshold must be > 0")
        if self.final_rule not in FINAL_RULES:
            raise ValueError(f"final_rule must be one of {FINAL_RULES}")

    def unbounded(self) -> "SearchConfig":
        return replace(self, stack_depth=None, stack_logp=math.inf)


def link_term(link: Link, lm_logprob: float, config: SearchConfig) -> float:
    return link.am + config.lm_weight * lm_logprob - config.ip


def _history(links: Sequence[Link]) -> tuple[str, ...]:
    return tuple(l.word for l in links)


def f_score(path: Sequence[Link], lm: RescoringLM, config: SearchConfig,
            lattice: Lattice | None = None) -> float:
    """Accumulate the path score left to right (the order the decoder uses)."""
    if path and lattice is not None and path[0].start != lattice.start:
        raise ValueError("path does not begin at the lattice start node")
    total = 0.0
    for i, link in enumerate(path):
        if i and path[i - 1].end != link.start:
            raise ValueError(f"links {path[i - 1].id} and {link.id} are not connected")
        total += link_term(link, lm.link_logprob(_history(path[:i]), link), config)
    return total


def transcript(path: Iterable[Link]) -> list[str]:
    return [l.word for l in path if l.word not in MARKERS]


@dataclass
class PartialPath:
    links: tuple[Link, ...]
    node: int
    f: float
    g: float
    complete: bool

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(l.id for l in self.links)

    def key(self):
        # best first: higher g, then longer, then smaller link ids
        return (-self.g, -len(self.links), self.ids)


@dataclass
class SearchStats:
    pops: int = 0
    inserts: int = 0
    prunes: int = 0
    max_stack: int = 0
    popped_g: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"pops": self.pops, "inserts": self.inserts, "prunes": self.prunes,
                "max_stack": self.max_stack}


@dataclass
class DecodeResult:
    path: tuple[Link, ...]
    words: list[str]
    score: float
    stats: SearchStats
    final_stack: list[tuple[int, ...]]
    pruned: set[tuple[int, ...]]


def astar_decode(lattice: Lattice, lm: RescoringLM, config: SearchConfig,
                 table: BackwardTable | None = None) -> DecodeResult:
    """Pop-expand-reinsert until a complete path reaches the top of the stack."""
    if table is None:
        table = backward_pass(lattice, config)
    stats = SearchStats()
    pruned: set[tuple[int, ...]] = set()
    root = PartialPath((), lattice.start, 0.0, table[lattice.start], lattice.start == lattice.end)
    stack = [root]
    keys = [root.key()]
    while stack:
        top = stack.pop(0)
        keys.pop(0)
        stats.pops += 1
        stats.popped_g.append(top.g)
        if top.complete:
            return DecodeResult(top.links, transcript(top.links), top.f, stats,
                                [p.ids for p in stack], pruned)
        history = _history(top.links)
        for link in lattice.out_links(top.node):
            f = top.f + link_term(link, lm.link_logprob(history, link), config)
            child = PartialPath(top.links + (link,), link.end, f, f + table[link.end], link.end == lattice.end)
            k = child.key()
            i = bisect.bisect_left(keys, k)
            keys.insert(i, k)
            stack.insert(i, child)
            stats.inserts += 1
        if stack:
            best = stack[0].g
            while stack and (
                (config.stack_depth is not None and len(stack) > config.stack_depth)
                or stack[-1].g < best - config.stack_logp
            ):
                gone = stack.pop()
                keys.pop()
                pruned.add(gone.ids)
                stats.prunes += 1
        stats.max_stack = max(stats.max_stack, len(stack))
    raise DecodeError("stack exhausted before any complete path was popped", stats)


def nbest(lattice: Lattice, config: SearchConfig, n: int) -> list[tuple[tuple[Link, ...], float]]:
    """Top-``n`` node-distinct paths under the lattice's own n-gram scores.

    Exact forward k-best over the DAG; scores accumulate left to right like
    :func:`f_score`. Ties go to the smaller link-id sequence.
    """
    if n < 1:
        raise ValueError("N must be at least 1")
    best: dict[int, list[tuple[float, tuple[int, ...], tuple[Link, ...]]]] = {lattice.start: [(0.0, (), ())]}
    for node in lattice.topo_order:
        if node == lattice.start:
            continue
        cands = []
        for link in lattice.in_links(node):
            term = link_term(link, link.lm, config)
            for f, ids, links in best[link.start]:
                cands.append((f + term, ids + (link.id,), links + (link,)))
        best[node] = heapq.nsmallest(n, cands, key=lambda c: (-c[0], c[1]))
    return [(links, f) for f, _, links in best[lattice.end]]


@dataclass
class DiagnosisReport:
    utterance: str | None
    rank: int
    astar_score: float
    best_sample_score: float
    offending: bool
    failure: str | None
    per_path: list[tuple[float, str]]
    stats: dict

    def as_text(self) -> str:
        lines = [f"utterance={self.utterance}", f"rank={self.rank}",
                 f"astar_score={self.astar_score!r}", f"best_sample_score={self.best_sample_score!r}",
                 f"offending={int(self.offending)}", f"failure={self.failure or 'none'}"]
        lines += [f"{k}={v}" for k, v in self.stats.items()]
        return "\n".join(lines) + "\n"


INSUFFICIENT_COMPENSATION = "insufficient-compensation"
FELL_OFF_STACK = "fell-off-stack"
SEARCH_FAILURE = "search-failure"


def _classify(ids: tuple[int, ...], result: DecodeResult) -> str:
    for entry in result.final_stack:
        if ids[: len(entry)] == entry:
            return INSUFFICIENT_COMPENSATION
    return FELL_OFF_STACK


def diagnose(lattice: Lattice, lm: RescoringLM, config: SearchConfig, n: int,
             table: BackwardTable | None = None) -> DiagnosisReport:
    """Rank the A* output among ``n`` n-gram-sampled paths rescored with ``lm``.

    Each sampled path scoring above the A* output is classified: if one of
    its prefixes is still on the stack when A* returns, the compensation was
    insufficient; otherwise that path fell off the finite stack.
    """
    lm.reset()
    samples = [(f_score(p, lm, config), p) for p, _ in nbest(lattice, config, n)]
    best_sample = max(s for s, _ in samples)
    try:
        result = astar_decode(lattice, lm, config, table)
    except DecodeError as e:
        return DiagnosisReport(lattice.utterance, len(samples), -math.inf, best_sample, True,
                               SEARCH_FAILURE, [], e.stats.as_dict() if e.stats else {})
    better = sorted(((s, p) for s, p in samples if s > result.score), key=lambda sp: -sp[0])
    per_path = [(s, _classify(tuple(l.id for l in p), result)) for s, p in better]
    return DiagnosisReport(lattice.utterance, len(better), result.score, best_sample, bool(better),
                           per_path[0][1] if per_path else None, per_path, result.stats.as_dict())


@dataclass
class CorpusDiagnosis:
    lattices: int
    mean_rank: float
    offending: int
    failures: dict[str, int]

    def as_text(self) -> str:
        lines = [f"lattices={self.lattices}", f"mean_rank={self.mean_rank!r}", f"offending={self.offending}"]
        for cls in (INSUFFICIENT_COMPENSATION, FELL_OFF_STACK, SEARCH_FAILURE):
            lines.append(f"{cls}={self.failures.get(cls, 0)}")
        return "\n".join(lines) + "\n"


def aggregate(reports: Sequence[DiagnosisReport]) -> CorpusDiagnosis:
    counts = Counter(r.failure for r in reports if r.failure)
    mean = sum(r.rank for r in reports) / len(reports) if reports else 0.0
    return CorpusDiagnosis(len(reports), mean, sum(r.offending for r in reports), dict(counts))


@dataclass
class AdmissibilityReport:
    checked: int
    violations: int
    max_violation: float
    exhaustive: bool


def check_admissibility(lattice: Lattice, lm: RescoringLM, config: SearchConfig,
                        max_paths: int = 10000) -> AdmissibilityReport:
    """Test ``lm_ng + logP_COMP >= log P_LM`` on every (prefix, link) of the path set.

    The set is every path when there are at most ``max_paths``, otherwise the
    ``max_paths`` n-gram best. ``max_violation`` is the largest excess, a
    lower bound on the compensation the set needs.
    """
    exhaustive = lattice.count_paths() <= max_paths
    paths = lattice.paths() if exhaustive else (p for p, _ in nbest(lattice, config, max_paths))
    lm.reset()
    seen = set()
    checked = violations = 0
    worst = 0.0
    for path in paths:
        for i, link in enumerate(path):
            key = tuple(l.id for l in path[: i + 1])
            if key in seen:
                continue
            seen.add(key)
            checked += 1
            excess = lm.link_logprob(_history(path[:i]), link) - (link.lm + config.comp)
            if excess > 0:
                violations += 1
                worst = max(worst, excess)
    return AdmissibilityReport(checked, violations, worst, exhaustive)
