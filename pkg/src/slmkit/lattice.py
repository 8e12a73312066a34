"""Word lattices: data model, text I/O, link splitting and the backward pass.

Text format, one item per line::

    UTTERANCE=sw4004-A-0012        (optional)
    N=<nodes> L=<links>
    I=<id> t=<time>
    J=<id> S=<from> E=<to> W=<word> a=<am logscore> n=<lm logscore>
"""

from __future__ import annotations

import gzip
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterator

from .corpus import TokenMap

if TYPE_CHECKING:
    from .decoder import SearchConfig


class LatticeError(ValueError):
    """Structural problem in a lattice; ``element`` names the offender."""

    def __init__(self, message: str, element: str | None = None):
        super().__init__(message)
        self.element = element


@dataclass(frozen=True)
class Link:
    id: int
    start: int
    end: int
    word: str
    am: float
    lm: float


class Lattice:
    """Acyclic lattice with a unique start and end node. Immutable once built."""

    def __init__(self, nodes: dict[int, float], links: list[Link], utterance: str | None = None):
        self.nodes = dict(sorted(nodes.items()))
        self.links = {l.id: l for l in sorted(links, key=lambda l: l.id)}
        if len(self.links) != len(links):
            raise LatticeError("duplicate link id")
        self.utterance = utterance
        self._out: dict[int, list[Link]] = {n: [] for n in self.nodes}
        self._in: dict[int, list[Link]] = {n: [] for n in self.nodes}
        self._validate()

    def _validate(self) -> None:
        if not self.nodes:
            raise LatticeError("lattice has no nodes")
        for n, t in self.nodes.items():
            if not (t >= 0 and math.isfinite(t)):
                raise LatticeError(f"node {n} has invalid time {t}", f"node {n}")
        for l in self.links.values():
            for end in (l.start, l.end):
                if end not in self.nodes:
                    raise LatticeError(f"link {l.id} refers to missing node {end}", f"link {l.id}")
            if self.nodes[l.start] > self.nodes[l.end]:
                raise LatticeError(f"link {l.id} goes back in time", f"link {l.id}")
            self._out[l.start].append(l)
            self._in[l.end].append(l)
        starts = [n for n in self.nodes if not self._in[n]]
        ends = [n for n in self.nodes if not self._out[n]]
        if len(starts) != 1:
            raise LatticeError(f"multiple start nodes {starts}" if starts else "no start node",
                               f"nodes {starts}")
        if len(ends) != 1:
            raise LatticeError(f"multiple end nodes {ends}" if ends else "no end node", f"nodes {ends}")
        self.start = starts[0]
        self.end = ends[0]
        # Kahn's algorithm; leftovers sit on a cycle
        indeg = {n: len(self._in[n]) for n in self.nodes}
        order = []
        ready = [self.start]
        while ready:
            n = ready.pop()
            order.append(n)
            for l in self._out[n]:
                indeg[l.end] -= 1
                if indeg[l.end] == 0:
                    ready.append(l.end)
        if len(order) != len(self.nodes):
            bad = sorted(n for n in self.nodes if indeg[n] > 0)
            raise LatticeError(f"cycle through nodes {bad}", f"nodes {bad}")
        self.topo_order = order

    def out_links(self, node: int) -> list[Link]:
        return self._out[node]

    def in_links(self, node: int) -> list[Link]:
        return self._in[node]

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, Lattice) and self.nodes == other.nodes
                and self.links == other.links and self.utterance == other.utterance)

    def paths(self, start: int | None = None) -> Iterator[tuple[Link, ...]]:
        """All complete paths from ``start`` (default: the start node), DFS by link id."""
        node = self.start if start is None else start

        def walk(n, acc):
            if n == self.end:
                yield tuple(acc)
                return
            for l in self._out[n]:
                acc.append(l)
                yield from walk(l.end, acc)
                acc.pop()

        yield from walk(node, [])

    def count_paths(self) -> int:
        counts = {self.end: 1}
        for n in reversed(self.topo_order):
            if n != self.end:
                counts[n] = sum(counts[l.end] for l in self._out[n])
        return counts[self.start]


def path_words(path) -> list[str]:
    return [l.word for l in path]


# ---------------------------------------------------------------------------
# text I/O


def _fields(line: str, lineno: int) -> dict[str, str]:
    out = {}
    for item in line.split():
        key, sep, val = item.partition("=")
        if not sep:
            raise LatticeError(f"line {lineno}: malformed field {item!r}")
        out[key] = val
    return out


def read_lattice(text: str) -> Lattice:
    nodes: dict[int, float] = {}
    links: list[Link] = []
    header = None
    utterance = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        f = _fields(line, lineno)
        try:
            if "UTTERANCE" in f:
                utterance = f["UTTERANCE"]
            elif "N" in f and "L" in f:
                header = (int(f["N"]), int(f["L"]))
            elif "I" in f:
                node = int(f["I"])
                if node in nodes:
                    raise LatticeError(f"line {lineno}: duplicate node {node}", f"node {node}")
                nodes[node] = float(f["t"])
            elif "J" in f:
                links.append(Link(int(f["J"]), int(f["S"]), int(f["E"]), f["W"],
                                  float(f["a"]), float(f["n"])))
            else:
                raise LatticeError(f"line {lineno}: unrecognized line {line!r}")
        except KeyError as e:
            raise LatticeError(f"line {lineno}: missing field {e.args[0]}") from None
    if header is None:
        raise LatticeError("missing N=/L= header")
    if header != (len(nodes), len(links)):
        raise LatticeError(f"header says N={header[0]} L={header[1]}, found {len(nodes)} nodes "
                           f"and {len(links)} links")
    return Lattice(nodes, links, utterance)


def write_lattice(lat: Lattice) -> str:
    lines = []
    if lat.utterance is not None:
        lines.append(f"UTTERANCE={lat.utterance}")
    lines.append(f"N={len(lat.nodes)} L={len(lat.links)}")
    for n, t in lat.nodes.items():
        lines.append(f"I={n} t={t!r}")
    for l in lat.links.values():
        lines.append(f"J={l.id} S={l.start} E={l.end} W={l.word} a={l.am!r} n={l.lm!r}")
    return "\n".join(lines) + "\n"


def read_lattice_file(path: str | Path) -> Lattice:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    lat = read_lattice(raw.decode("utf-8"))
    if lat.utterance is None:
        name = Path(path).name
        for suffix in (".gz", ".lat"):
            name = name.removesuffix(suffix)
        lat.utterance = name
    return lat


def write_lattice_file(path: str | Path, lat: Lattice) -> None:
    data = write_lattice(lat).encode("utf-8")
    if str(path).endswith(".gz"):
        data = gzip.compress(data, mtime=0)
    Path(path).write_bytes(data)


# ---------------------------------------------------------------------------
# transforms


def split_links(lat: Lattice, tmap: TokenMap) -> Lattice:
    """Cut every link whose word has a split rule into two links.

    A fresh node at the time midpoint joins them. The first link carries the
    first part with zero scores, the second carries the second part with the
    original acoustic and LM scores. Links are renumbered in id order.
    """
    nodes = dict(lat.nodes)
    next_node = max(nodes) + 1
    links: list[Link] = []
    for l in lat.links.values():
        pair = tmap.split(l.word)
        if pair is None:
            links.append(Link(len(links), l.start, l.end, l.word, l.am, l.lm))
            continue
        mid = next_node
        next_node += 1
        nodes[mid] = (lat.nodes[l.start] + lat.nodes[l.end]) / 2.0
        links.append(Link(len(links), l.start, mid, pair[0], 0.0, 0.0))
        links.append(Link(len(links), mid, l.end, pair[1], l.am, l.lm))
    return Lattice(nodes, links, lat.utterance)


class BackwardTable:
    """h_L per node: best compensated n-gram score of any continuation to the end."""

    def __init__(self, values: dict[int, float]):
        self.values = values

    def __getitem__(self, node: int) -> float:
        return self.values[node]

    def __len__(self) -> int:
        return len(self.values)


def heuristic_link_score(link: Link, config: "SearchConfig") -> float:
    return link.am + config.lm_weight * (link.lm + config.comp) - config.ip


def backward_pass(lat: Lattice, config: "SearchConfig") -> BackwardTable:
    """Viterbi pass in reverse topological order.

    Per link the lookahead scores ``am + LMweight*(lm + logP_COMP) - logP_IP``.
    The ``LMweight*logP_FINAL`` bonus applies to suffixes of two or more
    links under the as-printed rule, and to every non-empty suffix under the
    inclusive rule; empty suffixes (the end node) score 0.
    """
    bonus = config.lm_weight * config.final
    inclusive = config.final_rule == "inclusive"
    best_any: dict[int, float] = {}
    h = {lat.end: 0.0}
    for n in reversed(lat.topo_order):
        if n == lat.end:
            continue
        any_len = -math.inf
        one = -math.inf
        longer = -math.inf
        for l in lat.out_links(n):
            c = heuristic_link_score(l, config)
            if l.end == lat.end:
                any_len = max(any_len, c)
                one = max(one, c)
            else:
                s = c + best_any[l.end]
                any_len = max(any_len, s)
                longer = max(longer, s)
        best_any[n] = any_len
        h[n] = any_len + bonus if inclusive else max(one, longer + bonus)
    return BackwardTable(h)
