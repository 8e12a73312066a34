"""Builders and oracles shared by the test modules."""

import random
import zlib

from slmkit.corpus import Tree, Vocabulary
from slmkit.decoder import SearchConfig
from slmkit.lattice import Lattice, Link, heuristic_link_score
from slmkit.rescoring import RescoringLM, TableLM
from slmkit.slm import init_from_treebank


def leaf(tag, word):
    return Tree(tag, (), word)


def node(label, *kids):
    return Tree(label, tuple(kids))


def random_binary_tree(rng: random.Random, words, tags, labels) -> Tree:
    """Random binary headed tree over ``words`` with random tags, labels and heads."""
    leaves = [Tree(rng.choice(tags), (), w) for w in words]

    def build(items):
        if len(items) == 1:
            return items[0]
        cut = rng.randrange(1, len(items))
        left, right = build(items[:cut]), build(items[cut:])
        h = rng.randrange(2)
        return Tree(rng.choice(labels), (left, right), headword=(left, right)[h].head, head_child=h)

    return build(leaves)


def random_lattice(rng: random.Random, n_nodes: int, n_links: int, words=("a", "b", "c", "d"),
                   am_range=(-30.0, -1.0), lm_range=(-6.0, -0.1)) -> Lattice:
    """Random DAG with a unique start (0) and end (n-1); nodes in time order.

    A spine 0 -> 1 -> ... -> n-1 guarantees connectivity; every extra link
    goes forward in node order.
    """
    links = []

    def add(s, e):
        links.append(Link(len(links), s, e, rng.choice(words), rng.uniform(*am_range), rng.uniform(*lm_range)))

    for i in range(n_nodes - 1):
        add(i, i + 1)
    while len(links) < n_links and n_nodes > 1:
        s = rng.randrange(n_nodes - 1)
        e = rng.randrange(s + 1, n_nodes)
        add(s, e)
    nodes = {i: float(i) * 0.1 for i in range(n_nodes)}
    return Lattice(nodes, links, f"rand-{n_nodes}-{n_links}")


def diamond(scores=None, words=("a", "b", "c", "d")) -> Lattice:
    """0 -> 1 -> 3 and 0 -> 2 -> 3."""
    scores = scores or [(-10.0, -1.0), (-10.0, -1.0), (-12.0, -2.0), (-12.0, -2.0)]
    spec = [(0, 1), (1, 3), (0, 2), (2, 3)]
    links = [Link(i, s, e, words[i], am, lm) for i, ((s, e), (am, lm)) in enumerate(zip(spec, scores))]
    return Lattice({0: 0.0, 1: 0.5, 2: 0.5, 3: 1.0}, links, "diamond")


def random_model(seed, vocab=("a", "b", "c"), tags=("T1", "T2"), labels=("X", "Y"), n_trees=12, max_len=4):
    """Small SLM initialised from random headed trees; returns (model, trees)."""
    rng = random.Random(seed)
    trees = [random_binary_tree(rng, [rng.choice(vocab) for _ in range(rng.randint(1, max_len))], tags, labels)
             for _ in range(n_trees)]
    return init_from_treebank(trees, Vocabulary(vocab)), trees


def suffix_oracle(lat, config, v):
    """Max over every v -> end path of the summed heuristic, right to left."""
    if v == lat.end:
        return 0.0
    best = None
    for path in lat.paths(v):
        total = 0.0
        for l in reversed(path):
            total = heuristic_link_score(l, config) + total
        if config.final_rule == "inclusive" or len(path) >= 2:
            total += config.lm_weight * config.final
        best = total if best is None else max(best, total)
    return best


class OffsetLM(RescoringLM):
    """Lattice n-gram score plus a history-dependent offset in [-spread, comp].

    With ``comp`` equal to the search compensation every link satisfies the
    admissibility condition, some of them with equality.
    """

    def __init__(self, comp, spread=3.0):
        self.comp = comp
        self.spread = spread

    def link_logprob(self, history, link):
        u = zlib.crc32(repr((tuple(history), link.id)).encode()) / 2**32
        return link.lm + self.comp - u * (self.comp + self.spread)


def fell_off_counterexample():
    """Link 2's prefix looks worse to the lookahead, but c-d wins under the rescoring LM."""
    lat = diamond(scores=[(-10.0, -1.0), (-10.0, -1.0), (-11.0, -1.0), (-10.0, -1.0)])
    lm = TableLM({((), "a"): -1.0, (("a",), "b"): -4.0, ((), "c"): -1.0, (("c",), "d"): -1.0})
    cfg = SearchConfig(lm_weight=1.0, ip=0.0, comp=1.0, final=0.0)
    return lat, lm, cfg
