"""N-best EM reestimation of the SLM component models."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

from ..ngram import split_heldout
from .model import SLModel, train_components
from .search import Beams, SearchError, _logsumexp, complete_parses

logger = logging.getLogger(__name__)


@dataclass
class EStep:
    """Posterior-weighted N-best derivations for a corpus."""

    derivations: list[list[tuple[tuple, float]]] = field(default_factory=list)
    loglik: float = 0.0
    skipped: list[int] = field(default_factory=list)


def nbest_posteriors(model: SLModel, sentence: Sequence[str], n: int,
                     beams: Beams) -> tuple[list[tuple[tuple, float]], float]:
    """Top-``n`` complete parses with posteriors renormalized over that set.

    Also returns log of the summed joint probability of the set.
    """
    done = complete_parses(model, sentence, beams)[:n]
    if not done:
        raise SearchError("no complete parse survived")
    z = _logsumexp(p.logprob for p in done)
    return [(p.ops, math.exp(p.logprob - z)) for p in done], z


def e_step(model: SLModel, corpus: Sequence[Sequence[str]], n: int, beams: Beams) -> EStep:
    out = EStep()
    for i, sent in enumerate(corpus):
        try:
            posts, z = nbest_posteriors(model, sent, n, beams)
        except SearchError:
            logger.warning("sentence %d: search starved, skipped", i)
            out.skipped.append(i)
            out.derivations.append([])
            continue
        out.derivations.append(posts)
        out.loglik += z
    return out


def nbest_loglik(model: SLModel, corpus: Sequence[Sequence[str]], n: int, beams: Beams) -> float:
    """Sum over sentences of log sum of P(W, T) over the N-best parses."""
    return e_step(model, corpus, n, beams).loglik


@dataclass
class ReestimationReport:
    loglik_before: float
    skipped: int
    sentences: int


def reestimate(model: SLModel, corpus: Sequence[Sequence[str]], n: int, beams: Beams,
               heldout_fraction: float = 0.05) -> tuple[SLModel, ReestimationReport]:
    """One N-best EM iteration.

    Fractional counts come from every sentence's top-``n`` parses weighted
    by their renormalized posteriors; the last ``heldout_fraction`` of the
    corpus supplies the held-out counts for the interpolation weights. With
    ``heldout_fraction = 0`` the weights are fit on the training counts
    themselves, which keeps the M-step close to maximum likelihood so that
    exhaustive EM does not lose training likelihood.
    """
    if n < 1:
        raise ValueError("N must be at least 1")
    est = e_step(model, corpus, n, beams)
    if est.skipped:
        logger.warning("%d of %d sentences skipped", len(est.skipped), len(corpus))
    if heldout_fraction > 0:
        train_d, held_d = split_heldout(est.derivations, heldout_fraction)
    else:
        train_d = held_d = est.derivations
    train = [item for sent in train_d for item in sent]
    held = [item for sent in held_d for item in sent]
    if not held:
        # every held-out sentence starved; fall back to the training derivations
        held = train
    new = train_components(train, held, model.vocab, model.tags, model.labels)
    return new, ReestimationReport(est.loglik, len(est.skipped), len(corpus))


def reestimate_iterations(model: SLModel, corpus: Sequence[Sequence[str]], n: int, beams: Beams,
                          iterations: int, heldout_fraction: float = 0.05) -> tuple[SLModel, list[float]]:
    """Run several EM iterations; returns the model and the N-best log-likelihood
    trace (one entry per model, starting with the input)."""
    trace = []
    for it in range(iterations):
        model, report = reestimate(model, corpus, n, beams, heldout_fraction)
        trace.append(report.loglik_before)
        logger.info("iteration %d: N-best log-likelihood before %.4f", it + 1, report.loglik_before)
    trace.append(nbest_loglik(model, corpus, n, beams))
    for a, b in zip(trace, trace[1:]):
        if b < a:
            logger.info("N-best likelihood decreased (%.6f -> %.6f); expected under pruning", a, b)
    return model, trace
