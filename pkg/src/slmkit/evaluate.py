"""Word error rate, sign test and perplexity tables."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

from .corpus import TokenMap

logger = logging.getLogger(__name__)


@dataclass
class AlignmentResult:
    correct: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    pairs: list[tuple[str | None, str | None]] = field(default_factory=list)

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def ref_length(self) -> int:
        return self.correct + self.substitutions + self.deletions

    def __iadd__(self, other: "AlignmentResult") -> "AlignmentResult":
        self.correct += other.correct
        self.substitutions += other.substitutions
        self.deletions += other.deletions
        self.insertions += other.insertions
        return self


def align(ref: Sequence[str], hyp: Sequence[str]) -> AlignmentResult:
    """Unit-cost minimum edit alignment; ties prefer substitution, then deletion."""
    n, m = len(ref), len(hyp)
    cost = [list(range(m + 1))]
    for i in range(1, n + 1):
        r = ref[i - 1]
        prev = cost[-1]
        row = [i]
        left = i
        for j in range(1, m + 1):
            left = min(prev[j - 1] + (r != hyp[j - 1]), prev[j] + 1, left + 1)
            row.append(left)
        cost.append(row)
    out = AlignmentResult()
    i, j = n, m
    pairs = []
    while i or j:
        if i and j and cost[i][j] == cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] == hyp[j - 1]:
                out.correct += 1
            else:
                out.substitutions += 1
            pairs.append((ref[i - 1], hyp[j - 1]))
            i -= 1
            j -= 1
        elif i and cost[i][j] == cost[i - 1][j] + 1:
            out.deletions += 1
            pairs.append((ref[i - 1], None))
            i -= 1
        else:
            out.insertions += 1
            pairs.append((None, hyp[j - 1]))
            j -= 1
    out.pairs = pairs[::-1]
    return out


@dataclass
class WERResult:
    wer: float
    totals: AlignmentResult
    per_utterance: list[AlignmentResult]

    @property
    def errors(self) -> list[int]:
        return [a.errors for a in self.per_utterance]


def wer(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]], tmap: TokenMap | None = None) -> WERResult:
    """WER in percent after undoing the treebank split on the hypotheses.

    References are used as given.
    """
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references but {len(hyps)} hypotheses")
    totals = AlignmentResult()
    per = []
    for ref, hyp in zip(refs, hyps):
        if tmap is not None:
            hyp = tmap.denormalize(list(hyp))
        a = align(list(ref), list(hyp))
        per.append(a)
        totals += a
    n_ref = totals.ref_length
    rate = 100.0 * totals.errors / n_ref if n_ref else (0.0 if totals.errors == 0 else math.inf)
    return WERResult(rate, totals, per)


def sign_test(errors_a: Sequence[int], errors_b: Sequence[int]) -> float:
    """Two-sided exact sign test over utterances whose error counts differ."""
    if len(errors_a) != len(errors_b):
        raise ValueError("per-utterance error lists differ in length")
    wins = sum(a < b for a, b in zip(errors_a, errors_b))
    losses = sum(a > b for a, b in zip(errors_a, errors_b))
    n = wins + losses
    if n == 0:
        logger.warning("sign test: every utterance tied; returning p = 1")
        return 1.0
    k = min(wins, losses)
    tail = sum(math.comb(n, i) for i in range(k + 1)) / 2.0 ** n
    return min(1.0, 2.0 * tail)


def format_alignment(res: WERResult, ids: Sequence[str] | None = None) -> str:
    lines = []
    for idx, a in enumerate(res.per_utterance):
        uid = ids[idx] if ids else str(idx)
        ref = " ".join((r or "*" * len(h or "")) for r, h in a.pairs)
        hyp = " ".join((h or "*" * len(r or "")) for r, h in a.pairs)
        lines += [f"id: {uid}", f"REF: {ref}", f"HYP: {hyp}",
                  f"C={a.correct} S={a.substitutions} D={a.deletions} I={a.insertions}", ""]
    t = res.totals
    lines += [f"wer={res.wer!r}", f"ref_words={t.ref_length}", f"correct={t.correct}",
              f"substitutions={t.substitutions}", f"deletions={t.deletions}", f"insertions={t.insertions}"]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# perplexity


def _mix(lam: float, a: float, b: float) -> float:
    from .rescoring import _mix as mix

    return mix(lam, a, b)


def ppl_from_logprobs(logprobs: Sequence[float]) -> float:
    return math.exp(-sum(logprobs) / len(logprobs))


def interpolated_logprobs(first: Sequence[float], second: Sequence[float], lam: float) -> list[float]:
    return [_mix(lam, a, b) for a, b in zip(first, second)]


def report_ppl(first: Sequence[float], second: Sequence[float], lambdas: Sequence[float]) -> dict[float, float]:
    """Perplexity at each lambda of ``lambda * P_first + (1 - lambda) * P_second``.

    Inputs are per-token log-probabilities (every predicted token, ``</s>``
    included) of the two models on the same corpus. lambda = 1 reproduces the
    first model, lambda = 0 the second.
    """
    if len(first) != len(second):
        raise ValueError("models scored different numbers of tokens")
    return {lam: ppl_from_logprobs(interpolated_logprobs(first, second, lam)) for lam in lambdas}


def format_ppl_table(rows: dict[str, dict[float, float]]) -> str:
    lambdas = sorted({lam for r in rows.values() for lam in r})
    head = "model".ljust(24) + "".join(f"lambda={lam:<8g}" for lam in lambdas)
    lines = [head]
    for name, r in rows.items():
        lines.append(name.ljust(24) + "".join(f"{r[lam]:<15.4f}" for lam in lambdas))
    return "\n".join(lines) + "\n"
