"""Batch command line: ``slmkit <subcommand> ...``.

Every subcommand writes a key=value run manifest next to its main output
(``<output>.manifest`` unless ``--manifest`` says otherwise) and accepts the
lattice search flags. Values resolve as flags > ``--config`` file > defaults.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import random
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .corpus import HeadRules, TokenMap, Vocabulary, binarize_and_headify, read_corpus, \
    read_treebank_file, write_corpus, write_treebank
from .decoder import (FINAL_RULES, DecodeError, SearchConfig, aggregate, astar_decode, diagnose,
                      nbest, transcript)
from .evaluate import format_alignment, format_ppl_table, report_ppl, sign_test, wer
from .lattice import Lattice, read_lattice_file, split_links, write_lattice_file
from .ngram import NgramLM, train_trigram
from .rescoring import InterpolatedLM, LatticeNgramLM, RescoringLM, SLMRescorer, TrigramLM
from .slm import (Beams, SearchError, SLModel, best_parse, init_from_treebank,
                  reestimate_iterations, slm_sentence_logprob)

logger = logging.getLogger("slmkit")

# flag name -> (SearchConfig field, type, default)
SEARCH_FLAGS = {
    "lm-weight": ("lm_weight", float, 12.0),
    "logp-ip": ("ip", float, 10.0),
    "logp-comp": ("comp", float, 0.5),
    "logp-final": ("final", float, 2.0),
    "stack-depth-threshold": ("stack_depth", "depth", 30),
    "stack-logp-threshold": ("stack_logp", float, 100.0),
    "final-rule": ("final_rule", str, "as-printed"),
}
DEFAULT_LAMBDA = 0.4


class CLIError(Exception):
    pass


def _depth(text) -> int | None:
    if str(text).lower() in ("none", "inf", "unbounded"):
        return None
    return int(text)


def _convert(kind, text):
    return _depth(text) if kind == "depth" else kind(text)


# ---------------------------------------------------------------------------
# config and manifests


def read_config(path: str | Path) -> dict[str, str]:
    """``key=value`` lines; keys are the long flag names without dashes."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise CLIError(f"{path}:{lineno}: expected key=value")
        key = key.strip().lower()
        if key not in SEARCH_FLAGS and key != "lambda":
            raise CLIError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = val.strip()
    return out


def resolve_search(args) -> tuple[SearchConfig, float]:
    file_values = read_config(args.config) if args.config else {}
    kwargs = {}
    for flag, (name, kind, default) in SEARCH_FLAGS.items():
        val = getattr(args, name)
        if val is None:
            val = _convert(kind, file_values[flag]) if flag in file_values else default
        kwargs[name] = val
    lam = args.lam
    if lam is None:
        lam = float(file_values.get("lambda", DEFAULT_LAMBDA))
    try:
        return SearchConfig(**kwargs), lam
    except ValueError as e:
        raise CLIError(f"invalid search config: {e}") from None


def sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _rel(path, base: Path) -> str:
    return os.path.relpath(os.path.abspath(path), os.path.abspath(base))


class Run:
    """Tracks inputs and outputs of one subcommand for the manifest and cleanup."""

    def __init__(self, args):
        self.args = args
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.config: dict[str, object] = {}
        self.results: dict[str, object] = {}
        self.start = time.perf_counter()

    def input(self, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise CLIError(f"input not found: {p}")
        self.inputs.append(p)
        return p

    def output(self, path) -> Path:
        p = Path(path)
        if p.parent and not p.parent.exists():
            p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.outputs:
            if p.is_file():
                p.unlink()

    def manifest_path(self) -> Path | None:
        if self.args.manifest:
            return Path(self.args.manifest)
        if self.args.command == "pipeline":
            return Path(self.args.work) / "pipeline.manifest"
        if self.args.command == "split-lattice":
            return Path(str(Path(self.args.out_dir)) + ".manifest")
        files = [p for p in self.outputs if p.suffix != ".stats"]
        return Path(str(files[0]) + ".manifest") if files else None

    def write_manifest(self) -> Path | None:
        path = self.manifest_path()
        if path is None:
            return None
        base = path.parent
        lines = [f"subcommand={self.args.command}", f"version={__version__}", f"seed={self.args.seed}",
                 f"jobs={self.args.jobs}"]
        for key in sorted(self.config):
            val = self.config[key]
            lines.append(f"config.{key}={_rel(val, base) if isinstance(val, Path) else val}")
        for key in sorted(self.results):
            lines.append(f"result.{key}={self.results[key]!r}" if isinstance(self.results[key], float)
                         else f"result.{key}={self.results[key]}")
        for p in self.inputs:
            for f in _files(p):
                lines.append(f"input {_rel(f, base)}={sha256(f)}")
        for p in self.outputs:
            for f in _files(p):
                lines.append(f"output {_rel(f, base)}={sha256(f)}")
        if not self.args.deterministic:
            lines.append(f"elapsed_seconds={time.perf_counter() - self.start:.3f}")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def _files(p: Path) -> list[Path]:
    if p.is_dir():
        return sorted(f for f in p.rglob("*") if f.is_file() and not f.name.endswith(".manifest"))
    return [p] if p.is_file() else []


def parallel_map(fn: Callable, items: Sequence, jobs: int, init: Callable | None = None,
                 initargs: tuple = ()) -> list:
    """Order-preserving map; ``jobs == 1`` runs in-process."""
    if jobs <= 1 or len(items) <= 1:
        if init is not None:
            init(*initargs)
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs, initializer=init, initargs=initargs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def lattice_files(paths: Sequence[str]) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(f for f in p.iterdir() if f.name.endswith((".lat", ".lat.gz"))))
        else:
            out.append(p)
    if not out:
        raise CLIError("no lattices found")
    return out


def read_id_lines(path: str | Path, scored: bool = False) -> list[tuple[str, list[str]]]:
    """``<utt-id> <tokens>`` lines; with ``scored`` a score column follows the id."""
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if scored:
                if len(parts) < 2:
                    raise CLIError(f"{path}:{lineno}: missing score column")
                parts = [parts[0]] + parts[2:]
            out.append((parts[0], parts[1:]))
    return out


def read_vocab(path: str | Path, closed: bool = True) -> Vocabulary:
    tokens = [t for t in Path(path).read_text(encoding="utf-8").split() if t not in ("<s>", "</s>", "<unk>")]
    return Vocabulary(tokens, closed=closed)


# ---------------------------------------------------------------------------
# rescoring LMs (module-level state so worker processes load models once)

_WORKER: dict = {}


def _init_worker(trigram: str | None, slm: str | None, lam: float, beams: Beams | None,
                 config: SearchConfig, tmap_path: str | None, split: bool) -> None:
    tri = TrigramLM(NgramLM.load(trigram)) if trigram else None
    slm_lm = SLMRescorer(SLModel.load(slm), beams) if slm else None
    if tri and slm_lm:
        lm: RescoringLM = InterpolatedLM(tri, slm_lm, lam)
    else:
        lm = tri or slm_lm or LatticeNgramLM()
    _WORKER.update(lm=lm, config=config, split=split,
                   tmap=TokenMap.load(tmap_path) if tmap_path else TokenMap.default())


def _load_lattice(path: Path) -> Lattice:
    lat = read_lattice_file(path)
    return split_links(lat, _WORKER["tmap"]) if _WORKER["split"] else lat


def _decode_one(path: Path):
    lat = _load_lattice(path)
    lm = _WORKER["lm"]
    lm.reset()
    try:
        res = astar_decode(lat, lm, _WORKER["config"])
    except DecodeError as e:
        return lat.utterance, None, [], e.stats.as_dict() if e.stats else {}
    finally:
        lm.reset()
    return lat.utterance, res.score, res.words, res.stats.as_dict()


def _diagnose_one(item):
    path, n = item
    lat = _load_lattice(path)
    rep = diagnose(lat, _WORKER["lm"], _WORKER["config"], n)
    _WORKER["lm"].reset()
    return rep


def _lm_options(run: Run, args) -> tuple:
    for opt in ("trigram", "slm"):
        if getattr(args, opt):
            run.input(getattr(args, opt))
            run.config[opt] = Path(getattr(args, opt))
    beams = _beams(run, args)
    return args.trigram, args.slm, beams


def _beams(run: Run, args) -> Beams:
    if getattr(args, "beams", None):
        run.input(args.beams)
        run.config["beams"] = Path(args.beams)
        beams = Beams.load(args.beams)
    elif getattr(args, "exhaustive", False):
        beams = Beams.exhaustive()
    else:
        beams = Beams()
    run.config["slm-stack-depth"] = beams.stack_depth
    run.config["slm-stack-logp"] = beams.stack_logp
    run.config["slm-phase-beam"] = beams.phase_beam
    return beams


def _tokenmap(run: Run, args) -> TokenMap:
    if getattr(args, "tokenmap", None):
        run.input(args.tokenmap)
        run.config["tokenmap"] = Path(args.tokenmap)
        return TokenMap.load(args.tokenmap)
    return TokenMap.default()


# ---------------------------------------------------------------------------
# subcommands


def cmd_normalize(run: Run, args) -> None:
    tmap = _tokenmap(run, args)
    sents = read_corpus(run.input(args.input))
    fn = tmap.denormalize if args.undo else tmap.normalize
    write_corpus(run.output(args.output), (fn(s) for s in sents))
    run.config["undo"] = args.undo


def cmd_train_ngram(run: Run, args) -> None:
    sents = read_corpus(run.input(args.corpus))
    vocab = read_vocab(run.input(args.vocab), closed=not args.open_vocab) if args.vocab else None
    if vocab is None and args.open_vocab:
        vocab = Vocabulary.from_sentences(sents, closed=False)
    lm = train_trigram(sents, vocab, args.heldout_fraction)
    lm.save(run.output(args.output))
    run.config["heldout-fraction"] = args.heldout_fraction
    run.results["em_iterations"] = len(lm.model.em_trace)


def cmd_train_slm(run: Run, args) -> None:
    trees = read_treebank_file(run.input(args.treebank))
    rules = HeadRules.load(run.input(args.headrules)) if args.headrules else HeadRules.default()
    trees = [binarize_and_headify(t, rules) for t in trees]
    vocab = read_vocab(run.input(args.vocab), closed=not args.open_vocab) if args.vocab else None
    if vocab is None and args.open_vocab:
        vocab = Vocabulary.from_sentences((t.words() for t in trees), closed=False)
    model = init_from_treebank(trees, vocab, args.heldout_fraction)
    model.save(run.output(args.output))
    run.config["heldout-fraction"] = args.heldout_fraction
    run.results["trees"] = len(trees)


def _parse_one(sent):
    model, beams = _WORKER["slm_model"], _WORKER["beams"]
    try:
        return best_parse(model, sent, beams)
    except SearchError:
        return None


def _init_parser(model: SLModel, beams: Beams) -> None:
    _WORKER.update(slm_model=model, beams=beams)


def cmd_parse_transfer(run: Run, args) -> None:
    model = SLModel.load(run.input(args.model))
    sents = read_corpus(run.input(args.corpus))
    beams = _beams(run, args)
    if args.union_vocab:
        model = model.with_vocabulary(w for s in sents for w in s)
    run.config["union-vocab"] = args.union_vocab
    parses = parallel_map(_parse_one, sents, args.jobs, _init_parser, (model, beams))
    failed = sum(p is None for p in parses)
    if failed:
        logger.warning("%d of %d sentences got no parse and were dropped", failed, len(sents))
    write_treebank(run.output(args.output), (p for p in parses if p is not None), mark_heads=True)
    run.results["parsed"] = len(sents) - failed
    run.results["failed"] = failed


def cmd_reestimate(run: Run, args) -> None:
    model = SLModel.load(run.input(args.model))
    sents = read_corpus(run.input(args.corpus))
    beams = _beams(run, args)
    model, trace = reestimate_iterations(model, sents, args.n, beams, args.iterations, args.heldout_fraction)
    model.save(run.output(args.output))
    run.config.update({"n": args.n, "iterations": args.iterations, "heldout-fraction": args.heldout_fraction})
    for i, ll in enumerate(trace):
        run.results[f"loglik.{i}"] = ll


def cmd_split_lattice(run: Run, args) -> None:
    tmap = _tokenmap(run, args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for path in lattice_files(args.lattices):
        run.input(path)
        lat = split_links(read_lattice_file(path), tmap)
        write_lattice_file(run.output(out_dir / path.name), lat)
        count += 1
    run.results["lattices"] = count


def cmd_rescore(run: Run, args) -> None:
    config, lam = run.search
    trigram, slm, beams = _lm_options(run, args)
    tmap_path = args.tokenmap
    paths = [run.input(p) for p in lattice_files(args.lattices)]
    run.config["lambda"] = lam
    run.config["split"] = args.split
    results = parallel_map(_decode_one, paths, args.jobs, _init_worker,
                           (trigram, slm, lam, beams, config, tmap_path, args.split))
    out = run.output(args.output)
    stats_path = run.output(str(args.output) + ".stats")
    failures = 0
    totals: dict[str, int] = {}
    with open(out, "w", encoding="utf-8") as f, open(stats_path, "w", encoding="utf-8") as s:
        for uid, score, words, stats in results:
            if score is None:
                failures += 1
                logger.error("%s: search failure", uid)
                f.write(f"{uid} -inf\n")
            else:
                f.write(" ".join([uid, repr(score)] + words) + "\n")
            s.write(f"utterance={uid}\n" + "".join(f"{k}={v}\n" for k, v in stats.items())
                    + f"failure={'search-failure' if score is None else 'none'}\n\n")
            for k, v in stats.items():
                totals[k] = totals.get(k, 0) + v
        s.write(f"lattices={len(results)}\nsearch_failures={failures}\n")
        s.write("".join(f"total_{k}={v}\n" for k, v in totals.items()))
    run.results["lattices"] = len(results)
    run.results["search_failures"] = failures


def cmd_nbest(run: Run, args) -> None:
    config, _ = run.search
    tmap = _tokenmap(run, args) if args.split else None
    with open(run.output(args.output), "w", encoding="utf-8") as f:
        for path in lattice_files(args.lattices):
            lat = read_lattice_file(run.input(path))
            if tmap is not None:
                lat = split_links(lat, tmap)
            for rank, (links, score) in enumerate(nbest(lat, config, args.n)):
                f.write(" ".join([lat.utterance, str(rank), repr(score)] + transcript(links)) + "\n")
    run.config["n"] = args.n


def cmd_diagnose(run: Run, args) -> None:
    config, lam = run.search
    trigram, slm, beams = _lm_options(run, args)
    paths = [run.input(p) for p in lattice_files(args.lattices)]
    run.config.update({"lambda": lam, "n": args.n, "split": args.split})
    reports = parallel_map(_diagnose_one, [(p, args.n) for p in paths], args.jobs, _init_worker,
                           (trigram, slm, lam, beams, config, args.tokenmap, args.split))
    summary = aggregate(reports)
    with open(run.output(args.output), "w", encoding="utf-8") as f:
        for rep in reports:
            f.write(rep.as_text() + "\n")
        f.write(summary.as_text())
    run.results["mean_rank"] = summary.mean_rank
    run.results["offending"] = summary.offending


def cmd_ppl(run: Run, args) -> None:
    sents = read_corpus(run.input(args.corpus))
    if not (args.trigram or args.slm):
        raise CLIError("ppl needs --trigram and/or --slm")
    beams = _beams(run, args)
    cols = {}
    if args.trigram:
        lm = NgramLM.load(run.input(args.trigram))
        cols["trigram"] = [lp for s in sents for lp in lm.sentence_logprobs(s)]
    if args.slm:
        model = SLModel.load(run.input(args.slm))
        cols["slm"] = [lp for s in sents for lp in slm_sentence_logprob(model, s, beams)[1]]
    lambdas = [float(x) for x in args.lambdas.split(",")]
    if len(cols) == 2:
        table = report_ppl(cols["trigram"], cols["slm"], lambdas)
    else:
        (name, lps), = cols.items()
        table = {lam: report_ppl(lps, lps, [1.0])[1.0] for lam in lambdas}
        logger.info("single model (%s): every lambda column is that model", name)
    run.config["lambdas"] = args.lambdas
    text = format_ppl_table({"+".join(cols): table})
    text += "".join(f"ppl@{lam!r}={v!r}\n" for lam, v in table.items())
    Path(run.output(args.output)).write_text(text, encoding="utf-8")
    for lam, v in table.items():
        run.results[f"ppl@{lam!r}"] = v


def _hyps_by_id(path, scored: bool) -> dict[str, list[str]]:
    return dict(read_id_lines(path, scored))


def cmd_wer(run: Run, args) -> None:
    tmap = _tokenmap(run, args)
    refs = read_id_lines(run.input(args.refs))
    ids = [uid for uid, _ in refs]
    hyp_sets = [_hyps_by_id(run.input(h), args.scored) for h in [args.hyps] + ([args.compare] if args.compare else [])]
    results = []
    for hyps in hyp_sets:
        missing = [uid for uid in ids if uid not in hyps]
        if missing:
            raise CLIError(f"no hypothesis for {len(missing)} utterances (first: {missing[0]})")
        results.append(wer([r for _, r in refs], [hyps[uid] for uid in ids], tmap))
    text = format_alignment(results[0], ids)
    run.results["wer"] = results[0].wer
    if len(results) == 2:
        p = sign_test(results[0].errors, results[1].errors)
        text += f"compare_wer={results[1].wer!r}\nsign_test_p={p!r}\n"
        run.results["compare_wer"] = results[1].wer
        run.results["sign_test_p"] = p
    Path(run.output(args.output)).write_text(text, encoding="utf-8")


def cmd_synth(run: Run, args) -> None:
    from .synth import write_toy

    out = Path(args.out_dir)
    write_toy(out, seed=args.seed)
    run.output(out)


def cmd_pipeline(run: Run, args) -> None:
    """init -> parse transfer -> retrain -> split -> rescore -> score."""
    data = Path(args.data)
    work = Path(args.work)
    work.mkdir(parents=True, exist_ok=True)
    for name in ("treebank.txt", "corpus.txt", "test.txt", "refs.txt", "vocab.txt", "lattices"):
        run.input(data / name)
    common = ["--seed", str(args.seed), "--jobs", str(args.jobs), "--log-level", args.log_level]
    if args.deterministic:
        common.append("--deterministic")
    if args.config:
        common += ["--config", args.config]
    for flag, (name, _, _) in SEARCH_FLAGS.items():
        val = getattr(args, name)
        if val is not None:
            common += [f"--{flag}", str(val)]
    beams = ["--beams", args.beams] if args.beams else []
    w = lambda name: str(work / name)  # noqa: E731
    vocab = str(data / "vocab.txt")
    steps = [
        ["normalize", str(data / "corpus.txt"), w("corpus.norm")],
        ["normalize", str(data / "test.txt"), w("test.norm")],
        ["train-slm", str(data / "treebank.txt"), w("slm.init"), "--vocab", vocab],
        ["parse-transfer", w("slm.init"), w("corpus.norm"), w("transfer.trees"), "--union-vocab"] + beams,
        ["train-slm", w("transfer.trees"), w("slm.retrained"), "--vocab", vocab],
    ]
    slm = w("slm.retrained")
    if args.em_iterations:
        steps.append(["reestimate", slm, w("corpus.norm"), w("slm.em"), "--n", str(args.em_n),
                      "--iterations", str(args.em_iterations)] + beams)
        slm = w("slm.em")
    lam = [] if args.lam is None else ["--lambda", str(args.lam)]
    steps += [
        ["train-ngram", w("corpus.norm"), w("trigram.lm"), "--vocab", vocab],
        ["split-lattice", str(data / "lattices"), "--out-dir", w("lattices")],
        ["rescore", w("lattices"), "--trigram", w("trigram.lm"), "--output", w("trigram.hyp")],
        ["rescore", w("lattices"), "--trigram", w("trigram.lm"), "--slm", slm,
         "--output", w("interp.hyp")] + lam + beams,
        ["wer", str(data / "refs.txt"), w("interp.hyp"), "--scored", "--compare", w("trigram.hyp"),
         "--output", w("wer.txt")],
        ["ppl", w("test.norm"), "--trigram", w("trigram.lm"), "--slm", slm, "--output", w("ppl.txt")] + beams,
    ]
    for step in steps:
        logger.info("pipeline: %s", " ".join(step[:1]))
        code = main(step + common)
        if code:
            raise CLIError(f"pipeline step {step[0]} failed with exit code {code}")
        if step[0] != "split-lattice":
            out = step[2] if step[0] in ("normalize", "train-slm", "train-ngram") else \
                step[3] if step[0] in ("parse-transfer", "reestimate") else step[step.index("--output") + 1]
            run.outputs.append(Path(out))
    run.outputs.append(work / "lattices")
    run.results.update(_summary(work))
    (work / "summary.txt").write_text("".join(f"{k}={v!r}\n" for k, v in sorted(run.results.items())),
                                      encoding="utf-8")
    run.outputs.append(work / "summary.txt")


def _summary(work: Path) -> dict:
    out = {}
    for name in ("wer.txt", "ppl.txt"):
        for line in (work / name).read_text(encoding="utf-8").splitlines():
            key, sep, val = line.partition("=")
            if sep and (key in ("wer", "compare_wer", "sign_test_p") or key.startswith("ppl@")):
                out[key] = float(val)
    return out


COMMANDS = {
    "normalize": cmd_normalize,
    "train-ngram": cmd_train_ngram,
    "train-slm": cmd_train_slm,
    "parse-transfer": cmd_parse_transfer,
    "reestimate": cmd_reestimate,
    "split-lattice": cmd_split_lattice,
    "rescore": cmd_rescore,
    "nbest": cmd_nbest,
    "diagnose": cmd_diagnose,
    "ppl": cmd_ppl,
    "wer": cmd_wer,
    "synth": cmd_synth,
    "pipeline": cmd_pipeline,
}


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("lattice search")
    for flag, (name, kind, default) in SEARCH_FLAGS.items():
        conv = _depth if kind == "depth" else kind
        extra = {"choices": FINAL_RULES} if flag == "final-rule" else {}
        g.add_argument(f"--{flag}", dest=name, type=conv, default=None, metavar=flag.split("-")[-1].upper(),
                       help=f"default: {default}", **extra)
    g.add_argument("--lambda", dest="lam", type=float, default=None,
                   help=f"trigram weight when interpolating with the SLM (default: {DEFAULT_LAMBDA})")
    r = p.add_argument_group("run")
    r.add_argument("--config", help="key=value file of search settings (flags override it)")
    r.add_argument("--manifest", help="manifest path (default: <output>.manifest)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--jobs", type=int, default=1, help="worker processes; 1 is the reference mode")
    r.add_argument("--deterministic", action="store_true", help="omit timing from the manifest")
    r.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _lm_args(p):
    p.add_argument("--trigram", help="n-gram LM file")
    p.add_argument("--slm", help="SLM container; with --trigram the two are interpolated")
    p.add_argument("--beams", help="SLM beam file (stack-depth-threshold, stack-logP-threshold, phase-beam)")
    p.add_argument("--split", action="store_true", help="apply the token-map split to lattices first")
    p.add_argument("--tokenmap")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slmkit", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"slmkit {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("normalize", help="convert corpus tokenization to the treebank split")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--undo", action="store_true", help="merge split tokens back")
    p.add_argument("--tokenmap")

    p = sub.add_parser("train-ngram", help="train a deleted-interpolation trigram")
    p.add_argument("corpus")
    p.add_argument("output")
    p.add_argument("--vocab")
    p.add_argument("--open-vocab", action="store_true")
    p.add_argument("--heldout-fraction", type=float, default=0.05)

    p = sub.add_parser("train-slm", help="train an SLM from a treebank")
    p.add_argument("treebank")
    p.add_argument("output")
    p.add_argument("--vocab")
    p.add_argument("--open-vocab", action="store_true")
    p.add_argument("--headrules")
    p.add_argument("--heldout-fraction", type=float, default=0.05)

    p = sub.add_parser("parse-transfer", help="best-parse a corpus and write a treebank")
    p.add_argument("model")
    p.add_argument("corpus")
    p.add_argument("output")
    p.add_argument("--union-vocab", action="store_true",
                   help="extend the model vocabulary with the corpus words")
    p.add_argument("--beams")
    p.add_argument("--exhaustive", action="store_true")

    p = sub.add_parser("reestimate", help="N-best EM on a text corpus")
    p.add_argument("model")
    p.add_argument("corpus")
    p.add_argument("output")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--iterations", type=int, default=1)
    p.add_argument("--heldout-fraction", type=float, default=0.05)
    p.add_argument("--beams")
    p.add_argument("--exhaustive", action="store_true")

    p = sub.add_parser("split-lattice", help="split contraction links")
    p.add_argument("lattices", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--tokenmap")

    p = sub.add_parser("rescore", help="A* lattice decoding")
    p.add_argument("lattices", nargs="+")
    p.add_argument("--output", required=True)
    _lm_args(p)

    p = sub.add_parser("nbest", help="N-best paths under the lattice n-gram scores")
    p.add_argument("lattices", nargs="+")
    p.add_argument("--output", required=True)
    p.add_argument("--n", type=int, default=25)
    p.add_argument("--split", action="store_true")
    p.add_argument("--tokenmap")

    p = sub.add_parser("diagnose", help="rank the A* output among N-best samples")
    p.add_argument("lattices", nargs="+")
    p.add_argument("--output", required=True)
    p.add_argument("--n", type=int, default=25)
    _lm_args(p)

    p = sub.add_parser("ppl", help="perplexity table over an interpolation grid")
    p.add_argument("corpus")
    p.add_argument("--output", required=True)
    p.add_argument("--trigram")
    p.add_argument("--slm")
    p.add_argument("--beams")
    p.add_argument("--exhaustive", action="store_true")
    p.add_argument("--lambdas", default="0.0,0.4,1.0")

    p = sub.add_parser("wer", help="WER after undoing the token split")
    p.add_argument("refs")
    p.add_argument("hyps")
    p.add_argument("--output", required=True)
    p.add_argument("--scored", action="store_true", help="hyps are decoder output with a score column")
    p.add_argument("--compare", help="second hypothesis file for a sign test")
    p.add_argument("--tokenmap")

    p = sub.add_parser("synth", help="write the synthetic toy data set")
    p.add_argument("out_dir")

    p = sub.add_parser("pipeline", help="run the full toy pipeline")
    p.add_argument("--data", required=True, help="directory written by `slmkit synth`")
    p.add_argument("--work", required=True)
    p.add_argument("--beams")
    p.add_argument("--em-iterations", type=int, default=0)
    p.add_argument("--em-n", type=int, default=10)

    for sp in sub.choices.values():
        _common(sp)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(args.log_level)
    random.seed(args.seed)
    run = Run(args)
    try:
        run.search = resolve_search(args)
        config, lam = run.search
        for f in fields(config):
            run.config[f.name] = getattr(config, f.name)
        if not 0.0 <= lam <= 1.0:
            raise CLIError("--lambda must lie in [0, 1]")
        COMMANDS[args.command](run, args)
        run.write_manifest()
    except Exception as e:  # noqa: BLE001 - every failure becomes an exit code
        run.cleanup()
        if isinstance(e, (CLIError, OSError, ValueError, KeyError, SearchError, DecodeError)):
            logger.error("%s failed: %s: %s", args.command, type(e).__name__, e)
            logger.debug("traceback", exc_info=True)
            return 1
        logger.exception("%s failed", args.command)
        return 2
    return 0


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
