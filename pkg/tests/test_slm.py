import math
import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

import slm_oracle
from helpers import leaf, node, random_binary_tree, random_model
from slmkit.corpus import EOS, HeadRules, Vocabulary, VocabularyError, binarize_and_headify, read_treebank
from slmkit.ngram import train_trigram
from slmkit.slm import (NULL, TOP, Beams, IllegalActionError, ParsePrefix, SearchError, SLMError, SLModel,
                        advance, apply_action, best_parse, complete_parses, derivation_tree,
                        extend_with_word, init_from_treebank, posterior_weights, reestimate,
                        reestimate_iterations, replay, slm_sentence_logprob, slm_word_logprob,
                        slm_word_prob, tree_derivation, trigram_equivalent_model)
from slmkit.slm.model import BOS_HEAD, collect_events, train_components
from slmkit.slm.reestimate import e_step, nbest_posteriors

EXH = Beams.exhaustive()


def single_label_model():
    """One tag, one label, no TOP: adjoins are X only."""
    trees = [node("X", leaf("T", "a"), leaf("T", "b")), leaf("T", "a")]
    trees = [binarize_and_headify(t, HeadRules()) for t in trees]
    derivs = [(tree_derivation(t), 1.0) for t in trees]
    vocab = Vocabulary(["a", "b"])
    # swap the final AL:TOP for AL:X so the label set stays {X}
    derivs = [(tuple("AL:X" if op == "AL:" + TOP else op for op in d), w) for d, w in derivs]
    return train_components(derivs, derivs, vocab, ["T"], ["X"])


# -- heads and actions -------------------------------------------------------

def _prefix(*heads):
    return ParsePrefix(2, (BOS_HEAD,) + heads, 0.0, ())


def test_apply_action_examples():
    p = _prefix(("the", "DT"), ("cat", "NN"))
    assert apply_action(p, "AR:NP").heads == (BOS_HEAD, ("cat", "NP"))
    assert apply_action(p, "AL:NP").heads == (BOS_HEAD, ("the", "NP"))
    one = _prefix(("cat", "NN"))
    assert apply_action(one, NULL).heads == one.heads
    assert apply_action(one, NULL).ops == (NULL,)
    with pytest.raises(IllegalActionError):
        apply_action(one, "AL:NP")


def test_apply_action_adds_parser_factor():
    model, _ = random_model(0)
    p = ParsePrefix(2, (BOS_HEAD, ("a", "T1"), ("b", "T2")), -1.0, ())
    q = apply_action(p, "AL:X", model)
    assert q.logprob == -1.0 + model.parser.logprob((("b", "T2"), ("a", "T1")), "AL:X")


def test_first_word_gives_single_head_per_tag():
    model, _ = random_model(1)
    out = extend_with_word(ParsePrefix.initial(), model, "a", EXH)
    assert sorted(p.heads[-1][1] for p in out) == sorted(model.tags)
    assert all(p.ops[-1] == NULL and len(p.heads) == 2 for p in out)


def test_two_head_enumeration_single_label():
    model = single_label_model()
    start = extend_with_word(ParsePrefix.initial(), model, "a", EXH)
    assert len(start) == 1
    out = extend_with_word(start[0], model, "b", EXH)
    assert sorted(p.ops[-2:] for p in out) == sorted([("T:T", NULL), ("AL:X", NULL), ("AR:X", NULL)])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_extensions_sum_to_one(seed):
    model, _ = random_model(seed)
    stack = advance([ParsePrefix.initial()], model, "a", EXH)
    stack = advance(stack, model, "b", EXH)
    for prefix in stack:
        total = 0.0
        for w in model.vocab.predictable():
            if w == EOS:
                continue
            total += sum(math.exp(p.logprob - prefix.logprob) for p in extend_with_word(prefix, model, w, EXH))
        eos = math.exp(model.predict_logprob(prefix.heads, EOS))
        assert total + eos == pytest.approx(1.0, abs=1e-9)


def test_components_normalized():
    model, _ = random_model(2)
    for ctx in [(("a", "T1"), BOS_HEAD), (("a", "X"), ("b", "Y")), (("zz", "Q"), ("b", "T2"))]:
        for dist in (model.predictor.distribution(ctx), model.parser.distribution(ctx)):
            assert math.fsum(dist.values()) == pytest.approx(1.0, abs=1e-9)
    for ctx in [("a", "T1", "<s>"), ("c", "X", "Y")]:
        assert math.fsum(model.tagger.distribution(ctx).values()) == pytest.approx(1.0, abs=1e-9)


# -- derivations -------------------------------------------------------------

def test_tree_derivation_hand():
    t = node("NP", leaf("DT", "the"), leaf("NN", "cat"))
    t = binarize_and_headify(t, HeadRules.parse("NP\trightmost\n"))
    ops = tree_derivation(t)
    assert ops == ("W:the", "T:DT", NULL, "W:cat", "T:NN", "AR:NP", NULL, "W:</s>", "T:</s>", "AL:TOP", NULL)
    _, _, events = replay(ops)
    preds = [(ctx, ev) for comp, ctx, ev in events if comp == "predictor"]
    assert preds[0] == ((BOS_HEAD, ("<b>", "<b>")), "the")
    assert preds[1] == ((("the", "DT"), BOS_HEAD), "cat")
    assert ("parser", (("cat", "NN"), ("the", "DT")), "AR:NP") in events


def test_predictor_event_count_per_tree():
    model, trees = random_model(4)
    for t in trees:
        _, _, events = replay(tree_derivation(t))
        assert sum(comp == "predictor" for comp, _, _ in events) == len(t.words()) + 1


def test_init_errors():
    with pytest.raises(SLMError):
        init_from_treebank([])
    with pytest.raises(SLMError):
        init_from_treebank([node("S", leaf("A", "a"), leaf("B", "b"), leaf("C", "c"))] * 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_derivation_round_trip(seed):
    rng = random.Random(seed)
    t = random_binary_tree(rng, [rng.choice("abc") for _ in range(rng.randint(1, 6))], ["T1", "T2"], ["X", "Y"])
    ops = tree_derivation(t)
    assert derivation_tree(ops) == t
    heads, _, _ = replay(ops)
    assert heads == (BOS_HEAD, (t.head, TOP))


def test_collect_events_matches_plain_replay():
    model, trees = random_model(5)
    derivs = [(tree_derivation(t), w) for t, w in zip(trees, [1.0, 0.5, 2.0] * 4)]
    plain = Counter()
    for ops, w in derivs:
        for comp, ctx, ev in replay(ops)[2]:
            plain[comp, ctx, ev] += w
    got = Counter()
    for comp, items in collect_events(derivs).items():
        for ctx, ev, w in items:
            got[comp, ctx, ev] += w
    assert set(got) == set(plain)
    for key in plain:
        assert got[key] == pytest.approx(plain[key], rel=1e-12)


def test_search_prefixes_replay_bit_exact():
    model, _ = random_model(6)
    stack = [ParsePrefix.initial()]
    for w in ["a", "b", "c", "a", EOS]:
        stack = advance(stack, model, w, Beams(stack_depth=50, stack_logp=30.0, phase_beam=30.0))
        for p in stack:
            heads, lp, _ = replay(p.ops, model)
            assert heads == p.heads
            assert lp == p.logprob


# -- search against brute force ----------------------------------------------

@pytest.mark.parametrize("n,tags", [(1, ("T1", "T2")), (2, ("T1", "T2")), (3, ("T1", "T2")), (4, ("T1",))])
def test_complete_parse_count(n, tags):
    model, _ = random_model(7, labels=("X",), tags=tags)
    words = ["a", "b", "c", "a"][:n]
    found = complete_parses(model, words, EXH)
    L, T = len(model.labels), len(model.tags)
    expected = slm_oracle.catalan(n) * (2 * L) ** n * T ** n
    assert len(found) == expected
    assert len({p.ops for p in found}) == expected
    oracle = dict(slm_oracle.complete_parses(model, words))
    assert len(oracle) == expected
    for p in found:
        assert p.logprob == pytest.approx(oracle[p.ops], rel=1e-12, abs=1e-12)


def test_best_parse_two_words_brute_force():
    model, _ = random_model(8)
    oracle = slm_oracle.complete_parses(model, ["b", "a"])
    best_ops = min(oracle, key=lambda o: (-o[1], o[0]))[0]
    assert best_parse(model, ["b", "a"], EXH) == derivation_tree(best_ops)


def test_best_parse_one_word_argmax_tag():
    model, _ = random_model(9)
    t = best_parse(model, ["a"], EXH)
    assert t.is_preterminal
    oracle = slm_oracle.complete_parses(model, ["a"])
    best = max(oracle, key=lambda o: o[1])[0]
    assert t.label == best[1][2:]


def test_best_parse_degenerate_treebank():
    text = "(S^R (NP^R (DT the) (NN cat)) (VP^L (VBZ sits) (RB here)))"
    (tree,) = read_treebank(text)
    other = read_treebank("(S^R (PRP it) (VBZ sits))")[0]
    model = init_from_treebank([tree] * 20 + [other] * 5 + [tree])
    assert best_parse(model, tree.words(), Beams()) == tree


def test_word_prob_single_parse_is_predictor():
    model, _ = random_model(10)
    p = ParsePrefix(1, (BOS_HEAD, ("a", "T1")), -2.0, ())
    assert slm_word_logprob([p], model, "b") == model.predict_logprob(p.heads, "b")


def test_word_prob_two_equal_parses_mean():
    model, _ = random_model(11)
    p = ParsePrefix(2, (BOS_HEAD, ("a", "X")), -3.0, ("x",))
    q = ParsePrefix(2, (BOS_HEAD, ("a", "T1"), ("b", "T2")), -3.0, ("y",))
    want = 0.5 * (math.exp(model.predict_logprob(p.heads, "c")) + math.exp(model.predict_logprob(q.heads, "c")))
    assert slm_word_prob([p, q], model, "c") == pytest.approx(want, rel=1e-12)
    with pytest.raises(SearchError):
        slm_word_logprob([], model, "c")


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_word_prob_matches_enumeration(seed):
    model, _ = random_model(seed)
    rng = random.Random(seed)
    words = [rng.choice("abc") for _ in range(3)]
    stack = [ParsePrefix.initial()]
    for k in range(len(words) + 1):
        for w in ("a", EOS):
            assert slm_word_prob(stack, model, w) == pytest.approx(slm_oracle.word_prob(model, words, k, w),
                                                                   rel=1e-10)
        if k < len(words):
            stack = advance(stack, model, words[k], EXH)


def test_rho_sums_to_one_under_pruning():
    model, _ = random_model(12)
    stack = [ParsePrefix.initial()]
    for w in "abcab":
        stack = advance(stack, model, w, Beams(stack_depth=3, stack_logp=2.0, phase_beam=3.0))
        assert math.fsum(posterior_weights(stack)) == pytest.approx(1.0, abs=1e-12)
        assert len(stack) <= 3 and all(p.k == stack[0].k for p in stack)


def test_closed_vocabulary_error():
    model, _ = random_model(13)
    with pytest.raises(VocabularyError):
        extend_with_word(ParsePrefix.initial(), model, "zebra", EXH)


def test_tightest_beams_keep_one_parse():
    model, _ = random_model(14)
    tight = Beams(1, 1e-9, 0.0)
    lp, per = slm_sentence_logprob(model, ["a", "b", "c"], tight)
    assert len(per) == 4 and lp == sum(per)
    assert best_parse(model, ["a", "b", "c"], tight).words() == ["a", "b", "c"]


def test_starvation_reports_position(monkeypatch):
    import slmkit.slm.search as search

    model, _ = random_model(14)
    real = search.advance
    monkeypatch.setattr(search, "advance", lambda st, m, w, b: [] if w == "b" else real(st, m, w, b))
    with pytest.raises(SearchError) as exc:
        slm_sentence_logprob(model, ["a", "b", "c"], EXH)
    assert exc.value.position == 2


def test_one_word_sentence_by_hand():
    model, _ = random_model(15)
    lp, per = slm_sentence_logprob(model, ["a"], EXH)
    p_a = model.predictor.prob((BOS_HEAD, ("<b>", "<b>")), "a")
    p_eos = sum(model.tagger.prob(("a", "<s>", "<b>"), t) * model.predictor.prob((("a", t), BOS_HEAD), EOS)
                for t in model.tags)
    assert per[0] == pytest.approx(math.log(p_a), rel=1e-12)
    assert per[1] == pytest.approx(math.log(p_eos), rel=1e-12)


# -- equivalence mode --------------------------------------------------------

def test_trigram_equivalence_small():
    rng = random.Random(0)
    vocab = [f"w{i}" for i in range(8)]
    sents = [[rng.choice(vocab) for _ in range(rng.randint(1, 6))] for _ in range(60)]
    v = Vocabulary(vocab)
    slm = trigram_equivalent_model(sents, v)
    tri = train_trigram(sents, v)
    for s in sents[:15] + [["w1", "w1", "w1"]]:
        _, per = slm_sentence_logprob(slm, s, Beams())
        assert per == pytest.approx(tri.sentence_logprobs(s), abs=1e-9)


# -- model io ----------------------------------------------------------------

def test_save_load_bytes_stable(tmp_path):
    model, _ = random_model(16)
    model.save(tmp_path / "a.slm")
    back = SLModel.load(tmp_path / "a.slm")
    back.save(tmp_path / "b.slm")
    assert (tmp_path / "a.slm").read_bytes() == (tmp_path / "b.slm").read_bytes()
    assert slm_sentence_logprob(back, ["a", "b"], EXH) == slm_sentence_logprob(model, ["a", "b"], EXH)
    assert "## parser" in model.dump_text()


def test_union_vocabulary_transfer():
    model, _ = random_model(17)
    bigger = model.with_vocabulary(["d", "a"])
    assert "d" in bigger.vocab and bigger.vocab.tokens[: len(model.vocab)] == model.vocab.tokens
    best_parse(bigger, ["d", "a"], Beams())
    with pytest.raises(VocabularyError):
        best_parse(model, ["d"], Beams())


def test_beams_file():
    b = Beams.parse("stack-depth-threshold=5\nstack-logP-threshold=7.5\n# x\nphase-beam=3\n")
    assert b == Beams(5, 7.5, 3.0)
    assert Beams.parse("stack-depth-threshold=none").stack_depth is None


# -- reestimation ------------------------------------------------------------

def test_nbest_posteriors_match_enumeration():
    model, _ = random_model(18)
    for sent in (["a", "b"], ["c", "a"]):
        got, z = nbest_posteriors(model, sent, 2, EXH)
        oracle = sorted(slm_oracle.complete_parses(model, sent), key=lambda o: (-o[1], o[0]))[:2]
        tot = sum(math.exp(lp) for _, lp in oracle)
        assert [ops for ops, _ in got] == [ops for ops, _ in oracle]
        for (_, w), (_, lp) in zip(got, oracle):
            assert w == pytest.approx(math.exp(lp) / tot, rel=1e-10)
        assert z == pytest.approx(math.log(tot), rel=1e-12)


def test_fractional_counts_hand_posteriors():
    model, _ = random_model(19)
    sents = [["a", "b"], ["b"]]
    est = e_step(model, sents, 2, EXH)
    want = Counter()
    for sent in sents:
        top = sorted(slm_oracle.complete_parses(model, sent), key=lambda o: (-o[1], o[0]))[:2]
        tot = sum(math.exp(lp) for _, lp in top)
        for ops, lp in top:
            for comp, ctx, ev in replay(ops)[2]:
                want[comp, ctx, ev] += math.exp(lp) / tot
    got = Counter()
    for comp, items in collect_events(d for sent in est.derivations for d in sent).items():
        for ctx, ev, w in items:
            got[comp, ctx, ev] += w
    assert set(got) == set(want)
    for k in want:
        assert got[k] == pytest.approx(want[k], rel=1e-9)


def test_reestimate_n1_fixed_point():
    (tree,) = read_treebank("(S^R (NP^R (DT the) (NN cat)) (VB sits))")
    (other,) = read_treebank("(S^L (PRP it) (VB sits))")
    trees = [tree, other] * 10
    model = init_from_treebank(trees)
    sents = [t.words() for t in trees]
    assert all(best_parse(model, s, Beams()) == t for s, t in zip(sents, trees))
    new, report = reestimate(model, sents, 1, Beams())
    assert report.skipped == 0
    assert new.predictor.counts == model.predictor.counts
    assert new.tagger.counts == model.tagger.counts
    assert new.parser.counts == model.parser.counts


def test_reestimate_rejects_n0():
    model, _ = random_model(20)
    with pytest.raises(ValueError):
        reestimate(model, [["a"]], 0, EXH)


def test_training_ppl_decreases_after_em():
    model, trees = random_model(21, n_trees=20, max_len=3)
    sents = [t.words() for t in trees]
    before = sum(slm_sentence_logprob(model, s, EXH)[0] for s in sents)
    new, trace = reestimate_iterations(model, sents, 10_000, EXH, 1)
    after = sum(slm_sentence_logprob(new, s, EXH)[0] for s in sents)
    assert trace[1] >= trace[0] - 1e-6
    assert after >= before - 1e-6
