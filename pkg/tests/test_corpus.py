import logging

import pytest
from hypothesis import given, strategies as st

from helpers import leaf, node
from slmkit.corpus import (BOS, EOS, UNK, HeadRules, TokenMap, TokenMapError, TreebankError, Vocabulary,
                           VocabularyError, binarize_and_headify, denormalize, is_binary_headed, normalize,
                           read_corpus, read_treebank, write_corpus, write_treebank)

TMAP = TokenMap.default()


# -- token map ---------------------------------------------------------------

def test_normalize_table_rows():
    assert normalize(["don't"], TMAP) == ["do", "n't"]
    assert normalize(["it's", "i'll"], TMAP) == ["it", "'s", "i", "'ll"]
    assert normalize(["i'm"], TMAP) == ["i", "'m"]
    assert normalize(["hello"], TMAP) == ["hello"]


def test_denormalize_examples():
    assert denormalize(["do", "n't"], TMAP) == ["don't"]
    assert denormalize(["n't", "do"], TMAP) == ["n't", "do"]
    assert denormalize(["i", "'ll", "do", "n't", "go"], TMAP) == ["i'll", "don't", "go"]


def test_denormalize_leftmost_first():
    tm = TokenMap((("ab", ("a", "b")), ("bc", ("x", "c"))))
    assert tm.denormalize(["a", "b", "c"]) == ["ab", "c"]


_plain = st.sampled_from(["go", "the", "yeah", "cat", "uh", "do", "it", "i"])
_source = st.sampled_from(sorted(TMAP.sources))


@given(st.lists(st.one_of(_plain, _source), max_size=20))
def test_round_trip_identity(tokens):
    # "do"/"it"/"i" are first parts; they stay unmerged unless a second part follows
    assert denormalize(normalize(tokens, TMAP), TMAP) == tokens


def test_tokenmap_rejects_cascades():
    with pytest.raises(TokenMapError):
        TokenMap((("don't", ("do", "n't")), ("do", ("d", "o"))))
    with pytest.raises(TokenMapError):
        TokenMap((("x", ("a", "b")), ("y", ("a", "b"))))
    with pytest.raises(TokenMapError):
        TokenMap((("x", ("a", "b")), ("x", ("c", "d"))))
    with pytest.raises(TokenMapError):
        TokenMap((("x", ("a", "b")), ("y", ("b", "c"))))


def test_tokenmap_file_round_trip(tmp_path):
    path = tmp_path / "map.txt"
    path.write_text("# comment\n" + TMAP.dumps(), encoding="utf-8")
    assert TokenMap.load(path) == TMAP
    with pytest.raises(TokenMapError):
        TokenMap.parse("don't do n't\n")


def test_default_map_has_general_clitics():
    for src in ("can't", "we're", "they've", "i'd", "he's", "that's"):
        assert TMAP.split(src) is not None


# -- vocabulary --------------------------------------------------------------

def test_vocabulary_ids_dense():
    v = Vocabulary(["b", "a", "b"])
    assert v.tokens == [BOS, EOS, "b", "a"]
    assert v.encode(BOS) == 0 and v.encode(EOS) == 1
    for i in range(len(v)):
        assert v.encode(v.decode(i)) == i


def test_vocabulary_closed_and_open():
    closed = Vocabulary(["a"])
    with pytest.raises(VocabularyError) as exc:
        closed.encode("zzz")
    assert exc.value.token == "zzz"
    opened = Vocabulary(["a"], closed=False)
    assert opened.map_token("zzz") == UNK
    assert opened.encode("zzz") == opened.unk_id


@given(st.lists(st.text(alphabet="abc", min_size=1, max_size=3), max_size=10),
       st.text(alphabet="xyz", min_size=1, max_size=3))
def test_closed_rejection_total(tokens, probe):
    v = Vocabulary(tokens)
    with pytest.raises(VocabularyError):
        v.encode(probe)


def test_vocabulary_union_keeps_ids():
    v = Vocabulary(["b", "a"])
    u = v.union(["c", "a", "0"])
    assert u.tokens[: len(v)] == v.tokens
    assert u.tokens[len(v):] == ["0", "c"]


def test_corpus_io(tmp_path):
    path = tmp_path / "c.txt"
    write_corpus(path, [["a", "b"], ["c"]])
    path.write_text(path.read_text() + "\n\n", encoding="utf-8")
    assert read_corpus(path) == [["a", "b"], ["c"]]


# -- treebank ----------------------------------------------------------------

def test_read_treebank_examples():
    (t,) = read_treebank("(S (NP (DT the) (NN cat)) (VP (VB sat)))")
    assert t.label == "S" and t.words() == ["the", "cat", "sat"]
    (t,) = read_treebank("(X (A a))")
    assert t.words() == ["a"]


def test_read_treebank_multiple_and_multiline():
    trees = read_treebank("(S (A a)\n   (B b))\n(T (C c))")
    assert [t.words() for t in trees] == [["a", "b"], ["c"]]


@pytest.mark.parametrize("text,line", [("(S (NP", 1), ("(S (A a)\n(B", 2), ("(S ())", 1),
                                       ("(S (A a)))", 1), ("()", 1), ("(S (A a b))", 1)])
def test_read_treebank_errors(text, line):
    with pytest.raises(TreebankError) as exc:
        read_treebank(text)
    assert exc.value.line == line


def test_head_markers_round_trip(tmp_path):
    t = binarize_and_headify(read_treebank("(S (NP (DT the) (NN cat)) (VP (VBZ sits) (ADVP (RB here))))")[0],
                             HeadRules.default())
    path = tmp_path / "tb.txt"
    write_treebank(path, [t])
    (back,) = read_treebank(path.read_text())
    assert back == t


def test_binarize_two_children_rightmost():
    rules = HeadRules.parse("NP\trightmost\n")
    t = binarize_and_headify(node("NP", leaf("DT", "the"), leaf("NN", "cat")), rules)
    assert t.head == "cat" and t.head_child == 1


def test_binarize_single_leaf():
    t = leaf("NN", "cat")
    assert binarize_and_headify(t, HeadRules()) == t
    # unary chains collapse onto the preterminal
    assert binarize_and_headify(node("S", node("NP", t)), HeadRules()) == t


def test_binarize_leftmost_three_children():
    rules = HeadRules.parse("VP\tleftmost\n")
    x, y, z = leaf("VB", "x"), leaf("NN", "y"), leaf("RB", "z")
    t = binarize_and_headify(node("VP", x, y, z), rules)
    # head pivot x takes its right siblings first: ((x y) z)
    assert t.children[1] == z
    assert t.children[0].children == (x, y)
    assert t.head == "x" and t.children[0].head == "x"


def test_binarize_pivot_attaches_right_then_left():
    rules = HeadRules.parse("VP\tleft:VB\n")
    a, v, b = leaf("RB", "a"), leaf("VB", "v"), leaf("NN", "b")
    t = binarize_and_headify(node("VP", a, v, b), rules)
    assert t.children[0] == a and t.head_child == 1
    assert t.children[1].children == (v, b)


def test_priority_rule_direction():
    r = HeadRules.parse("NP\tright:NN\nPP\tleft:IN\n")
    assert r.head_index("NP", ["NN", "DT", "NN"]) == 2
    assert r.head_index("NP", ["DT", "JJ"]) == 1
    assert r.head_index("PP", ["RB", "IN", "IN"]) == 1


def test_missing_rule_warns(caplog):
    with caplog.at_level(logging.WARNING):
        t = binarize_and_headify(node("ZZ", leaf("A", "a"), leaf("B", "b"), leaf("C", "c")), HeadRules())
    assert t.head == "c"
    assert "ZZ" in caplog.text


_labels = st.sampled_from(["S", "NP", "VP", "PP", "ZZ"])


@st.composite
def nary_trees(draw, depth=0):
    if depth >= 3 or draw(st.booleans()):
        return leaf(draw(st.sampled_from(["DT", "NN", "VB"])), draw(st.sampled_from(["a", "b", "c"])))
    kids = draw(st.lists(nary_trees(depth=depth + 1), min_size=1, max_size=4))
    return node(draw(_labels), *kids)


@given(nary_trees())
def test_binarize_invariants(tree):
    rules = HeadRules.default()
    b = binarize_and_headify(tree, rules)
    assert b.words() == tree.words()
    assert b.internal_count() == len(tree.words()) - 1
    assert is_binary_headed(b)

    def heads_ok(n):
        if n.is_preterminal:
            return True
        matches = [c.head == n.head for c in n.children]
        return matches[n.head_child] and all(heads_ok(c) for c in n.children)

    assert heads_ok(b)
