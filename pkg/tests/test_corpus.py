import gzip

import numpy as np
import pytest
from fractions import Fraction
from hypothesis import given, strategies as st

from dialcl.corpus import (CLS, PAD, RESERVED, SEP, UNK, ConfigError, CorpusError, Dataset, Diagnostics, Triple,
                           Vocab, build_vocab, context_groups, encode_triple, format_tsv_line, make_batches,
                           pair_hard_negatives, parse_tsv_line, read_dataset)

from conftest import write_tsv

token = st.text(alphabet="abcdefgxyz0123", min_size=1, max_size=5)
utterance = st.lists(token, min_size=1, max_size=6)
triples = st.builds(Triple.of, st.lists(utterance, min_size=1, max_size=5), utterance, st.integers(0, 1))


def test_parse_basic_line():
    t = parse_tsv_line("1\thello there\thow are you\tfine thanks")
    assert t == Triple((("hello", "there"), ("how", "are", "you")), ("fine", "thanks"), 1)


def test_parse_minimal_line():
    assert parse_tsv_line("0\ta\tb") == Triple((("a",),), ("b",), 0)


@pytest.mark.parametrize("line, needle", [
    ("2\ta\tb", "label"),
    ("1\ta", "fields"),
    ("1\ta\t \tb", "empty utterance"),
    ("x\ta\tb", "label"),
])
def test_parse_errors_name_the_line(line, needle):
    with pytest.raises(CorpusError, match=needle) as exc:
        parse_tsv_line(line, lineno=17)
    assert "line 17" in str(exc.value)


@given(triples)
def test_tsv_round_trip(t):
    line = format_tsv_line(t)
    assert parse_tsv_line(line) == t
    assert format_tsv_line(parse_tsv_line(line + "\n")) == line


def test_gzip_detected_by_magic(tmp_path, toy_triples):
    plain = write_tsv(tmp_path / "a.tsv", toy_triples)
    packed = tmp_path / "a.data"
    packed.write_bytes(gzip.compress(plain.read_bytes()))
    assert read_dataset(packed).examples == read_dataset(plain).examples == toy_triples


def test_dataset_ratio(toy_triples):
    ds = Dataset(toy_triples + [Triple.of([["q"]], ["z"], 0)] * 2)
    assert ds.n_pos == 2 and ds.n_neg == 4
    assert ds.pos_neg_ratio == Fraction(1, 2)
    assert ds.ratio_text() == "1:2"
    assert Dataset([Triple.of([["q"]], ["z"], 1)]).pos_neg_ratio is None


def test_build_vocab_frequency_cutoff():
    data = [Triple.of([["a", "a"]], ["a", "b"], 1)]
    v = build_vocab(data, max_size=7, min_freq=2)
    assert v.itos == list(RESERVED) + ["a"]
    assert v.id("b") == UNK


def test_build_vocab_lexicographic_tie_break():
    data = [Triple.of([["b", "a"]], ["b", "a"], 1)]
    assert build_vocab(data, max_size=6).itos[5:] == ["a"]


def test_build_vocab_empty_dataset():
    assert build_vocab([], 10).itos == list(RESERVED)


def test_build_vocab_rejects_tiny_max_size():
    with pytest.raises(ConfigError):
        build_vocab([], 5)


def test_vocab_save_load_digest(tmp_path, toy_vocab):
    toy_vocab.save(tmp_path / "v.txt")
    v2 = Vocab.load(tmp_path / "v.txt")
    assert v2.itos == toy_vocab.itos and v2.digest() == toy_vocab.digest()
    (tmp_path / "bad.txt").write_text("x\ny\n")
    with pytest.raises(CorpusError):
        Vocab.load(tmp_path / "bad.txt")


def test_encode_layout():
    v = build_vocab([Triple.of([["hi"]], ["yo"], 1)], 10)
    ids, n = encode_triple(Triple.of([["hi"]], ["yo"], 1), v, 6)
    assert ids.tolist() == [CLS, v.id("hi"), SEP, v.id("yo"), SEP, PAD] and n == 5


def test_encode_front_truncation_drops_whole_utterances_first():
    v = build_vocab([Triple.of([["a", "b", "c"], ["d", "e"]], ["r"], 1)], 20)
    t = Triple.of([["a", "b", "c"], ["d", "e"]], ["r"], 1)
    ids, n = encode_triple(t, v, 6)  # CLS d e SEP r SEP fits, a b c does not
    assert ids[:n].tolist() == [CLS, v.id("d"), v.id("e"), SEP, v.id("r"), SEP]
    ids, n = encode_triple(t, v, 5)  # newest utterance loses its front token
    assert ids[:n].tolist() == [CLS, v.id("e"), SEP, v.id("r"), SEP]


def test_encode_response_tail_truncation_warns():
    t = Triple.of([["a"]], list("rstuvw"), 1)
    v = build_vocab([t], 20)
    diag = Diagnostics()
    ids, n = encode_triple(t, v, 6, diag)
    assert n == 6 and ids.tolist() == [CLS, SEP, v.id("r"), v.id("s"), v.id("t"), SEP]
    assert diag.counts["response_truncated"] == 1


def test_encode_unknown_tokens():
    v = build_vocab([], 10)
    ids, n = encode_triple(Triple.of([["p", "q"]], ["z"], 1), v, 8)
    assert ids[:n].tolist() == [CLS, UNK, UNK, SEP, UNK, SEP]


@given(triples, st.integers(3, 20))
def test_encode_invariants(t, max_len):
    v = build_vocab([t], 50)
    ids, n = encode_triple(t, v, max_len, Diagnostics())
    assert ids.shape == (max_len,) and 3 <= n <= max_len
    assert ids[0] == CLS and ids[n - 1] == SEP and np.all(ids[n:] == PAD)


def test_pairing_adjacent():
    c = [["x"]]
    pos, neg = Triple.of(c, ["r"], 1), Triple.of(c, ["s"], 0)
    pairs = pair_hard_negatives([pos, neg])
    assert len(pairs) == 1 and pairs[0].positive == pos and pairs[0].hard_negative == neg


def test_pairing_unmatched_context():
    diag = Diagnostics()
    with pytest.raises(CorpusError):
        pair_hard_negatives([Triple.of([["c1"]], ["r"], 1), Triple.of([["c2"]], ["q"], 0)], diag)
    assert diag.counts["dropped_positive"] == 1


def test_pairing_extra_negatives_use_first():
    c = [["x"]]
    data = [Triple.of(c, ["n1"], 0), Triple.of(c, ["p"], 1), Triple.of(c, ["n2"], 0), Triple.of(c, ["n3"], 0)]
    diag = Diagnostics()
    pairs = pair_hard_negatives(data, diag)
    assert pairs[0].hard_negative.response == ("n1",)
    assert diag.counts["extra_negatives"] == 2


def test_pairing_count_matches_scan(tiny_corpus):
    train = tiny_corpus[0]
    pairs = pair_hard_negatives(train)
    assert len(pairs) == train.n_pos
    assert all(p.positive.context == p.hard_negative.context for p in pairs)


def _pairs(n):
    return [type("P", (), {"positive": i, "hard_negative": -i})() for i in range(n)]


def test_batches_partition():
    batches = make_batches(_pairs(10), 4, seed=1)
    assert [len(b[0]) for b in batches] == [4, 4, 2]
    assert sorted(x for b in batches for x in b[0]) == list(range(10))
    assert all(n == -p for b in batches for p, n in zip(*b))


def test_batches_short_tail_dropped():
    diag = Diagnostics()
    batches = make_batches(_pairs(5), 4, seed=1, diag=diag)
    assert [len(b[0]) for b in batches] == [4]
    assert diag.counts["short_batch_dropped"] == 1


def test_batches_deterministic():
    assert make_batches(_pairs(20), 3, seed=9) == make_batches(_pairs(20), 3, seed=9)
    assert make_batches(_pairs(20), 3, seed=9) != make_batches(_pairs(20), 3, seed=10)


def test_batches_reject_size_one():
    with pytest.raises(ConfigError):
        make_batches(_pairs(4), 1, seed=0)


def test_context_groups(toy_triples):
    assert context_groups(toy_triples) == [[0, 1], [2, 3]]
    assert context_groups(toy_triples, 4) == [[0, 1, 2, 3]]
    with pytest.raises(CorpusError):
        context_groups(toy_triples, 3)


def test_diagnostics_report(tmp_path):
    d = Diagnostics()
    d.add("b_kind", n=2)
    d.add("a_kind", "something odd")
    d.write(tmp_path / "diag.txt")
    assert (tmp_path / "diag.txt").read_text().splitlines() == [
        "count\ta_kind\t1", "count\tb_kind\t2", "note\ta_kind: something odd"]
