from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from dialcl.augment import ViewStrategy, make_views, sr_view, sts_view
from dialcl.corpus import Triple
from dialcl.rng import CounterRNG, SeedTree

token = st.text(alphabet="abcdefghij", min_size=1, max_size=3)
utterance = st.lists(token, min_size=1, max_size=6)
triples = st.builds(Triple.of, st.lists(utterance, min_size=1, max_size=6), utterance, st.integers(0, 1))
seeds = st.integers(0, 2**64 - 1)


def test_sts_golden_fixture():
    t = Triple.of([list("abcde"), list("xyz")], ["r"], 1)
    out = sts_view(t, SeedTree(7).rng("augmentation", 0, 0))
    assert out == Triple.of([list("abcde"), ["y", "x", "z"]], ["r"], 1)


def test_sr_golden_fixture():
    t = Triple.of([["u1"], ["u2"], ["u3"], ["u4"]], ["r"], 1)
    out = sr_view(t, SeedTree(7).rng("augmentation", 0, 0))
    assert out.context == (("u3",), ("u2",), ("u1",), ("u4",))


def test_sts_single_token_is_identity():
    t = Triple.of([["a"]], ["b"], 0)
    assert all(sts_view(t, CounterRNG(s)) == t for s in range(20))


def test_sr_two_utterances_falls_back_to_sts():
    t = Triple.of([list("abcd"), list("efgh")], ["r"], 1)
    changed = 0
    for s in range(50):
        v = sr_view(t, CounterRNG(s))
        assert [Counter(u) for u in v.context] == [Counter(u) for u in t.context]
        changed += v != t
    assert changed > 0


@settings(max_examples=300)
@given(triples, seeds)
def test_sts_preserves_multisets(t, seed):
    v = sts_view(t, CounterRNG(seed))
    assert len(v.context) == len(t.context)
    assert [Counter(u) for u in v.context] == [Counter(u) for u in t.context]
    assert sum(a != b for a, b in zip(v.context, t.context)) <= 1
    assert v.response == t.response and v.label == t.label


@settings(max_examples=300)
@given(triples, seeds)
def test_sr_preserves_utterances_and_last_position(t, seed):
    v = sr_view(t, CounterRNG(seed))
    if len(t.context) >= 3:
        assert Counter(v.context) == Counter(t.context)
        diff = [i for i, (a, b) in enumerate(zip(v.context, t.context)) if a != b]
        assert len(diff) in (0, 2)  # 0 when the swapped utterances are equal
    assert v.context[-1] == t.context[-1] or len(t.context) <= 2
    assert v.response == t.response and v.label == t.label


def _batch(n):
    xs = [Triple.of([[f"a{i}", "b", "c"], ["d", f"e{i}"], ["f", "g"]], [f"r{i}"], 1) for i in range(n)]
    ns = [Triple.of(x.context, [f"n{i}"], 0) for i, x in enumerate(xs)]
    return xs, ns


@pytest.mark.parametrize("strategy", list(ViewStrategy))
def test_make_views_shapes(strategy):
    xs, ns = _batch(3)
    vb = make_views((xs, ns), strategy, CounterRNG(1))
    if strategy is ViewStrategy.TL:
        assert len(vb) == 6 and vb.repeats == 2
        assert vb.anchors == xs + xs and vb.negatives == ns + ns
    else:
        assert len(vb) == 3 and vb.anchors == xs and vb.negatives == ns
    assert vb.dropout_views == (strategy is ViewStrategy.DROP)
    if strategy in (ViewStrategy.NONE, ViewStrategy.DROP):
        assert vb.views == xs


def test_tl_layout_is_sts_then_sr():
    xs, ns = _batch(3)
    vb = make_views((xs, ns), "tl", CounterRNG(11))
    r = CounterRNG(11)
    sts = [sts_view(x, r) for x in xs]
    sr = [sr_view(x, r) for x in xs]
    assert vb.views == sts + sr


def test_make_views_errors():
    with pytest.raises(ValueError):
        make_views(([], []), "tl", CounterRNG(0))
    xs, ns = _batch(2)
    with pytest.raises(ValueError):
        make_views((xs, ns[:1]), "sts", CounterRNG(0))
    with pytest.raises(ValueError, match="unknown view strategy"):
        make_views((xs, ns), "bogus", CounterRNG(0))


@given(seeds, st.sampled_from(list(ViewStrategy)))
def test_views_reproduce_under_seed(seed, strategy):
    xs, ns = _batch(4)
    a = make_views((xs, ns), strategy, CounterRNG(seed))
    b = make_views((xs, ns), strategy, CounterRNG(seed))
    assert a == b
