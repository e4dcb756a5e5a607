import numpy as np
import pytest

from dialcl.corpus import Triple, build_vocab
from dialcl.synthetic import make_corpus

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(key, text): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    key, text = mark.args
    _CRITERIA.setdefault(key, [text, []])[1].append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")

    def order(k):
        num = "".join(ch for ch in k if ch.isdigit())
        return int(num), k

    for key in sorted(_CRITERIA, key=order):
        text, outcomes = _CRITERIA[key]
        if "failed" in outcomes:
            status = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        tr.write_line(f"{status}  {key:<4} {text}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus():
    return make_corpus(120, seed=3)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_corpus):
    return build_vocab(tiny_corpus[0], 1000)


@pytest.fixture
def toy_triples():
    return [
        Triple.of([["hello", "there"], ["how", "are", "you"]], ["fine", "thanks"], 1),
        Triple.of([["hello", "there"], ["how", "are", "you"]], ["go", "away"], 0),
        Triple.of([["a", "b"], ["c"], ["d", "e", "f"]], ["g"], 1),
        Triple.of([["a", "b"], ["c"], ["d", "e", "f"]], ["h", "i"], 0),
    ]


@pytest.fixture
def toy_vocab(toy_triples):
    return build_vocab(toy_triples, 100)


def write_tsv(path, triples):
    from dialcl.corpus import format_tsv_line
    path.write_text("".join(format_tsv_line(t) + "\n" for t in triples), encoding="utf-8")
    return path
