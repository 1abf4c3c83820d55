"""Collects acceptance-criterion outcomes and prints one line per criterion."""
import pytest

CRITERIA = {
    1: "energy-normalization identity",
    2: "SH shading vs brute force",
    3: "inverse-rendering round trip",
    4: "ablation direction",
    5: "specular-albedo identity",
    6: "PCA exactness",
    7: "gradient checks",
    8: "finetune improvement",
    9: "determinism",
}

_outcomes = {}   # nodeid -> (criterion, passed, seconds)
_notes = {}


def _criterion(item):
    m = item.get_closest_marker("criterion")
    return None if m is None else m.args[0]


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    n = _criterion(item)
    if n is None:
        return
    prev = _outcomes.get(item.nodeid, (n, True, 0.0))
    passed = prev[1] and not rep.failed and not (rep.when == "call" and rep.skipped)
    _outcomes[item.nodeid] = (n, passed, prev[2] + rep.duration)


@pytest.fixture
def note(request):
    """Attach a short measurement to the criterion's summary line."""
    n = _criterion(request.node)

    def add(text):
        _notes.setdefault(n, []).append(text)
    return add


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    by = {}
    for n, passed, secs in _outcomes.values():
        ok, total = by.get(n, (True, 0.0))
        by[n] = (ok and passed, total + secs)
    terminalreporter.write_sep("=", "acceptance criteria")
    for n, title in CRITERIA.items():
        if n not in by:
            terminalreporter.write_line(f"NOT RUN  {n}. {title}")
            continue
        ok, secs = by[n]
        extra = "; ".join(_notes.get(n, []))
        line = f"{'PASS' if ok else 'FAIL'}     {n}. {title} ({secs:.1f} s)"
        terminalreporter.write_line(line + (f"  [{extra}]" if extra else ""))
