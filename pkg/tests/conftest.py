import pytest

_RESULTS = {}


@pytest.fixture(scope="session")
def acceptance():
    """``record(criterion, part, passed, detail)``: print a verdict line now
    and collect it for the end-of-run summary."""

    def record(criterion, part, passed, detail):
        line = "criterion %d %-24s %s  %s" % (criterion, part, "PASS" if passed else "FAIL", detail)
        print(line)
        _RESULTS.setdefault(criterion, []).append((part, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_RESULTS):
        parts = _RESULTS[crit]
        ok = all(p for _, p, _ in parts)
        tr.write_line("criterion %d: %s" % (crit, "PASS" if ok else "FAIL"))
        for part, passed, detail in parts:
            tr.write_line("    %-24s %s  %s" % (part, "PASS" if passed else "FAIL", detail))
