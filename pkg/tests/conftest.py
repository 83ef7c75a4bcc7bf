import collections

import pytest

TITLES = {
    1: "dyadic consistency and marginals",
    2: "record-breaker sampler vs brute force",
    3: "Hölder certificate domination",
    4: "tilting exactness",
    5: "record Bernoulli unbiasedness",
    6: "error-constant feasibility",
    7: "eps-strong sandwich",
    8: "unbiased estimator",
}

_results = collections.defaultdict(list)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        reason = ""
        if rep.failed:
            msg = getattr(rep.longrepr, "reprcrash", None)
            reason = msg.message.splitlines()[0] if msg is not None else str(rep.longrepr)[:200]
        _results[marker.args[0]].append((item.name, rep.passed, reason))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_results):
        parts = _results[n]
        ok = all(p for _, p, _ in parts)
        tr.write_line(f"criterion {n} ({TITLES.get(n, '')}): {'PASS' if ok else 'FAIL'}")
        for name, passed, reason in parts:
            if not passed:
                tr.write_line(f"    {name}: {reason}")
