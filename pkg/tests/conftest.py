import pytest

from fedrec.data import SynthConfig, partition_by_user, prepare, synthesize_log


@pytest.fixture(scope="session")
def small_prepared():
    log = synthesize_log(SynthConfig(num_users=12, num_skills=8, ability_mean=1.5, seed=4))
    return prepare(log, 50, 20)


@pytest.fixture(scope="session")
def small_clients(small_prepared):
    return partition_by_user(small_prepared.examples, 0.2, seed=4)


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        measured = dict(report.user_properties).get("measured", "")
        if report.skipped:
            measured = str(report.longrepr[-1]) if isinstance(report.longrepr, tuple) else "skipped"
        _CRITERIA[marker] = (report.outcome, measured)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        report.criterion = m.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    labels = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}
    for n in sorted(_CRITERIA):
        outcome, measured = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2} {labels.get(outcome, outcome.upper())}: {measured}")
