import pytest

from waning import kernels


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long Monte Carlo checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="slow Monte Carlo check; use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    status = _criteria.setdefault(number, {"title": title, "state": "PASS"})
    if report.skipped and report.when in ("setup", "call"):
        if status["state"] == "PASS":
            status["state"] = "SKIP"
    elif report.failed:
        status["state"] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        c = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {c['state']}  {c['title']}")


@pytest.fixture(params=sorted(kernels.available_backends()))
def kernel(request):
    return kernels.available_backends()[request.param]
