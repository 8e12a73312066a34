from importlib import resources
from pathlib import Path

import pytest


_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, name): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, name = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = getattr(item, "acceptance_detail", "")
        _ACCEPTANCE[number] = (name, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        name, status, detail = _ACCEPTANCE[number]
        line = f"[{status}] criterion {number}: {name}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture
def toy_dir() -> Path:
    return Path(str(resources.files("slmkit.data") / "toy"))


@pytest.fixture(scope="session")
def toy_pipeline(tmp_path_factory):
    """One deterministic run of the full toy pipeline: (work dir, exit code, seconds)."""
    import time

    from slmkit.cli import main

    data = Path(str(resources.files("slmkit.data") / "toy"))
    work = tmp_path_factory.mktemp("pipeline") / "work"
    t0 = time.perf_counter()
    code = main(["pipeline", "--data", str(data), "--work", str(work), "--deterministic", "--log-level", "WARNING"])
    return work, code, time.perf_counter() - t0
