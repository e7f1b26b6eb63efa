import pytest

from qrm_edge import config as config_mod


@pytest.fixture(scope="session")
def cfg():
    return config_mod.load(None)


@pytest.fixture(scope="session")
def profiles(cfg):
    return cfg.profiles


@pytest.fixture(scope="session")
def policies(cfg):
    return cfg.policies


@pytest.fixture(autouse=True)
def _no_env_config(monkeypatch):
    monkeypatch.delenv(config_mod.ENV_VAR, raising=False)


_criteria: dict[int, list] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = getattr(report, "criterion", None)
    if marker is not None:
        number, title = marker
        entry = _criteria.setdefault(number, [title, True, []])
        entry[1] &= report.outcome == "passed"
        entry[2] += [str(v) for k, v in report.user_properties if k == "detail"]


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, details = _criteria[number]
        suffix = f" [{'; '.join(details)}]" if details else ""
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}{suffix}")
