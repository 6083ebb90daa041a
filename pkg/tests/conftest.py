import re

import pytest

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    # record the call phase, or a setup failure that prevented it
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        _CRITERIA.append((mark.args[0], item.name, rep.passed, rep.duration, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")

    def order(rec):
        number = str(rec[0])
        return int(re.match(r"\d+", number).group()), number, rec[1]

    for number, name, passed, duration, detail in sorted(_CRITERIA, key=order):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number:>3}  {status}  {name}  ({duration:.1f} s)"
        terminalreporter.write_line(f"{line}  {detail}" if detail else line)
