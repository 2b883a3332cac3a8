"""Summary lines for the acceptance criteria.

Each acceptance test records a ``criterion`` property ("<id> <title>") and
a ``detail`` property; the terminal summary prints one PASS/FAIL line per
criterion after the run.
"""

_RESULTS = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _RESULTS[props["criterion"]] = (report.outcome, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_RESULTS, key=lambda s: int(s.split()[0])):
        outcome, detail = _RESULTS[name]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {name}: {status}  {detail}")
