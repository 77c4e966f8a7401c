def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                lines.append((props["criterion"], "PASS" if outcome == "passed" else "FAIL",
                              props.get("detail", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for number, status, detail in sorted(lines):
            terminalreporter.write_line(f"criterion {number}: {status} ({detail})")
