from hypothesis import settings

# property tests draw the same examples on every run, like the seeded oracles
settings.register_profile("repro", derandomize=True, print_blob=True)
settings.load_profile("repro")


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with its recorded detail."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::" not in nodeid:
                continue
            if outcome != "error" and getattr(rep, "when", "call") != "call":
                continue
            name = nodeid.split("::")[-1]
            detail = dict(getattr(rep, "user_properties", [])).get("detail", "")
            lines.append((name, "PASS" if outcome == "passed" else "FAIL", detail))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in sorted(lines):
        terminalreporter.write_line(f"{status} {name}  {detail}")
