"""Shared pytest hooks: the acceptance suite reports one line per criterion."""

ACCEPTANCE: dict[str, tuple[str, str]] = {}


def record(criterion: str, ok: bool, detail: str, status: str = None) -> None:
    status = status or ("PASS" if ok else "FAIL")
    ACCEPTANCE[criterion] = (status, detail)
    print(f"criterion {criterion}: {status} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {status} ({detail})")
