"""Collects acceptance outcomes and prints one line per criterion at the end."""

from collections import defaultdict

ACCEPTANCE = defaultdict(list)  # criterion -> [(part, ok, detail)]
TITLES = {}


def record(criterion: int, title: str, part: str, ok: bool, detail: str) -> None:
    TITLES[criterion] = title
    ACCEPTANCE[criterion].append((part, bool(ok), detail))
    print(f"[{criterion}] {part}: {'PASS' if ok else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[k]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{p[0]} {'ok' if p[1] else 'FAILED'}: {p[2]}" for p in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {k}. {TITLES[k]}  [{detail}]")
