from pathlib import Path

import pytest
from hypothesis import settings

TOY = Path(__file__).parent / "fixtures" / "toy"

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture
def toy_dir() -> Path:
    return TOY


def write_csv(path: Path, text: str) -> Path:
    path.write_text(text.lstrip("\n"), encoding="utf-8")
    return path


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            label = dict(rep.user_properties).get("criterion")
            if label:
                lines.append(f"{'PASS' if outcome == 'passed' else 'FAIL'} {label}")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: s.split(" ", 1)[1]):
            terminalreporter.write_line(line)
