import os
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]


def cora_path() -> Path | None:
    """Cora bundle from $GRAPHLEAK_CORA_BUNDLE or ``data/cora``, if present."""
    env = os.environ.get("GRAPHLEAK_CORA_BUNDLE")
    path = Path(env) if env else ROOT / "data" / "cora"
    return path if (path / "meta.txt").is_file() else None


@pytest.fixture
def cora():
    path = cora_path()
    if path is None:
        pytest.skip("Cora bundle not available (set GRAPHLEAK_CORA_BUNDLE)")
    from graphleak.graph import load_bundle

    return load_bundle(path)


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
