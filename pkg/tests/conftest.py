from __future__ import annotations

import logging

import pytest

from chunkstasks import Config, Runtime

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def make_runtime():
    """Start runtimes for a test and tear down whatever is left running."""
    made: list[Runtime] = []

    def make(types=(), **cfg) -> Runtime:
        cfg.setdefault("timeout", 60.0)
        cfg.setdefault("seed", 0)
        rt = Runtime(Config(**cfg))
        rt.register(*types)
        rt.start()
        made.append(rt)
        return rt

    yield make
    for rt in made:
        if rt.started:
            rt._abort()


@pytest.fixture(autouse=True)
def _quiet_runtime_logs(caplog):
    caplog.set_level(logging.CRITICAL, logger="chunkstasks")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
