from __future__ import annotations

import pytest

from devscan import fixtures as corpus
from devscan.devicedb import default_device_db
from devscan.graphs import build_call_graph, build_cfgs
from devscan.rules import default_rules
from devscan.taint import find_sources, propagate_inter


class CorpusRun:
    """Loaded program plus the full analysis chain for one corpus fixture."""

    def __init__(self, fixture):
        self.fixture = fixture
        self.manifest = fixture.manifest
        self.program = fixture.load()
        self.cfgs = build_cfgs(self.program)
        self.call_graph = build_call_graph(self.program)
        self.sources = find_sources(self.program, cfgs=self.cfgs)
        self.taint = propagate_inter(
            self.program, self.cfgs, self.call_graph, self.sources
        )


_runs: dict[str, CorpusRun] = {}


def corpus_run(fixture_id: str) -> CorpusRun:
    if fixture_id not in _runs:
        _runs[fixture_id] = CorpusRun(corpus.load_fixture(fixture_id))
    return _runs[fixture_id]


@pytest.fixture(scope="session")
def device_db():
    return default_device_db()


@pytest.fixture(scope="session")
def rules():
    return default_rules()


@pytest.fixture(scope="session")
def all_fixture_ids():
    return corpus.list_fixture_ids()


# one pass/fail line per acceptance criterion at the end of the run
_acceptance_results: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    _acceptance_results.append((name, "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _acceptance_results:
        terminalreporter.write_line(f"{outcome}  {name}")
