from importlib import resources

import pytest
from hypothesis import HealthCheck, settings

from fsdroid.frontend import default_entries, parse_program, parse_sources_sinks

settings.register_profile("default", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# property suites that must hit a fixed case count use this explicitly
BULK = settings(max_examples=10_000, deadline=None, suppress_health_check=list(HealthCheck))


def corpus_text(name: str, ext: str = "dalvik") -> str:
    return (resources.files("fsdroid") / "corpus" / f"{name}.{ext}").read_text(encoding="utf-8")


def load(name: str):
    prog = parse_program(corpus_text(name))
    cfg = default_entries(prog, parse_sources_sinks(corpus_text(name, "sources-sinks")))
    return prog, cfg


@pytest.fixture(scope="session")
def leaky():
    return load("leaky")


@pytest.fixture(scope="session")
def anon():
    return load("anon")


# criterion lines from test_acceptance, repeated after the run so they survive output capture
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
