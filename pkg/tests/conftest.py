from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


@pytest.fixture
def scenario_path():
    def path(name: str) -> Path:
        return SCENARIOS / f"{name}.json"
    return path


def run_dict(data, seed=None):
    """Run an inline scenario and return (report, world)."""
    from consensus_lab.runner.config import parse_config
    from consensus_lab.runner.run import run_scenario
    return run_scenario(parse_config(data, seed))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
