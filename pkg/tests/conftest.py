import pytest

from amsentry import programs
from amsentry.emission_sim import SimConfig, simulate_recording
from amsentry.features import build_dataset
from amsentry.gcode import parse_program
from amsentry.harness import modality_comparison, program_trace

ACCEPTANCE_RESULTS = []


@pytest.fixture
def record_criterion():
    """Collect one pass/fail line per acceptance criterion for the terminal summary."""

    def _record(number, title, passed, detail=""):
        ACCEPTANCE_RESULTS.append((number, title, passed, detail))

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {title}  {detail}")


@pytest.fixture(scope="session")
def block_program():
    return parse_program(programs.generate("block", 200))


@pytest.fixture(scope="session")
def block_trace(block_program):
    return program_trace(block_program, SimConfig())


@pytest.fixture(scope="session")
def small_program():
    return parse_program(programs.generate("block", 60))


@pytest.fixture(scope="session")
def small_trace(small_program):
    return program_trace(small_program, SimConfig())


@pytest.fixture(scope="session")
def small_recordings(small_trace):
    cfg = SimConfig()
    return [simulate_recording(small_trace, cfg.with_seed(s)) for s in (1, 2, 3)]


@pytest.fixture(scope="session")
def small_dataset(small_recordings):
    return build_dataset(small_recordings)


@pytest.fixture(scope="session")
def small_models(small_dataset):
    return modality_comparison(small_dataset, k=3, seed=0)[1]
