import pytest

from refaudit.persona_synth import FirstNameTable, SurnameTable, SyntheticPatron
from refaudit.query_builder import InstitutionRecord


@pytest.fixture
def patron():
    return SyntheticPatron("Malik", "Robinson", "male", "Black", "Undergraduate")


@pytest.fixture
def lsu():
    return InstitutionRecord("LSU Libraries", "Louisiana State University", "Tigers",
                             "Louisiana history and culture", "Baton Rouge", "South")


@pytest.fixture
def tiny_tables():
    first = FirstNameTable((("Ana", "female", 10), ("Ben", "male", 10)))
    sur = SurnameTable((("Garcia", (0.0, 0.0, 0.0, 0.0, 0.0, 1.0)), ("Wang", (0.026, 0.003, 0.952, 0.0063, 0.0063, 0.0064))))
    return first, sur


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request, capsys):
    """Record and print one pass/fail line for an acceptance criterion."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def emit(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
