import os
import tempfile

import pytest

from vitalseries.synthetic import write_demo_dataset

_ACCEPTANCE_LINES = []


def record_acceptance(name: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    _ACCEPTANCE_LINES.append(f"ACCEPTANCE {name}: {status}" + (f" - {detail}" if detail else ""))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def demo_dataset_dir():
    with tempfile.TemporaryDirectory() as tmp:
        data_dir = os.path.join(tmp, "data")
        write_demo_dataset(data_dir, seed=20230)
        yield data_dir
