import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from protosparse import BlobSpec, PrototypeDatabase, gen_blobs  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def three_rows():
    return "id,class,f0,f1\n0,0,0.0,0.0\n1,1,3.0,4.0\n2,1,1.5,-2.25\n"


@pytest.fixture
def two_blobs():
    return gen_blobs(BlobSpec(((0.0, 0.0), (10.0, 0.0)), (0.5, 0.5), 20, seed=1))


def random_db(rng, m, j, n_classes=2, integer=False):
    if integer:
        x = rng.integers(0, 3, size=(m, j)).astype(float)
    else:
        x = rng.normal(size=(m, j))
    return PrototypeDatabase(x, rng.integers(0, n_classes, size=m))


_CRITERIA = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py::test_criterion_" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        detail = dict(report.user_properties).get("detail", "")
        _CRITERIA.append((name, report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in sorted(_CRITERIA):
        number = name.split("_")[2]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {name}  {detail}")
