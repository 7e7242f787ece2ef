import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from knowrare.cohort import CohortStay, OutcomeLabel, Task, encode_context  # noqa: E402

ACCEPTANCE = {}


def report(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_stay(stay_id, patient_id, condition, series, minutes=None, hours=48.0, label=0,
              drugs=(), diagnoses=(), age=60.0, gender="F", race="white"):
    series = np.asarray(series, dtype=np.float64)
    if minutes is None:
        minutes = 60.0 * np.arange(series.shape[0]) + 30.0
    return CohortStay(
        stay_id=stay_id,
        patient_id=patient_id,
        series=series,
        mask=np.isnan(series),
        timestamps=np.asarray(minutes, dtype=np.float64),
        context=encode_context(age, gender, race),
        condition=condition,
        outcome=OutcomeLabel(Task("binary"), label),
        stay_hours=hours,
        drugs=frozenset(drugs),
        diagnoses=frozenset(diagnoses) | {condition},
        raw_icd=condition,
    )
