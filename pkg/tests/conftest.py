import numpy as np
import pytest

from pretermpred.schema import Cohort, Patient, Tick, parse_schema

SMALL_SCHEMA = """\
# name group tick kind missing
AGEMOM DMG T0 numeric(17,40) mean replace=≤17:17,≥40:40
BPMARITL DMG T0 categorical(1,2,3,4) mode
BPKIDS DMG T0 ordinal(0,4) mode replace=2-3:2.5,>3:4
PRETERM PPH T0 yesno default(0)
HERPES INFEC T1 yesno default(0)
BACTER INFEC T1 yesno default(0)
WGTPRE CPM T0 numeric(30,150) mean
WEIGHTV1 CPM T0 numeric(30,160) derived(offset:WGTPRE)
WEIGHTV3 CPM3 T3 numeric(30,170) derived(offset:WEIGHTV1)
"""


@pytest.fixture
def small_registry():
    return parse_schema(SMALL_SCHEMA)


def make_patient(i, outcome="fullterm", subtype="n/a", parity="multiparous", last=Tick.T3, **values):
    return Patient(f"P{i}", values, outcome, subtype, parity, last)


def table2_cohort():
    """Cohort with the reference T0 class sizes.

    434 preterm (309 spontaneous, 125 indicated) and 2,568 fullterm; the
    nulliparous subset has 156 preterm and 1,087 fullterm.
    """
    spec = []
    # (outcome, subtype, parity, count)
    spec += [("preterm", "spontaneous", "nulliparous", 110), ("preterm", "indicated", "nulliparous", 46)]
    spec += [("preterm", "spontaneous", "multiparous", 199), ("preterm", "indicated", "multiparous", 79)]
    spec += [("fullterm", "n/a", "nulliparous", 1087), ("fullterm", "n/a", "multiparous", 1481)]
    patients, i = [], 0
    for outcome, subtype, parity, count in spec:
        for _ in range(count):
            patients.append(make_patient(i, outcome, subtype, parity))
            i += 1
    return Cohort(tuple(patients))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -----------------------------------------------------
# one PASS/FAIL line per acceptance criterion, printed after the test run

_ACCEPTANCE: dict[str, tuple[str, float]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.failed:
        prev = _ACCEPTANCE.get(name, ("passed", 0.0))
        outcome = "failed" if report.failed or prev[0] == "failed" else report.outcome
        _ACCEPTANCE[name] = (outcome, prev[1] + report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n.split("_")[2])):
        outcome, seconds = _ACCEPTANCE[name]
        label = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{label}  {name}  ({seconds:.1f} s)")
