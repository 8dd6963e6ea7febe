import numpy as np
import pytest

from shiftdiag.core import CURRENT, REFERENCE, Dataset, SplitPair


def make_pair(ref, cur, names=None, ref_label=None, cur_label=None):
    ref = np.asarray(ref, dtype=float)
    cur = np.asarray(cur, dtype=float)
    if ref.ndim == 1:
        ref, cur = ref[:, None], cur[:, None]
    names = names or tuple(f"x{j}" for j in range(ref.shape[1]))
    return SplitPair(Dataset(ref, names, ref_label, REFERENCE),
                     Dataset(cur, names, cur_label, CURRENT))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance summary: tests/test_acceptance.py appends (id, name, ok, detail)
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid, name, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] AC{cid} {name}: {detail}")
