import sys

import numpy as np
import pytest

from acdmsr.schedule import make_linear_schedule


@pytest.fixture(scope="session")
def sched():
    return make_linear_schedule()


@pytest.fixture(scope="session")
def toy2():
    """T=2 schedule with betas (0.1, 0.2): alpha_bar = (0.9, 0.72)."""
    return make_linear_schedule(2, 0.1, 0.2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in list(sys.modules.items()) if name.endswith("test_acceptance")), None)
    if mod is None:
        return
    broken = {r.nodeid for key in ("failed", "error") for r in terminalreporter.stats.get(key, [])}
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        tag = f"test_c{n}_"
        if n in mod.RESULTS:
            ok, detail = mod.RESULTS[n]
            verdict = "PASS" if ok else "FAIL"
        elif any(tag in nodeid for nodeid in broken):
            verdict, detail = "FAIL", "errored before reaching a verdict"
        else:
            verdict, detail = "NOT RUN", "deselected"
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {detail}")
