from __future__ import annotations

import pytest

from amsp.problems import gen_lotsizing
from amsp.scenario_tree import ScenarioTree
from amsp.solver_backend import solve_milp, values_close

# comparisons of optima run at 1e-6 relative, so MIPs are solved tighter than that
TIGHT_GAP = 1e-8


def optimum(model, gap=TIGHT_GAP) -> float:
    out = solve_milp(model, gap_tol=gap)
    assert out.status.value == "optimal", out.message
    return out.objective


def close(a: float, b: float, rel: float = 1e-6) -> bool:
    return values_close(a, b, rel)


@pytest.fixture(scope="session")
def small_lotsizing():
    """T=4, B=2, two sources."""
    return gen_lotsizing(ScenarioTree(4, 2), 2, seed=7)


@pytest.fixture(scope="session")
def tiny_lotsizing():
    """T=3, B=2, one source."""
    return gen_lotsizing(ScenarioTree(3, 2), 1, seed=3)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
