import numpy as np
import pytest

from deepbl.panel import SupplyPanel, synthesize_panel

# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_panel() -> SupplyPanel:
    return synthesize_panel(seed=7, n=20, t=60)


def make_panel(orders, supplies, ids=None) -> SupplyPanel:
    orders = np.asarray(orders, dtype=float)
    supplies = np.asarray(supplies, dtype=float)
    if orders.ndim == 1:
        orders, supplies = orders[None, :], supplies[None, :]
    ids = ids or tuple(f"S{i}" for i in range(orders.shape[0]))
    return SupplyPanel(orders, supplies, tuple(ids))
