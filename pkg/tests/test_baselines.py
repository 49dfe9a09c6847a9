import itertools

import numpy as np
import pytest

from deepbl.baselines import (
    JUDGMENT_MATRIX,
    BaselineKind,
    BaselineSettings,
    dp_allocate,
    feature_orientation,
    markowitz_allocate,
    mc_samples,
    principal_weights,
    reference_step_weights,
    run_baseline,
    topsis_closeness,
)
from deepbl.blcore import BLHyper
from deepbl.features import FEATURE_ORDER
from deepbl.panel import SupplyPanel, Window, make_windows, synthesize_panel

from conftest import make_panel

FAST = BaselineSettings(mc_samples=2000)


def brute_force_grid(sigma, grid):
    best, best_w = np.inf, None
    for units in itertools.product(range(grid + 1), repeat=len(sigma) - 1):
        last = grid - sum(units)
        if last < 0:
            continue
        w = np.array(units + (last,)) / grid
        cost = float(w**2 @ sigma)
        if cost < best - 1e-15:
            best, best_w = cost, w
    return best, best_w


@pytest.mark.parametrize("seed", range(8))
def test_dp_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n, grid = int(rng.integers(1, 4)), int(rng.integers(1, 21))
    sigma = rng.integers(0, 10, n).astype(float)
    w = dp_allocate(sigma, grid)
    best, _ = brute_force_grid(sigma, grid)
    assert w.sum() == pytest.approx(1.0)
    assert float(w**2 @ sigma) == pytest.approx(best, abs=1e-12)


def test_dp_calculus_example():
    np.testing.assert_allclose(dp_allocate(np.array([1.0, 4.0]), 100), [0.8, 0.2])


def power_iteration(m, iters=500):
    v = np.ones(len(m))
    for _ in range(iters):
        v = m @ v
        v /= v.sum()
    return v


def test_judgment_weights():
    w = principal_weights()
    np.testing.assert_allclose(w, power_iteration(JUDGMENT_MATRIX), atol=1e-9)
    expected = np.array([1, 0.5, 0.75, 0.25, 1.25, 0.5, 1.75, 0.75]) / 6.75
    np.testing.assert_allclose(w, expected, atol=1e-3)


def test_markowitz_identity_gives_uniform():
    np.testing.assert_allclose(markowitz_allocate(np.ones(4), np.ones(4), 0.6, 1e-4), 0.25)


def test_markowitz_clips_negative_returns():
    w = markowitz_allocate(np.ones(3), np.array([1.0, 0.0, 2.0]), 0.6, 1e-4)
    np.testing.assert_allclose(w, [1 / 3, 0, 2 / 3])


def test_reference_weights_example():
    panel = make_panel([[5], [5], [5]], [[5], [4], [2]])
    np.testing.assert_allclose(reference_step_weights(panel, 0, 2), [0.625, 0.3125, 0.0625])
    full = make_panel([[5], [5]], [[5], [5]])
    np.testing.assert_allclose(reference_step_weights(full, 0), [0.5, 0.5])


def test_reference_weights_penalise_worst(rng):
    orders = np.full((5, 1), 20.0)
    supplies = orders - rng.integers(0, 5, (5, 1))
    supplies[2] = 1.0
    w = reference_step_weights(make_panel(orders, supplies), 0)
    assert np.argmin(w) == 2 and np.sum(w == w.min()) == 1


def test_orientation_table():
    assert feature_orientation("sr") == "cost" and feature_orientation("hsr") == "cost"
    assert feature_orientation("ssv") == "benefit"
    assert {feature_orientation(f) for f in FEATURE_ORDER} == {"cost", "benefit"}
    override = {f: "benefit" for f in FEATURE_ORDER}
    assert feature_orientation("sr", override) == "benefit"
    with pytest.raises(KeyError):
        feature_orientation("nope")


def test_topsis_closeness_extremes():
    c = topsis_closeness(np.array([[1.0, 1.0], [0.0, 0.0], [0.5, 0.5]]))
    np.testing.assert_allclose(c, [1.0, 0.0, 0.5])


@pytest.mark.parametrize("kind", list(BaselineKind))
def test_every_baseline_emits_simplex_columns(kind, small_panel):
    for w in make_windows(small_panel)[2][:3]:
        plan = run_baseline(kind, small_panel, w, BLHyper(), FAST)
        assert plan.shape == (small_panel.n_suppliers, w.f)
        assert np.all(plan >= 0)
        np.testing.assert_allclose(plan.sum(axis=0), 1.0, atol=1e-9)
        np.testing.assert_array_equal(plan, np.repeat(plan[:, :1], w.f, axis=1))


def test_kind_parsing():
    assert BaselineKind.parse("FuzzyAHP") is BaselineKind.FUZZY_AHP
    assert BaselineKind.parse("fuzzy_topsis") is BaselineKind.FUZZY_TOPSIS
    with pytest.raises(ValueError):
        BaselineKind.parse("oracle")


def test_mc_more_samples_never_worse(small_panel):
    w = make_windows(small_panel)[2][0]
    t = w.anchor_t
    sigma = np.mean(small_panel.shortfall[:, t - w.p + 1 : t + 1] ** 2, axis=1)
    objs = [
        float(run_baseline("mc", small_panel, w, settings=BaselineSettings(mc_samples=s))[:, 0] ** 2 @ sigma)
        for s in (10, 100, 1000, 5000)
    ]
    assert all(b <= a for a, b in zip(objs, objs[1:]))
    np.testing.assert_array_equal(mc_samples(3, 10, 4), mc_samples(3, 50, 4)[:10])


def _distinct_panel(seed):
    rng = np.random.default_rng(seed)
    orders = rng.integers(20, 40, (6, 30)).astype(float)
    supplies = orders - rng.random((6, 30)) * np.linspace(0.5, 8, 6)[rng.permutation(6)][:, None]
    return SupplyPanel(orders, supplies, tuple(f"s{i}" for i in range(6)))


@pytest.mark.parametrize("kind", ["greedy", "dp", "markowitz"])
def test_permutation_equivariance(kind):
    panel = _distinct_panel(3)
    perm = np.random.default_rng(1).permutation(6)
    permuted = SupplyPanel(panel.orders[perm], panel.supplies[perm], tuple(panel.supplier_ids[i] for i in perm))
    w = Window(20, 4, 4)
    np.testing.assert_allclose(run_baseline(kind, permuted, w), run_baseline(kind, panel, w)[perm], atol=1e-12)


def test_greedy_moves_mass_off_riskiest():
    panel = _distinct_panel(5)
    w = Window(20, 4, 4)
    sigma = np.mean(panel.shortfall[:, 16:21] ** 2, axis=1)
    out = run_baseline("greedy", panel, w)[:, 0]
    assert out[np.argmax(sigma)] == 0
    assert float(out**2 @ sigma) <= float(np.full(6, 1 / 6) ** 2 @ sigma)


def test_baselines_are_deterministic():
    panel = synthesize_panel(4, 10, 40)
    w = make_windows(panel)[2][0]
    for kind in BaselineKind:
        np.testing.assert_array_equal(run_baseline(kind, panel, w, settings=FAST), run_baseline(kind, panel, w, settings=FAST))
