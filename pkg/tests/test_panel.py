import numpy as np
import pytest

from deepbl.panel import (
    PanelError,
    PanelParseError,
    PanelValidationError,
    SplitSpec,
    SupplyPanel,
    Window,
    load_mu,
    load_panel,
    make_windows,
    mask_panel,
    save_panel,
    synthesize_panel,
)

from conftest import make_panel


def write(tmp_path, text, name="p.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_complete_panel(tmp_path):
    rows = ["supplier_id,t,order,supply"] + [f"{s},{t},{10 + t},{9}" for s in "AB" for t in range(3)]
    panel = load_panel(write(tmp_path, "\n".join(rows) + "\n"))
    assert (panel.n_suppliers, panel.n_steps) == (2, 3)
    np.testing.assert_array_equal(panel.orders[0], [10, 11, 12])


def test_missing_row_fills_zero(tmp_path):
    text = "supplier_id,t,order,supply\nA,0,5,5\nA,1,5,4\nB,0,3,3\nB,2,2,1\nA,2,1,1\n"
    panel = load_panel(write(tmp_path, text))
    assert panel.orders[1, 1] == 0 and panel.supplies[1, 1] == 0
    assert not panel.engaged[1, 1]


def test_supply_above_order_is_rejected_with_location(tmp_path):
    text = "supplier_id,t,order,supply\nA,0,5,8\n"
    with pytest.raises(PanelValidationError, match=r"row 2.*'A', t=0"):
        load_panel(write(tmp_path, text))


def test_malformed_row_names_row_number(tmp_path):
    text = "supplier_id,t,order,supply\nA,0,5,5\nA,x,5,5\n"
    with pytest.raises(PanelParseError, match="row 3"):
        load_panel(write(tmp_path, text))


def test_duplicate_pair_is_rejected(tmp_path):
    text = "supplier_id,t,order,supply\nA,0,5,5\nA,0,4,4\n"
    with pytest.raises(PanelValidationError, match="duplicate"):
        load_panel(write(tmp_path, text))


def test_bad_header(tmp_path):
    with pytest.raises(PanelParseError, match="header"):
        load_panel(write(tmp_path, "a,b,c,d\n"))


def test_ids_sorted_lexicographically(tmp_path):
    text = "supplier_id,t,order,supply\nzeta,0,1,1\nalpha,0,2,2\nMid,0,3,3\n"
    panel = load_panel(write(tmp_path, text))
    assert panel.supplier_ids == ("Mid", "alpha", "zeta")
    np.testing.assert_array_equal(panel.orders[:, 0], [3, 2, 1])


def test_constructor_validates_invariant():
    with pytest.raises(PanelValidationError):
        make_panel([[1.0, 2.0]], [[2.0, 1.0]])
    with pytest.raises(PanelValidationError):
        SupplyPanel(np.ones((2, 3)), np.ones((2, 2)), ("a", "b"))


def test_round_trip(tmp_path):
    panel = synthesize_panel(3, 12, 40)
    path = tmp_path / "rt.csv"
    save_panel(panel, path)
    back = load_panel(path)
    assert back == panel
    np.testing.assert_array_equal(back.orders, panel.orders)
    np.testing.assert_array_equal(back.supplies, panel.supplies)


def test_round_trip_keeps_silent_supplier_and_length(tmp_path):
    orders = np.array([[0, 0, 0, 0], [1, 2, 0, 0]], dtype=float)
    panel = SupplyPanel(orders, orders.copy(), ("a", "b"))
    save_panel(panel, tmp_path / "z.csv")
    back = load_panel(tmp_path / "z.csv")
    assert back.supplier_ids == ("a", "b") and back.n_steps == 4


def test_load_mu(tmp_path):
    path = write(tmp_path, "supplier_id,mu\nB,2.5\n", "mu.csv")
    np.testing.assert_array_equal(load_mu(path, ("A", "B")), [1.0, 2.5])


def test_synthesis_is_deterministic(tmp_path):
    a, b = synthesize_panel(7, 20, 60), synthesize_panel(7, 20, 60)
    save_panel(a, tmp_path / "a.csv")
    save_panel(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def _mean_sq_shortfall(panel, kind):
    rows = [i for i, k in enumerate(panel.archetypes) if k == kind]
    out = []
    for i in rows:
        engaged = panel.orders[i] > 0
        out.append(np.mean(panel.shortfall[i, engaged] ** 2))
    return np.mean(out)


def test_planted_risk_ordering():
    panel = synthesize_panel(7, 20, 60, (0.25, 0.25, 0.25, 0.25))
    reliable = _mean_sq_shortfall(panel, "reliable")
    degrading = _mean_sq_shortfall(panel, "degrading")
    volatile = _mean_sq_shortfall(panel, "volatile")
    assert reliable < degrading < volatile


def test_all_reliable_fill_rates():
    panel = synthesize_panel(1, 15, 50, (1, 0, 0, 0))
    engaged = panel.orders > 0
    assert np.all(panel.supplies[engaged] / panel.orders[engaged] >= 0.95)


def test_archetype_contracts():
    panel = synthesize_panel(11, 40, 100)
    kinds = np.array(panel.archetypes)
    for i in np.flatnonzero(kinds == "non-engaged"):
        assert np.mean(panel.orders[i] == 0) >= 0.6
    for i in np.flatnonzero(kinds == "volatile"):
        rate = panel.supplies[i] / panel.orders[i]
        # rounding to whole units can nudge the ratio just outside [0.3, 1]
        assert rate.min() >= 0.3 - 1 / panel.orders[i].min() and rate.max() <= 1.0
    for i in np.flatnonzero(kinds == "degrading"):
        rate = panel.supplies[i] / panel.orders[i]
        assert rate[:10].mean() > 0.85 and rate[-10:].mean() < 0.4
    assert np.all(panel.orders == np.rint(panel.orders))


def test_synthesis_rejects_short_panel():
    with pytest.raises(PanelError, match="panel too short to window"):
        synthesize_panel(0, 5, 15)


def test_synthesis_rejects_bad_mix():
    with pytest.raises(PanelError):
        synthesize_panel(0, 5, 40, (0.5, 0.5, 0.5, 0))


def test_windows_t12():
    panel = make_panel(np.ones((1, 12)), np.ones((1, 12)))
    train, val, test = make_windows(panel, 4, 4)
    assert [w.anchor_t for w in train + val + test] == [4, 5, 6, 7]


def test_windows_t9_single():
    panel = make_panel(np.ones((1, 9)), np.ones((1, 9)))
    windows = sum(make_windows(panel, 4, 4), [])
    assert [w.anchor_t for w in windows] == [4]


def test_windows_too_short():
    panel = make_panel(np.ones((1, 4)), np.ones((1, 4)))
    with pytest.raises(PanelError, match="panel too short"):
        make_windows(panel, 4, 4)


def test_window_ranges():
    w = Window(10, 4, 4)
    assert w.input_range == (6, 10) and w.target_range == (11, 14)
    assert list(w.input_steps) == [6, 7, 8, 9, 10]
    assert list(w.target_steps) == [11, 12, 13, 14]


@pytest.mark.parametrize("t", [9, 17, 40, 121])
def test_windowing_exhaustive_and_chronological(t):
    panel = make_panel(np.ones((1, t)), np.ones((1, t)))
    train, val, test = make_windows(panel, 4, 4)
    anchors = [w.anchor_t for w in train + val + test]
    assert anchors == list(range(4, t - 4))
    for a, b in ((train, val), (val, test), (train, test)):
        if a and b:
            assert max(w.anchor_t for w in a) < min(w.anchor_t for w in b)


def test_split_fractions_validated():
    with pytest.raises(ValueError):
        SplitSpec(0.5, 0.5, 0.5)


def test_mask_panel_only_touches_prefix():
    panel = synthesize_panel(2, 10, 40)
    masked = mask_panel(panel, 0.5, seed=1, until_t=20)
    np.testing.assert_array_equal(masked.orders[:, 20:], panel.orders[:, 20:])
    hit = (masked.orders[:, :20] == 0) & (panel.orders[:, :20] != 0)
    assert 0.3 < hit.sum() / (panel.orders[:, :20] != 0).sum() < 0.7
    assert mask_panel(panel, 0.0, 1) == panel
