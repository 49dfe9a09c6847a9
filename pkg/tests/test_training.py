import logging
import math

import numpy as np
import pytest

from deepbl import autograd as ag
from deepbl.panel import make_windows, synthesize_panel
from deepbl.training import (
    LOG_COLUMNS,
    AdamState,
    TrainConfig,
    TrainingError,
    WindowCache,
    batch_loss,
    build_model,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
    write_log,
)

SMALL = TrainConfig(hidden_dim=6, layers=2, heads=2, max_epochs=3, seed=3)


@pytest.fixture(scope="module")
def tiny_panel():
    return synthesize_panel(5, 10, 40)


def test_xavier_bound_and_zero_bias():
    params = init_params({"w.weight": (4, 4), "w.bias": (4,), "c.weight": (2, 3, 5)}, seed=0)
    assert np.abs(params["w.weight"].data).max() <= math.sqrt(6 / 8)
    assert np.abs(params["c.weight"].data).max() <= math.sqrt(6 / (6 + 10))
    np.testing.assert_array_equal(params["w.bias"].data, 0)


def test_init_deterministic_per_seed():
    shapes = {"a.weight": (5, 3), "b.weight": (3, 3)}
    a, b, c = init_params(shapes, 1), init_params(shapes, 1), init_params(shapes, 2)
    for k in shapes:
        np.testing.assert_array_equal(a[k].data, b[k].data)
    assert not np.array_equal(a["a.weight"].data, c["a.weight"].data)


def test_adam_first_step_closed_form(rng):
    from deepbl.training import adam_step

    params = {"x": ag.parameter(rng.normal(size=5))}
    start = params["x"].data.copy()
    g = rng.normal(size=5)
    adam_step(params, {"x": g}, AdamState.zeros_like(params), lr=0.01)
    # m_hat = g, v_hat = g^2 at step one
    np.testing.assert_allclose(params["x"].data, start - 0.01 * g / (np.abs(g) + 1e-8))


def test_adam_zero_gradient_is_noop(rng):
    from deepbl.training import adam_step

    params = {"x": ag.parameter(rng.normal(size=3))}
    start = params["x"].data.copy()
    adam_step(params, {"x": np.zeros(3)}, AdamState.zeros_like(params), lr=0.1)
    np.testing.assert_array_equal(params["x"].data, start)


def test_adam_rejects_nan_and_names_parameter():
    from deepbl.training import adam_step

    params = {"omega.bias": ag.parameter(np.zeros(2))}
    with pytest.raises(TrainingError, match="omega.bias"):
        adam_step(params, {"omega.bias": np.array([np.nan, 0.0])}, AdamState.zeros_like(params), lr=0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        TrainConfig(rank_target="probabilities")


def test_frozen_lr_stops_after_two_epochs(tiny_panel):
    result = train(tiny_panel, TrainConfig(hidden_dim=6, layers=1, heads=1, learning_rate=0.0, patience=1))
    assert len(result.log) == 2 and result.stopped_reason == "early_stopping"
    assert result.log[0]["val_loss"] == result.log[1]["val_loss"]


def test_zero_epochs_warns_and_returns_init(tiny_panel, caplog):
    cfg = TrainConfig(hidden_dim=6, layers=1, heads=1, max_epochs=0)
    with caplog.at_level(logging.WARNING):
        result = train(tiny_panel, cfg)
    assert "max_epochs is 0" in caplog.text and result.log == []
    fresh = build_model(tiny_panel.n_suppliers, cfg)
    for k, p in fresh.params.items():
        np.testing.assert_array_equal(result.model.params[k].data, p.data)


def test_training_is_reproducible_and_selects_best(tiny_panel):
    a, b = train(tiny_panel, SMALL), train(tiny_panel, SMALL)
    assert a.log == b.log
    for k in a.model.params:
        np.testing.assert_array_equal(a.model.params[k].data, b.model.params[k].data)
    assert a.best_val_loss == min(r["val_loss"] for r in a.log)
    assert set(a.log[0]) == set(LOG_COLUMNS)


def test_best_checkpoint_is_restored(tiny_panel):
    result = train(tiny_panel, SMALL)
    _, val, _ = result.splits
    cache = WindowCache(tiny_panel, SMALL.kappa)
    with ag.no_grad():
        loss = float(batch_loss(result.model, cache, val, SMALL, training=False).data)
    assert loss == pytest.approx(result.best_val_loss, rel=1e-12)


def test_every_parameter_receives_gradient(tiny_panel):
    cfg = TrainConfig(hidden_dim=6, layers=2, heads=2, dropout=0.0)
    model = build_model(tiny_panel.n_suppliers, cfg)
    train_w = make_windows(tiny_panel)[0]
    cache = WindowCache(tiny_panel, cfg.kappa)
    with ag.use_tape() as tape:
        ag.backward(batch_loss(model, cache, train_w, cfg, training=True), tape)
    for name, p in model.params.items():
        assert p.grad is not None and np.any(p.grad != 0), name


def test_rank_loss_ablation_trains(tiny_panel):
    cfg = TrainConfig(hidden_dim=6, layers=1, heads=1, max_epochs=2, ablate_rank_loss=True)
    result = train(tiny_panel, cfg)
    assert len(result.log) == 2 and all(np.isfinite(r["train_loss"]) for r in result.log)


def test_checkpoint_round_trip(tmp_path, tiny_panel):
    model = build_model(tiny_panel.n_suppliers, SMALL)
    save_checkpoint(model, tmp_path / "ck.json", SMALL, {"best_epoch": 1})
    back, cfg, extra = load_checkpoint(tmp_path / "ck.json")
    assert cfg == SMALL and extra == {"best_epoch": 1}
    for k, p in model.params.items():
        np.testing.assert_array_equal(back.params[k].data, p.data)
    x = WindowCache(tiny_panel, 2)[make_windows(tiny_panel)[2][0]]
    np.testing.assert_array_equal(back.predict(x), model.predict(x))


def test_checkpoint_rejects_foreign_file(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.json")


def test_log_csv(tmp_path):
    rows = [{"epoch": 0, "train_loss": 1.5, "val_loss": 1.25, "val_hr50": 0.5, "val_mre": 3.0}]
    write_log(rows, tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text().splitlines() == [
        "epoch,train_loss,val_loss,val_hr50,val_mre",
        "0,1.5,1.25,0.5,3.0",
    ]


def test_predictions_on_simplex(tiny_panel):
    model = build_model(tiny_panel.n_suppliers, SMALL)
    cache = WindowCache(tiny_panel, 2)
    for w in make_windows(tiny_panel)[2]:
        out = model.predict(cache[w])
        assert out.shape == (tiny_panel.n_suppliers, 4) and np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=0), 1.0, atol=1e-9)
