"""Training loop: Xavier init, Adam, early stopping on validation loss."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import SingularMatrixError, Tensor
from .baselines import reference_step_weights
from .blcore import BLHyper
from .encoder import EncoderConfig
from .evaluation import EvalReport, evaluate
from .features import WindowInputs, prepare_window
from .model import DeepBL, param_shapes
from .objective import total_loss
from .panel import DEFAULT_F, DEFAULT_P, SplitSpec, SupplyPanel, Window, make_windows
from .softrank import SoftRankConfig

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "deepbl-checkpoint"
CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("epoch", "train_loss", "val_loss", "val_hr50", "val_mre")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    patience: int = 10
    max_epochs: int = 200
    batch_size: int = 8
    seed: int = 0
    dropout: float = 0.2
    p: int = DEFAULT_P
    f: int = DEFAULT_F
    hidden_dim: int = 150
    layers: int = 3
    cheb_order: int = 3
    heads: int = 3
    leaky_slope: float = 0.2
    temporal_width: int = 2
    rank_strength: float = 0.5
    delta: float = 0.6
    tau: float = 3.0
    kappa: int = 2
    epsilon: float = 1e-4
    ablate_rank_loss: bool = False
    # "logits" ranks the pre-softmax scores (same order as the weights,
    # but not flattened when the softmax saturates); "weights" ranks the simplex output
    rank_target: str = "logits"

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")
        if self.rank_target not in ("logits", "weights"):
            raise ValueError(f"rank_target must be 'logits' or 'weights', got {self.rank_target!r}")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("patience and batch_size must be >= 1, max_epochs >= 0")

    def hyper(self, mu=None) -> BLHyper:
        return BLHyper(self.delta, self.tau, self.kappa, self.epsilon, None if mu is None else tuple(mu))

    def encoder(self, n_suppliers: int) -> EncoderConfig:
        return EncoderConfig(
            n_suppliers=n_suppliers,
            hidden_dim=self.hidden_dim,
            layers=self.layers,
            cheb_order=self.cheb_order,
            heads=self.heads,
            leaky_slope=self.leaky_slope,
            dropout_rate=self.dropout,
            temporal_width=self.temporal_width,
        )

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}


# ---------------------------------------------------------------------------
# parameters and optimiser


def _fans(name: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 3:  # conv kernel (width, c_in, c_out)
        return shape[0] * shape[1], shape[0] * shape[2]
    if len(shape) == 1:  # attention vector
        return shape[0], 1
    return shape[0], shape[1]


def init_params(shapes: dict[str, tuple[int, ...]], seed: int) -> dict[str, Tensor]:
    """Xavier-uniform weights, zero biases, in the order of ``shapes``."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(name, shape)
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = ag.parameter(data, name=name)
    return params


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()}, {k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """Bias-corrected Adam update, in place on ``params``.  Missing grads count as zero."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: DeepBL, path: str | Path, config: TrainConfig | None = None, extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "encoder": asdict(model.cfg),
        "hyper": asdict(model.hyper),
        "p": model.p,
        "f": model.f,
        "train_config": asdict(config) if config is not None else None,
        "extra": extra or {},
        "tensors": [
            {"name": k, "shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for k, t in model.params.items()
        ],
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[DeepBL, TrainConfig | None, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    hyper = doc["hyper"]
    if hyper.get("mu") is not None:
        hyper["mu"] = tuple(hyper["mu"])
    params = {
        t["name"]: ag.parameter(np.array(t["data"], dtype=np.float64).reshape(t["shape"]), name=t["name"])
        for t in doc["tensors"]
    }
    model = DeepBL(EncoderConfig(**doc["encoder"]), BLHyper(**hyper), doc["p"], doc["f"], params)
    cfg = TrainConfig(**doc["train_config"]) if doc.get("train_config") else None
    return model, cfg, doc.get("extra", {})


def write_log(rows: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for row in rows:
            writer.writerow([row["epoch"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainState:
    params: dict[str, Tensor]
    adam: AdamState
    epoch: int = 0
    best_val_loss: float = math.inf
    epochs_since_improvement: int = 0


@dataclass
class TrainResult:
    model: DeepBL
    log: list[dict]
    best_epoch: int | None
    best_val_loss: float
    stopped_reason: str
    seconds: float = 0.0
    splits: tuple[list[Window], list[Window], list[Window]] = field(default_factory=lambda: ([], [], []))


class WindowCache:
    """Precomputed constant inputs per window of one panel."""

    def __init__(self, panel: SupplyPanel, kappa: int):
        self.panel = panel
        self.kappa = kappa
        self._items: dict[int, WindowInputs] = {}

    def __getitem__(self, window: Window) -> WindowInputs:
        item = self._items.get(window.anchor_t)
        if item is None or item.window != window:
            item = self._items[window.anchor_t] = prepare_window(self.panel, window, self.kappa)
        return item


def _references(panel: SupplyPanel, window: Window, kappa: int) -> np.ndarray:
    return np.stack([reference_step_weights(panel, t, kappa) for t in window.target_steps])


def batch_loss(
    model: DeepBL,
    cache: WindowCache,
    windows: Sequence[Window],
    config: TrainConfig,
    *,
    training: bool,
    rng: np.random.Generator | None = None,
) -> Tensor:
    inputs = [cache[w] for w in windows]
    ablate = config.ablate_rank_loss
    if ablate or config.rank_target == "weights":
        preds = [model.forward(x, training=training, rng=rng) for x in inputs]
    else:
        preds = [model.forward_logits(x, training=training, rng=rng) for x in inputs]
    refs = [_references(cache.panel, w, config.kappa) for w in windows] if ablate else None
    return total_loss(
        preds,
        [x.target_risks for x in inputs],
        [x.target_mask for x in inputs],
        config.weight_decay,
        model.parameters(),
        SoftRankConfig(config.rank_strength, "descending"),
        refs,
    )


def model_allocator(model: DeepBL, cache: WindowCache):
    return lambda window: model.predict(cache[window])


def build_model(n_suppliers: int, config: TrainConfig, mu=None) -> DeepBL:
    enc = config.encoder(n_suppliers)
    params = init_params(param_shapes(enc, config.p, config.f), config.seed)
    return DeepBL(enc, config.hyper(mu), config.p, config.f, params)


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def _restore(params: dict[str, Tensor], snap: dict[str, np.ndarray]) -> None:
    for k, data in snap.items():
        params[k].data = data.copy()


def train(
    panel: SupplyPanel,
    config: TrainConfig = TrainConfig(),
    split: SplitSpec = SplitSpec(),
    mu=None,
    progress: bool = False,
) -> TrainResult:
    """Fit the model on the train split, selecting the epoch with least validation loss."""
    start = time.perf_counter()
    train_w, val_w, test_w = make_windows(panel, config.p, config.f, split)
    if not train_w:
        raise TrainingError("no training windows")
    val_set = val_w or train_w
    model = build_model(panel.n_suppliers, config, mu)
    cache = WindowCache(panel, config.kappa)
    state = TrainState(model.params, AdamState.zeros_like(model.params))
    order_rng = np.random.default_rng([config.seed, 1])
    drop_rng = np.random.default_rng([config.seed, 2])
    history: list[dict] = []
    best = _snapshot(model.params)
    best_epoch = None
    reason = "max_epochs"

    if config.max_epochs == 0:
        log.warning("max_epochs is 0; returning initial parameters")
        reason = "max_epochs"

    for epoch in range(config.max_epochs):
        state.epoch = epoch
        perm = order_rng.permutation(len(train_w))
        batch_losses = []
        try:
            for lo in range(0, len(perm), config.batch_size):
                batch = [train_w[i] for i in perm[lo : lo + config.batch_size]]
                for p in model.params.values():
                    p.zero_grad()
                with ag.use_tape() as tape:
                    loss = batch_loss(model, cache, batch, config, training=True, rng=drop_rng)
                    if not np.isfinite(loss.data):
                        raise TrainingError(f"loss became {loss.data} in epoch {epoch}")
                    ag.backward(loss, tape)
                grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
                adam_step(model.params, grads, state.adam, config.learning_rate)
                batch_losses.append(float(loss.data))
            with ag.no_grad():
                val_loss = float(batch_loss(model, cache, val_set, config, training=False).data)
            if not np.isfinite(val_loss):
                raise TrainingError(f"validation loss became {val_loss} in epoch {epoch}")
            report = evaluate(model_allocator(model, cache), val_set, panel, config.kappa, ks=(50,))
        except (TrainingError, SingularMatrixError, FloatingPointError) as exc:
            log.error("training aborted in epoch %d: %s; restoring best checkpoint", epoch, exc)
            reason = f"diverged: {exc}"
            break

        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(batch_losses)),
            "val_loss": val_loss,
            "val_hr50": report.hr_at_k[50],
            "val_mre": report.mre,
        }
        history.append(row)
        if progress:
            log.info(
                "epoch %3d  train %.5f  val %.5f  HR@50 %.4f  MRE %.4f",
                epoch, row["train_loss"], val_loss, row["val_hr50"], row["val_mre"],
            )
        if val_loss < state.best_val_loss:
            state.best_val_loss = val_loss
            state.epochs_since_improvement = 0
            best = _snapshot(model.params)
            best_epoch = epoch
        else:
            state.epochs_since_improvement += 1
            if state.epochs_since_improvement >= config.patience:
                reason = "early_stopping"
                break

    _restore(model.params, best)
    return TrainResult(
        model,
        history,
        best_epoch,
        state.best_val_loss,
        reason,
        time.perf_counter() - start,
        (train_w, val_w, test_w),
    )


def evaluate_model(model: DeepBL, panel: SupplyPanel, windows: Sequence[Window]) -> EvalReport:
    cache = WindowCache(panel, model.hyper.kappa)
    return evaluate(model_allocator(model, cache), windows, panel, model.hyper.kappa)
