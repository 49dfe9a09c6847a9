"""Finite-difference checks for every differentiable building block."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor, grad_check

TOLERANCE = 1e-4
INSTANCES = 10


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float
    instances: int
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < TOLERANCE)


# Each builder takes an rng and returns (fn, point).
Builder = Callable[[np.random.Generator], tuple[Callable[[Tensor], Tensor], np.ndarray]]


def _weighted(out: Tensor, rng_seed: int = 0) -> Tensor:
    """Scalar sum(out * c) with a fixed random c, so every output entry matters."""
    c = np.random.default_rng(rng_seed).uniform(0.5, 1.5, size=out.shape)
    return ag.sum_(ag.mul(out, c))


def _contrast(out: Tensor, rng_seed: int = 0) -> Tensor:
    """Like _weighted but with zero-mean columns.

    Softmax columns sum to one, so a plain weighted sum carries a large
    constant whose rounding swamps small partial derivatives.
    """
    c = np.random.default_rng(rng_seed).uniform(-1.0, 1.0, size=out.shape)
    return ag.sum_(ag.mul(out, c - c.mean(axis=0, keepdims=True)))


def _unary(op):
    def build(rng):
        return (lambda x: _weighted(op(x))), rng.normal(size=(3, 3))
    return build


def _elementwise_binary(op):
    def build(rng):
        other = rng.normal(size=(3, 3))
        row = rng.normal(size=(1, 3))
        return (
            lambda x: ag.add(ag.add(_weighted(op(x, other)), _weighted(op(other, x))), _weighted(op(x, row))),
            rng.normal(size=(3, 3)),
        )
    return build


def _power(rng):
    return (lambda x: _weighted(ag.power(x, 3.0))), rng.uniform(0.5, 2.0, size=(3, 3))


def _clip(rng):
    # keep points away from the kinks
    x = rng.uniform(-2.0, 2.0, size=(3, 3))
    x[np.abs(np.abs(x) - 1.0) < 0.1] += 0.3
    return (lambda t: _weighted(ag.clip(t, -1.0, 1.0))), x


def _leaky(rng):
    x = rng.normal(size=(3, 3))
    x[np.abs(x) < 0.05] += 0.2
    return (lambda t: _weighted(ag.leaky_relu(t, 0.2))), x


def _matmul(rng):
    b = rng.normal(size=(3, 2))
    c = rng.normal(size=(4, 3))
    return (lambda x: ag.add(_weighted(ag.matmul(x, b)), _weighted(ag.matmul(c, x)))), rng.normal(size=(3, 3))


def _inverse(rng):
    return (lambda x: _weighted(ag.matrix_inverse(ag.add(x, 3.0 * np.eye(4))))), rng.normal(size=(4, 4))


def _softmax(rng):
    return (lambda x: ag.add(_weighted(ag.softmax(x, axis=0)), _weighted(ag.softmax(x, axis=1), 1))), rng.normal(size=(3, 4))


def _conv(rng):
    x = rng.normal(size=(5, 3, 2))
    b = rng.normal(size=(4,))

    def fn(w):
        return ag.add(_weighted(ag.conv1d(x, w, b)), _weighted(ag.conv1d(ag.mul(x, 1.0), w)))
    return fn, rng.normal(size=(2, 2, 4))


def _conv_input(rng):
    w = rng.normal(size=(2, 2, 3))
    return (lambda x: _weighted(ag.conv1d(x, w))), rng.normal(size=(5, 3, 2))


def _reductions(rng):
    def fn(x):
        return ag.add(
            ag.add(_weighted(ag.sum_(x, axis=0)), _weighted(ag.mean(x, axis=1, keepdims=True))),
            ag.mul(ag.mean(x), 2.0),
        )
    return fn, rng.normal(size=(3, 4))


def _shape_ops(rng):
    other = rng.normal(size=(3, 2))

    def fn(x):
        t = ag.transpose(x)  # 4 x 3
        r = ag.reshape(x, (2, 6))
        c = ag.concat([x, other], axis=1)
        s = ag.stack([x, ag.mul(x, 2.0)], axis=0)
        return ag.add(ag.add(_weighted(t), _weighted(r)), ag.add(_weighted(c), _weighted(s)))
    return fn, rng.normal(size=(3, 4))


def _slice(rng):
    def fn(x):
        return ag.add(
            _weighted(ag.slice_(x, (slice(0, 2), slice(None)))),
            _weighted(ag.slice_(x, np.array([0, 2, 2]))),
        )
    return fn, rng.normal(size=(3, 4))


def _diag(rng):
    def fn(x):
        d = ag.diag_extract(x)
        return ag.add(_weighted(ag.diag_embed(d)), _weighted(ag.diag_embed(ag.tanh(d))))
    return fn, rng.normal(size=(4, 4))


def _dropout(rng):
    seed = int(rng.integers(1 << 30))
    # same mask for every evaluation
    return (lambda x: _weighted(ag.dropout(x, 0.3, np.random.default_rng(seed), True))), rng.normal(size=(4, 4))


def _distinct(rng, n: int, gap: float = 0.3) -> np.ndarray:
    """Values at least ``gap`` apart, so no rank ties sit near the point."""
    return rng.permutation(n) * gap + rng.uniform(0, gap / 4, size=n)


def _soft_rank(rng):
    from .softrank import SoftRankConfig, soft_rank

    direction = "descending" if rng.random() < 0.5 else "ascending"
    cfg = SoftRankConfig(float(rng.choice([0.1, 0.5, 2.0])), direction)
    return (lambda x: _weighted(soft_rank(x, cfg))), _distinct(rng, 6)


def _spearman(rng):
    from .objective import masked_spearman_step

    n = 7
    risks = rng.permutation(n).astype(float) ** 2
    mask = np.ones(n, dtype=bool)
    mask[rng.integers(n)] = False
    return (lambda w: masked_spearman_step(w, risks, mask)), _distinct(rng, n)


def _tiny_model(rng):
    from .blcore import BLHyper
    from .encoder import EncoderConfig
    from .features import prepare_window
    from .model import DeepBL, param_shapes
    from .panel import make_windows, synthesize_panel
    from .training import init_params

    p = f = 2
    # volatile and degrading only: every input risk is non-zero, which keeps
    # the raw solve well scaled for central differences
    panel = synthesize_panel(int(rng.integers(1000)), 6, 12, (0.0, 0.5, 0.5, 0.0), p=p, f=f)
    window = make_windows(panel, p, f)[0][-1]
    cfg = EncoderConfig(6, hidden_dim=4, layers=2, cheb_order=2, heads=2, dropout_rate=0.0)
    params = init_params(param_shapes(cfg, p, f), int(rng.integers(1000)))
    for t in params.values():
        t.data = t.data * 3.0  # lifts P to order one so every head matters
    model = DeepBL(cfg, BLHyper(), p, f, params)
    inputs = prepare_window(panel, window)
    # risks in [0.1, 1.1]: Omega stays comparable to P tau Sigma P^T and no
    # zero-risk supplier saturates the output softmax
    scale = 1.0 / max(float(inputs.risks.max()), 1.0)
    return model, dataclasses.replace(inputs, risks=0.1 + inputs.risks * scale)


def _composite_for(param_name: str) -> Builder:
    def build(rng):
        model, inputs = _tiny_model(rng)
        point = model.params[param_name].data.copy()

        def fn(x):
            saved = model.params[param_name]
            model.params[param_name] = x
            try:
                return _contrast(model.forward(inputs))
            finally:
                model.params[param_name] = saved
        return fn, point
    return build


CHECKS: dict[str, Builder] = {
    "add": _elementwise_binary(ag.add),
    "sub": _elementwise_binary(ag.sub),
    "mul": _elementwise_binary(ag.mul),
    "power": _power,
    "exp": _unary(ag.exp),
    "sigmoid": _unary(ag.sigmoid),
    "tanh": _unary(ag.tanh),
    "clip": _clip,
    "leaky_relu": _leaky,
    "sum_mean": _reductions,
    "shape_ops": _shape_ops,
    "slice": _slice,
    "diag": _diag,
    "matmul": _matmul,
    "inverse": _inverse,
    "softmax": _softmax,
    "conv1d": _conv,
    "conv1d_input": _conv_input,
    "dropout": _dropout,
    "soft_rank": _soft_rank,
    "spearman": _spearman,
    "composite_spatial": _composite_for("spatial.0.weight"),
    "composite_temporal": _composite_for("temporal.1.weight"),
    # the H half of attn.weight only shifts softmax rows, often an exact zero
    "composite_attention": _composite_for("attn.0.vector"),
    "composite_omega": _composite_for("omega.weight"),
    "composite_output": _composite_for("out.weight"),
}

ALIASES = {"matrix_inverse": "inverse", "softrank": "soft_rank", "loss": "spearman"}


def resolve(names: Sequence[str] | None) -> list[str]:
    if not names:
        return list(CHECKS)
    out = []
    for raw in names:
        name = ALIASES.get(raw.strip(), raw.strip())
        if name not in CHECKS:
            raise KeyError(f"unknown gradient check {raw!r}; known: {', '.join(CHECKS)}")
        out.append(name)
    return out


def run_checks(
    names: Sequence[str] | None = None,
    instances: int = INSTANCES,
    seed: int = 0,
    extra: dict[str, Builder] | None = None,
) -> list[CheckResult]:
    registry = dict(CHECKS)
    if extra:
        registry.update(extra)
    selected = resolve(names) + (list(extra) if extra else [])
    results = []
    for k, name in enumerate(selected):
        rng = np.random.default_rng([seed, k])
        start = time.perf_counter()
        worst = 0.0
        for _ in range(instances):
            fn, point = registry[name](rng)
            worst = max(worst, grad_check(fn, point))
        results.append(CheckResult(name, worst, instances, time.perf_counter() - start))
    return results


def format_table(results: Sequence[CheckResult]) -> str:
    width = max(len(r.name) for r in results) if results else 4
    lines = [f"{'check':<{width}}  {'max_rel_err':>12}  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.max_rel_error:12.3e}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)


def broken_tanh_check(rng):
    """Negative control: tanh with a deliberately wrong derivative."""
    def bad_tanh(x):
        x = ag.as_tensor(x)
        y = np.tanh(x.data)
        return ag.make_node(y, (x,), lambda g: (g * (1.0 - y),), "bad_tanh")
    return (lambda x: _weighted(bad_tanh(x))), rng.normal(size=(3, 3))
