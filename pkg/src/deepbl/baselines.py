"""Non-learning allocation baselines: HA, MC, Greedy, DP, Fuzzy-AHP, Fuzzy-TOPSIS, Markowitz."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .blcore import BLHyper
from .features import FEATURE_ORDER, normalize_features, compute_features
from .panel import SupplyPanel, Window

log = logging.getLogger(__name__)

# Pairwise importance of the eight indicators, in FEATURE_ORDER.
JUDGMENT_MATRIX = np.array(
    [
        [1, 2, 1.333, 4, 0.8, 2, 0.571, 1.333],
        [0.5, 1, 0.667, 2, 0.4, 1, 0.286, 0.667],
        [0.75, 1.5, 1, 3, 0.6, 1.5, 0.429, 1],
        [0.25, 0.5, 0.333, 1, 0.2, 0.5, 0.143, 0.333],
        [1.25, 2.5, 1.667, 5, 1, 2.5, 0.714, 1.667],
        [0.5, 1, 0.667, 2, 0.4, 1, 0.286, 0.667],
        [1.75, 3.5, 2.333, 7, 1.4, 3.5, 1, 2.333],
        [0.75, 1.5, 1, 3, 0.6, 1.5, 0.429, 1],
    ]
)

DEFAULT_ORIENTATION = {
    "sv": "benefit",
    "ov": "benefit",
    "sr": "cost",
    "ssv": "benefit",
    "hsr": "cost",
    "hssv": "benefit",
    "sc": "benefit",
    "ss": "benefit",
}


class BaselineKind(str, enum.Enum):
    HA = "ha"
    MC = "mc"
    GREEDY = "greedy"
    DP = "dp"
    FUZZY_AHP = "fuzzy-ahp"
    FUZZY_TOPSIS = "fuzzy-topsis"
    MARKOWITZ = "markowitz"

    @classmethod
    def parse(cls, name: str) -> "BaselineKind":
        key = name.strip().lower().replace("_", "-")
        aliases = {"fuzzyahp": "fuzzy-ahp", "fuzzytopsis": "fuzzy-topsis"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class BaselineSettings:
    mc_samples: int = 10_000
    dp_grid: int = 100
    greedy_iterations: int | None = None  # None means N - 1
    seed: int = 0
    orientation: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_ORIENTATION))

    def __post_init__(self):
        if self.mc_samples < 1 or self.dp_grid < 1:
            raise ValueError("baseline settings must be positive")
        if self.greedy_iterations is not None and self.greedy_iterations < 1:
            raise ValueError("greedy_iterations must be positive")


def feature_orientation(name: str, table: dict[str, str] | None = None) -> str:
    table = DEFAULT_ORIENTATION if table is None else table
    if name not in FEATURE_ORDER:
        raise KeyError(f"unknown feature {name!r}")
    return table[name]


def _uniform_fallback(n: int, why: str) -> np.ndarray:
    log.warning("%s; falling back to uniform weights", why)
    return np.full(n, 1.0 / n)


def _normalize(scores: np.ndarray, why: str) -> np.ndarray:
    total = scores.sum()
    if not np.isfinite(total) or total <= 0:
        return _uniform_fallback(scores.size, why)
    return scores / total


def reference_step_weights(panel: SupplyPanel, t: int, kappa: int = 2) -> np.ndarray:
    """Inverse-risk weights 1 / (1 + shortfall^kappa), normalised."""
    w = 1.0 / (1.0 + (panel.orders[:, t] - panel.supplies[:, t]) ** kappa)
    return w / w.sum()


def _mean_risk(panel: SupplyPanel, lo: int, hi: int, kappa: int) -> np.ndarray:
    return np.mean(panel.shortfall[:, lo : hi + 1] ** kappa, axis=1)


def principal_weights(matrix: np.ndarray = JUDGMENT_MATRIX) -> np.ndarray:
    """Normalised principal eigenvector of a pairwise comparison matrix."""
    vals, vecs = np.linalg.eig(matrix)
    v = np.abs(np.real(vecs[:, np.argmax(np.real(vals))]))
    return v / v.sum()


def _oriented_features(panel: SupplyPanel, window: Window, orientation: dict[str, str]) -> np.ndarray:
    raw = compute_features(panel, window.anchor_t, window.p)
    norm = normalize_features(raw)
    for k, name in enumerate(FEATURE_ORDER):
        if feature_orientation(name, orientation) == "cost":
            norm[:, k] = 1.0 - norm[:, k]
    return norm


def ha_weights(panel, window, hyper, settings):
    lo, hi = window.input_range
    return np.mean([reference_step_weights(panel, t, hyper.kappa) for t in range(lo, hi + 1)], axis=0)


def mc_samples(n: int, count: int, seed: int) -> np.ndarray:
    """Uniform draws on the simplex; a longer draw extends a shorter one."""
    rng = np.random.default_rng(seed)
    e = rng.exponential(size=(count, n))
    return e / e.sum(axis=1, keepdims=True)


def mc_weights(panel, window, hyper, settings):
    t = window.anchor_t
    lo = max(0, t - window.p + 1)
    risks = panel.shortfall[:, lo : t + 1].T ** hyper.kappa  # p x N
    samples = mc_samples(panel.n_suppliers, settings.mc_samples, settings.seed)
    # mean over steps of w^T Sigma_t w, Sigma_t diagonal
    objective = (samples**2) @ risks.mean(axis=0)
    return samples[int(np.argmin(objective))]


def greedy_weights(panel, window, hyper, settings):
    lo, hi = window.input_range
    sigma = _mean_risk(panel, lo, hi, hyper.kappa)
    n = sigma.size
    w = np.full(n, 1.0 / n)
    best, best_obj = w.copy(), float(w**2 @ sigma)
    iterations = settings.greedy_iterations or max(n - 1, 1)
    lowest = int(np.argmin(sigma))
    for _ in range(iterations):
        active = np.flatnonzero(w > 0)
        if active.size <= 1:
            break
        candidates = active[active != lowest]
        if candidates.size == 0:
            break
        # highest risk first, lowest index on ties
        worst = int(candidates[np.argmax(sigma[candidates])])
        w[lowest] += w[worst]
        w[worst] = 0.0
        w = w / w.sum()
        obj = float(w**2 @ sigma)
        if obj < best_obj:
            best, best_obj = w.copy(), obj
    return best


def dp_allocate(sigma: np.ndarray, grid: int) -> np.ndarray:
    """Exact min of sum_i w_i^2 sigma_i over w on the 1/grid lattice of the simplex."""
    sigma = np.asarray(sigma, dtype=np.float64)
    n = sigma.size
    units = np.arange(grid + 1)
    unit_cost = (units / grid) ** 2
    # cost[i][b]: best cost of suppliers i..n-1 using exactly b units
    cost = np.full((n + 1, grid + 1), np.inf)
    choice = np.zeros((n, grid + 1), dtype=int)
    cost[n, 0] = 0.0
    for i in range(n - 1, -1, -1):
        for b in range(grid + 1):
            k = units[: b + 1]
            totals = unit_cost[k] * sigma[i] + cost[i + 1, b - k]
            j = int(np.argmin(totals))
            cost[i, b] = totals[j]
            choice[i, b] = k[j]
    w = np.zeros(n)
    b = grid
    for i in range(n):
        w[i] = choice[i, b]
        b -= choice[i, b]
    return w / grid


def dp_weights(panel, window, hyper, settings):
    lo, hi = window.input_range
    return dp_allocate(_mean_risk(panel, lo, hi, hyper.kappa), settings.dp_grid)


def fuzzy_ahp_weights(panel, window, hyper, settings):
    feats = _oriented_features(panel, window, settings.orientation)
    return _normalize(feats @ principal_weights(), "fuzzy-ahp: all scores are zero")


def topsis_closeness(matrix: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Closeness d- / (d+ + d-) for benefit-oriented criteria."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=0)
    v = np.zeros_like(matrix)
    np.divide(matrix, norms, out=v, where=norms > 0)
    if weights is not None:
        v = v * weights
    d_best = np.linalg.norm(v - v.max(axis=0), axis=1)
    d_worst = np.linalg.norm(v - v.min(axis=0), axis=1)
    denom = d_best + d_worst
    out = np.zeros(matrix.shape[0])
    np.divide(d_worst, denom, out=out, where=denom > 0)
    return out


def fuzzy_topsis_weights(panel, window, hyper, settings):
    feats = _oriented_features(panel, window, settings.orientation)
    return _normalize(topsis_closeness(feats), "fuzzy-topsis: all closeness scores are zero")


def markowitz_allocate(sigma_bar: np.ndarray, mu: np.ndarray, delta: float, epsilon: float) -> np.ndarray:
    w = np.linalg.solve(delta * (np.diag(sigma_bar) + epsilon * np.eye(sigma_bar.size)), mu)
    return _normalize(np.clip(w, 0.0, None), "markowitz: no positive weight")


def markowitz_weights(panel, window, hyper, settings):
    lo, hi = window.input_range
    sigma = _mean_risk(panel, lo, hi, hyper.kappa)
    return markowitz_allocate(sigma, hyper.mu_vector(panel.n_suppliers), hyper.delta, hyper.epsilon)


_DISPATCH = {
    BaselineKind.HA: ha_weights,
    BaselineKind.MC: mc_weights,
    BaselineKind.GREEDY: greedy_weights,
    BaselineKind.DP: dp_weights,
    BaselineKind.FUZZY_AHP: fuzzy_ahp_weights,
    BaselineKind.FUZZY_TOPSIS: fuzzy_topsis_weights,
    BaselineKind.MARKOWITZ: markowitz_weights,
}


def run_baseline(
    kind: BaselineKind | str,
    panel: SupplyPanel,
    window: Window,
    hyper: BLHyper = BLHyper(),
    settings: BaselineSettings = BaselineSettings(),
) -> np.ndarray:
    """N x f allocation plan; the same simplex vector for every future step."""
    kind = BaselineKind.parse(kind) if isinstance(kind, str) else kind
    w = _DISPATCH[kind](panel, window, hyper, settings)
    return np.repeat(w[:, None], window.f, axis=1)
