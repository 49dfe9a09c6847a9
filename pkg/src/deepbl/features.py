"""Supply indicators and per-timestep propagation matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .panel import SupplyPanel, Window

FEATURE_ORDER = ("sv", "ov", "sr", "ssv", "hsr", "hssv", "sc", "ss")
EPS_SS = 1e-8
PRUNE_THRESHOLD = 0.3


def _fill_rate(o: np.ndarray, s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s, dtype=np.float64)
    np.divide(s, o, out=out, where=o != 0)
    return out


def compute_features(panel: SupplyPanel, t: int, p: int) -> np.ndarray:
    """Raw N x 8 indicator matrix at ``t`` over the inclusive window [t-p, t].

    Historical indicators average over the p+1 steps of the window.
    """
    if t - p < 0 or t >= panel.n_steps:
        raise ValueError(f"window [t-p, t] = [{t - p}, {t}] outside panel of {panel.n_steps} steps")
    o = panel.orders[:, t - p : t + 1]
    s = panel.supplies[:, t - p : t + 1]
    rate = _fill_rate(o, s)
    sc = s.max(axis=1)
    ss = (np.mean((s - sc[:, None]) ** 2, axis=1) + EPS_SS) ** -0.5
    return np.column_stack(
        [
            s[:, -1],
            o[:, -1],
            o[:, -1] - s[:, -1],
            rate[:, -1],
            np.mean(o - s, axis=1),
            np.mean(rate, axis=1),
            sc,
            ss,
        ]
    )


def normalize_features(raw: np.ndarray) -> np.ndarray:
    """Per-feature min-max over every leading axis; constant features map to 0."""
    raw = np.asarray(raw, dtype=np.float64)
    flat = raw.reshape(-1, raw.shape[-1])
    lo = flat.min(axis=0)
    span = flat.max(axis=0) - lo
    out = np.zeros_like(raw)
    np.divide(raw - lo, span, out=out, where=span > 0)
    return np.clip(out, 0.0, 1.0)


def window_features(panel: SupplyPanel, window: Window) -> np.ndarray:
    """Normalised features for every input step of ``window``, shape (p+1, N, 8).

    Steps that sit closer than p to the panel start use the history that
    exists (look-back min(p, tau)).
    """
    raw = np.stack([compute_features(panel, tau, min(window.p, tau)) for tau in window.input_steps])
    return normalize_features(raw)


@dataclass(frozen=True)
class DynGraph:
    adjacency: np.ndarray
    propagation: np.ndarray


def build_dynamic_graph(features: np.ndarray, prune_threshold: float = PRUNE_THRESHOLD) -> DynGraph:
    """Cosine-similarity adjacency, pruned and symmetrically normalised."""
    f = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(f, axis=1)
    unit = np.zeros_like(f)
    np.divide(f, norms[:, None], out=unit, where=norms[:, None] > 0)
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    adjacency = (sim + 1.0) / 2.0
    adjacency[adjacency < prune_threshold] = 0.0
    np.fill_diagonal(adjacency, 1.0)
    adjacency = (adjacency + adjacency.T) / 2.0
    inv_sqrt = 1.0 / np.sqrt(adjacency.sum(axis=1))
    propagation = adjacency * inv_sqrt[:, None] * inv_sqrt[None, :]
    propagation = (propagation + propagation.T) / 2.0
    return DynGraph(adjacency, propagation)


def chebyshev_terms(x: np.ndarray, order: int) -> list[np.ndarray]:
    """[T_0(X), ..., T_order(X)] by the three-term recursion."""
    terms = [np.eye(x.shape[0]), np.array(x, dtype=np.float64)]
    for _ in range(2, order + 1):
        terms.append(2.0 * x @ terms[-1] - terms[-2])
    return terms[: order + 1]


@dataclass(frozen=True)
class WindowInputs:
    """Everything constant about a window: features, graphs, risks, masks."""

    window: Window
    features: np.ndarray  # (p+1, N, 8)
    propagation: np.ndarray  # (p+1, N, N)
    risks: np.ndarray  # (p+1, N) diagonal of Sigma per input step
    target_risks: np.ndarray  # (f, N)
    target_mask: np.ndarray  # (f, N) True where supplier is engaged


def prepare_window(panel: SupplyPanel, window: Window, kappa: int = 2) -> WindowInputs:
    feats = window_features(panel, window)
    props = np.stack([build_dynamic_graph(feats[k]).propagation for k in range(feats.shape[0])])
    lo, hi = window.input_range
    tlo, thi = window.target_range
    shortfall = panel.shortfall
    return WindowInputs(
        window=window,
        features=feats,
        propagation=props,
        risks=shortfall[:, lo : hi + 1].T ** kappa,
        target_risks=shortfall[:, tlo : thi + 1].T ** kappa,
        target_mask=panel.engaged[:, tlo : thi + 1].T,
    )
