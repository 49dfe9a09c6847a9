"""Spatio-temporal encoder producing perspective and view-error matrices.

Spatial path: stacked Chebyshev graph convolutions over the propagation
matrix.  Temporal path: stacked causal convolutions over the window.  The
two are fused by per-head pairwise attention into an N x N perspective
matrix P, and a sigmoid head turns P Sigma P^T into a strictly positive
diagonal Omega.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from . import autograd as ag
from .autograd import Tensor
from .features import FEATURE_ORDER, chebyshev_terms

OMEGA_LOGIT_BOUND = 12.0  # keeps Omega >= ~6e-6, bounding cond(J)


@dataclass(frozen=True)
class EncoderConfig:
    n_suppliers: int
    n_features: int = len(FEATURE_ORDER)
    hidden_dim: int = 150
    layers: int = 3
    cheb_order: int = 3
    heads: int = 3
    leaky_slope: float = 0.2
    dropout_rate: float = 0.2
    temporal_width: int = 2

    def __post_init__(self):
        for name in ("n_suppliers", "n_features", "hidden_dim", "layers", "cheb_order", "heads", "temporal_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")


def encoder_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    h, n = cfg.hidden_dim, cfg.n_suppliers
    shapes: dict[str, tuple[int, ...]] = {}
    for layer in range(cfg.layers):
        c_in = cfg.n_features if layer == 0 else h
        shapes[f"spatial.{layer}.weight"] = (c_in, h)
    for layer in range(cfg.layers):
        c_in = cfg.n_features if layer == 0 else h
        shapes[f"temporal.{layer}.weight"] = (cfg.temporal_width, c_in, h)
        shapes[f"temporal.{layer}.bias"] = (h,)
    for head in range(cfg.heads):
        shapes[f"attn.{head}.weight"] = (h, 2 * h)
        shapes[f"attn.{head}.bias"] = (h,)
        shapes[f"attn.{head}.vector"] = (h,)
    shapes["omega.weight"] = (n, n)
    shapes["omega.bias"] = (n,)
    return shapes


def chebyshev_propagator(propagation: np.ndarray, order: int) -> np.ndarray:
    """Sum of T_1..T_C of the propagation matrix (the layer shares one kernel)."""
    return np.sum(chebyshev_terms(propagation, order)[1:], axis=0)


def spatial_forward(
    features,
    propagation: np.ndarray,
    params: dict[str, Tensor],
    cfg: EncoderConfig,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
    activation: bool = True,
) -> Tensor:
    """ChebGCN stack.  Accepts one step (N x F, N x N) or a window (L x N x F, L x N x N).

    A window is processed as one block-diagonal graph and returned as (L*N) x hidden.
    """
    propagation = np.asarray(propagation, dtype=np.float64)
    if propagation.ndim == 3:
        cheb = block_diag(*[chebyshev_propagator(a, cfg.cheb_order) for a in propagation])
        x = np.asarray(features, dtype=np.float64).reshape(-1, cfg.n_features)
    else:
        cheb = chebyshev_propagator(propagation, cfg.cheb_order)
        x = features
    h = ag.as_tensor(x)
    if h.shape[0] != cheb.shape[0]:
        raise ag.ShapeError(f"spatial_forward: features {h.shape} vs propagation {cheb.shape}")
    for layer in range(cfg.layers):
        h = ag.matmul(cheb, ag.matmul(h, params[f"spatial.{layer}.weight"]))
        if activation:
            h = ag.leaky_relu(h, cfg.leaky_slope)
        if layer < cfg.layers - 1:
            h = ag.dropout(h, cfg.dropout_rate, rng, training)
    return h


def temporal_forward(
    features,
    params: dict[str, Tensor],
    cfg: EncoderConfig,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
    activation: bool = True,
) -> Tensor:
    """Causal TCN stack over an (L, N, F) window; returns (L, N, hidden)."""
    e = ag.as_tensor(features)
    if e.ndim != 3:
        raise ag.ShapeError(f"temporal_forward: expected (L, N, F), got {e.shape}")
    for layer in range(cfg.layers):
        e = ag.conv1d(e, params[f"temporal.{layer}.weight"], params[f"temporal.{layer}.bias"])
        if activation:
            e = ag.tanh(e)
        if layer < cfg.layers - 1:
            e = ag.dropout(e, cfg.dropout_rate, rng, training)
    return e


def attention_scores(H: Tensor, E: Tensor, params: dict[str, Tensor], head: int, slope: float) -> Tensor:
    """e_ij = leaky_relu(a . (W [H_i, E_j] + b)), computed without the N^2 concat."""
    hdim = H.shape[1]
    W = params[f"attn.{head}.weight"]
    a = ag.reshape(params[f"attn.{head}.vector"], (W.shape[0], 1))
    b = ag.reshape(params[f"attn.{head}.bias"], (1, W.shape[0]))
    w_h = ag.slice_(W, (slice(None), slice(0, hdim)))
    w_e = ag.slice_(W, (slice(None), slice(hdim, 2 * hdim)))
    left = ag.matmul(H, ag.matmul(ag.transpose(w_h), a))  # N x 1
    right = ag.matmul(E, ag.matmul(ag.transpose(w_e), a))  # N x 1
    right = ag.add(ag.transpose(right), ag.matmul(b, a))  # 1 x N
    return ag.leaky_relu(ag.add(left, right), slope)


def fuse_perspective(H, E, propagation: np.ndarray, params: dict[str, Tensor], cfg: EncoderConfig) -> Tensor:
    """P = mean over heads of tanh(alpha * A_hat * (H E^T)); |P| <= 1."""
    H, E = ag.as_tensor(H), ag.as_tensor(E)
    if H.shape != E.shape:
        raise ag.ShapeError(f"fuse_perspective: H {H.shape} and E {E.shape} differ")
    affinity = ag.mul(ag.matmul(H, ag.transpose(E)), np.asarray(propagation))
    total = None
    for head in range(cfg.heads):
        alpha = ag.softmax(attention_scores(H, E, params, head, cfg.leaky_slope), axis=1)
        p_head = ag.tanh(ag.mul(alpha, affinity))
        total = p_head if total is None else ag.add(total, p_head)
    return ag.mul(total, 1.0 / cfg.heads)


def omega_head(P, sigma_diag, params: dict[str, Tensor]) -> Tensor:
    """Omega = diag(sigmoid(diag(W_om P Sigma P^T) + b_om))."""
    P = ag.as_tensor(P)
    s = np.asarray(sigma_diag, dtype=np.float64)
    if s.ndim == 2:
        s = np.diag(s)
    psp = ag.matmul(ag.mul(P, s[None, :]), ag.transpose(P))
    z = ag.add(ag.diag_extract(ag.matmul(params["omega.weight"], psp)), params["omega.bias"])
    # keeps sigmoid strictly inside (0, 1) in float64
    z = ag.clip(z, -OMEGA_LOGIT_BOUND, OMEGA_LOGIT_BOUND)
    return ag.diag_embed(ag.sigmoid(z))
