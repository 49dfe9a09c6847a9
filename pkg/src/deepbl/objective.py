"""Masked soft-rank Spearman loss with weight decay."""
from __future__ import annotations

import logging
from typing import Iterable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .softrank import SoftRankConfig, hard_rank, soft_rank

log = logging.getLogger(__name__)

DEFAULT_RANK_CFG = SoftRankConfig(0.5, "descending")


def masked_spearman_step(weights, risks, mask, cfg: SoftRankConfig = DEFAULT_RANK_CFG) -> Tensor | None:
    """1 - Spearman rho between ascending risk ranks and descending weight ranks.

    Only suppliers with ``mask`` True take part.  Returns None (and logs a
    warning) when fewer than two remain, since the normaliser vanishes.
    """
    weights = ag.as_tensor(weights)
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    m = idx.size
    if m < 2:
        log.warning("masked_spearman_step: %d engaged supplier(s); step skipped", m)
        return None
    cfg = SoftRankConfig(cfg.regularization_strength, "descending")
    r_risk = hard_rank(np.asarray(risks, dtype=np.float64)[idx], "ascending")
    r_allo = soft_rank(ag.slice_(weights, idx), cfg)
    d = ag.sub(r_risk, r_allo)
    return ag.mul(ag.sum_(ag.mul(d, d)), 6.0 / (m * (m * m - 1)))


def weight_decay(params: Iterable[Tensor], eta: float) -> Tensor:
    total = None
    for p in params:
        sq = ag.sum_(ag.mul(p, p))
        total = sq if total is None else ag.add(total, sq)
    return ag.mul(total if total is not None else ag.Tensor(0.0), eta)


def mae_step(weights, reference, mask) -> Tensor | None:
    """Ablation substitute: mean |w - reference| over engaged suppliers."""
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size == 0:
        return None
    diff = ag.sub(ag.slice_(ag.as_tensor(weights), idx), np.asarray(reference)[idx])
    # |x| as sqrt(x^2 + tiny) keeps the op set closed
    return ag.mean(ag.power(ag.add(ag.mul(diff, diff), 1e-12), 0.5))


def total_loss(
    predictions: Sequence[Tensor],
    target_risks: Sequence[np.ndarray],
    target_masks: Sequence[np.ndarray],
    eta: float,
    params: Iterable[Tensor],
    cfg: SoftRankConfig = DEFAULT_RANK_CFG,
    references: Sequence[np.ndarray] | None = None,
) -> Tensor:
    """Sum of per-step ranking terms over every window and target step, plus decay.

    ``predictions[w]`` is N x f; ``target_risks[w]`` and ``target_masks[w]``
    are f x N.  Passing ``references`` (f x N per window) swaps the ranking
    term for the mean-absolute-error ablation.
    """
    total: Tensor | None = None
    for w, pred in enumerate(predictions):
        for j in range(pred.shape[1]):
            col = ag.slice_(pred, (slice(None), j))
            if references is None:
                term = masked_spearman_step(col, target_risks[w][j], target_masks[w][j], cfg)
            else:
                term = mae_step(col, references[w][j], target_masks[w][j])
            if term is not None:
                total = term if total is None else ag.add(total, term)
    decay = weight_decay(params, eta) if eta else ag.Tensor(0.0)
    return decay if total is None else ag.add(total, decay)
