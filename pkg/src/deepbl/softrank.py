"""Differentiable ranking by projection onto the permutahedron.

The soft rank of ``x`` at strength ``s`` is the Euclidean projection of
``x / s`` onto the convex hull of all permutations of (1, ..., n).  The
projection reduces to one sort plus an isotonic regression solved by
pool-adjacent-violators, so the Jacobian is block averaging inside each
pooled run.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.stats import rankdata

from .autograd import Tensor, as_tensor, make_node


@dataclass(frozen=True)
class SoftRankConfig:
    regularization_strength: float = 0.5
    direction: Literal["ascending", "descending"] = "ascending"

    def __post_init__(self):
        if not self.regularization_strength > 0:
            raise ValueError("regularization_strength must be positive")
        if self.direction not in ("ascending", "descending"):
            raise ValueError(f"unknown direction {self.direction!r}")


def _pav_decreasing(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Isotonic regression with v_1 >= v_2 >= ... >= v_n.

    Returns the fitted values and the block id of every position.
    """
    sums: list[float] = []
    counts: list[int] = []
    for value in y:
        sums.append(float(value))
        counts.append(1)
        # pool while the newest block's mean exceeds its predecessor's
        while len(sums) > 1 and sums[-1] * counts[-2] > sums[-2] * counts[-1]:
            s, c = sums.pop(), counts.pop()
            sums[-1] += s
            counts[-1] += c
    fitted = np.repeat(np.array(sums) / np.array(counts), counts)
    blocks = np.repeat(np.arange(len(counts)), counts)
    return fitted, blocks


def _project_permutahedron(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = z.size
    order = np.argsort(-z, kind="stable")
    s = z[order]
    w = np.arange(n, 0, -1, dtype=np.float64)
    v, blocks = _pav_decreasing(s - w)
    sorted_out = s - v
    # unpooled entries are exactly their target rank; avoids s - (s - w) rounding
    single = np.bincount(blocks)[blocks] == 1
    sorted_out[single] = w[single]
    out = np.empty(n)
    out[order] = sorted_out
    return out, order, blocks


def _block_mean(g: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    sums = np.bincount(blocks, weights=g)
    counts = np.bincount(blocks)
    return (sums / counts)[blocks]


def soft_rank(values, cfg: SoftRankConfig = SoftRankConfig()) -> Tensor:
    """Fractional ranks in [1, n]; rank n goes to the largest value (ascending)."""
    x = as_tensor(values)
    if x.ndim != 1 or x.size == 0:
        raise ValueError(f"soft_rank needs a non-empty vector, got shape {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise ValueError("soft_rank input must be finite")
    sign = -1.0 if cfg.direction == "descending" else 1.0
    scale = sign / cfg.regularization_strength
    ranks, order, blocks = _project_permutahedron(x.data * scale)

    def backward(g):
        gs = g[order]
        gz = np.empty_like(g)
        gz[order] = gs - _block_mean(gs, blocks)
        return (gz * scale,)

    return make_node(ranks, (x,), backward, "soft_rank")


def hard_rank(values, direction: str = "ascending") -> np.ndarray:
    """Average ranks starting at 1; ties share the mean of their positions."""
    x = np.asarray(values, dtype=np.float64)
    if direction == "descending":
        x = -x
    elif direction != "ascending":
        raise ValueError(f"unknown direction {direction!r}")
    return rankdata(x, method="average")
