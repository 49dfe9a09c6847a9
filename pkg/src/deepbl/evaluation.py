"""HR@K and masked risk expectation, per window and aggregated."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .panel import SupplyPanel, Window

log = logging.getLogger(__name__)

DEFAULT_KS = (10, 20, 50)

Allocator = Callable[[Window], np.ndarray]


def top_k(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values, lowest index first on ties."""
    return np.argsort(-np.asarray(values, dtype=np.float64), kind="stable")[:k]


def bottom_k(values: np.ndarray, k: int) -> np.ndarray:
    return np.argsort(np.asarray(values, dtype=np.float64), kind="stable")[:k]


def hr_at_k(risks, weights, k: int) -> float:
    """Share of the k highest-risk suppliers that hold the k lowest weights."""
    risks = np.asarray(risks, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if risks.shape != weights.shape or risks.ndim != 1:
        raise ValueError(f"hr_at_k: risks {risks.shape} and weights {weights.shape} must be aligned vectors")
    if k < 1:
        raise ValueError(f"hr_at_k: k must be >= 1, got {k}")
    n = risks.size
    if k > n:
        log.warning("hr_at_k: k=%d exceeds %d suppliers; clamped", k, n)
        k = n
    hits = np.intersect1d(top_k(risks, k), bottom_k(weights, k)).size
    return hits / k


def masked_weights(weights, mask) -> np.ndarray:
    """softmax(weights) with masked entries forced to exactly zero."""
    weights = np.asarray(weights, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.all():
        raise ValueError("mre: every supplier is masked")
    out = np.zeros_like(weights)
    live = ~mask
    z = weights[live] - weights[live].max()
    e = np.exp(z)
    out[live] = e / e.sum()
    return out


def mre(weights, risks, mask) -> float:
    """Risk expectation under the masked re-softmax of the weights."""
    return float(np.dot(np.asarray(risks, dtype=np.float64), masked_weights(weights, mask)))


@dataclass
class EvalReport:
    hr_at_k: dict[int, float]
    mre: float
    rows: list[dict] = field(default_factory=list)
    masked_counts: list[int] = field(default_factory=list)
    skipped_steps: int = 0

    def to_dict(self) -> dict:
        return {
            "hr@" + str(k): v for k, v in sorted(self.hr_at_k.items())
        } | {
            "mre": self.mre,
            "n_windows": len({r["anchor_t"] for r in self.rows}),
            "n_steps": len(self.rows),
            "skipped_steps": self.skipped_steps,
            "masked_suppliers_mean": float(np.mean(self.masked_counts)) if self.masked_counts else 0.0,
            "per_window": self.rows,
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def write_csv(self, path: str | Path) -> None:
        """One row per window x step x metric."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("anchor_t", "step", "metric", "value"))
            for r in self.rows:
                for key in sorted(k for k in r if k not in ("anchor_t", "step", "masked")):
                    writer.writerow((r["anchor_t"], r["step"], key, repr(r[key])))

    def summary(self) -> str:
        parts = [f"HR@{k}={v:.4f}" for k, v in sorted(self.hr_at_k.items())]
        parts.append(f"MRE={self.mre:.4f}")
        return "  ".join(parts)


def evaluate(
    allocator: Allocator,
    windows: Sequence[Window],
    panel: SupplyPanel,
    kappa: int = 2,
    ks: Sequence[int] = DEFAULT_KS,
) -> EvalReport:
    """Score an allocator (window -> N x f weights) on every future step.

    K is clamped to the number of engaged suppliers at the step.  Steps where
    every supplier is non-engaged are skipped.
    """
    rows = []
    masked_counts = []
    skipped = 0
    shortfall = panel.shortfall
    engaged = panel.engaged
    for window in windows:
        plan = np.asarray(allocator(window), dtype=np.float64)
        if plan.shape != (panel.n_suppliers, window.f):
            raise ValueError(f"allocator returned {plan.shape}, expected {(panel.n_suppliers, window.f)}")
        for j, t in enumerate(window.target_steps):
            risks = shortfall[:, t] ** kappa
            mask = ~engaged[:, t]
            n_live = int((~mask).sum())
            if n_live == 0:
                skipped += 1
                continue
            row = {"anchor_t": window.anchor_t, "step": t, "masked": int(mask.sum())}
            for k in ks:
                row[f"hr@{k}"] = hr_at_k(risks, plan[:, j], min(k, n_live))
            row["mre"] = mre(plan[:, j], risks, mask)
            rows.append(row)
            masked_counts.append(int(mask.sum()))
    if not rows:
        return EvalReport({k: float("nan") for k in ks}, float("nan"), rows, masked_counts, skipped)
    hr = {k: float(np.mean([r[f"hr@{k}"] for r in rows])) for k in ks}
    return EvalReport(hr, float(np.mean([r["mre"] for r in rows])), rows, masked_counts, skipped)


CURVE_COLUMNS = ("ratio", "hr@10", "hr@20", "hr@50", "mre", "best_epoch")


def robustness_sweep(panel: SupplyPanel, config, ratios: Sequence[float], mask_seed: int = 0, split=None) -> list[dict]:
    """Retrain with a random share of training-period (O, S) entries zeroed.

    Only steps up to the last training target are masked; test windows are
    scored against the untouched panel.  One row per ratio, in input order.
    """
    from .panel import SplitSpec, make_windows, mask_panel
    from .training import evaluate_model, train

    split = split or SplitSpec()
    for r in ratios:
        if not 0.0 <= r <= 0.99:
            raise ValueError(f"mask ratio {r} outside [0, 0.99]")
    train_w, _, test_w = make_windows(panel, config.p, config.f, split)
    until_t = train_w[-1].target_range[1] + 1
    curve = []
    for r in ratios:
        masked = panel if r == 0 else mask_panel(panel, r, mask_seed, until_t)
        result = train(masked, config, split)
        report = evaluate_model(result.model, panel, test_w)
        row = {"ratio": float(r)}
        row.update({f"hr@{k}": v for k, v in report.hr_at_k.items()})
        row["mre"] = report.mre
        row["best_epoch"] = -1 if result.best_epoch is None else result.best_epoch
        curve.append(row)
        log.info("mask ratio %.2f: %s", r, report.summary())
    return curve


def write_curve(curve: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for row in curve:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in CURVE_COLUMNS])
