"""Order/supply panels: loading, saving, synthesis and windowing."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ARCHETYPES = ("reliable", "volatile", "degrading", "non-engaged")
DEFAULT_P = 4
DEFAULT_F = 4
CSV_HEADER = ("supplier_id", "t", "order", "supply")


class PanelError(ValueError):
    pass


class PanelParseError(PanelError):
    pass


class PanelValidationError(PanelError):
    pass


@dataclass(frozen=True, eq=False)
class SupplyPanel:
    """Paired order and supply volumes, suppliers x timesteps."""

    orders: np.ndarray
    supplies: np.ndarray
    supplier_ids: tuple[str, ...]
    archetypes: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        orders = np.asarray(self.orders, dtype=np.float64)
        supplies = np.asarray(self.supplies, dtype=np.float64)
        if orders.ndim != 2 or orders.shape != supplies.shape:
            raise PanelValidationError(
                f"orders {orders.shape} and supplies {supplies.shape} must be equal-shaped matrices"
            )
        if len(self.supplier_ids) != orders.shape[0]:
            raise PanelValidationError(
                f"{len(self.supplier_ids)} supplier ids for {orders.shape[0]} rows"
            )
        if not (np.all(np.isfinite(orders)) and np.all(np.isfinite(supplies))):
            raise PanelValidationError("panel contains non-finite volumes")
        if np.any(supplies < 0):
            i, t = np.argwhere(supplies < 0)[0]
            raise PanelValidationError(f"negative supply at (supplier {i}, t={t})")
        bad = np.argwhere(supplies > orders)
        if len(bad):
            i, t = bad[0]
            raise PanelValidationError(
                f"supply {supplies[i, t]:g} exceeds order {orders[i, t]:g} "
                f"at (supplier {self.supplier_ids[i]!r}, t={t})"
            )
        orders.setflags(write=False)
        supplies.setflags(write=False)
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "supplies", supplies)
        object.__setattr__(self, "supplier_ids", tuple(self.supplier_ids))

    def __eq__(self, other):
        if not isinstance(other, SupplyPanel):
            return NotImplemented
        return (
            self.supplier_ids == other.supplier_ids
            and np.array_equal(self.orders, other.orders)
            and np.array_equal(self.supplies, other.supplies)
        )

    __hash__ = None

    @property
    def n_suppliers(self) -> int:
        return self.orders.shape[0]

    @property
    def n_steps(self) -> int:
        return self.orders.shape[1]

    @property
    def shortfall(self) -> np.ndarray:
        return self.orders - self.supplies

    @property
    def engaged(self) -> np.ndarray:
        """True where the supplier delivered something (S != 0)."""
        return self.supplies != 0


@dataclass(frozen=True)
class Window:
    anchor_t: int
    p: int
    f: int

    @property
    def input_range(self) -> tuple[int, int]:
        return self.anchor_t - self.p, self.anchor_t

    @property
    def target_range(self) -> tuple[int, int]:
        return self.anchor_t + 1, self.anchor_t + self.f

    @property
    def input_steps(self) -> range:
        return range(self.anchor_t - self.p, self.anchor_t + 1)

    @property
    def target_steps(self) -> range:
        return range(self.anchor_t + 1, self.anchor_t + self.f + 1)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.70
    val_fraction: float = 0.10
    test_fraction: float = 0.20

    def __post_init__(self):
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(x < 0 for x in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fracs}")


# ---------------------------------------------------------------------------
# file io


def load_panel(path: str | Path) -> SupplyPanel:
    """Read a ``supplier_id,t,order,supply`` CSV into a dense panel.

    Suppliers are indexed in lexicographic id order; (supplier, t) pairs with
    no row are non-engaged and read as order = supply = 0.
    """
    path = Path(path)
    records: dict[tuple[str, int], tuple[float, float]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise PanelParseError(f"{path}: expected header {','.join(CSV_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise PanelParseError(f"{path}: row {lineno}: expected 4 fields, got {len(row)}")
            sid = row[0].strip()
            try:
                t = int(row[1])
                order = float(row[2])
                supply = float(row[3])
            except ValueError as exc:
                raise PanelParseError(f"{path}: row {lineno}: {exc}") from None
            if not sid or t < 0 or order < 0 or supply < 0:
                raise PanelParseError(f"{path}: row {lineno}: invalid values {row}")
            if (sid, t) in records:
                raise PanelValidationError(f"{path}: row {lineno}: duplicate ({sid!r}, t={t})")
            if supply > order:
                raise PanelValidationError(
                    f"{path}: row {lineno}: supply {supply:g} exceeds order {order:g} "
                    f"at ({sid!r}, t={t})"
                )
            records[(sid, t)] = (order, supply)
    if not records:
        raise PanelParseError(f"{path}: no data rows")

    ids = sorted({sid for sid, _ in records})
    index = {sid: i for i, sid in enumerate(ids)}
    n_steps = max(t for _, t in records) + 1
    orders = np.zeros((len(ids), n_steps))
    supplies = np.zeros((len(ids), n_steps))
    for (sid, t), (order, supply) in records.items():
        orders[index[sid], t] = order
        supplies[index[sid], t] = supply
    return SupplyPanel(orders, supplies, tuple(ids))


def _fmt_volume(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def save_panel(panel: SupplyPanel, path: str | Path) -> None:
    """Write one row per engaged (supplier, t); zero rows are implied.

    Explicit zero rows are added where needed so that every supplier and the
    full panel length survive a round trip.
    """
    path = Path(path)
    last = panel.n_steps - 1
    nonzero = (panel.orders != 0) | (panel.supplies != 0)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        pad_last = not nonzero[:, last].any()
        for i, sid in enumerate(panel.supplier_ids):
            pad_first = not nonzero[i].any()
            for t in range(panel.n_steps):
                if (
                    nonzero[i, t]
                    or (pad_first and t == 0)
                    or (pad_last and i == 0 and t == last)
                ):
                    o, s = panel.orders[i, t], panel.supplies[i, t]
                    writer.writerow((sid, t, _fmt_volume(o), _fmt_volume(s)))


def load_mu(path: str | Path, supplier_ids: Sequence[str]) -> np.ndarray:
    """Per-supplier unit returns from a ``supplier_id,mu`` CSV; missing ids get 1."""
    mu = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["supplier_id", "mu"]:
            raise PanelParseError(f"{path}: expected header supplier_id,mu")
        for lineno, row in enumerate(reader, start=2):
            try:
                mu[row["supplier_id"].strip()] = float(row["mu"])
            except (TypeError, ValueError) as exc:
                raise PanelParseError(f"{path}: row {lineno}: {exc}") from None
    return np.array([mu.get(sid, 1.0) for sid in supplier_ids])


# ---------------------------------------------------------------------------
# synthesis


def synthesize_panel(
    seed: int,
    n: int,
    t: int,
    archetype_mix: Sequence[float] = (0.25, 0.25, 0.25, 0.25),
    p: int = DEFAULT_P,
    f: int = DEFAULT_F,
) -> SupplyPanel:
    """Generate a panel with planted supplier archetypes.

    reliable: fill rate >= 0.95 on every step.  volatile: fill rate uniform in
    [0.3, 1].  degrading: fill rate ramps linearly from 0.95 to 0.3 across the
    panel.  non-engaged: no orders on at least 60% of steps, volatile-like
    fill on the rest.  Volatile suppliers run larger order books so that their
    mean squared shortfall exceeds the degrading ones'.
    """
    mix = np.asarray(archetype_mix, dtype=np.float64)
    if mix.shape != (4,) or np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-9:
        raise PanelError(f"archetype_mix must be 4 non-negative proportions summing to 1, got {archetype_mix}")
    if n < 1:
        raise PanelError("need at least one supplier")
    if t < 2 * (p + f):
        raise PanelError(f"panel too short to window: t={t} < 2*(p+f)={2 * (p + f)}")

    rng = np.random.default_rng(seed)
    counts = np.floor(mix * n).astype(int)
    for k in np.argsort(-(mix * n - counts), kind="stable")[: n - counts.sum()]:
        counts[k] += 1
    kinds = np.repeat(np.arange(4), counts)
    kinds = kinds[rng.permutation(n)]

    steps = np.arange(t)
    orders = np.zeros((n, t))
    supplies = np.zeros((n, t))
    for i, kind in enumerate(kinds):
        base = rng.uniform(20.0, 60.0) * (1.3 if kind == 1 else 1.0)
        period = rng.uniform(8.0, 16.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        seasonal = 0.2 * base * np.sin(2 * np.pi * steps / period + phase)
        noise = rng.normal(0.0, 0.05 * base, size=t)
        o = np.maximum(np.rint(base + seasonal + noise), 1.0)

        if kind == 0:
            ratio = rng.uniform(0.95, 1.0, size=t)
        elif kind == 2:
            ratio = np.linspace(0.95, 0.3, t)
        else:
            ratio = rng.uniform(0.3, 1.0, size=t)
        s = np.clip(np.rint(o * ratio), 0.0, o)
        if kind == 0:
            s = np.maximum(s, np.ceil(0.95 * o - 1e-9))
        if kind == 3:
            active = np.zeros(t, dtype=bool)
            active[rng.choice(t, size=int(0.35 * t), replace=False)] = True
            o = np.where(active, o, 0.0)
            s = np.where(active, s, 0.0)
        orders[i], supplies[i] = o, s

    width = len(str(n - 1))
    ids = tuple(f"SU{i:0{width}d}" for i in range(n))
    return SupplyPanel(orders, supplies, ids, tuple(ARCHETYPES[k] for k in kinds))


def mask_panel(panel: SupplyPanel, ratio: float, seed: int, until_t: int | None = None) -> SupplyPanel:
    """Zero a random ``ratio`` of (O, S) entries with t < ``until_t``."""
    if not 0.0 <= ratio < 1.0:
        raise PanelError(f"mask ratio must lie in [0, 1), got {ratio}")
    until_t = panel.n_steps if until_t is None else until_t
    rng = np.random.default_rng(seed)
    hit = rng.random((panel.n_suppliers, until_t)) < ratio
    keep = np.ones(panel.orders.shape, dtype=bool)
    keep[:, :until_t] = ~hit
    return SupplyPanel(
        np.where(keep, panel.orders, 0.0),
        np.where(keep, panel.supplies, 0.0),
        panel.supplier_ids,
        panel.archetypes,
    )


# ---------------------------------------------------------------------------
# windowing


def make_windows(
    panel: SupplyPanel, p: int = DEFAULT_P, f: int = DEFAULT_F, split: SplitSpec = SplitSpec()
) -> tuple[list[Window], list[Window], list[Window]]:
    """Every anchor with t-p >= 0 and t+f < T, split chronologically by anchor."""
    if p < 1 or f < 1:
        raise PanelError(f"p and f must be >= 1, got p={p}, f={f}")
    anchors = list(range(p, panel.n_steps - f))
    if not anchors:
        raise PanelError(
            f"panel too short: T={panel.n_steps} leaves no window for p={p}, f={f}"
        )
    n = len(anchors)
    n_train = int(round(split.train_fraction * n))
    n_val = int(round(split.val_fraction * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    windows = [Window(a, p, f) for a in anchors]
    return windows[:n_train], windows[n_train : n_train + n_val], windows[n_train + n_val :]
