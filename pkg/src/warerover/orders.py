"""Order stream generation and multi-stage task decomposition.

Orders arrive on a schedule set by a demand pattern, decompose into one
shelf-to-station task each, and advance through a fixed stage sequence as
the assigned AGV executes them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .world import Coord, Layout

# Order lifecycle
PENDING = "pending"
ASSIGNED = "assigned"
COMPLETED = "completed"
EXPIRED = "expired"

# Task stages, in execution order.
GO_TO_SHELF = "go_to_shelf"
LIFT_SHELF = "lift_shelf"
CARRY_TO_STATION = "carry_to_station"
WAIT_SERVICE = "wait_service"
RETURN_SHELF = "return_shelf"
DROP_SHELF = "drop_shelf"
DONE = "done"

STAGE_SEQUENCE = (
    GO_TO_SHELF,
    LIFT_SHELF,
    CARRY_TO_STATION,
    WAIT_SERVICE,
    RETURN_SHELF,
    DROP_SHELF,
    DONE,
)
_STAGE_INDEX = {stage: i for i, stage in enumerate(STAGE_SEQUENCE)}


class EmptyCatalogError(ValueError):
    """A pattern emitted orders but the SKU or station catalog is empty."""


class OutOfStockError(LookupError):
    """No shelf holds enough of the requested SKU."""


class ShelvesBusyError(LookupError):
    """Stock exists but every holding shelf is reserved by another task."""


@dataclass(frozen=True)
class Sku:
    id: str
    size_class: int = 1


@dataclass
class Order:
    id: str
    sku: str
    quantity: int
    station: str
    release_step: int
    status: str = PENDING
    completed_step: int | None = None


@dataclass
class Task:
    id: str
    order_id: str
    shelf_id: str
    station_id: str
    stage: str = GO_TO_SHELF
    assigned_agv: int | None = None
    stage_dwell: int = 0  # active steps spent in the current dwell stage


@dataclass(frozen=True)
class OneShot:
    n: int


@dataclass(frozen=True)
class Wave:
    waves: int
    per_wave: int
    interval: int


@dataclass(frozen=True)
class Hotspot:
    n: int
    zipf_s: float = 1.0


@dataclass(frozen=True)
class Burst:
    base_rate: float
    burst_rate: float
    burst_start: int
    burst_len: int


@dataclass(frozen=True)
class Steady:
    rate: float
    horizon: int


OrderPattern = OneShot | Wave | Hotspot | Burst | Steady

PATTERN_NAMES = {"os": OneShot, "wave": Wave, "hotspot": Hotspot, "burst": Burst, "steady": Steady}


def _release_schedule(pattern: OrderPattern, rng: np.random.Generator) -> list[int]:
    """Release step per emitted order, unsorted draw order."""
    if isinstance(pattern, OneShot):
        return [0] * pattern.n
    if isinstance(pattern, Hotspot):
        return [0] * pattern.n
    if isinstance(pattern, Wave):
        out = []
        for w in range(pattern.waves):
            out.extend([w * pattern.interval] * pattern.per_wave)
        return out
    if isinstance(pattern, Burst):
        # Emission window covers the pre-burst baseline plus the burst itself.
        out = []
        for step in range(pattern.burst_start + pattern.burst_len):
            in_burst = pattern.burst_start <= step < pattern.burst_start + pattern.burst_len
            rate = pattern.burst_rate if in_burst else pattern.base_rate
            out.extend([step] * int(rng.poisson(rate)))
        return out
    if isinstance(pattern, Steady):
        out = []
        for step in range(pattern.horizon):
            out.extend([step] * int(rng.poisson(pattern.rate)))
        return out
    raise TypeError(f"unknown order pattern {pattern!r}")


def generate_orders(
    pattern: OrderPattern,
    skus: list[Sku],
    stations: list[str],
    seed,
) -> list[Order]:
    """Emit the pattern's order stream, sorted by release step.

    Deterministic for a fixed seed. Hotspot draws SKUs from a bounded
    Zipf(zipf_s) over the catalog order; all other patterns draw SKUs
    uniformly. Stations are always drawn uniformly.
    """
    rng = np.random.default_rng(seed)
    releases = _release_schedule(pattern, rng)
    if not releases:
        return []
    if not skus or not stations:
        raise EmptyCatalogError(
            f"pattern emits {len(releases)} orders but skus={len(skus)} stations={len(stations)}"
        )

    if isinstance(pattern, Hotspot):
        if pattern.zipf_s <= 0:
            raise ValueError("zipf_s must be > 0")
        ranks = np.arange(1, len(skus) + 1, dtype=float)
        pmf = ranks ** (-pattern.zipf_s)
        pmf /= pmf.sum()
        sku_idx = rng.choice(len(skus), size=len(releases), p=pmf)
    else:
        sku_idx = rng.integers(0, len(skus), size=len(releases))
    station_idx = rng.integers(0, len(stations), size=len(releases))

    orders = [
        Order(
            id=f"O{i:05d}",
            sku=skus[int(sku_idx[i])].id,
            quantity=1,
            station=stations[int(station_idx[i])],
            release_step=release,
        )
        for i, release in enumerate(releases)
    ]
    orders.sort(key=lambda o: (o.release_step, o.id))
    return orders


def decompose_order(
    order: Order,
    layout: Layout,
    inventory: dict[str, dict[str, int]],
    exclude_shelves: frozenset[str] | set[str] = frozenset(),
) -> Task:
    """Pick the stocked shelf nearest (Manhattan) to the target station.

    inventory maps shelf id -> {sku: count}. Shelves in exclude_shelves are
    reserved by in-flight tasks; raising ShelvesBusyError lets the caller
    retry later instead of expiring the order.
    """
    station = layout.station_by_id(order.station)
    holders = [
        shelf
        for shelf in layout.shelves
        if inventory.get(shelf.id, {}).get(order.sku, 0) >= order.quantity
    ]
    if not holders:
        raise OutOfStockError(f"order {order.id}: no shelf holds {order.quantity} of {order.sku!r}")
    available = [s for s in holders if s.id not in exclude_shelves]
    if not available:
        raise ShelvesBusyError(f"order {order.id}: all shelves holding {order.sku!r} are reserved")

    def dist(shelf) -> int:
        return abs(shelf.home_cell[0] - station.cell[0]) + abs(shelf.home_cell[1] - station.cell[1])

    best = min(available, key=lambda s: (dist(s), s.id))
    return Task(id=f"T{order.id}", order_id=order.id, shelf_id=best.id, station_id=order.station)


def next_stage(stage: str) -> str:
    idx = _STAGE_INDEX[stage]
    if stage == DONE:
        raise ValueError("task already done")
    return STAGE_SEQUENCE[idx + 1]


def advance_stage(
    task: Task,
    agv,
    now: int,
    order: Order,
    inventory: dict[str, dict[str, int]],
) -> str:
    """Move the task to its successor stage and apply stage-exit effects.

    The caller is responsible for checking the stage-completion condition
    first; calling early is a contract bug. Spatial bookkeeping (stored
    shelf cells, shelf locks) stays with the engine.
    """
    new = next_stage(task.stage)
    if task.stage == WAIT_SERVICE:
        shelf_stock = inventory[task.shelf_id]
        shelf_stock[order.sku] = shelf_stock.get(order.sku, 0) - order.quantity
        order.status = COMPLETED
        order.completed_step = now
    if new == DONE:
        agv.carrying = None
    task.stage = new
    task.stage_dwell = 0
    return new


def export_order_trace(orders: list[Order]) -> str:
    lines = ["order_id,sku,station,release_step,completed_step,status"]
    for o in orders:
        completed = "" if o.completed_step is None else str(o.completed_step)
        lines.append(f"{o.id},{o.sku},{o.station},{o.release_step},{completed},{o.status}")
    return "\n".join(lines) + "\n"
