"""Stochastic and on-demand AGV failures with protected safety corridors.

A failed AGV freezes in place for a fixed downtime. Around it the system
builds a corridor: the failed footprint dilated by one cell plus a
shortest access strip to the map boundary, reserved for human maintenance
and treated as a dynamic obstacle by every planner until recovery.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .world import Coord, Layout

RANDOM, INJECTED = "random", "injected"


class NotActiveError(RuntimeError):
    """Failure injection targeted an AGV that is already down."""


@dataclass(frozen=True)
class FailureConfig:
    per_step_probability: float = 0.01
    down_steps: int = 40
    enabled: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.per_step_probability <= 1:
            raise ValueError("per_step_probability must be in [0, 1]")
        if self.down_steps < 1:
            raise ValueError("down_steps must be >= 1")


@dataclass(frozen=True)
class FailureEvent:
    agv: int
    at: int
    recovery_at: int
    source: str = RANDOM


@dataclass(frozen=True)
class SafetyCorridor:
    id: str
    cells: frozenset[Coord]
    active_from: int
    active_until: int
    cause_agv: int
    boundary_reachable: bool = True

    def window(self) -> tuple[frozenset[Coord], int, int]:
        return (self.cells, self.active_from, self.active_until)


def sample_failures(
    config: FailureConfig,
    active_agv_ids: list[int],
    rng: np.random.Generator | dict[int, np.random.Generator],
    now: int,
) -> list[FailureEvent]:
    """Independent Bernoulli draw per active AGV from the failure stream.

    rng may be one shared stream, or a per-agent stream map; with a map,
    every agent's stream is advanced each step (failed agents' draws are
    discarded) so the failure timeline of a seed does not depend on how the
    rest of the run unfolds.
    """
    if not config.enabled or config.per_step_probability == 0.0:
        return []
    events = []
    active = set(active_agv_ids)
    if isinstance(rng, dict):
        for agv in sorted(rng):
            fired = rng[agv].random() < config.per_step_probability
            if fired and agv in active:
                events.append(FailureEvent(agv=agv, at=now,
                                           recovery_at=now + config.down_steps))
        return events
    for agv in sorted(active):
        if rng.random() < config.per_step_probability:
            events.append(FailureEvent(agv=agv, at=now, recovery_at=now + config.down_steps))
    return events


def inject_failure(agv_id: int, is_active: bool, now: int, config: FailureConfig) -> FailureEvent:
    if not is_active:
        raise NotActiveError(f"agv {agv_id} is already failed")
    return FailureEvent(agv=agv_id, at=now, recovery_at=now + config.down_steps,
                        source=INJECTED)


def build_corridor(
    event: FailureEvent,
    failed_cells: frozenset[Coord],
    layout: Layout,
) -> SafetyCorridor:
    """Dilate the failed footprint and carve a 1-wide access strip to the boundary.

    Shelf, obstacle, and station cells are excluded from the dilation and
    the strip (stations only stay in when the failure happened on one); the
    failed footprint itself is always protected. When no boundary is
    reachable, the corridor degrades to the dilated region alone and is
    flagged for the event log.
    """
    shelf_cells = layout.all_shelf_cells()
    station_cells = {s.cell for s in layout.stations}
    avoid = (shelf_cells | layout.obstacles | station_cells) - failed_cells

    dilated = set(failed_cells)
    for x, y in failed_cells:
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                c = (x + dx, y + dy)
                if layout.in_bounds(c) and c not in avoid:
                    dilated.add(c)

    def on_boundary(c: Coord) -> bool:
        return c[0] in (0, layout.width - 1) or c[1] in (0, layout.height - 1)

    strip: list[Coord] = []
    reachable = any(on_boundary(c) for c in dilated)
    if not reachable:
        # multi-source BFS over passable cells, deterministic visiting order
        parent: dict[Coord, Coord | None] = {c: None for c in sorted(dilated)}
        frontier = deque(sorted(dilated))
        goal = None
        while frontier:
            cur = frontier.popleft()
            if on_boundary(cur) and cur not in dilated:
                goal = cur
                break
            x, y = cur
            for dx, dy in ((0, 1), (1, 0), (0, -1), (-1, 0)):
                nxt = (x + dx, y + dy)
                if nxt in parent or not layout.in_bounds(nxt) or nxt in avoid:
                    continue
                parent[nxt] = cur
                frontier.append(nxt)
        if goal is not None:
            cur = goal
            while cur is not None and cur not in dilated:
                strip.append(cur)
                cur = parent[cur]
            reachable = True

    return SafetyCorridor(
        id=f"C{event.agv}@{event.at}",
        cells=frozenset(dilated) | frozenset(strip),
        active_from=event.at,
        active_until=event.recovery_at,
        cause_agv=event.agv,
        boundary_reachable=reachable,
    )


def due_recoveries(events: list[FailureEvent], now: int) -> list[FailureEvent]:
    return [e for e in events if e.recovery_at == now]
