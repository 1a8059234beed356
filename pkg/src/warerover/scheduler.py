"""Task-to-AGV assignment policies invoked once per simulation step.

Built-ins: "ta" (greedy nearest-cost matching) and "rd" (random dispatch).
External policies register through register_scheduler and receive the full
global state snapshot, so they may implement reassignment strategies.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .orders import Task
from .world import AgvState, Layout


@dataclass(frozen=True)
class Assignment:
    task_id: str
    agv_id: int
    decided_at: int


SchedulerFn = Callable[..., list[Assignment]]

_REGISTRY: dict[str, SchedulerFn] = {}


def register_scheduler(name: str, fn: SchedulerFn) -> None:
    _REGISTRY[name] = fn


def resolve_policy(name: str) -> SchedulerFn:
    if name in ("ta", "rd"):
        return _REGISTRY[name]
    if name.startswith("external:"):
        key = name.split(":", 1)[1]
        if key not in _REGISTRY:
            raise KeyError(f"no external scheduler registered under {key!r}")
        return _REGISTRY[key]
    raise KeyError(f"unknown scheduler policy {name!r}")


def _manhattan(a, b) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _compatible(agv: AgvState, shelf_size: int) -> bool:
    return agv.spec.footprint >= shelf_size


def schedule_step(
    policy: str,
    pending_tasks: list[Task],
    idle_agvs: Iterable[AgvState],
    layout: Layout,
    rng: np.random.Generator,
    now: int = 0,
    state=None,
) -> list[Assignment]:
    """Assign pending tasks to idle AGVs for this step.

    pending_tasks must already be ordered (release step, then id); every
    idle AGV receives at most one assignment. Unassignable tasks simply
    stay pending.
    """
    fn = resolve_policy(policy)
    return fn(policy=policy, pending_tasks=pending_tasks, idle_agvs=idle_agvs,
              layout=layout, rng=rng, now=now, state=state)


def _ta(pending_tasks, idle_agvs, layout, now, **_kw) -> list[Assignment]:
    # Greedy in task order: cheapest (agv->shelf + shelf->station) distance,
    # ties broken by lowest AGV id so idle-list order never matters.
    free = sorted(idle_agvs, key=lambda a: a.spec.id)
    out: list[Assignment] = []
    for task in pending_tasks:
        shelf = layout.shelf_by_id(task.shelf_id)
        station = layout.station_by_id(task.station_id)
        carry_dist = _manhattan(shelf.home_cell, station.cell)
        best = None
        for agv in free:
            if not _compatible(agv, shelf.size):
                continue
            cost = _manhattan(agv.cell, shelf.home_cell) + carry_dist
            if best is None or (cost, agv.spec.id) < best[:2]:
                best = (cost, agv.spec.id, agv)
        if best is None:
            continue
        out.append(Assignment(task_id=task.id, agv_id=best[1], decided_at=now))
        free.remove(best[2])
        if not free:
            break
    return out


def _rd(pending_tasks, idle_agvs, layout, rng, now, **_kw) -> list[Assignment]:
    free = sorted(idle_agvs, key=lambda a: a.spec.id)
    out: list[Assignment] = []
    for task in pending_tasks:
        shelf = layout.shelf_by_id(task.shelf_id)
        compat = [a for a in free if _compatible(a, shelf.size)]
        if not compat:
            continue
        pick = compat[int(rng.integers(0, len(compat)))]
        out.append(Assignment(task_id=task.id, agv_id=pick.spec.id, decided_at=now))
        free.remove(pick)
        if not free:
            break
    return out


register_scheduler("ta", lambda **kw: _ta(**kw))
register_scheduler("rd", lambda **kw: _rd(**kw))
