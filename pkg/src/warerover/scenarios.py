"""Built-in scenario presets: one command reproduces each evaluated setting.

homogeneous: 20x15 grid, 9 identical 1x1 carriers, 32 shelves, 8 stations,
30 one-shot orders. heterogeneous: the same scale with mixed 1x1 and 2x2
carriers and pods on a wide-aisle floor. fault: the homogeneous setting
plus random failures (1% per step, 40-step downtime).
"""
from __future__ import annotations

from .engine import ExperimentConfig
from .failures import FailureConfig
from .orders import OneShot, OrderPattern
from .world import (
    AgvPlacement,
    AgvSpec,
    Layout,
    ShelfPod,
    Station,
    generate_layout,
    validate_layout,
)

SCENARIO_NAMES = ("homogeneous", "heterogeneous", "fault")

DEFAULT_ORDERS = 30
DEFAULT_HORIZON = 2000
_LAYOUT_SEED = 7  # fixed: the preset floor is part of the scenario definition


def homogeneous_layout() -> Layout:
    specs = [AgvSpec(id=i, footprint=1, steps_per_cell=1, turn_cost=0) for i in range(9)]
    return generate_layout(20, 15, 32, 8, specs, seed=_LAYOUT_SEED)


def heterogeneous_layout() -> Layout:
    """Mixed 1x1/2x2 fleet and pods; every corridor is two cells wide so a
    loaded 2x2 carrier can reach any pod it may be assigned."""
    width, height = 20, 15
    stations = tuple(
        Station(id=f"R{i}", cell=(int((i + 0.5) * width / 8), 0), service_time=2)
        for i in range(8)
    )
    shelves: list[ShelfPod] = []
    sku = 0
    # Single rows of 1x1 pods at y=3 and y=6, gaps so a 2x2 carrier can
    # anchor on any home cell without touching a neighboring stored pod.
    for y in (3, 6):
        for x in (2, 4, 6, 8, 11, 13, 15, 17):
            shelves.append(ShelfPod(id=f"S{sku}", home_cell=(x, y),
                                    contents={f"sku{sku}": 100}, size=1))
            sku += 1
    # 2x2 pods in a double row at y=9..10.
    for x in (2, 5, 11, 14):
        shelves.append(ShelfPod(id=f"S{sku}", home_cell=(x, 9),
                                contents={f"sku{sku}": 100}, size=2))
        sku += 1

    placements = []
    for i, x in enumerate((3, 5, 7, 12, 14, 16)):
        placements.append(AgvPlacement(spec=AgvSpec(id=i, footprint=1), cell=(x, 14), heading="S"))
    for j, x in enumerate((0, 9, 17)):
        placements.append(AgvPlacement(spec=AgvSpec(id=6 + j, footprint=2), cell=(x, 13),
                                       heading="S"))
    parking = tuple(p.cell for p in placements)

    layout = Layout(
        width=width, height=height,
        shelves=tuple(shelves), stations=stations,
        parking=parking, agvs=tuple(placements),
    )
    validate_layout(layout)
    return layout


def scenario_config(
    name: str,
    scheduler: str = "ta",
    planner: str = "astar",
    pattern: OrderPattern | None = None,
    horizon: int = DEFAULT_HORIZON,
    repeats: int = 100,
    base_seed: int = 0,
    deterministic_ct: bool = False,
    failure_prob: float | None = None,
    down_steps: int | None = None,
) -> ExperimentConfig:
    if name not in SCENARIO_NAMES:
        raise KeyError(f"unknown scenario {name!r}; expected one of {SCENARIO_NAMES}")
    if name == "heterogeneous":
        layout = heterogeneous_layout()
    else:
        layout = homogeneous_layout()
    if name == "fault":
        failure_config = FailureConfig(
            per_step_probability=0.01 if failure_prob is None else failure_prob,
            down_steps=40 if down_steps is None else down_steps,
            enabled=True,
        )
    else:
        failure_config = FailureConfig(enabled=False)
    return ExperimentConfig(
        layout=layout,
        pattern=pattern or OneShot(DEFAULT_ORDERS),
        scheduler=scheduler,
        planner=planner,
        failure_config=failure_config,
        horizon=horizon,
        repeats=repeats,
        base_seed=base_seed,
        deterministic_ct=deterministic_ct,
        scenario_name={"homogeneous": "Ho", "heterogeneous": "He", "fault": "FT"}[name],
    )
