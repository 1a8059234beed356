"""Warehouse geometry: grid layouts, heterogeneous AGV specs, occupancy queries.

The grid is x in [0, width), y in [0, height); y=0 is the south edge.
All 2x2 entities are anchored at their minimum-coordinate cell and their
geometry derives from footprint_cells().
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

Coord = tuple[int, int]

HEADINGS = ("N", "E", "S", "W")
HEADING_VECTORS: dict[str, Coord] = {"N": (0, 1), "E": (1, 0), "S": (0, -1), "W": (-1, 0)}
ROTATE_CW = {"N": "E", "E": "S", "S": "W", "W": "N"}
ROTATE_CCW = {v: k for k, v in ROTATE_CW.items()}


class LayoutError(ValueError):
    """Raised when a layout document fails parsing or validation."""


@dataclass(frozen=True)
class ShelfPod:
    id: str
    home_cell: Coord
    contents: dict[str, int] = field(default_factory=dict)
    size: int = 1


@dataclass(frozen=True)
class Station:
    id: str
    cell: Coord
    service_time: int = 2


@dataclass(frozen=True)
class AgvSpec:
    id: int
    footprint: int = 1
    steps_per_cell: int = 1
    turn_cost: int = 0
    kind: str = "carrier"

    def can_carry(self, shelf_size: int) -> bool:
        return shelf_size <= self.footprint


@dataclass(frozen=True)
class AgvPlacement:
    spec: AgvSpec
    cell: Coord
    heading: str = "N"


@dataclass(frozen=True)
class Layout:
    width: int
    height: int
    shelves: tuple[ShelfPod, ...] = ()
    stations: tuple[Station, ...] = ()
    parking: tuple[Coord, ...] = ()
    obstacles: frozenset[Coord] = frozenset()
    agvs: tuple[AgvPlacement, ...] = ()

    def in_bounds(self, cell: Coord) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def shelf_by_id(self, shelf_id: str) -> ShelfPod:
        for shelf in self.shelves:
            if shelf.id == shelf_id:
                return shelf
        raise KeyError(shelf_id)

    def station_by_id(self, station_id: str) -> Station:
        for station in self.stations:
            if station.id == station_id:
                return station
        raise KeyError(station_id)

    def all_shelf_cells(self) -> frozenset[Coord]:
        cells: set[Coord] = set()
        for shelf in self.shelves:
            cells |= footprint_cells(shelf.home_cell, shelf.size)
        return frozenset(cells)


def footprint_cells(anchor: Coord, footprint: int) -> frozenset[Coord]:
    """Cells of the footprint x footprint block whose minimum corner is anchor."""
    x, y = anchor
    if footprint == 1:
        return frozenset(((x, y),))
    return frozenset((x + dx, y + dy) for dx in range(footprint) for dy in range(footprint))


def is_traversable(
    layout: Layout,
    anchor: Coord,
    footprint: int,
    carrying: bool,
    dynamic_blocks: frozenset[Coord] | set[Coord] = frozenset(),
    stored_shelf_cells: frozenset[Coord] | None = None,
) -> bool:
    """True iff the footprint block at anchor is fully passable.

    Carrying AGVs may not pass beneath stored shelves; unloaded AGVs may.
    stored_shelf_cells overrides the set of cells covered by stored pods
    (defaults to every shelf in the layout, i.e. all pods at home).
    """
    if stored_shelf_cells is None:
        stored_shelf_cells = layout.all_shelf_cells()
    for cell in footprint_cells(anchor, footprint):
        if not layout.in_bounds(cell):
            return False
        if cell in layout.obstacles:
            return False
        if cell in dynamic_blocks:
            return False
        if carrying and cell in stored_shelf_cells:
            return False
    return True


_TOP_KEYS = {"width", "height", "shelves", "stations", "parking", "obstacles", "agvs"}
_SHELF_KEYS = {"id", "x", "y", "size", "contents"}
_STATION_KEYS = {"id", "x", "y", "service_time"}
_CELL_KEYS = {"x", "y"}
_AGV_KEYS = {"id", "x", "y", "heading", "footprint", "steps_per_cell", "turn_cost", "kind"}


def _reject_unknown(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise LayoutError(f"unknown key {sorted(unknown)[0]!r} in {where}")


def load_layout(text: str) -> Layout:
    """Parse and validate a layout JSON document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LayoutError(f"layout document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise LayoutError("layout document must be a JSON object")
    _reject_unknown(doc, _TOP_KEYS, "layout document")

    try:
        width = int(doc["width"])
        height = int(doc["height"])
    except KeyError as exc:
        raise LayoutError(f"missing required key {exc.args[0]!r}") from exc

    shelves = []
    for entry in doc.get("shelves", []):
        _reject_unknown(entry, _SHELF_KEYS, f"shelf {entry.get('id')!r}")
        contents = {}
        for item in entry.get("contents", []):
            _reject_unknown(item, {"sku", "count"}, f"shelf {entry.get('id')!r} contents")
            contents[str(item["sku"])] = int(item["count"])
        shelves.append(
            ShelfPod(
                id=str(entry["id"]),
                home_cell=(int(entry["x"]), int(entry["y"])),
                contents=contents,
                size=int(entry.get("size", 1)),
            )
        )
    stations = []
    for entry in doc.get("stations", []):
        _reject_unknown(entry, _STATION_KEYS, f"station {entry.get('id')!r}")
        stations.append(
            Station(
                id=str(entry["id"]),
                cell=(int(entry["x"]), int(entry["y"])),
                service_time=int(entry.get("service_time", 2)),
            )
        )
    parking = []
    for entry in doc.get("parking", []):
        _reject_unknown(entry, _CELL_KEYS, "parking cell")
        parking.append((int(entry["x"]), int(entry["y"])))
    obstacles = set()
    for entry in doc.get("obstacles", []):
        _reject_unknown(entry, _CELL_KEYS, "obstacle cell")
        obstacles.add((int(entry["x"]), int(entry["y"])))
    agvs = []
    for entry in doc.get("agvs", []):
        _reject_unknown(entry, _AGV_KEYS, f"agv {entry.get('id')!r}")
        spec = AgvSpec(
            id=int(entry["id"]),
            footprint=int(entry.get("footprint", 1)),
            steps_per_cell=int(entry.get("steps_per_cell", 1)),
            turn_cost=int(entry.get("turn_cost", 0)),
            kind=str(entry.get("kind", "carrier")),
        )
        heading = str(entry.get("heading", "N"))
        agvs.append(AgvPlacement(spec=spec, cell=(int(entry["x"]), int(entry["y"])), heading=heading))

    layout = Layout(
        width=width,
        height=height,
        shelves=tuple(shelves),
        stations=tuple(stations),
        parking=tuple(parking),
        obstacles=frozenset(obstacles),
        agvs=tuple(agvs),
    )
    validate_layout(layout)
    return layout


def serialize_layout(layout: Layout) -> str:
    """Inverse of load_layout; load_layout(serialize_layout(l)) == l."""
    doc = {
        "width": layout.width,
        "height": layout.height,
        "shelves": [
            {
                "id": s.id,
                "x": s.home_cell[0],
                "y": s.home_cell[1],
                "size": s.size,
                "contents": [{"sku": sku, "count": n} for sku, n in sorted(s.contents.items())],
            }
            for s in layout.shelves
        ],
        "stations": [
            {"id": s.id, "x": s.cell[0], "y": s.cell[1], "service_time": s.service_time}
            for s in layout.stations
        ],
        "parking": [{"x": x, "y": y} for x, y in layout.parking],
        "obstacles": [{"x": x, "y": y} for x, y in sorted(layout.obstacles)],
        "agvs": [
            {
                "id": a.spec.id,
                "x": a.cell[0],
                "y": a.cell[1],
                "heading": a.heading,
                "footprint": a.spec.footprint,
                "steps_per_cell": a.spec.steps_per_cell,
                "turn_cost": a.spec.turn_cost,
                "kind": a.spec.kind,
            }
            for a in layout.agvs
        ],
    }
    return json.dumps(doc, indent=2)


def validate_layout(layout: Layout) -> None:
    """Raise LayoutError naming the first violated invariant and entity."""
    if layout.width < 1 or layout.height < 1:
        raise LayoutError(f"grid must be at least 1x1, got {layout.width}x{layout.height}")

    for shelf in layout.shelves:
        if shelf.size not in (1, 2):
            raise LayoutError(f"shelf {shelf.id!r}: size must be 1 or 2, got {shelf.size}")
        for cell in footprint_cells(shelf.home_cell, shelf.size):
            if not layout.in_bounds(cell):
                raise LayoutError(f"shelf {shelf.id!r}: cell {cell} out of bounds")
        for sku, count in shelf.contents.items():
            if count < 0:
                raise LayoutError(f"shelf {shelf.id!r}: negative count for sku {sku!r}")
    for station in layout.stations:
        if not layout.in_bounds(station.cell):
            raise LayoutError(f"station {station.id!r}: cell {station.cell} out of bounds")
        if station.service_time < 1:
            raise LayoutError(f"station {station.id!r}: service_time must be >= 1")
    for cell in layout.parking:
        if not layout.in_bounds(cell):
            raise LayoutError(f"parking cell {cell} out of bounds")
    for cell in layout.obstacles:
        if not layout.in_bounds(cell):
            raise LayoutError(f"obstacle cell {cell} out of bounds")

    occupied: dict[Coord, str] = {}
    for shelf in layout.shelves:
        for cell in footprint_cells(shelf.home_cell, shelf.size):
            if cell in occupied:
                raise LayoutError(f"shelf {shelf.id!r} overlaps {occupied[cell]} at cell {cell}")
            occupied[cell] = f"shelf {shelf.id!r}"
    for station in layout.stations:
        if station.cell in occupied:
            raise LayoutError(
                f"station {station.id!r} overlaps {occupied[station.cell]} at cell {station.cell}"
            )
        occupied[station.cell] = f"station {station.id!r}"
    for cell in layout.obstacles:
        if cell in occupied:
            raise LayoutError(f"obstacle overlaps {occupied[cell]} at cell {cell}")
        occupied[cell] = "obstacle"

    seen_ids: set[int] = set()
    agv_cells: dict[Coord, int] = {}
    for placement in layout.agvs:
        spec = placement.spec
        if spec.id in seen_ids:
            raise LayoutError(f"duplicate agv id {spec.id}")
        seen_ids.add(spec.id)
        if spec.footprint not in (1, 2):
            raise LayoutError(f"agv {spec.id}: footprint must be 1 or 2, got {spec.footprint}")
        if spec.steps_per_cell < 1:
            raise LayoutError(f"agv {spec.id}: steps_per_cell must be >= 1")
        if spec.turn_cost < 0:
            raise LayoutError(f"agv {spec.id}: turn_cost must be >= 0")
        if placement.heading not in HEADINGS:
            raise LayoutError(f"agv {spec.id}: bad heading {placement.heading!r}")
        station_cells = {s.cell for s in layout.stations}
        for cell in footprint_cells(placement.cell, spec.footprint):
            if not layout.in_bounds(cell):
                raise LayoutError(f"agv {spec.id}: start cell {cell} out of bounds")
            if cell in layout.obstacles:
                raise LayoutError(f"agv {spec.id}: start footprint covers obstacle at {cell}")
            if cell in station_cells:
                raise LayoutError(f"agv {spec.id}: start footprint covers station at {cell}")
            if cell in agv_cells:
                raise LayoutError(
                    f"agv {spec.id}: start footprint overlaps agv {agv_cells[cell]} at {cell}"
                )
            agv_cells[cell] = spec.id


def generate_layout(
    width: int,
    height: int,
    shelf_count: int,
    station_count: int,
    agv_specs: list[AgvSpec],
    seed: int,
    service_time: int = 2,
    sku_count_per_shelf: int = 100,
) -> Layout:
    """Deterministically generate a block layout.

    Shelves go in 2-row blocks separated by 1-cell aisles, stations evenly
    spaced on the south boundary, parking (one cell per AGV) on the north
    boundary.
    """
    rng = np.random.default_rng(seed)

    slots: list[Coord] = []
    y0 = 4
    while y0 + 1 <= height - 4:
        for x in range(2, width - 2):
            if (x - 2) % 4 == 3:
                continue  # aisle column
            slots.append((x, y0))
            slots.append((x, y0 + 1))
        y0 += 3
    if shelf_count > len(slots):
        raise LayoutError(
            f"infeasible density: {shelf_count} shelves do not fit in "
            f"{len(slots)} block slots on a {width}x{height} grid with aisles"
        )
    chosen = sorted(
        slots[i] for i in rng.choice(len(slots), size=shelf_count, replace=False)
    ) if shelf_count else []
    shelves = tuple(
        ShelfPod(id=f"S{i}", home_cell=cell, contents={f"sku{i}": sku_count_per_shelf}, size=1)
        for i, cell in enumerate(chosen)
    )

    if station_count > width:
        raise LayoutError(f"infeasible density: {station_count} stations on width {width}")
    station_xs: list[int] = []
    for i in range(station_count):
        x = int((i + 0.5) * width / station_count)
        while x in station_xs:
            x += 1
        if x >= width:
            raise LayoutError("infeasible density: stations overflow south boundary")
        station_xs.append(x)
    stations = tuple(
        Station(id=f"R{i}", cell=(x, 0), service_time=service_time)
        for i, x in enumerate(station_xs)
    )

    parking: list[Coord] = []
    placements: list[AgvPlacement] = []
    n = len(agv_specs)
    used: set[Coord] = set()
    for i, spec in enumerate(agv_specs):
        x = int((i + 0.5) * width / n) if n else 0
        anchor_y = height - spec.footprint
        anchor = (min(x, width - spec.footprint), anchor_y)
        while any(c in used for c in footprint_cells(anchor, spec.footprint)):
            anchor = (anchor[0] + 1, anchor_y)
            if anchor[0] + spec.footprint > width:
                raise LayoutError("infeasible density: AGV parking overflows north boundary")
        used |= footprint_cells(anchor, spec.footprint)
        parking.append(anchor)
        placements.append(AgvPlacement(spec=spec, cell=anchor, heading="S"))

    layout = Layout(
        width=width,
        height=height,
        shelves=shelves,
        stations=stations,
        parking=tuple(parking),
        agvs=tuple(placements),
    )
    validate_layout(layout)
    _check_station_reachability(layout)
    return layout


def _check_station_reachability(layout: Layout) -> None:
    """Flood fill: every shelf home must reach every station unloaded (1x1)."""
    if not layout.stations or not layout.shelves:
        return
    blocked = layout.obstacles
    start = layout.stations[0].cell
    seen = {start}
    frontier = [start]
    while frontier:
        x, y = frontier.pop()
        for dx, dy in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            nxt = (x + dx, y + dy)
            if nxt in seen or not layout.in_bounds(nxt) or nxt in blocked:
                continue
            seen.add(nxt)
            frontier.append(nxt)
    for station in layout.stations:
        if station.cell not in seen:
            raise LayoutError(f"station {station.id!r} unreachable from station grid")
    for shelf in layout.shelves:
        if shelf.home_cell not in seen:
            raise LayoutError(f"shelf {shelf.id!r} unreachable from stations")


@dataclass
class AgvState:
    """Live per-agent state, owned and mutated only by the engine step loop."""

    spec: AgvSpec
    cell: Coord
    heading: str
    carrying: str | None = None  # shelf id
    task_id: str | None = None
    down_until: int | None = None  # step at which a failed AGV recovers; None = Active
    plan: object | None = None  # planner.TimedPath when moving

    @property
    def active(self) -> bool:
        return self.down_until is None

    def footprint(self) -> frozenset[Coord]:
        return footprint_cells(self.cell, self.spec.footprint)
