"""Collision-free space-time planning over the warehouse grid.

Two planners share one low-level search: prioritized planning (agents in
ascending id order against a reservation table) and conflict-based search
(optimal joint planning with per-cell footprint constraints). Time is
discrete; a move costs steps_per_cell steps and the agent occupies both
source and destination cells while the move is in flight, so slow and
large agents are handled by the same occupancy rules.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .world import (
    HEADING_VECTORS,
    ROTATE_CCW,
    ROTATE_CW,
    AgvSpec,
    Coord,
    Layout,
    footprint_cells,
)

MOVE, ROTATE, WAIT, LIFT, DROP = "move", "rotate", "wait", "lift", "drop"
FALLBACK_WAIT_STEPS = 5

# Replanning trigger reasons.
BLOCKED = "blocked"
CORRIDOR_INTERSECT = "corridor_intersect"
INFEASIBLE = "infeasible"
IDLE_WITH_TASK = "idle_with_task"


class PlannerError(RuntimeError):
    pass


# Plug-in slot for external planners (e.g. learned policies): callables with
# the plan_prioritized signature, selected via "external:<name>".
_PLANNER_REGISTRY: dict[str, object] = {}


def register_planner(name: str, fn) -> None:
    _PLANNER_REGISTRY[name] = fn


def resolve_planner(choice: str):
    if choice == "astar":
        return plan_prioritized
    if choice == "cbs":
        return plan_cbs
    if choice.startswith("external:"):
        key = choice.split(":", 1)[1]
        if key not in _PLANNER_REGISTRY:
            raise KeyError(f"no external planner registered under {key!r}")
        return _PLANNER_REGISTRY[key]
    raise KeyError(f"unknown planner {choice!r}")


@dataclass(frozen=True)
class TimedPath:
    """Discrete space-time plan: states are (x, y, heading, step) event points."""

    agv: int
    states: tuple[tuple[int, int, str, int], ...]
    actions: tuple[tuple, ...] = ()
    is_fallback: bool = False

    @property
    def start_step(self) -> int:
        return self.states[0][3]

    @property
    def arrival_step(self) -> int:
        return self.states[-1][3]

    def pose_at(self, step: int) -> tuple[int, int, str]:
        """Discrete anchor/heading at a step: the last event state at or before it."""
        prev = self.states[0]
        for st in self.states:
            if st[3] > step:
                break
            prev = st
        return prev[0], prev[1], prev[2]

    def cells_at(self, step: int, footprint: int) -> frozenset[Coord]:
        """Occupied cells at a step; both endpoints while a move is in flight."""
        if step <= self.states[0][3]:
            return footprint_cells(self.states[0][:2], footprint)
        if step >= self.states[-1][3]:
            return footprint_cells(self.states[-1][:2], footprint)
        for i in range(len(self.states) - 1):
            t0, t1 = self.states[i][3], self.states[i + 1][3]
            if t0 <= step <= t1:
                cells = footprint_cells(self.states[i][:2], footprint)
                if step == t0:
                    return cells
                nxt = footprint_cells(self.states[i + 1][:2], footprint)
                if step == t1:
                    return nxt
                if self.states[i][:2] != self.states[i + 1][:2]:
                    return cells | nxt
                return cells
        return footprint_cells(self.states[-1][:2], footprint)

    def rotations(self) -> int:
        return sum(1 for a in self.actions if a[0] == ROTATE)

    def remaining(self, from_step: int) -> "TimedPath":
        """Suffix of the plan still ahead of from_step (in-flight move kept whole)."""
        if from_step <= self.start_step:
            return self
        if from_step >= self.arrival_step:
            last = self.states[-1]
            return TimedPath(agv=self.agv, states=(last,), is_fallback=self.is_fallback)
        idx = 0
        for i, st in enumerate(self.states):
            if st[3] > from_step:
                break
            idx = i
        return TimedPath(agv=self.agv, states=self.states[idx:],
                         actions=self.actions[idx:], is_fallback=self.is_fallback)


@dataclass(frozen=True)
class Conflict:
    """For edge conflicts, `a` enters `cell` during (step, step+1] while `b`
    vacates it in a different direction; a_from / b_to witness the two
    motions. Swaps are the mutual special case."""

    a: int
    b: int | None
    step: int
    kind: str  # "vertex" | "edge" | "corridor"
    cell: Coord
    a_from: Coord | None = None
    b_to: Coord | None = None


@dataclass(frozen=True)
class Constraint:
    agv: int
    cell: Coord
    step: int
    kind: str = "vertex"  # "vertex" | "edge"
    from_cell: Coord | None = None


@dataclass(frozen=True)
class PlanRequest:
    agv: int
    spec: AgvSpec
    cell: Coord
    heading: str
    goal: Coord
    carrying: bool = False


@dataclass
class PlanResult:
    paths: dict[int, TimedPath] = field(default_factory=dict)
    failed: list[int] = field(default_factory=list)
    expansions: int = 0
    ct_nodes: int = 0
    scan_work: int = 0  # step-cells examined by high-level conflict scans
    suboptimal: bool = False

    @property
    def cost_units(self) -> int:
        return self.expansions + self.ct_nodes + self.scan_work


# (cells, active_from, active_until) — blocked for steps in [from, until)
CorridorWindow = tuple[frozenset[Coord], int, int]


@dataclass
class PlanningContext:
    """Immutable inputs shared by every search in one planning phase."""

    layout: Layout
    stored_cells: frozenset[Coord]
    corridors: tuple[CorridorWindow, ...] = ()
    fixed_paths: dict[int, TimedPath] = field(default_factory=dict)
    standing: dict[int, frozenset[Coord]] = field(default_factory=dict)
    footprints: dict[int, int] = field(default_factory=dict)
    now: int = 0
    horizon: int = 512
    _fields: dict = field(default_factory=dict, repr=False)

    def corridor_windows_by_cell(self) -> dict[Coord, list[tuple[int, int]]]:
        out: dict[Coord, list[tuple[int, int]]] = {}
        for cells, t0, t1 in self.corridors:
            for c in cells:
                out.setdefault(c, []).append((t0, t1))
        return out

    def distance_field(self, goal: Coord, footprint: int, carrying: bool) -> dict[Coord, int]:
        """Anchor-space BFS distance to goal over the static floor.

        Ignores reservations and corridor windows (those are temporal), so
        it is an admissible, much tighter heuristic than Manhattan whenever
        shelf blocks force detours. Memoized per planning phase.
        """
        key = (goal, footprint, carrying)
        got = self._fields.get(key)
        if got is not None:
            return got
        layout = self.layout
        blocked = (layout.obstacles | self.stored_cells) if carrying else layout.obstacles
        offs = _offsets(footprint)
        max_x, max_y = layout.width - footprint, layout.height - footprint

        def anchor_ok(ax: int, ay: int) -> bool:
            return all((ax + dx, ay + dy) not in blocked for dx, dy in offs)

        dist: dict[Coord, int] = {}
        if 0 <= goal[0] <= max_x and 0 <= goal[1] <= max_y and anchor_ok(*goal):
            dist[goal] = 0
            frontier = [goal]
            while frontier:
                nxt: list[Coord] = []
                for x, y in frontier:
                    d = dist[(x, y)] + 1
                    for dx, dy in ((0, 1), (1, 0), (0, -1), (-1, 0)):
                        ax, ay = x + dx, y + dy
                        if not (0 <= ax <= max_x and 0 <= ay <= max_y):
                            continue
                        if (ax, ay) in dist or not anchor_ok(ax, ay):
                            continue
                        dist[(ax, ay)] = d
                        nxt.append((ax, ay))
                frontier = nxt
        self._fields[key] = dist
        return dist


class ReservationTable:
    """Space-time occupancy of agents whose motion is already decided."""

    def __init__(self) -> None:
        self.vertex: dict[tuple[int, int, int], int] = {}  # (x, y, t) -> agv
        self.terminal: dict[Coord, tuple[int, int]] = {}  # cell -> (from_step, agv)
        self.cell_last_busy: dict[Coord, int] = {}
        # (agv, t) -> unit direction of the move in flight during (t-1, t]
        self.move_dirs: dict[tuple[int, int], Coord] = {}

    def add_path(self, agv: int, path: TimedPath, footprint: int, from_step: int) -> None:
        start = max(path.start_step, from_step)
        for t in range(start, path.arrival_step + 1):
            for c in path.cells_at(t, footprint):
                self.vertex[(c[0], c[1], t)] = agv
                if self.cell_last_busy.get(c, -1) < t:
                    self.cell_last_busy[c] = t
        for i in range(len(path.states) - 1):
            (x0, y0, _, t0), (x1, y1, _, t1) = path.states[i], path.states[i + 1]
            if (x0, y0) != (x1, y1):
                d = (x1 - x0, y1 - y0)
                for t in range(max(t0 + 1, from_step), t1 + 1):
                    self.move_dirs[(agv, t)] = d
        for c in footprint_cells(path.states[-1][:2], footprint):
            self.terminal[c] = (path.arrival_step, agv)

    def add_standing(self, agv: int, cells: frozenset[Coord], from_step: int) -> None:
        for c in cells:
            self.terminal[c] = (from_step, agv)

    def remove_agent_standing(self, agv: int) -> None:
        for c in [c for c, (_, a) in self.terminal.items() if a == agv]:
            del self.terminal[c]

    def occupant(self, x: int, y: int, t: int) -> int | None:
        hit = self.vertex.get((x, y, t))
        if hit is not None:
            return hit
        term = self.terminal.get((x, y))
        if term is not None and t >= term[0]:
            return term[1]
        return None


def build_reservations(ctx: PlanningContext) -> ReservationTable:
    table = ReservationTable()
    for agv, path in ctx.fixed_paths.items():
        table.add_path(agv, path, ctx.footprints[agv], ctx.now)
    for agv, cells in ctx.standing.items():
        table.add_standing(agv, cells, ctx.now)
    return table


def _offsets(footprint: int) -> tuple[Coord, ...]:
    if footprint == 1:
        return ((0, 0),)
    return tuple((dx, dy) for dx in range(footprint) for dy in range(footprint))


def make_wait_path(agv: int, cell: Coord, heading: str, start_step: int,
                   steps: int = FALLBACK_WAIT_STEPS) -> TimedPath:
    states = tuple((cell[0], cell[1], heading, start_step + i) for i in range(steps + 1))
    return TimedPath(agv=agv, states=states, actions=((WAIT,),) * steps, is_fallback=True)


def low_level_search(
    spec: AgvSpec,
    start_cell: Coord,
    start_heading: str,
    goal: Coord,
    ctx: PlanningContext,
    reservations: ReservationTable | None = None,
    constraints: tuple[Constraint, ...] = (),
    start_step: int | None = None,
    horizon: int | None = None,
    carrying: bool = False,
    corridor_exempt: frozenset[Coord] = frozenset(),
    cat: dict[tuple[int, int, int], int] | None = None,
    landmarks: tuple[tuple[Coord, int], ...] = (),
) -> tuple[TimedPath | None, int]:
    """Minimum-arrival-step space-time A* for one agent.

    Returns (path, expansions); path is None when no route exists within
    the horizon. Ties break toward fewer rotations, then Move < Rotate <
    Wait, then deterministic insertion order. corridor_exempt cells (the
    agent's own corridor-overlapped footprint when it is being evicted)
    stay passable only until the footprint first leaves them, so departure
    is possible but re-entry never is.

    cat is a conflict-avoidance table ((x, y, t) -> weight): among
    equal-arrival paths, prefer fewer overlaps with sibling plans. It never
    changes the returned cost, only which optimal path wins.

    landmarks are positive constraints (cell, step): the footprint must
    cover the cell at exactly that step (disjoint-splitting support).
    """
    layout = ctx.layout
    t0 = ctx.now if start_step is None else start_step
    hmax = ctx.horizon if horizon is None else horizon
    if reservations is None:
        reservations = build_reservations(ctx)

    f = spec.footprint
    spc = spec.steps_per_cell
    tc = spec.turn_cost
    offs = _offsets(f)
    max_x, max_y = layout.width - f, layout.height - f
    static_block = (layout.obstacles | ctx.stored_cells) if carrying else layout.obstacles
    windows = ctx.corridor_windows_by_cell()

    vcons: set[tuple[Coord, int]] = set()
    econs: dict[tuple[Coord, int], set[Coord]] = {}
    for con in constraints:
        if con.kind == "vertex":
            vcons.add((con.cell, con.step))
        else:
            econs.setdefault((con.cell, con.step), set()).add(con.from_cell)

    goal_x, goal_y = goal
    goal_cells = footprint_cells(goal, f)
    fld = ctx.distance_field(goal, f, carrying)
    if not fld:
        return None, 0  # goal anchor is statically invalid
    start_h_cells = fld.get((start_cell[0], start_cell[1]))
    if start_h_cells is None:
        return None, 0  # statically disconnected from the goal
    park_from = t0
    for c in goal_cells:
        term = reservations.terminal.get(c)
        if term is not None:
            return None, 0  # someone parks on the goal indefinitely
        last = reservations.cell_last_busy.get(c)
        if last is not None:
            park_from = max(park_from, last + 1)
        for w0, w1 in windows.get(c, ()):
            # eviction exemptions permit departure, never squatting
            park_from = max(park_from, w1)
    for (cell, step) in vcons:
        if cell in goal_cells:
            park_from = max(park_from, step + 1)
    if park_from > hmax:
        return None, 0

    marks = tuple(sorted(landmarks, key=lambda m: (m[1], m[0])))
    start_occ = footprint_cells(start_cell, f)
    k0 = 0
    for c, step in marks:
        if step < t0 or (step == t0 and c not in start_occ):
            return None, 0
        if step == t0:
            k0 += 1
        else:
            break

    def mark_reachable(x: int, y: int, t: int, k: int) -> bool:
        if k >= len(marks):
            return True
        c, step = marks[k]
        if step < t:
            return False
        need = max(0, abs(x - c[0]) + abs(y - c[1]) - (f - 1)) * spc
        return t + need <= step

    def marks_cover(cells, t_from: int, t_to: int, k: int,
                    final_cells) -> int | None:
        """Advance k over marks due in (t_from, t_to]; None when one is missed.

        cells covers intermediate steps, final_cells the arrival step.
        """
        while k < len(marks) and marks[k][1] <= t_to:
            c, step = marks[k]
            occ_at = final_cells if step == t_to else cells
            if c not in occ_at:
                return None
            k += 1
        return k

    def f_bound(x: int, y: int, t: int, k: int) -> int:
        est = max(t + fld[(x, y)] * spc, park_from)
        if k < len(marks):
            c, step = marks[k]
            tail = max(0, abs(c[0] - goal_x) + abs(c[1] - goal_y) - (f - 1)) * spc
            est = max(est, step + tail)
        return est

    def corridor_blocked(c: Coord, t: int, left_exempt: bool) -> bool:
        if c in corridor_exempt and not left_exempt:
            return False
        for w0, w1 in windows.get(c, ()):
            if w0 <= t < w1:
                return True
        return False

    def cells_ok(cells: tuple[Coord, ...], t: int, left_exempt: bool) -> bool:
        for c in cells:
            if c in static_block:
                return False
            if corridor_blocked(c, t, left_exempt):
                return False
            if reservations.occupant(c[0], c[1], t) is not None:
                return False
            if (c, t) in vcons:
                return False
        return True

    def edge_ok(prev_cells: tuple[Coord, ...], new_cells: tuple[Coord, ...], t: int,
                my_dir: Coord | None) -> bool:
        # t is the arrival side of the transition (t-1 -> t). A cell handed
        # off within one interval overlaps continuously unless both bodies
        # move the same way, so handoffs require matching directions.
        for c in new_cells:
            if c in prev_cells:
                continue
            who = reservations.occupant(c[0], c[1], t - 1)
            if who is not None and reservations.move_dirs.get((who, t)) != my_dir:
                return False
        for c in prev_cells:
            if c in new_cells:
                continue
            who = reservations.occupant(c[0], c[1], t)
            if who is not None and reservations.move_dirs.get((who, t)) != my_dir:
                return False
        for c in new_cells:
            froms = econs.get((c, t))
            if froms and any(fc in prev_cells for fc in froms):
                return False
        return True

    def expand_cells(anchor: Coord) -> tuple[Coord, ...]:
        ax, ay = anchor
        return tuple((ax + dx, ay + dy) for dx, dy in offs)

    if cat is None:
        cat = {}

    def cat_hits(cells: tuple[Coord, ...], t: int) -> int:
        n = 0
        for c in cells:
            n += cat.get((c[0], c[1], t), 0)
        return n

    left0 = not (start_occ & corridor_exempt)

    # A goal that is time-blocked (corridor window or reservations) flattens f
    # to park_from and the search floods the whole envelope. When the start
    # cell is provably safe to sit on, burn the slack as waits up front.
    pre_wait = 0
    h0 = start_h_cells * spc
    if not marks and not vcons and not econs and not cat and left0 \
            and park_from > t0 + h0 and (start_cell[0], start_cell[1]) != (goal_x, goal_y):
        slack = park_from - (t0 + h0)
        start_tuple = tuple(start_occ)
        if all(
            cells_ok(start_tuple, t0 + i, left0) and edge_ok(start_tuple, start_tuple,
                                                             t0 + i, None)
            for i in range(1, slack + 1)
        ):
            pre_wait = slack
    t0 += pre_wait

    start = (start_cell[0], start_cell[1], start_heading, t0, k0, left0)
    counter = 0
    open_heap: list = [(f_bound(start_cell[0], start_cell[1], t0, k0), 0, 0, 0, 0, start)]
    parents: dict = {start: None}
    rot_of = {start: 0}
    cat_of = {start: 0}
    visited: set = set()
    expansions = 0

    def vkey(state):
        # heading is irrelevant to reachability when rotation is free
        return state if tc > 0 else (state[0], state[1], state[3], state[4], state[5])

    n_marks = len(marks)
    while open_heap:
        item = heapq.heappop(open_heap)
        state = item[5]
        if vkey(state) in visited:
            continue
        visited.add(vkey(state))
        expansions += 1
        x, y, h, t, k, left = state

        if x == goal_x and y == goal_y and t >= park_from:
            if k >= n_marks or all(c in goal_cells for c, _ in marks[k:]):
                path = _reconstruct(spec.id, state, parents)
                if pre_wait:
                    path = _prepend_waits(path, pre_wait)
                return path, expansions

        rots = rot_of[state]
        gcat = cat_of[state]
        here = expand_cells((x, y))

        # Moves
        for d, (dx, dy) in HEADING_VECTORS.items():
            if tc > 0 and d != h:
                continue
            nx, ny = x + dx, y + dy
            if not (0 <= nx <= max_x and 0 <= ny <= max_y):
                continue
            ta = t + spc
            if ta > hmax:
                continue
            if (nx, ny) not in fld:
                continue  # statically cut off from the goal
            nxt_cells = expand_cells((nx, ny))
            union = tuple(set(here) | set(nxt_cells)) if spc > 1 else nxt_cells
            ok = True
            hits = 0
            prev = here
            for i in range(1, spc + 1):
                step_cells = nxt_cells if i == spc else union
                if not cells_ok(step_cells, t + i, left) or \
                        not edge_ok(prev, step_cells, t + i, (dx, dy)):
                    ok = False
                    break
                hits += cat_hits(step_cells, t + i)
                prev = step_cells
            if not ok:
                continue
            nk = marks_cover(union, t, ta, k, nxt_cells) if k < n_marks else k
            if nk is None or not mark_reachable(nx, ny, ta, nk):
                continue
            nleft = left or not any(c in corridor_exempt for c in nxt_cells)
            ns = (nx, ny, d if tc == 0 else h, ta, nk, nleft)
            if vkey(ns) in visited or ns in parents:
                continue
            parents[ns] = (state, (MOVE, d))
            rot_of[ns] = rots
            cat_of[ns] = gcat + hits
            counter += 1
            heapq.heappush(open_heap,
                           (f_bound(nx, ny, ta, nk), gcat + hits, rots, 0, counter, ns))

        # Rotations (only meaningful with a turn cost; zero-cost turns fold into moves)
        if tc > 0:
            for d, rname in ((ROTATE_CW[h], "cw"), (ROTATE_CCW[h], "ccw")):
                ta = t + tc
                if ta > hmax:
                    continue
                ok = all(
                    cells_ok(here, t + i, left) and edge_ok(here, here, t + i, None)
                    for i in range(1, tc + 1)
                )
                if not ok:
                    continue
                nk = marks_cover(here, t, ta, k, here) if k < n_marks else k
                if nk is None or not mark_reachable(x, y, ta, nk):
                    continue
                ns = (x, y, d, ta, nk, left)
                if vkey(ns) in visited or ns in parents:
                    continue
                hits = sum(cat_hits(here, t + i) for i in range(1, tc + 1))
                parents[ns] = (state, (ROTATE, rname))
                rot_of[ns] = rots + 1
                cat_of[ns] = gcat + hits
                counter += 1
                heapq.heappush(open_heap,
                               (f_bound(x, y, ta, nk), gcat + hits, rots + 1, 1, counter, ns))

        # Wait
        ta = t + 1
        if ta <= hmax and cells_ok(here, ta, left) and edge_ok(here, here, ta, None):
            nk = marks_cover(here, t, ta, k, here) if k < n_marks else k
            if nk is not None and mark_reachable(x, y, ta, nk):
                ns = (x, y, h, ta, nk, left)
                if vkey(ns) not in visited and ns not in parents:
                    hits = cat_hits(here, ta)
                    parents[ns] = (state, (WAIT,))
                    rot_of[ns] = rots
                    cat_of[ns] = gcat + hits
                    counter += 1
                    heapq.heappush(open_heap,
                                   (f_bound(x, y, ta, nk), gcat + hits, rots, 2, counter, ns))

    return None, expansions


def _prepend_waits(path: TimedPath, n: int) -> TimedPath:
    x, y, h, t = path.states[0]
    prefix = tuple((x, y, h, t - n + i) for i in range(n))
    return TimedPath(agv=path.agv, states=prefix + path.states,
                     actions=((WAIT,),) * n + path.actions)


def _reconstruct(agv: int, final_state, parents) -> TimedPath:
    states = [final_state[:4]]
    actions = []
    cur = final_state
    while parents[cur] is not None:
        prev, action = parents[cur]
        states.append(prev[:4])
        actions.append(action)
        cur = prev
    states.reverse()
    actions.reverse()
    return TimedPath(agv=agv, states=tuple(states), actions=tuple(actions))


def plan_prioritized(
    requests: list[PlanRequest],
    ctx: PlanningContext,
    corridor_exempt: dict[int, frozenset[Coord]] | None = None,
) -> PlanResult:
    """Plan agents sequentially in ascending id order.

    Earlier agents' fresh paths become reservations for later ones;
    batch members not yet planned count as standing obstacles (so a
    failed search can always safely fall back to waiting in place).
    Failed agents receive a 5-step wait path and are retried on the next
    replanning trigger.
    """
    requests = sorted(requests, key=lambda r: r.agv)
    exempt = corridor_exempt or {}
    reservations = build_reservations(ctx)
    for req in requests:
        if req.agv not in ctx.standing:
            reservations.add_standing(req.agv, footprint_cells(req.cell, req.spec.footprint), ctx.now)

    result = PlanResult()

    def attempt(req: PlanRequest) -> bool:
        reservations.remove_agent_standing(req.agv)
        path, exp = low_level_search(
            req.spec, req.cell, req.heading, req.goal, ctx,
            reservations=reservations, carrying=req.carrying,
            corridor_exempt=exempt.get(req.agv, frozenset()),
        )
        result.expansions += exp
        if path is None:
            reservations.add_standing(req.agv, footprint_cells(req.cell, req.spec.footprint),
                                      ctx.now)
            return False
        reservations.add_path(req.agv, path, req.spec.footprint, ctx.now)
        result.paths[req.agv] = path
        return True

    first_failed = [req for req in requests if not attempt(req)]
    # Second pass: an agent often fails only because a later batch member was
    # still an unknown standing obstacle; with everyone else's fresh paths
    # known, retry before conceding a wait.
    for req in first_failed:
        if not attempt(req):
            result.failed.append(req.agv)
            result.paths[req.agv] = make_wait_path(req.agv, req.cell, req.heading, ctx.now)
    return result


def detect_conflicts(
    paths: dict[int, TimedPath],
    footprints: dict[int, int],
    corridors: tuple[CorridorWindow, ...] = (),
    exempt_start_cells: bool = True,
) -> Conflict | None:
    """Earliest conflict across a synchronized path set, or None.

    Vertex: footprint cell sets intersect at one step. Edge: occupancy
    sets exchange between consecutive steps (generalized swap/cross over
    footprints). Corridor: footprint intersects an active corridor cell;
    cells of an agent's own start footprint are exempt when
    exempt_start_cells is set (a freshly evicted agent is allowed to
    depart).
    """
    if not paths:
        return None
    ids = sorted(paths)
    lo = min(p.start_step for p in paths.values())
    hi = max(p.arrival_step for p in paths.values())
    windows: dict[Coord, list[tuple[int, int]]] = {}
    for cells, t0, t1 in corridors:
        for c in cells:
            windows.setdefault(c, []).append((t0, t1))
    start_exempt = {
        a: (footprint_cells(paths[a].states[0][:2], footprints[a]) if exempt_start_cells else frozenset())
        for a in ids
    }

    cells_cache: dict[int, dict[int, frozenset[Coord]]] = {a: {} for a in ids}

    def occ(a: int, t: int) -> frozenset[Coord]:
        got = cells_cache[a].get(t)
        if got is None:
            got = paths[a].cells_at(t, footprints[a])
            cells_cache[a][t] = got
        return got

    prev_map: dict[Coord, int] = {}
    for t in range(lo, hi + 1):
        cur_map: dict[Coord, int] = {}
        best_vertex: tuple[int, int, Coord] | None = None
        for a in ids:
            for c in occ(a, t):
                other = cur_map.get(c)
                if other is not None and other != a:
                    pair = (min(other, a), max(other, a), c)
                    if best_vertex is None or pair < best_vertex:
                        best_vertex = pair
                else:
                    cur_map[c] = a
        if best_vertex is not None:
            return Conflict(a=best_vertex[0], b=best_vertex[1], step=t, kind="vertex",
                            cell=best_vertex[2])

        best_corridor: tuple[int, Coord] | None = None
        for a in ids:
            for c in occ(a, t):
                if c in start_exempt[a]:
                    continue
                for w0, w1 in windows.get(c, ()):
                    if w0 <= t < w1:
                        cand = (a, c)
                        if best_corridor is None or cand < best_corridor:
                            best_corridor = cand
        if best_corridor is not None:
            return Conflict(a=best_corridor[0], b=None, step=t, kind="corridor",
                            cell=best_corridor[1])

        if t > lo:
            # A cell handed from one agent to another within a single interval
            # overlaps continuously unless both move the same way; swaps and
            # crossings are the direction-mismatched special cases.
            def move_dir(agent: int) -> Coord | None:
                x0, y0, _ = paths[agent].pose_at(t - 1)
                x1, y1, _ = paths[agent].pose_at(t)
                return None if (x0, y0) == (x1, y1) else (x1 - x0, y1 - y0)

            best_edge = None
            for a in ids:
                prev_a = occ(a, t - 1)
                cur_a = occ(a, t)
                entered = cur_a - prev_a
                if not entered:
                    continue
                dir_a = move_dir(a)
                for c in sorted(entered):
                    b = prev_map.get(c)
                    if b is None or b == a or c in occ(b, t):
                        continue  # co-occupancy is a vertex conflict, not a handoff
                    if move_dir(b) == dir_a and dir_a is not None:
                        continue  # same-direction convoy never overlaps
                    vacated_a = sorted(prev_a - cur_a)
                    entered_b = sorted(occ(b, t) - occ(b, t - 1))
                    a_from = vacated_a[0] if vacated_a else None
                    b_to = entered_b[0] if entered_b else None
                    cand = (min(a, b), max(a, b), a, c,
                            a_from or (-1, -1), b_to or (-1, -1))
                    if best_edge is None or cand < best_edge[0]:
                        best_edge = (cand, a, b, c, a_from, b_to)
            if best_edge is not None:
                _, a, b, c, a_from, b_to = best_edge
                return Conflict(a=a, b=b, step=t - 1, kind="edge", cell=c,
                                a_from=a_from, b_to=b_to)
        prev_map = cur_map
    return None


def _cat_from_paths(
    paths: dict[int, TimedPath],
    footprints: dict[int, int],
    exclude: int,
) -> dict[tuple[int, int, int], int]:
    cat: dict[tuple[int, int, int], int] = {}
    for agv, path in paths.items():
        if agv == exclude:
            continue
        f = footprints[agv]
        for t in range(path.start_step, path.arrival_step + 1):
            for c in path.cells_at(t, f):
                key = (c[0], c[1], t)
                cat[key] = cat.get(key, 0) + 1
    return cat


def _census(
    paths: dict[int, TimedPath], footprints: dict[int, int]
) -> tuple[Conflict | None, int, int]:
    """One sweep: earliest conflict, conflicting-pair count, and scan work."""
    work = sum(p.arrival_step - p.start_step + 1 for p in paths.values())
    earliest = detect_conflicts(paths, footprints)
    if earliest is None:
        return None, 0, work
    if len(paths) == 2:
        return earliest, 1, work
    pairs = set()
    ids = sorted(paths)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if detect_conflicts({a: paths[a], b: paths[b]}, footprints) is not None:
                pairs.add((a, b))
    return earliest, len(pairs), work


def plan_cbs(
    requests: list[PlanRequest],
    ctx: PlanningContext,
    node_budget: int = 10_000,
    corridor_exempt: dict[int, frozenset[Coord]] | None = None,
) -> PlanResult:
    """Conflict-based search over the request batch.

    The root plans each agent independently (other batch members invisible,
    everything else reserved); expansion is best-first on sum-of-costs with
    ties broken by conflict count then insertion order. Footprint conflicts
    constrain the specific overlapping cell. On budget exhaustion, falls
    back to prioritized planning flagged suboptimal.
    """
    requests = sorted(requests, key=lambda r: r.agv)
    exempt = corridor_exempt or {}
    result = PlanResult()

    base = build_reservations(ctx)
    for r in requests:
        base.remove_agent_standing(r.agv)

    # Two agents parking on overlapping goal footprints can never both be
    # satisfied; the later one stands down and retries after the first clears.
    kept: list[PlanRequest] = []
    taken: list[frozenset[Coord]] = []
    for r in requests:
        gc = footprint_cells(r.goal, r.spec.footprint)
        if any(gc & other for other in taken):
            result.failed.append(r.agv)
            result.paths[r.agv] = make_wait_path(r.agv, r.cell, r.heading, ctx.now)
            base.add_standing(r.agv, footprint_cells(r.cell, r.spec.footprint), ctx.now)
        else:
            taken.append(gc)
            kept.append(r)
    requests = kept
    if not requests:
        return result

    by_id = {r.agv: r for r in requests}
    batch = dict(by_id)
    all_fps = {r.agv: r.spec.footprint for r in requests}

    def search(req: PlanRequest, cons: tuple[Constraint, ...],
               others: dict[int, TimedPath],
               marks: tuple[tuple[Coord, int], ...] = ()):
        cat = _cat_from_paths(others, all_fps, exclude=req.agv)
        result.scan_work += len(cat)
        return low_level_search(
            req.spec, req.cell, req.heading, req.goal, ctx,
            reservations=base, constraints=cons, carrying=req.carrying,
            corridor_exempt=exempt.get(req.agv, frozenset()), cat=cat,
            landmarks=marks,
        )

    # Root: drop agents with no feasible single-agent route; they stand still
    # (reserved) and the rest re-plan around them. Earlier roots feed the
    # conflict-avoidance table so the root is usually conflict-free already.
    root_paths: dict[int, TimedPath] = {}
    while True:
        root_paths.clear()
        newly_failed = []
        for agv, req in sorted(batch.items()):
            path, exp = search(req, (), root_paths)
            result.expansions += exp
            if path is None:
                newly_failed.append(agv)
            else:
                root_paths[agv] = path
        if not newly_failed:
            break
        for agv in newly_failed:
            req = batch.pop(agv)
            result.failed.append(agv)
            result.paths[agv] = make_wait_path(agv, req.cell, req.heading, ctx.now)
            base.add_standing(agv, footprint_cells(req.cell, req.spec.footprint), ctx.now)
        if not batch:
            return result

    fps = {a: batch[a].spec.footprint for a in batch}

    def soc(paths: dict[int, TimedPath]) -> int:
        return sum(p.arrival_step - p.start_step for p in paths.values())

    # Disjoint splitting: one child forces the enterer through its witnessed
    # motion (a landmark) and constrains the other agent off it; the sibling
    # forbids the enterer instead. The children partition the solution space,
    # which avoids re-exploring plans where neither agent uses the cell.
    def children_of(conflict: Conflict):
        a, b = conflict.a, conflict.b
        if conflict.kind == "vertex":
            yield (b, Constraint(agv=b, cell=conflict.cell, step=conflict.step),
                   a, ((conflict.cell, conflict.step),))
            yield (a, Constraint(agv=a, cell=conflict.cell, step=conflict.step), None, ())
        elif conflict.a_from is not None and conflict.b_to is not None:
            yield (b, Constraint(agv=b, cell=conflict.b_to, step=conflict.step + 1,
                                 kind="edge", from_cell=conflict.cell),
                   a, ((conflict.a_from, conflict.step), (conflict.cell, conflict.step + 1)))
            yield (a, Constraint(agv=a, cell=conflict.cell, step=conflict.step + 1,
                                 kind="edge", from_cell=conflict.a_from), None, ())
        else:
            # footprint/mid-move handoff without full witnesses: plain split
            yield (b, Constraint(agv=b, cell=conflict.cell, step=conflict.step), None, ())
            yield (a, Constraint(agv=a, cell=conflict.cell, step=conflict.step + 1), None, ())

    seq = 0
    root_conflict, root_nconf, root_work = _census(root_paths, fps)
    result.scan_work += root_work
    empty_cons: dict[int, tuple] = {a: () for a in batch}
    empty_marks: dict[int, tuple] = {a: () for a in batch}
    heap = [(soc(root_paths), root_nconf, 0, root_paths, empty_cons, empty_marks,
             root_conflict)]
    expanded = 0
    while heap:
        cost, nconf, _, paths, cons, marks, conflict = heapq.heappop(heap)
        if conflict is None:
            result.paths.update(paths)
            result.ct_nodes = expanded
            return result
        expanded += 1
        if expanded > node_budget:
            break
        pending = []
        adopted = False
        for re_agv, new_con, pos_agv, new_marks in children_of(conflict):
            child_cons = dict(cons)
            child_cons[re_agv] = tuple(cons[re_agv]) + (new_con,)
            child_marks = dict(marks)
            if pos_agv is not None and new_marks:
                merged = tuple(sorted(set(marks[pos_agv]) | set(new_marks),
                                      key=lambda m: (m[1], m[0])))
                child_marks[pos_agv] = merged
            path, exp = search(by_id[re_agv], child_cons[re_agv],
                               {a: p for a, p in paths.items() if a != re_agv},
                               marks=child_marks[re_agv])
            result.expansions += exp
            if path is None:
                continue
            child_paths = dict(paths)
            child_paths[re_agv] = path
            child_conflict, child_nconf, child_work = _census(child_paths, fps)
            result.scan_work += child_work
            old = paths[re_agv]
            same_cost = (path.arrival_step - path.start_step
                         == old.arrival_step - old.start_step)
            if same_cost and child_nconf < nconf:
                # bypass: adopt the improved plan under the parent's constraints
                seq += 1
                heapq.heappush(heap, (cost, child_nconf, seq, child_paths, cons, marks,
                                      child_conflict))
                adopted = True
                break
            pending.append((soc(child_paths), child_nconf, child_paths, child_cons,
                            child_marks, child_conflict))
        if not adopted:
            for child_cost, child_nconf, child_paths, child_cons, child_marks, \
                    child_conflict in pending:
                seq += 1
                heapq.heappush(
                    heap,
                    (child_cost, child_nconf, seq, child_paths, child_cons, child_marks,
                     child_conflict),
                )

    # Budget exhausted: prioritized fallback on the original inputs.
    fallback = plan_prioritized(requests, ctx, corridor_exempt=exempt)
    fallback.expansions += result.expansions
    fallback.scan_work += result.scan_work
    fallback.ct_nodes = expanded
    fallback.suboptimal = True
    return fallback


def replan_agent(
    request: PlanRequest,
    reason: str,
    ctx: PlanningContext,
    corridor_exempt: frozenset[Coord] = frozenset(),
) -> tuple[TimedPath, int, bool]:
    """Single-agent replan against everyone else's remaining paths.

    Returns (path, expansions, failed); on failure the path is a 5-step
    wait in place.
    """
    if reason not in (BLOCKED, CORRIDOR_INTERSECT, INFEASIBLE, IDLE_WITH_TASK):
        raise PlannerError(f"unknown replan reason {reason!r}")
    res = plan_prioritized([request], ctx, corridor_exempt={request.agv: corridor_exempt})
    path = res.paths[request.agv]
    return path, res.expansions, request.agv in res.failed


def path_hits_corridors(
    path: TimedPath,
    footprint: int,
    corridors: tuple[CorridorWindow, ...],
    from_step: int,
    exempt: frozenset[Coord] = frozenset(),
) -> bool:
    """Does the remaining path enter an active corridor window after from_step?"""
    for cells, t0, t1 in corridors:
        t_lo = max(from_step, t0)
        t_hi = min(path.arrival_step, t1 - 1)
        for t in range(t_lo, t_hi + 1):
            hit = path.cells_at(t, footprint) & cells
            if hit - exempt:
                return True
        # terminal parking overlaps a window that outlives the path
        if t1 > max(path.arrival_step, from_step):
            final = footprint_cells(path.states[-1][:2], footprint)
            if (final & cells) - exempt:
                return True
    return False
