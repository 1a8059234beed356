"""Continuous realization of discrete plans plus swept collision checking.

Discrete plans become constant-velocity trajectories whose duration equals
the plan's step span exactly. Collision shapes are axis-aligned rectangles
(footprint inflated by a safety margin); headings snap at segment
boundaries, so shapes stay axis-aligned during rotation.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

from . import planner as _planner
from .planner import MOVE, ROTATE, TimedPath
from .world import AgvSpec, Coord

TRANSLATE, ROTATION, DWELL = "translate", "rotate", "dwell"

DEFAULT_MARGIN = 0.05
DEFAULT_RESOLUTION = 10
BLOCKED_DWELL_THRESHOLD = 5


class MalformedPathError(ValueError):
    pass


@dataclass(frozen=True)
class SafetyMargin:
    radius: float = DEFAULT_MARGIN

    def __post_init__(self) -> None:
        if not 0 <= self.radius < 0.5:
            raise ValueError(f"margin radius must be in [0, 0.5), got {self.radius}")


@dataclass(frozen=True)
class MotionSegment:
    kind: str
    t0: float
    t1: float
    x0: float
    y0: float
    x1: float
    y1: float
    heading0: str
    heading1: str


@dataclass(frozen=True)
class Trajectory:
    agv: int
    start_pose: tuple[float, float, str]
    segments: tuple[MotionSegment, ...] = ()

    @property
    def t_begin(self) -> float:
        return self.segments[0].t0 if self.segments else 0.0

    @property
    def t_end(self) -> float:
        return self.segments[-1].t1 if self.segments else 0.0

    def pose_at(self, t: float) -> tuple[float, float, str]:
        if not self.segments or t <= self.segments[0].t0:
            return self.start_pose
        last = self.segments[-1]
        if t >= last.t1:
            return (last.x1, last.y1, last.heading1)
        idx = bisect_right([s.t0 for s in self.segments], t) - 1
        seg = self.segments[max(idx, 0)]
        if t >= seg.t1:
            return (seg.x1, seg.y1, seg.heading1)
        if seg.kind == TRANSLATE:
            frac = (t - seg.t0) / (seg.t1 - seg.t0)
            return (
                seg.x0 + (seg.x1 - seg.x0) * frac,
                seg.y0 + (seg.y1 - seg.y0) * frac,
                seg.heading1,
            )
        return (seg.x0, seg.y0, seg.heading0)


def realize_plan(path: TimedPath, spec: AgvSpec) -> Trajectory:
    """Expand a discrete plan into time-contiguous constant-velocity segments."""
    if len(path.states) != len(path.actions) + 1:
        raise MalformedPathError("states must be one longer than actions")
    segments = []
    for i, action in enumerate(path.actions):
        x0, y0, h0, t0 = path.states[i]
        x1, y1, h1, t1 = path.states[i + 1]
        dur = t1 - t0
        if dur <= 0:
            raise MalformedPathError(f"non-increasing step at action {i}")
        if action[0] == MOVE:
            if dur != spec.steps_per_cell or abs(x1 - x0) + abs(y1 - y0) != 1:
                raise MalformedPathError(f"bad move geometry at action {i}")
            # instantaneous turn-in-place folds into the move when turns are free
            segments.append(MotionSegment(TRANSLATE, float(t0), float(t1),
                                          float(x0), float(y0), float(x1), float(y1), h1, h1))
        elif action[0] == ROTATE:
            if spec.turn_cost == 0 or dur != spec.turn_cost or (x0, y0) != (x1, y1):
                raise MalformedPathError(f"bad rotation at action {i}")
            segments.append(MotionSegment(ROTATION, float(t0), float(t1),
                                          float(x0), float(y0), float(x1), float(y1), h0, h1))
        else:  # wait / lift / drop hold position for one step
            if dur != 1 or (x0, y0, h0) != (x1, y1, h1):
                raise MalformedPathError(f"bad dwell at action {i}")
            segments.append(MotionSegment(DWELL, float(t0), float(t1),
                                          float(x0), float(y0), float(x1), float(y1), h0, h1))
    sx, sy, sh, _ = path.states[0]
    return Trajectory(agv=path.agv, start_pose=(float(sx), float(sy), sh), segments=tuple(segments))


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    kind: str  # "agent" | "static" | "corridor"
    a: int
    b: int | None = None
    cell: Coord | None = None


def _rects_overlap(ax0, ay0, ax1, ay1, bx0, by0, bx1, by1) -> bool:
    return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1


def check_continuous_collisions(
    trajectories: dict[int, Trajectory],
    footprints: dict[int, int],
    margin: float = DEFAULT_MARGIN,
    static_cells: dict[int, frozenset[Coord]] | frozenset[Coord] = frozenset(),
    corridors: tuple[tuple[frozenset[Coord], int, int], ...] = (),
    resolution: int = DEFAULT_RESOLUTION,
    t_lo: float | None = None,
    t_hi: float | None = None,
) -> list[CollisionEvent]:
    """Sample trajectories and report every overlap episode.

    Each agent occupies its footprint rectangle inflated by margin at its
    interpolated pose. static_cells may be one shared set or a per-agent
    map (a loaded carrier collides with stored pods, an unloaded one does
    not). One event is emitted per overlap episode onset, so an empty list
    means no sampled overlap at all.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    if not trajectories:
        return []
    ids = sorted(trajectories)
    if t_lo is None:
        t_lo = min(trajectories[a].t_begin for a in ids)
    if t_hi is None:
        t_hi = max(trajectories[a].t_end for a in ids)
    if isinstance(static_cells, (set, frozenset)):
        static_by_agent = {a: static_cells for a in ids}
    else:
        static_by_agent = {a: static_cells.get(a, frozenset()) for a in ids}

    events: list[CollisionEvent] = []
    open_pair: set[tuple[int, int]] = set()
    open_static: set[tuple[int, Coord]] = set()
    open_corridor: set[tuple[int, Coord]] = set()

    n_samples = max(1, round((t_hi - t_lo) * resolution))
    for k in range(n_samples + 1):
        t = t_lo + k / resolution
        if t > t_hi + 1e-12:
            break
        rects = {}
        for a in ids:
            x, y, _ = trajectories[a].pose_at(t)
            f = footprints[a]
            rects[a] = (x - margin, y - margin, x + f + margin, y + f + margin)

        cur_pair: set[tuple[int, int]] = set()
        cur_static: set[tuple[int, Coord]] = set()
        cur_corridor: set[tuple[int, Coord]] = set()
        for i, a in enumerate(ids):
            ra = rects[a]
            for b in ids[i + 1:]:
                if _rects_overlap(*ra, *rects[b]):
                    cur_pair.add((a, b))
            statics = static_by_agent[a]
            candidates = _cells_under(ra) if (statics or corridors) else ()
            for cell in candidates:
                if not _rects_overlap(*ra, cell[0], cell[1], cell[0] + 1, cell[1] + 1):
                    continue
                if cell in statics:
                    cur_static.add((a, cell))
                for cells, w0, w1 in corridors:
                    if w0 <= t < w1 and cell in cells:
                        cur_corridor.add((a, cell))

        for a, b in sorted(cur_pair - open_pair):
            events.append(CollisionEvent(time=t, kind="agent", a=a, b=b))
        for a, cell in sorted(cur_static - open_static):
            events.append(CollisionEvent(time=t, kind="static", a=a, cell=cell))
        for a, cell in sorted(cur_corridor - open_corridor):
            events.append(CollisionEvent(time=t, kind="corridor", a=a, cell=cell))
        open_pair, open_static, open_corridor = cur_pair, cur_static, cur_corridor
    return events


def _cells_under(rect) -> list[Coord]:
    x0, y0, x1, y1 = rect
    return [
        (cx, cy)
        for cx in range(math.floor(x0), math.ceil(x1))
        for cy in range(math.floor(y0), math.ceil(y1))
    ]


@dataclass
class ExecAgent:
    """Per-agent view the executor needs for one step of advancement."""

    agv: int
    spec: AgvSpec
    active: bool
    cell: Coord
    heading: str
    path: TimedPath | None
    trajectory: Trajectory | None
    has_task: bool
    in_dwell_stage: bool
    stuck_steps: int
    carrying: bool
    corridor_exempt: frozenset[Coord] = frozenset()


@dataclass
class StepOutcome:
    poses: dict[int, tuple[int, int, str]] = field(default_factory=dict)
    fposes: dict[int, tuple[float, float, str]] = field(default_factory=dict)
    triggers: dict[int, str] = field(default_factory=dict)
    collisions: list[CollisionEvent] = field(default_factory=list)
    stuck: dict[int, int] = field(default_factory=dict)
    finished: list[int] = field(default_factory=list)


def step_execute(
    agents: list[ExecAgent],
    now: int,
    corridors: tuple[tuple[frozenset[Coord], int, int], ...] = (),
    newly_active: tuple[tuple[frozenset[Coord], int, int], ...] = (),
    margin: float = 0.0,
    resolution: int = DEFAULT_RESOLUTION,
    static_cells: dict[int, frozenset[Coord]] | frozenset[Coord] = frozenset(),
) -> StepOutcome:
    """Advance every Active agent one step along its trajectory.

    Emits replanning triggers: corridor_intersect when the remaining route
    crosses a newly active corridor, blocked after 5 consecutive
    involuntary dwell steps, infeasible when the next-step collision window
    is non-empty. Failed agents do not advance.
    """
    out = StepOutcome()
    trajs: dict[int, Trajectory] = {}
    fps: dict[int, int] = {}
    for ag in agents:
        fps[ag.agv] = ag.spec.footprint
        if ag.active and ag.trajectory is not None:
            trajs[ag.agv] = ag.trajectory
        else:
            pose = (float(ag.cell[0]), float(ag.cell[1]), ag.heading)
            trajs[ag.agv] = Trajectory(agv=ag.agv, start_pose=pose)

    out.collisions = check_continuous_collisions(
        trajs, fps, margin=margin, static_cells=static_cells,
        corridors=corridors, resolution=resolution, t_lo=float(now), t_hi=float(now + 1),
    )
    hit_agents = {e.a for e in out.collisions} | {e.b for e in out.collisions if e.b is not None}

    for ag in agents:
        if not ag.active:
            out.poses[ag.agv] = (ag.cell[0], ag.cell[1], ag.heading)
            out.fposes[ag.agv] = (float(ag.cell[0]), float(ag.cell[1]), ag.heading)
            out.stuck[ag.agv] = ag.stuck_steps
            continue
        moved = False
        if ag.path is not None:
            x, y, h = ag.path.pose_at(now + 1)
            moved = (x, y) != ag.cell
            out.poses[ag.agv] = (x, y, h)
            out.fposes[ag.agv] = trajs[ag.agv].pose_at(float(now + 1))
            if now + 1 >= ag.path.arrival_step:
                out.finished.append(ag.agv)
        else:
            out.poses[ag.agv] = (ag.cell[0], ag.cell[1], ag.heading)
            out.fposes[ag.agv] = (float(ag.cell[0]), float(ag.cell[1]), ag.heading)

        if ag.path is not None and newly_active and _planner.path_hits_corridors(
            ag.path, ag.spec.footprint, newly_active, now + 1, ag.corridor_exempt
        ):
            out.triggers[ag.agv] = _planner.CORRIDOR_INTERSECT
        elif ag.agv in hit_agents:
            out.triggers[ag.agv] = _planner.INFEASIBLE

        involuntary = (
            ag.has_task
            and not ag.in_dwell_stage
            and not moved
            and (ag.path is None or ag.path.is_fallback)
        )
        stuck = ag.stuck_steps + 1 if involuntary else 0
        out.stuck[ag.agv] = stuck
        if stuck >= BLOCKED_DWELL_THRESHOLD and ag.agv not in out.triggers:
            out.triggers[ag.agv] = _planner.BLOCKED
            out.stuck[ag.agv] = 0
    return out
