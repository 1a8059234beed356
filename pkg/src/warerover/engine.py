"""Authoritative simulation state and the step-level joint optimization loop.

Each step runs a fixed phase order: order release/decomposition, failure
sampling and recovery, scheduling, planning, execution, stage advancement,
bookkeeping. Success rate, planner cost, and throughput are computed per
run; experiments repeat a configuration across a contiguous seed range.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import failures, orders as ordmod, planner, scheduler
from .executor import ExecAgent, Trajectory, realize_plan, step_execute
from .failures import FailureConfig, FailureEvent, SafetyCorridor
from .orders import (
    ASSIGNED,
    CARRY_TO_STATION,
    COMPLETED,
    DROP_SHELF,
    EXPIRED,
    GO_TO_SHELF,
    LIFT_SHELF,
    PENDING,
    RETURN_SHELF,
    WAIT_SERVICE,
    Order,
    OrderPattern,
    Sku,
    Task,
    advance_stage,
    decompose_order,
    export_order_trace,
    generate_orders,
)
from .planner import (
    CORRIDOR_INTERSECT,
    IDLE_WITH_TASK,
    PlanningContext,
    PlanRequest,
    TimedPath,
    detect_conflicts,
    plan_cbs,
    plan_prioritized,
)
from .world import AgvState, Coord, Layout, footprint_cells

RESULTS_COLUMNS = (
    "env", "scheduler", "planner", "pattern", "seed", "sr", "ct_ms", "tp",
    "makespan", "failures", "collisions",
)

_MOTION_STAGES = {GO_TO_SHELF, CARRY_TO_STATION, RETURN_SHELF}
_DWELL_STAGES = {LIFT_SHELF, WAIT_SERVICE, DROP_SHELF}

# Streams are split by purpose so toggling one subsystem never perturbs
# another subsystem's randomness.
_ORDERS_STREAM, _SCHED_STREAM, _FAIL_STREAM = 1, 2, 3

class SimulationInvariantError(AssertionError):
    pass


@dataclass
class Metrics:
    sr: float = 0.0
    ct: float = 0.0
    tp: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    layout: Layout
    pattern: OrderPattern
    scheduler: str = "ta"
    planner: str = "astar"
    failure_config: FailureConfig = FailureConfig(enabled=False)
    horizon: int = 2000
    repeats: int = 100
    base_seed: int = 0
    deterministic_ct: bool = False
    margin: float = 0.0
    resolution: int = 10
    scenario_name: str = "custom"
    debug: bool = False
    failure_script: tuple[tuple[int, int], ...] = ()  # (step, agv) pairs
    # Engine-side CT-tree cap per invocation; exhaustion falls back to
    # prioritized planning (flagged). plan_cbs itself defaults to 10,000.
    cbs_node_budget: int = 300


@dataclass
class RunResult:
    seed: int
    metrics: Metrics
    makespan: int
    completed: int
    generated: int
    expired: int
    failure_count: int
    collision_count: int
    intrusions: int
    motionless_violations: int
    conservation_ok: bool
    complete: bool
    order_trace: str = ""
    event_log: list[str] = field(default_factory=list)

    def csv_row(self, config: ExperimentConfig) -> str:
        vals = (
            config.scenario_name, config.scheduler, config.planner,
            pattern_name(config.pattern), self.seed,
            self.metrics.sr, self.metrics.ct, self.metrics.tp,
            self.makespan, self.failure_count, self.collision_count,
        )
        return ",".join(str(v) for v in vals)


def pattern_name(pattern: OrderPattern) -> str:
    for name, cls in ordmod.PATTERN_NAMES.items():
        if isinstance(pattern, cls):
            return name
    return "custom"


@dataclass
class _AgentRt:
    """Engine-side runtime wrapper around the public AgvState record."""

    state: AgvState
    park_cell: Coord
    fpos: tuple[float, float, str]
    trajectory: Trajectory | None = None
    trigger: str | None = None
    plan_reason: str = ""
    stuck: int = 0
    inside_corridors: frozenset[str] = frozenset()
    frozen_pose: tuple[int, int] | None = None


class Simulation:
    """Owns all mutable run state; advance with step() until done()."""

    def __init__(self, config: ExperimentConfig, seed: int, keep_log: bool = True):
        self.config = config
        self.seed = seed
        self.keep_log = keep_log
        self.layout = config.layout
        self.clock = 0

        self.skus = derive_catalog(self.layout)
        self.inventory: dict[str, dict[str, int]] = {
            s.id: dict(s.contents) for s in self.layout.shelves
        }
        self._initial_stock = sum(sum(c.values()) for c in self.inventory.values())
        self._consumed = 0

        station_ids = [s.id for s in self.layout.stations]
        self.orders: list[Order] = generate_orders(
            config.pattern, self.skus, station_ids, seed=[seed, _ORDERS_STREAM]
        )
        self.orders_by_id = {o.id: o for o in self.orders}
        self._release_idx = 0
        self._deferred: list[Order] = []

        self.rng_sched = np.random.default_rng([seed, _SCHED_STREAM])
        # one failure stream per agent, advanced every step regardless of
        # health, so a seed's breakdown timeline is planner-independent
        self.rng_fail = {
            p.spec.id: np.random.default_rng([seed, _FAIL_STREAM, p.spec.id])
            for p in self.layout.agvs
        }

        self.tasks: dict[str, Task] = {}
        self.pending_tasks: list[Task] = []
        self.shelf_locks: dict[str, str] = {}
        self.stored_cells: set[Coord] = set()
        self._stored_by_shelf: dict[str, frozenset[Coord]] = {}
        for shelf in self.layout.shelves:
            cells = footprint_cells(shelf.home_cell, shelf.size)
            self._stored_by_shelf[shelf.id] = cells
            self.stored_cells |= cells

        self.fleet: dict[int, _AgentRt] = {}
        for placement in self.layout.agvs:
            st = AgvState(spec=placement.spec, cell=placement.cell, heading=placement.heading)
            self.fleet[placement.spec.id] = _AgentRt(
                state=st,
                park_cell=placement.cell,
                fpos=(float(placement.cell[0]), float(placement.cell[1]), placement.heading),
            )
        self.agv_ids = sorted(self.fleet)

        self.corridors: list[SafetyCorridor] = []
        self.failure_events: list[FailureEvent] = []
        self._pending_injections: list[int] = []
        self._deferred_failures: list[tuple[int, str]] = []
        self._script = sorted(config.failure_script)

        self.ct_samples: list[float] = []
        self.completed = 0
        self.expired = 0
        self.collision_count = 0
        self.intrusions = 0
        self.motionless_violations = 0
        self.conservation_ok = True
        self.last_completion: int | None = None

        self.events: list[str] = []
        self._log("run_config", scenario=config.scenario_name, scheduler=config.scheduler,
                  planner=config.planner, pattern=pattern_name(config.pattern),
                  seed=seed, horizon=config.horizon, generated=len(self.orders),
                  deterministic_ct=config.deterministic_ct)

    # ------------------------------------------------------------------ util

    def _log(self, kind: str, **payload) -> None:
        if not self.keep_log:
            return
        self.events.append(
            f"{self.clock}\t{kind}\t" + json.dumps(payload, sort_keys=True, separators=(",", ":"))
        )

    def queue_injection(self, agv_id: int) -> None:
        """Request an on-demand failure; applied at the next step boundary."""
        self._pending_injections.append(agv_id)

    def _motion_goal(self, task: Task) -> Coord | None:
        if task.stage == GO_TO_SHELF or task.stage == RETURN_SHELF:
            return self.layout.shelf_by_id(task.shelf_id).home_cell
        if task.stage == CARRY_TO_STATION:
            return self.layout.station_by_id(task.station_id).cell
        return None

    def _discard_plan(self, agv: int, reason: str | None) -> None:
        """Drop a plan and cascade: anyone routed through this agent's
        now-permanent footprint was relying on the old route vacating it."""
        rt = self.fleet[agv]
        had_plan = rt.state.plan is not None
        rt.state.plan = None
        rt.trajectory = None
        if reason is not None and rt.trigger is None:
            rt.trigger = reason
        if not had_plan:
            return
        cells = rt.state.footprint()
        for other in self.agv_ids:
            if other == agv:
                continue
            ort = self.fleet[other]
            plan = ort.state.plan
            if plan is None or not ort.state.active:
                continue
            f = ort.state.spec.footprint
            hit = any(
                plan.cells_at(t, f) & cells
                for t in range(self.clock, plan.arrival_step + 1)
            )
            if hit:
                self._discard_plan(other, planner.BLOCKED)

    def _corridor_windows(self) -> tuple:
        return tuple(c.window() for c in self.corridors)

    # ---------------------------------------------------------------- phases

    def _phase_orders(self) -> None:
        due = self._deferred
        self._deferred = []
        while self._release_idx < len(self.orders) and \
                self.orders[self._release_idx].release_step <= self.clock:
            order = self.orders[self._release_idx]
            self._release_idx += 1
            self._log("order", order=order.id, sku=order.sku, station=order.station,
                      release=order.release_step)
            due.append(order)
        due.sort(key=lambda o: (o.release_step, o.id))
        for order in due:
            try:
                task = decompose_order(order, self.layout, self.inventory,
                                       exclude_shelves=frozenset(self.shelf_locks))
            except ordmod.OutOfStockError:
                order.status = EXPIRED
                self.expired += 1
                self._log("order_expired", order=order.id, reason="out_of_stock")
            except ordmod.ShelvesBusyError:
                self._deferred.append(order)
            else:
                self.tasks[task.id] = task
                self.shelf_locks[task.shelf_id] = task.id
                self.pending_tasks.append(task)
                self._log("task", task=task.id, order=order.id, shelf=task.shelf_id,
                          station=task.station_id)

    def _phase_failures(self) -> list[SafetyCorridor]:
        cfg = self.config.failure_config
        new_events: list[FailureEvent] = []
        for agv, source in self._deferred_failures:
            if self.fleet[agv].state.active:
                new_events.append(FailureEvent(agv=agv, at=self.clock,
                                               recovery_at=self.clock + cfg.down_steps,
                                               source=source))
        self._deferred_failures = []
        if cfg.enabled:
            active = [a for a in self.agv_ids if self.fleet[a].state.active
                      and not any(e.agv == a for e in new_events)]
            new_events.extend(failures.sample_failures(cfg, active, self.rng_fail, self.clock))
        while self._script and self._script[0][0] == self.clock:
            _, agv = self._script.pop(0)
            if agv in self.fleet and self.fleet[agv].state.active and \
                    not any(e.agv == agv for e in new_events):
                new_events.append(failures.inject_failure(agv, True, self.clock, cfg))
        for agv in self._pending_injections:
            if agv in self.fleet and self.fleet[agv].state.active and \
                    not any(e.agv == agv for e in new_events):
                new_events.append(failures.inject_failure(agv, True, self.clock, cfg))
            else:
                self._log("inject_rejected", agv=agv)
        self._pending_injections = []

        # An agent caught between cells (steps_per_cell > 1) finishes its move
        # before the failure takes hold, keeping occupancy on whole cells.
        settled = []
        for event in new_events:
            rt = self.fleet[event.agv]
            fx, fy, _ = rt.fpos
            if (fx, fy) != (float(rt.state.cell[0]), float(rt.state.cell[1])):
                self._deferred_failures.append((event.agv, event.source))
            else:
                settled.append(event)
        new_events = settled

        new_corridors: list[SafetyCorridor] = []
        for event in new_events:
            rt = self.fleet[event.agv]
            rt.state.down_until = event.recovery_at
            self._discard_plan(event.agv, None)
            rt.trigger = None
            rt.frozen_pose = rt.state.cell
            self.failure_events.append(event)
            self._log("failure", agv=event.agv, at=event.at, recovery_at=event.recovery_at,
                      source=event.source)
            corridor = failures.build_corridor(event, rt.state.footprint(), self.layout)
            self.corridors.append(corridor)
            new_corridors.append(corridor)
            self._log("corridor", id=corridor.id, cause=corridor.cause_agv,
                      cells=sorted(corridor.cells), active_from=corridor.active_from,
                      active_until=corridor.active_until,
                      boundary_reachable=corridor.boundary_reachable)

        # Evict bystanders: anyone standing in or routed through a new corridor
        # must replan this very step (corridor cells block phase-4 searches).
        for corridor in new_corridors:
            for agv in self.agv_ids:
                rt = self.fleet[agv]
                if agv == corridor.cause_agv or not rt.state.active:
                    continue
                foot = rt.state.footprint()
                overlap = bool(foot & corridor.cells)
                routed = rt.state.plan is not None and planner.path_hits_corridors(
                    rt.state.plan, rt.state.spec.footprint, (corridor.window(),),
                    self.clock, exempt=foot,
                )
                if overlap or routed:
                    rt.trigger = CORRIDOR_INTERSECT
                    self._discard_plan(agv, CORRIDOR_INTERSECT)
                # Grandfather agents already inside so the intrusion monitor
                # only fires on genuine entries.
                if overlap:
                    rt.inside_corridors = rt.inside_corridors | {corridor.id}

        # Recoveries and corridor expiry.
        for event in failures.due_recoveries(self.failure_events, self.clock):
            rt = self.fleet[event.agv]
            if rt.state.down_until is not None:
                rt.state.down_until = None
                rt.frozen_pose = None
                rt.trigger = IDLE_WITH_TASK if rt.state.task_id else None
                # corridors built over this spot during the downtime are not
                # entries; the agent departs rather than having intruded
                foot = rt.state.footprint()
                inside = {
                    c.id for c in self.corridors
                    if c.cause_agv != event.agv and c.active_until > self.clock
                    and foot & c.cells
                }
                rt.inside_corridors = rt.inside_corridors | inside
                self._log("recovery", agv=event.agv)
        kept = []
        for corridor in self.corridors:
            if corridor.active_until <= self.clock:
                self._log("corridor_expired", id=corridor.id)
            else:
                kept.append(corridor)
        self.corridors = kept
        return new_corridors

    def _phase_schedule(self) -> None:
        if not self.pending_tasks:
            return
        idle = [rt.state for rt in (self.fleet[a] for a in self.agv_ids)
                if rt.state.active and rt.state.task_id is None]
        if not idle:
            return
        assignments = scheduler.schedule_step(
            self.config.scheduler, self.pending_tasks, idle, self.layout,
            self.rng_sched, now=self.clock, state=self,
        )
        for asn in assignments:
            task = self.tasks[asn.task_id]
            task.assigned_agv = asn.agv_id
            rt = self.fleet[asn.agv_id]
            rt.state.task_id = task.id
            self._discard_plan(asn.agv_id, None)
            rt.trigger = None
            rt.plan_reason = "assigned"
            order = self.orders_by_id[task.order_id]
            order.status = ASSIGNED
            self.pending_tasks.remove(task)
            self._log("assignment", task=task.id, agv=asn.agv_id)

    def _build_context(self, batch_ids: set[int]) -> PlanningContext:
        fixed: dict[int, TimedPath] = {}
        standing: dict[int, frozenset[Coord]] = {}
        fps: dict[int, int] = {}
        for agv in self.agv_ids:
            rt = self.fleet[agv]
            fps[agv] = rt.state.spec.footprint
            plan = rt.state.plan
            if agv not in batch_ids and plan is not None and plan.arrival_step > self.clock:
                fixed[agv] = plan
            else:
                standing[agv] = rt.state.footprint()
        max_spc = max((rt.state.spec.steps_per_cell for rt in self.fleet.values()), default=1)
        corr_tail = max((c.active_until - self.clock for c in self.corridors), default=0)
        horizon = self.clock + 4 * (self.layout.width + self.layout.height) * max_spc \
            + corr_tail + 64
        return PlanningContext(
            layout=self.layout,
            stored_cells=frozenset(self.stored_cells),
            corridors=self._corridor_windows(),
            fixed_paths=fixed,
            standing=standing,
            footprints=fps,
            now=self.clock,
            horizon=horizon,
        )

    def _phase_plan(self) -> None:
        # Triggered agents abandon their committed route first (cascading to
        # anyone who depended on it), then the whole demand set plans at once.
        for agv in self.agv_ids:
            rt = self.fleet[agv]
            if rt.state.active and rt.trigger is not None and rt.state.plan is not None:
                self._discard_plan(agv, rt.trigger)

        corridor_cells: set[Coord] = set()
        for c in self.corridors:
            if c.active_from <= self.clock < c.active_until:
                corridor_cells |= c.cells

        task_reqs: list[PlanRequest] = []
        park_reqs: list[PlanRequest] = []
        reasons: dict[int, str] = {}
        exempts: dict[int, frozenset[Coord]] = {}

        def note_exempt(agv: int, foot: frozenset[Coord]) -> None:
            inside = foot & corridor_cells
            if inside:
                exempts[agv] = inside

        for agv in self.agv_ids:
            rt = self.fleet[agv]
            st = rt.state
            if not st.active:
                continue
            if st.task_id is not None:
                task = self.tasks[st.task_id]
                goal = self._motion_goal(task)
                if goal is None:
                    continue  # dwell stage
                if st.plan is None:
                    if st.cell == goal and rt.trigger is None:
                        continue  # arrival handled in stage advancement
                    carrying = st.carrying is not None
                    task_reqs.append(PlanRequest(agv=agv, spec=st.spec, cell=st.cell,
                                                 heading=st.heading, goal=goal,
                                                 carrying=carrying))
                    reasons[agv] = rt.trigger or rt.plan_reason or IDLE_WITH_TASK
                    note_exempt(agv, st.footprint())
            else:
                if st.plan is None and st.cell != rt.park_cell:
                    park_reqs.append(PlanRequest(agv=agv, spec=st.spec, cell=st.cell,
                                                 heading=st.heading, goal=rt.park_cell,
                                                 carrying=False))
                    reasons[agv] = rt.trigger or "park"
                    note_exempt(agv, st.footprint())
        for agv in self.agv_ids:
            rt = self.fleet[agv]
            if agv not in reasons and rt.trigger is not None and rt.state.plan is None:
                rt.trigger = None  # standing where it is resolves the trigger
        if not task_reqs and not park_reqs:
            return

        t0 = time.perf_counter()
        cost_nodes = 0
        batch_ids = {r.agv for r in task_reqs} | {r.agv for r in park_reqs}
        ctx = self._build_context(batch_ids)
        results = []
        if task_reqs:
            if self.config.planner == "cbs":
                res = plan_cbs(task_reqs, ctx, node_budget=self.config.cbs_node_budget,
                               corridor_exempt=exempts)
                if res.suboptimal:
                    self._log("cbs_fallback", agents=sorted(r.agv for r in task_reqs))
            elif self.config.planner == "astar":
                res = plan_prioritized(task_reqs, ctx, corridor_exempt=exempts)
            else:
                res = planner.resolve_planner(self.config.planner)(
                    task_reqs, ctx, corridor_exempt=exempts)
            results.append(res)
            cost_nodes += res.cost_units
            for agv, path in res.paths.items():
                self._apply_plan(agv, path, reasons.get(agv, ""))
        if park_reqs:
            # housekeeping relocation always routes through the prioritized
            # machinery so both planner configs pay the same cost for it
            ctx2 = self._build_context({r.agv for r in park_reqs})
            res = plan_prioritized(park_reqs, ctx2, corridor_exempt=exempts)
            results.append(res)
            cost_nodes += res.cost_units
            for agv, path in res.paths.items():
                self._apply_plan(agv, path, reasons.get(agv, "park"))
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
        sample = float(cost_nodes) if self.config.deterministic_ct else elapsed_ms
        self.ct_samples.append(sample)
        if self.config.deterministic_ct:
            self._log("ct_sample", nodes=cost_nodes)

        if self.config.debug:
            self._assert_conflict_free()

    def _apply_plan(self, agv: int, path: TimedPath, reason: str) -> None:
        rt = self.fleet[agv]
        rt.state.plan = path
        rt.trajectory = realize_plan(path, rt.state.spec)
        kind = "replan" if rt.trigger else "plan"
        self._log(kind, agv=agv, reason=reason or "plan",
                  goal=list(path.states[-1][:2]), arrival=path.arrival_step,
                  fallback=path.is_fallback)
        rt.trigger = None
        rt.plan_reason = ""

    def _phase_execute(self, new_corridors: list[SafetyCorridor]) -> None:
        statics: dict[int, frozenset[Coord]] = {}
        agents = []
        for agv in self.agv_ids:
            rt = self.fleet[agv]
            st = rt.state
            in_dwell = False
            if st.task_id is not None and self.tasks[st.task_id].stage in _DWELL_STAGES:
                in_dwell = True
            own_cells = self._stored_by_shelf.get(st.carrying, frozenset())
            statics[agv] = (
                (frozenset(self.stored_cells) - own_cells) | self.layout.obstacles
                if st.carrying is not None
                else self.layout.obstacles
            )
            agents.append(ExecAgent(
                agv=agv, spec=st.spec, active=st.active, cell=st.cell, heading=st.heading,
                path=st.plan if st.active else None, trajectory=rt.trajectory,
                has_task=st.task_id is not None, in_dwell_stage=in_dwell,
                stuck_steps=rt.stuck, carrying=st.carrying is not None,
                corridor_exempt=st.footprint(),
            ))
        # Corridor discipline is enforced by the entry-based intrusion monitor
        # below; the sampled check covers agent-agent and agent-static overlap.
        out = step_execute(
            agents, self.clock,
            corridors=(),
            newly_active=tuple(c.window() for c in new_corridors),
            margin=self.config.margin, resolution=self.config.resolution,
            static_cells=statics,
        )

        for ev in out.collisions:
            self.collision_count += 1
            self._log("collision", collision_kind=ev.kind, a=ev.a, b=ev.b,
                      cell=list(ev.cell) if ev.cell else None, time=round(ev.time, 3))

        for agv in self.agv_ids:
            rt = self.fleet[agv]
            st = rt.state
            if not st.active:
                if rt.frozen_pose is not None and st.cell != rt.frozen_pose:
                    self.motionless_violations += 1
                continue
            x, y, h = out.poses[agv]
            st.cell = (x, y)
            st.heading = h
            rt.fpos = out.fposes[agv]
            rt.stuck = out.stuck[agv]
            if agv in out.finished:
                st.plan = None
                rt.trajectory = None
            if agv in out.triggers and rt.trigger is None:
                rt.trigger = out.triggers[agv]
                if rt.trigger == CORRIDOR_INTERSECT:
                    st.plan = None
                    rt.trajectory = None

        # Corridor intrusion monitor: a non-causing agent crossing into an
        # active corridor is an entry; agents grandfathered at activation are
        # only cleared once they leave.
        boundary = self.clock + 1
        for agv in self.agv_ids:
            rt = self.fleet[agv]
            if not rt.state.active:
                continue
            foot = rt.state.footprint()
            now_inside = set()
            for corridor in self.corridors:
                if corridor.cause_agv == agv:
                    continue
                if corridor.active_from <= boundary < corridor.active_until and \
                        foot & corridor.cells:
                    now_inside.add(corridor.id)
            entered = now_inside - set(rt.inside_corridors)
            for cid in sorted(entered):
                self.intrusions += 1
                self._log("intrusion", agv=agv, corridor=cid)
            rt.inside_corridors = frozenset(now_inside)

    def _phase_stages(self) -> None:
        for agv in self.agv_ids:
            rt = self.fleet[agv]
            st = rt.state
            if not st.active or st.task_id is None:
                continue
            task = self.tasks[st.task_id]
            order = self.orders_by_id[task.order_id]
            if task.stage in _MOTION_STAGES:
                goal = self._motion_goal(task)
                if st.plan is None and st.cell == goal:
                    advance_stage(task, st, self.clock + 1, order, self.inventory)
                    self._log("stage", task=task.id, agv=agv, stage=task.stage)
            elif task.stage in _DWELL_STAGES:
                task.stage_dwell += 1
                need = 1
                if task.stage == WAIT_SERVICE:
                    need = self.layout.station_by_id(task.station_id).service_time
                if task.stage_dwell >= need:
                    prev = task.stage
                    advance_stage(task, st, self.clock + 1, order, self.inventory)
                    self._log("stage", task=task.id, agv=agv, stage=task.stage)
                    if prev == LIFT_SHELF:
                        st.carrying = task.shelf_id
                        self.stored_cells -= self._stored_by_shelf[task.shelf_id]
                    elif prev == WAIT_SERVICE:
                        self.completed += 1
                        self._consumed += order.quantity
                        self.last_completion = self.clock + 1
                        self._log("completion", order=order.id, step=self.clock + 1)
                    elif prev == DROP_SHELF:
                        self.stored_cells |= self._stored_by_shelf[task.shelf_id]
                        del self.shelf_locks[task.shelf_id]
                        st.task_id = None
                        self._log("task_done", task=task.id, agv=agv)

    def _phase_bookkeeping(self) -> None:
        counts = {PENDING: 0, ASSIGNED: 0, COMPLETED: 0, EXPIRED: 0}
        for o in self.orders:
            counts[o.status] += 1
        if sum(counts.values()) != len(self.orders):
            self.conservation_ok = False
            if self.config.debug:
                raise SimulationInvariantError("order status conservation violated")
        if counts[COMPLETED] != self.completed:
            self.conservation_ok = False
        stock = sum(sum(c.values()) for c in self.inventory.values())
        if stock != self._initial_stock - self._consumed:
            self.conservation_ok = False
            if self.config.debug:
                raise SimulationInvariantError("inventory conservation violated")

    def _assert_conflict_free(self) -> None:
        paths = {}
        fps = {}
        for agv in self.agv_ids:
            rt = self.fleet[agv]
            fps[agv] = rt.state.spec.footprint
            if rt.state.plan is not None and rt.state.plan.arrival_step > self.clock:
                paths[agv] = rt.state.plan.remaining(self.clock)
            else:
                x, y = rt.state.cell
                paths[agv] = TimedPath(agv=agv, states=((x, y, rt.state.heading, self.clock),))
        conflict = detect_conflicts(paths, fps, self._corridor_windows())
        if conflict is not None:
            raise SimulationInvariantError(f"accepted plans conflict: {conflict}")

    # ------------------------------------------------------------------ api

    def step(self) -> None:
        self._phase_orders()
        new_corridors = self._phase_failures()
        self._phase_schedule()
        self._phase_plan()
        self._phase_execute(new_corridors)
        self._phase_stages()
        self._phase_bookkeeping()
        self.clock += 1

    def done(self) -> bool:
        if self.clock >= self.config.horizon:
            return True
        return self.completed + self.expired >= len(self.orders)

    def finalize(self) -> RunResult:
        for order in self.orders:
            if order.status in (PENDING, ASSIGNED):
                order.status = EXPIRED
                self.expired += 1
                self._log("order_expired", order=order.id, reason="horizon")
        generated = len(self.orders)
        sr = 100.0 if generated == 0 else 100.0 * self.completed / generated
        complete = self.completed == generated
        if self.completed == 0:
            makespan = 0 if generated == 0 else self.config.horizon
            tp = 0.0
        else:
            makespan = self.last_completion if complete else self.config.horizon
            tp = self.completed / makespan if makespan > 0 else 0.0
        ct = float(np.mean(self.ct_samples)) if self.ct_samples else 0.0
        metrics = Metrics(sr=sr, ct=ct, tp=tp)
        self._log("summary", sr=sr, tp=tp, makespan=makespan,
                  completed=self.completed, generated=generated,
                  ct=ct if self.config.deterministic_ct else None,
                  failures=len(self.failure_events), collisions=self.collision_count)
        return RunResult(
            seed=self.seed, metrics=metrics, makespan=makespan,
            completed=self.completed, generated=generated, expired=self.expired,
            failure_count=len(self.failure_events), collision_count=self.collision_count,
            intrusions=self.intrusions, motionless_violations=self.motionless_violations,
            conservation_ok=self.conservation_ok, complete=complete,
            order_trace=export_order_trace(self.orders),
            event_log=list(self.events),
        )

    def snapshot(self, events_cursor: int = 0) -> tuple[dict, int]:
        """Step-boundary frame for telemetry; pure function of current state."""
        agvs = []
        for agv in self.agv_ids:
            rt = self.fleet[agv]
            st = rt.state
            stage = task_id = None
            goal = None
            if st.task_id:
                task = self.tasks[st.task_id]
                stage, task_id = task.stage, task.id
                g = self._motion_goal(task)
                goal = list(g) if g else None
            agvs.append({
                "id": agv, "x": round(rt.fpos[0], 3), "y": round(rt.fpos[1], 3),
                "heading": st.heading, "footprint": st.spec.footprint,
                "health": "active" if st.active else "failed",
                "carrying": st.carrying, "stage": stage, "task": task_id,
                "goal": goal,
            })
        shelves = []
        for shelf in self.layout.shelves:
            carrier = next((a for a in self.agv_ids
                            if self.fleet[a].state.carrying == shelf.id), None)
            shelves.append({
                "id": shelf.id, "x": shelf.home_cell[0], "y": shelf.home_cell[1],
                "size": shelf.size, "stored": carrier is None,
                "carrier": carrier,
            })
        corridors = [
            {"id": c.id, "cells": sorted(c.cells), "until": c.active_until,
             "cause": c.cause_agv}
            for c in self.corridors
            if c.active_from <= self.clock < c.active_until
        ]
        generated = len(self.orders)
        frame = {
            "proto": 1,
            "type": "snapshot",
            "step": self.clock,
            "width": self.layout.width,
            "height": self.layout.height,
            "stations": [
                {"id": s.id, "x": s.cell[0], "y": s.cell[1]} for s in self.layout.stations
            ],
            "obstacles": [list(c) for c in sorted(self.layout.obstacles)],
            "agvs": agvs,
            "shelves": shelves,
            "corridors": corridors,
            "metrics": {
                "completed": self.completed,
                "generated": generated,
                "expired": self.expired,
                "failures": len(self.failure_events),
            },
            "events": [line for line in self.events[events_cursor:]],
        }
        return frame, len(self.events)


def derive_catalog(layout: Layout) -> list[Sku]:
    """SKU catalog implied by shelf contents; size class from the widest holder."""
    sizes: dict[str, int] = {}
    for shelf in layout.shelves:
        for sku in shelf.contents:
            sizes[sku] = max(sizes.get(sku, 1), shelf.size)
    return [Sku(id=s, size_class=sizes[s]) for s in sorted(sizes)]


def run(config: ExperimentConfig, seed: int, keep_log: bool = True) -> RunResult:
    sim = Simulation(config, seed, keep_log=keep_log)
    while not sim.done():
        sim.step()
    return sim.finalize()


def _run_one(args):
    config, seed, keep_log = args
    try:
        return ("ok", run(config, seed, keep_log=keep_log))
    except Exception as exc:  # noqa: BLE001 - per-run isolation
        return ("err", (seed, repr(exc)))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list[RunResult]
    errors: list[tuple[int, str]] = field(default_factory=list)

    def mean(self, attr: str) -> float:
        vals = [getattr(r.metrics, attr) for r in self.runs]
        return float(np.mean(vals)) if vals else 0.0

    def std(self, attr: str) -> float:
        vals = [getattr(r.metrics, attr) for r in self.runs]
        return float(np.std(vals)) if vals else 0.0

    def to_csv(self) -> str:
        lines = [",".join(RESULTS_COLUMNS)]
        for r in sorted(self.runs, key=lambda r: r.seed):
            lines.append(r.csv_row(self.config))
        return "\n".join(lines) + "\n"


def run_experiment(config: ExperimentConfig, workers: int | None = None,
                   keep_logs: bool = False) -> ExperimentResult:
    """Run seeds base..base+repeats-1; aggregation ignores execution order."""
    seeds = list(range(config.base_seed, config.base_seed + config.repeats))
    runs: list[RunResult] = []
    errors: list[tuple[int, str]] = []
    if workers and workers > 1 and len(seeds) > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(workers) as pool:
            for status, payload in pool.map(
                _run_one, [(config, s, keep_logs) for s in seeds]
            ):
                if status == "ok":
                    runs.append(payload)
                else:
                    errors.append(payload)
    else:
        for seed in seeds:
            status, payload = _run_one((config, seed, keep_logs))
            if status == "ok":
                runs.append(payload)
            else:
                errors.append(payload)
    runs.sort(key=lambda r: r.seed)
    return ExperimentResult(config=config, runs=runs, errors=errors)


def replay_metrics(event_log: list[str]) -> dict:
    """Recompute final metrics from an event log alone."""
    generated = horizon = 0
    completions: list[int] = []
    ct_nodes: list[float] = []
    summary = {}
    for line in event_log:
        _, kind, payload = line.split("\t", 2)
        data = json.loads(payload)
        if kind == "run_config":
            generated = data["generated"]
            horizon = data["horizon"]
        elif kind == "completion":
            completions.append(data["step"])
        elif kind == "ct_sample":
            ct_nodes.append(float(data["nodes"]))
        elif kind == "summary":
            summary = data
    completed = len(completions)
    sr = 100.0 if generated == 0 else 100.0 * completed / generated
    if completed == 0:
        makespan = 0 if generated == 0 else horizon
        tp = 0.0
    else:
        makespan = max(completions) if completed == generated else horizon
        tp = completed / makespan if makespan > 0 else 0.0
    ct = float(np.mean(ct_nodes)) if ct_nodes else 0.0
    return {"sr": sr, "tp": tp, "makespan": makespan, "ct": ct, "recorded": summary}
