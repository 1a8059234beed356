from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from warerover.planner import (
    Conflict,
    Constraint,
    PlanningContext,
    PlanRequest,
    TimedPath,
    detect_conflicts,
    low_level_search,
    make_wait_path,
    path_hits_corridors,
    plan_cbs,
    plan_prioritized,
    replan_agent,
)
from warerover.world import AgvSpec, Layout
from .oracles import dijkstra_arrival, joint_soc_optimum

SPEC = AgvSpec(id=0, footprint=1, steps_per_cell=1, turn_cost=0)


def ctx_for(width=5, height=5, obstacles=frozenset(), stored=frozenset(), corridors=(),
            fixed=None, standing=None, fps=None, now=0, horizon=120) -> PlanningContext:
    return PlanningContext(
        layout=Layout(width=width, height=height, obstacles=frozenset(obstacles)),
        stored_cells=frozenset(stored),
        corridors=tuple(corridors),
        fixed_paths=fixed or {},
        standing=standing or {},
        footprints=fps or {},
        now=now,
        horizon=horizon,
    )


def straight_path(agv, cells, headings=None, start=0) -> TimedPath:
    states = []
    actions = []
    for i, c in enumerate(cells):
        if i > 0:
            prev = cells[i - 1]
            d = {(0, 1): "N", (1, 0): "E", (0, -1): "S", (-1, 0): "W"}[
                (c[0] - prev[0], c[1] - prev[1])
            ]
            actions.append(("move", d))
            states.append((c[0], c[1], d, start + i))
        else:
            states.append((c[0], c[1], "E", start))
    return TimedPath(agv=agv, states=tuple(states), actions=tuple(actions))


class TestLowLevelSearch:
    def test_straight_run_matches_bfs(self):
        path, _ = low_level_search(SPEC, (0, 0), "E", (3, 0), ctx_for())
        oracle = dijkstra_arrival(5, 5, frozenset(), (0, 0), "E", (3, 0))
        assert oracle == 3
        assert path.arrival_step == 3
        assert [a[0] for a in path.actions] == ["move", "move", "move"]

    def test_turn_cost_adds_rotation(self):
        spec = AgvSpec(id=0, turn_cost=1)
        path, _ = low_level_search(spec, (0, 0), "N", (3, 0), ctx_for())
        oracle = dijkstra_arrival(5, 5, frozenset(), (0, 0), "N", (3, 0), turn_cost=1)
        assert oracle == 4
        assert path.arrival_step == 4
        assert path.rotations() == 1

    def test_goal_equals_start(self):
        path, _ = low_level_search(SPEC, (2, 2), "N", (2, 2), ctx_for())
        assert path.actions == ()
        assert path.arrival_step == 0

    def test_goal_in_obstacle(self):
        path, _ = low_level_search(SPEC, (0, 0), "E", (3, 3), ctx_for(obstacles={(3, 3)}))
        assert path is None

    def test_carrying_blocked_by_stored_pods(self):
        stored = {(1, 0), (1, 1), (1, 2), (1, 3)}
        unloaded, _ = low_level_search(SPEC, (0, 0), "E", (2, 0),
                                       ctx_for(stored=stored), carrying=False)
        loaded, _ = low_level_search(SPEC, (0, 0), "E", (2, 0),
                                     ctx_for(stored=stored), carrying=True)
        assert unloaded.arrival_step == 2
        assert loaded.arrival_step > 2  # must go around through (1, 4)

    def test_respects_vertex_constraint(self):
        con = Constraint(agv=0, cell=(1, 0), step=1)
        path, _ = low_level_search(SPEC, (0, 0), "E", (3, 0), ctx_for(), constraints=(con,))
        assert path.arrival_step == 4 or (1, 0, 1) not in {
            (s[0], s[1], s[3]) for s in path.states
        }
        assert detect_conflicts is not None

    def test_waits_out_corridor_window(self):
        corridor = (frozenset({(2, 0)}), 0, 6)
        path, _ = low_level_search(SPEC, (0, 0), "E", (4, 0),
                                   ctx_for(corridors=[corridor], obstacles={(2, 1), (2, 2),
                                                                            (2, 3), (2, 4)}))
        # single gap is corridor-blocked until step 6; must wait it out
        assert path.arrival_step >= 7

    def test_horizon_exhaustion(self):
        corridor = (frozenset({(2, 0)}), 0, 500)
        path, _ = low_level_search(SPEC, (0, 0), "E", (4, 0),
                                   ctx_for(corridors=[corridor], obstacles={(2, 1), (2, 2),
                                                                            (2, 3), (2, 4)},
                                           horizon=60))
        assert path is None

    def test_landmark_forces_detour(self):
        path, _ = low_level_search(SPEC, (0, 0), "E", (3, 0), ctx_for(),
                                   landmarks=(((1, 1), 2),))
        cells = {(s[0], s[1], s[3]) for s in path.states}
        assert (1, 1, 2) in cells
        assert path.arrival_step == 5  # detour through (1,1) at step 2 then onward

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_matches_bfs_oracle_on_random_grids(self, seed):
        rng = np.random.default_rng(seed)
        w, h = int(rng.integers(3, 7)), int(rng.integers(3, 7))
        cells = [(x, y) for x in range(w) for y in range(h)]
        obstacles = frozenset(
            tuple(cells[i]) for i in rng.choice(len(cells), size=len(cells) // 5, replace=False)
        )
        free = [c for c in cells if c not in obstacles]
        if len(free) < 2:
            return
        start = free[int(rng.integers(0, len(free)))]
        goal = free[int(rng.integers(0, len(free)))]
        spc = int(rng.integers(1, 3))
        tc = int(rng.integers(0, 2))
        spec = AgvSpec(id=0, steps_per_cell=spc, turn_cost=tc)
        path, _ = low_level_search(spec, start, "E", goal,
                                   ctx_for(width=w, height=h, obstacles=obstacles,
                                           horizon=400))
        oracle = dijkstra_arrival(w, h, obstacles, start, "E", goal,
                                  steps_per_cell=spc, turn_cost=tc)
        if oracle is None:
            assert path is None
        else:
            assert path is not None and path.arrival_step == oracle
            manhattan = abs(start[0] - goal[0]) + abs(start[1] - goal[1])
            assert path.arrival_step >= manhattan * spc

    def test_deterministic_output(self):
        a, _ = low_level_search(SPEC, (0, 0), "E", (4, 4), ctx_for())
        b, _ = low_level_search(SPEC, (0, 0), "E", (4, 4), ctx_for())
        assert a == b


class TestDetectConflicts:
    FPS = {1: 1, 2: 1}

    def test_same_cell_different_times_no_conflict(self):
        a = straight_path(1, [(0, 0), (1, 0), (2, 0), (3, 0)])
        b = straight_path(2, [(2, 4), (2, 3), (2, 2), (2, 1)])
        # b ends adjacent below a's corridor; they never meet in time
        assert detect_conflicts({1: a, 2: b}, self.FPS) is None

    def test_swap_is_edge_conflict_at_step_four(self):
        a = straight_path(1, [(0, 0), (1, 0), (2, 0), (3, 0), (4, 0), (5, 0)], start=0)
        # b holds (5,0) through step 4, then swaps with a between steps 4 and 5
        states = [(5, 0, "W", 0), (5, 0, "W", 1), (5, 0, "W", 2), (5, 0, "W", 3),
                  (5, 0, "W", 4), (4, 0, "W", 5), (3, 0, "W", 6)]
        actions = (("wait",),) * 4 + (("move", "W"), ("move", "W"))
        b = TimedPath(agv=2, states=tuple(states), actions=actions)
        conflict = detect_conflicts({1: a, 2: b}, self.FPS)
        assert conflict is not None
        assert conflict.kind == "edge"
        assert conflict.step == 4
        assert {conflict.a, conflict.b} == {1, 2}

    def test_vertex_conflict_inside_large_footprint(self):
        big = TimedPath(agv=1, states=tuple((4, 4, "N", t) for t in range(9)),
                        actions=(("wait",),) * 8)
        small = straight_path(2, [(5, 0), (5, 1), (5, 2), (5, 3), (5, 4), (5, 5), (5, 6)])
        conflict = detect_conflicts({1: big, 2: small}, {1: 2, 2: 1})
        assert conflict is not None
        assert conflict.kind == "vertex"
        assert conflict.step == 4
        assert conflict.cell == (5, 4)

    def test_orthogonal_handoff_is_edge_conflict(self):
        a = straight_path(1, [(0, 1), (1, 1), (2, 1)])  # moves east through (1,1)
        b = straight_path(2, [(1, 1), (1, 0)])          # vacates (1,1) moving south
        b = TimedPath(agv=2, states=((1, 1, "S", 0), (1, 0, "S", 1), (1, 0, "S", 2)),
                      actions=(("move", "S"), ("wait",)))
        conflict = detect_conflicts({1: a, 2: b}, self.FPS)
        assert conflict is not None and conflict.kind == "edge"

    def test_convoy_is_legal(self):
        a = straight_path(1, [(0, 0), (1, 0), (2, 0), (3, 0)])
        b = straight_path(2, [(1, 0), (2, 0), (3, 0), (4, 0)])
        assert detect_conflicts({1: a, 2: b}, self.FPS) is None

    def test_corridor_conflict(self):
        a = straight_path(1, [(0, 0), (1, 0), (2, 0)])
        corridor = (frozenset({(2, 0)}), 0, 10)
        conflict = detect_conflicts({1: a}, {1: 1}, corridors=(corridor,))
        assert conflict is not None and conflict.kind == "corridor"

    def test_corridor_start_exemption(self):
        a = straight_path(1, [(2, 0), (1, 0)])
        corridor = (frozenset({(2, 0)}), 0, 10)
        assert detect_conflicts({1: a}, {1: 1}, corridors=(corridor,)) is None


class TestPlanPrioritized:
    def test_disjoint_routes_equal_singletons(self):
        ctx = ctx_for(width=7, height=7, fps={1: 1, 2: 1})
        reqs = [
            PlanRequest(agv=1, spec=AgvSpec(id=1), cell=(0, 0), heading="E", goal=(6, 0)),
            PlanRequest(agv=2, spec=AgvSpec(id=2), cell=(0, 6), heading="E", goal=(6, 6)),
        ]
        res = plan_prioritized(reqs, ctx)
        for req in reqs:
            solo, _ = low_level_search(req.spec, req.cell, req.heading, req.goal,
                                       ctx_for(width=7, height=7))
            assert res.paths[req.agv].arrival_step == solo.arrival_step

    def test_head_on_corridor_one_yields(self):
        # y=1 is a single-width corridor under a wall row; y=0 is the only
        # side passage. Two agents meet head-on inside the corridor.
        walls = {(x, 2) for x in range(7)}
        ctx = ctx_for(width=7, height=3, obstacles=walls, fps={1: 1, 2: 1})
        reqs = [
            PlanRequest(agv=1, spec=AgvSpec(id=1), cell=(0, 1), heading="E", goal=(5, 1)),
            PlanRequest(agv=2, spec=AgvSpec(id=2), cell=(6, 1), heading="W", goal=(1, 1)),
        ]
        res = plan_prioritized(reqs, ctx)
        assert res.failed == []
        fps = {1: 1, 2: 1}
        assert detect_conflicts(res.paths, fps) is None
        solo1 = dijkstra_arrival(7, 3, frozenset(walls), (0, 1), "E", (5, 1))
        solo2 = dijkstra_arrival(7, 3, frozenset(walls), (6, 1), "W", (1, 1))
        delayed1 = res.paths[1].arrival_step > solo1
        delayed2 = res.paths[2].arrival_step > solo2
        # exactly one of them waits or detours
        assert delayed1 != delayed2

    def test_zero_requests(self):
        assert plan_prioritized([], ctx_for()).paths == {}

    def test_failure_gets_wait_path(self):
        boxed = {(0, 1), (1, 0), (1, 1)}
        ctx = ctx_for(width=3, height=3, obstacles=boxed, fps={1: 1})
        res = plan_prioritized(
            [PlanRequest(agv=1, spec=AgvSpec(id=1), cell=(0, 0), heading="E", goal=(2, 2))],
            ctx,
        )
        assert res.failed == [1]
        path = res.paths[1]
        assert path.is_fallback
        assert path.arrival_step - path.start_step == 5
        assert all(a == ("wait",) for a in path.actions)


class TestPlanCbs:
    def test_swap_on_ring_matches_joint_oracle(self):
        # 3x3 ring: centre blocked, two agents swapping ends
        obstacles = frozenset({(1, 1)})
        ctx = ctx_for(width=3, height=3, obstacles=obstacles, fps={1: 1, 2: 1})
        reqs = [
            PlanRequest(agv=1, spec=AgvSpec(id=1), cell=(0, 1), heading="E", goal=(2, 1)),
            PlanRequest(agv=2, spec=AgvSpec(id=2), cell=(2, 1), heading="W", goal=(0, 1)),
        ]
        res = plan_cbs(reqs, ctx)
        assert not res.failed and not res.suboptimal
        assert detect_conflicts(res.paths, {1: 1, 2: 1}) is None
        soc = sum(p.arrival_step - p.start_step for p in res.paths.values())
        oracle = joint_soc_optimum(3, 3, obstacles, ((0, 1), (2, 1)), ((2, 1), (0, 1)))
        assert soc == oracle

    def test_independent_agents_zero_expansions(self):
        ctx = ctx_for(width=7, height=7, fps={1: 1, 2: 1})
        reqs = [
            PlanRequest(agv=1, spec=AgvSpec(id=1), cell=(0, 0), heading="E", goal=(6, 0)),
            PlanRequest(agv=2, spec=AgvSpec(id=2), cell=(0, 6), heading="E", goal=(6, 6)),
        ]
        res = plan_cbs(reqs, ctx)
        assert res.ct_nodes == 0
        for req in reqs:
            solo, _ = low_level_search(req.spec, req.cell, req.heading, req.goal,
                                       ctx_for(width=7, height=7))
            assert res.paths[req.agv].arrival_step == solo.arrival_step

    def test_budget_exhaustion_falls_back(self):
        walls = {(x, y) for x in range(1, 6) for y in (0, 2)}
        ctx = ctx_for(width=7, height=3, obstacles=walls, fps={1: 1, 2: 1})
        reqs = [
            PlanRequest(agv=1, spec=AgvSpec(id=1), cell=(0, 1), heading="E", goal=(6, 1)),
            PlanRequest(agv=2, spec=AgvSpec(id=2), cell=(6, 1), heading="W", goal=(0, 1)),
        ]
        res = plan_cbs(reqs, ctx, node_budget=0)
        assert res.suboptimal
        assert detect_conflicts(res.paths, {1: 1, 2: 1}) is None

    def test_same_goal_pair_degrades_gracefully(self):
        ctx = ctx_for(width=6, height=6, fps={1: 1, 2: 1})
        reqs = [
            PlanRequest(agv=1, spec=AgvSpec(id=1), cell=(0, 0), heading="E", goal=(5, 5)),
            PlanRequest(agv=2, spec=AgvSpec(id=2), cell=(0, 5), heading="E", goal=(5, 5)),
        ]
        res = plan_cbs(reqs, ctx)
        assert res.failed == [2]
        assert res.paths[2].is_fallback
        assert detect_conflicts(res.paths, {1: 1, 2: 1}) is None

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 100_000))
    def test_sum_of_costs_matches_joint_bfs(self, seed):
        rng = np.random.default_rng(seed)
        w = h = 5
        cells = [(x, y) for x in range(w) for y in range(h)]
        obstacles = frozenset(
            tuple(cells[i]) for i in rng.choice(25, size=int(rng.integers(0, 5)), replace=False)
        )
        free = [c for c in cells if c not in obstacles]
        picks = rng.choice(len(free), size=4, replace=False)
        s1, s2, g1, g2 = (free[int(i)] for i in picks)
        oracle = joint_soc_optimum(w, h, obstacles, (s1, s2), (g1, g2))
        ctx = ctx_for(width=w, height=h, obstacles=obstacles, fps={1: 1, 2: 1}, horizon=80)
        reqs = [
            PlanRequest(agv=1, spec=AgvSpec(id=1), cell=s1, heading="E", goal=g1),
            PlanRequest(agv=2, spec=AgvSpec(id=2), cell=s2, heading="E", goal=g2),
        ]
        res = plan_cbs(reqs, ctx)
        if oracle is None or res.suboptimal or res.failed:
            return
        assert detect_conflicts(res.paths, {1: 1, 2: 1}) is None
        soc = sum(p.arrival_step - p.start_step for p in res.paths.values())
        assert soc == oracle


class TestReplanAgent:
    def test_corridor_reroute(self):
        corridor = (frozenset({(2, 0), (2, 1)}), 0, 40)
        ctx = ctx_for(width=5, height=3, corridors=[corridor], fps={1: 1})
        req = PlanRequest(agv=1, spec=AgvSpec(id=1), cell=(0, 0), heading="E", goal=(4, 0))
        path, _, failed = replan_agent(req, "corridor_intersect", ctx)
        assert not failed
        assert not path_hits_corridors(path, 1, (corridor,), 0)

    def test_idle_with_task_equals_fresh_search(self):
        ctx = ctx_for(width=6, height=6, fps={1: 1})
        req = PlanRequest(agv=1, spec=AgvSpec(id=1), cell=(0, 0), heading="E", goal=(5, 5))
        path, _, failed = replan_agent(req, "idle_with_task", ctx)
        solo, _ = low_level_search(req.spec, req.cell, req.heading, req.goal, ctx)
        assert not failed and path == solo

    def test_boxed_in_waits_five(self):
        corridor = (frozenset({(0, 1), (1, 0), (1, 1)}), 0, 90)
        ctx = ctx_for(width=3, height=3, corridors=[corridor], fps={1: 1}, horizon=40)
        req = PlanRequest(agv=1, spec=AgvSpec(id=1), cell=(0, 0), heading="E", goal=(2, 2))
        path, _, failed = replan_agent(req, "blocked", ctx)
        assert failed
        assert path.is_fallback and len(path.actions) == 5

    def test_unknown_reason_rejected(self):
        ctx = ctx_for(fps={1: 1})
        req = PlanRequest(agv=1, spec=AgvSpec(id=1), cell=(0, 0), heading="E", goal=(2, 2))
        with pytest.raises(Exception):
            replan_agent(req, "nonsense", ctx)


class TestPlannerRegistry:
    def test_builtins_resolve(self):
        from warerover.planner import resolve_planner

        assert resolve_planner("astar") is plan_prioritized
        assert resolve_planner("cbs") is plan_cbs

    def test_external_slot(self):
        from warerover.planner import register_planner, resolve_planner

        marker = lambda requests, ctx, corridor_exempt=None: "stub"  # noqa: E731
        register_planner("dhc_stub", marker)
        assert resolve_planner("external:dhc_stub") is marker
        with pytest.raises(KeyError):
            resolve_planner("external:missing")
        with pytest.raises(KeyError):
            resolve_planner("bogus")

    def test_cbs_is_deterministic_across_calls(self):
        obstacles = frozenset({(1, 1), (3, 2)})
        ctx = ctx_for(width=5, height=5, obstacles=obstacles, fps={1: 1, 2: 1})
        reqs = [
            PlanRequest(agv=1, spec=AgvSpec(id=1), cell=(0, 2), heading="E", goal=(4, 2)),
            PlanRequest(agv=2, spec=AgvSpec(id=2), cell=(4, 2), heading="W", goal=(0, 0)),
        ]
        a = plan_cbs(reqs, ctx)
        b = plan_cbs(reqs, ctx)
        assert a.paths == b.paths and a.expansions == b.expansions


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_property_planner_outputs_are_conflict_free(seed):
    rng = np.random.default_rng(seed)
    w = h = 6
    cells = [(x, y) for x in range(w) for y in range(h)]
    obstacles = frozenset(
        tuple(cells[i]) for i in rng.choice(36, size=4, replace=False)
    )
    free = [c for c in cells if c not in obstacles]
    n = 3
    picks = rng.choice(len(free), size=2 * n, replace=False)
    starts = [free[int(i)] for i in picks[:n]]
    goals = [free[int(i)] for i in picks[n:]]
    fps = {i: 1 for i in range(n)}
    ctx = ctx_for(width=w, height=h, obstacles=obstacles, fps=fps, horizon=90)
    reqs = [PlanRequest(agv=i, spec=AgvSpec(id=i), cell=starts[i], heading="E", goal=goals[i])
            for i in range(n)]
    for planner in (plan_prioritized, plan_cbs):
        res = planner(reqs, ctx)
        merged = dict(res.paths)
        assert detect_conflicts(merged, fps) is None
