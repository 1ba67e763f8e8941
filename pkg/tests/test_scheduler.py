"""Tests for the slice-parallel decode scheduling simulator."""

from __future__ import annotations

import numpy as np
import pytest

from iscs.grouping import GroupingPlan
from iscs.scheduler import (
    CostModel,
    SliceTask,
    TaskDag,
    build_flat_dag,
    build_grouped_dag,
    compare_strategies,
    simulate,
)

from oracles import schedule_oracle


def unit_plan(groups: int, slices: int, tail: int = 0) -> GroupingPlan:
    """A plan with one channel per slice and an optional ungrouped tail."""
    perm = []
    built = []
    c = 0
    for _ in range(groups):
        chain = []
        for _ in range(slices):
            chain.append((c,))
            perm.append(c)
            c += 1
        built.append(tuple(chain))
    for _ in range(tail):
        perm.append(c)
        c += 1
    return GroupingPlan(
        permutation=tuple(perm),
        groups=tuple(built),
        slice_count=slices,
        ordering_strategy="kn_i",
    )


def dag_from_costs(chain_costs, sync=0.0) -> TaskDag:
    chains = tuple(
        tuple(
            SliceTask(chain=ci, index=ti, channels=(ti,), cost=float(cost))
            for ti, cost in enumerate(costs)
        )
        for ci, costs in enumerate(chain_costs)
    )
    return TaskDag(kind="grouped", chains=chains, sync_overhead=float(sync))


UNIT = CostModel(base_cost=1.0, per_channel_cost=0.0, sync_overhead=0.0)


class TestCostModel:
    def test_affine_task_cost(self):
        costs = CostModel(base_cost=0.5, per_channel_cost=0.25)
        assert costs.task_cost(0) == 0.5
        assert costs.task_cost(4) == 1.5

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"base_cost": -1.0},
            {"per_channel_cost": -0.1},
            {"sync_overhead": -0.5},
        ],
    )
    def test_rejects_negative_components(self, kwargs):
        with pytest.raises(ValueError, match=">= 0"):
            CostModel(**kwargs)

    def test_rejects_all_zero_costs(self):
        with pytest.raises(ValueError, match="zero-cost"):
            CostModel(base_cost=0.0, per_channel_cost=0.0)


class TestDagConstruction:
    def test_grouped_dag_mirrors_plan(self):
        plan = unit_plan(groups=3, slices=4, tail=2)
        costs = CostModel(base_cost=1.0, per_channel_cost=0.5,
                          sync_overhead=0.25)
        dag = build_grouped_dag(plan, costs)
        assert dag.kind == "grouped"
        assert len(dag.chains) == 4  # three groups + the tail chain
        for g, chain in enumerate(dag.chains[:3]):
            assert [t.channels for t in chain] == list(plan.groups[g])
            assert all(t.cost == costs.task_cost(1) for t in chain)
            assert [t.index for t in chain] == list(range(4))
        tail = dag.chains[3]
        assert len(tail) == 1
        assert tail[0].channels == plan.permutation[12:]
        assert tail[0].cost == costs.task_cost(2)
        assert dag.sync_overhead == 0.25

    def test_grouped_dag_without_tail(self):
        dag = build_grouped_dag(unit_plan(2, 3), UNIT)
        assert len(dag.chains) == 2
        assert dag.task_count == 6
        assert dag.total_work == 6.0

    def test_flat_dag_is_one_chain_same_work(self):
        plan = unit_plan(groups=3, slices=4, tail=2)
        costs = CostModel(base_cost=1.0, per_channel_cost=0.5)
        grouped = build_grouped_dag(plan, costs)
        flat = build_flat_dag(plan, costs)
        assert flat.kind == "flat"
        assert len(flat.chains) == 1
        assert flat.task_count == grouped.task_count
        assert flat.total_work == pytest.approx(grouped.total_work)
        assert flat.sync_overhead == 0.0
        covered = [c for t in flat.chains[0] for c in t.channels]
        assert covered == list(plan.permutation)

    def test_flat_dag_near_equal_contiguous_runs(self):
        plan = unit_plan(groups=1, slices=10)
        flat = build_flat_dag(plan, UNIT, task_count=4)
        sizes = [len(t.channels) for t in flat.chains[0]]
        assert sizes == [3, 3, 2, 2]

    def test_flat_dag_task_count_clamps_to_channels(self):
        plan = unit_plan(groups=1, slices=3)
        flat = build_flat_dag(plan, UNIT, task_count=99)
        assert flat.task_count == 3

    def test_flat_dag_rejects_zero_tasks(self):
        with pytest.raises(ValueError, match="task_count"):
            build_flat_dag(unit_plan(1, 3), UNIT, task_count=0)

    def test_critical_path_is_longest_chain_plus_sync(self):
        dag = dag_from_costs([[1.0, 2.0], [5.0], [1.0, 1.0, 1.0]], sync=0.5)
        assert dag.critical_path == 5.5
        assert dag.total_work == 11.0
        assert dag.task_count == 6


class TestExactMakespans:
    def test_enough_workers_finish_in_one_chain_time(self):
        for groups, slices in [(2, 3), (4, 5), (6, 2)]:
            dag = build_grouped_dag(unit_plan(groups, slices), UNIT)
            for workers in (groups, groups + 3):
                assert simulate(dag, workers).makespan == float(slices)

    def test_single_worker_serializes_everything(self):
        dag = build_grouped_dag(unit_plan(4, 5), UNIT)
        assert simulate(dag, 1).makespan == 20.0

    def test_five_chains_of_eight_on_four_workers(self):
        dag = build_grouped_dag(unit_plan(5, 8), UNIT)
        assert simulate(dag, 4).makespan == 16.0

    def test_sync_charged_once_per_chain(self):
        costs = CostModel(base_cost=1.0, per_channel_cost=0.0,
                          sync_overhead=0.5)
        dag = build_grouped_dag(unit_plan(3, 4), costs)
        assert simulate(dag, 3).makespan == 4.5
        assert simulate(dag, 1).makespan == 12.5

    def test_flat_ignores_extra_workers(self):
        plan = unit_plan(3, 4)
        flat = build_flat_dag(plan, UNIT)
        for workers in (1, 2, 8):
            assert simulate(flat, workers).makespan == 12.0

    def test_empty_dag_has_zero_makespan(self):
        empty = TaskDag(kind="flat", chains=(), sync_overhead=0.0)
        assert simulate(empty, 2).makespan == 0.0

    def test_empty_chain_does_not_charge_sync(self):
        dag = TaskDag(
            kind="grouped",
            chains=(
                (),
                (SliceTask(chain=1, index=0, channels=(0,), cost=2.0),),
            ),
            sync_overhead=0.5,
        )
        assert simulate(dag, 2).makespan == 2.5

    def test_rejects_zero_workers(self):
        dag = build_grouped_dag(unit_plan(1, 1), UNIT)
        with pytest.raises(ValueError, match="workers"):
            simulate(dag, 0)


class TestScheduleInvariants:
    def fuzz_case(self, rng):
        chains = [
            [round(float(rng.uniform(0.1, 5.0)), 3)
             for _ in range(int(rng.integers(1, 11)))]
            for _ in range(int(rng.integers(1, 9)))
        ]
        sync = round(float(rng.uniform(0.0, 2.0)), 3)
        return chains, sync

    def test_matches_independent_event_simulator(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            chains, sync = self.fuzz_case(rng)
            workers = int(rng.integers(1, 10))
            dag = dag_from_costs(chains, sync)
            got = simulate(dag, workers).makespan
            want = schedule_oracle(chains, workers, sync)
            assert got == pytest.approx(want, rel=1e-12)

    def test_more_workers_never_hurt(self):
        rng = np.random.default_rng(43)
        for _ in range(200):
            chains, sync = self.fuzz_case(rng)
            dag = dag_from_costs(chains, sync)
            spans = [simulate(dag, p).makespan for p in range(1, 7)]
            for slower, faster in zip(spans, spans[1:]):
                assert faster <= slower + 1e-9

    def test_makespan_respects_lower_bounds(self):
        rng = np.random.default_rng(44)
        for _ in range(200):
            chains, sync = self.fuzz_case(rng)
            workers = int(rng.integers(1, 7))
            dag = dag_from_costs(chains, sync)
            span = simulate(dag, workers).makespan
            assert span + 1e-9 >= dag.critical_path
            assert span + 1e-9 >= dag.total_work / workers + sync

    def test_workers_never_overlap_and_chains_stay_serial(self):
        rng = np.random.default_rng(45)
        chains, sync = self.fuzz_case(rng)
        dag = dag_from_costs(chains, sync)
        report = simulate(dag, 3)
        by_worker = {}
        for rec in report.records:
            assert 0 <= rec.worker < 3
            assert rec.end == pytest.approx(rec.start + rec.task.cost)
            by_worker.setdefault(rec.worker, []).append(rec)
        for recs in by_worker.values():
            recs.sort(key=lambda r: r.start)
            for a, b in zip(recs, recs[1:]):
                assert b.start + 1e-12 >= a.end
        by_chain = {}
        for rec in report.records:
            by_chain.setdefault(rec.task.chain, []).append(rec)
        for recs in by_chain.values():
            recs.sort(key=lambda r: r.task.index)
            assert [r.task.index for r in recs] == list(range(len(recs)))
            for a, b in zip(recs, recs[1:]):
                assert b.start + 1e-12 >= a.end

    def test_report_utilization_and_speedup(self):
        dag = build_grouped_dag(unit_plan(4, 3), UNIT)
        report = simulate(dag, 4)
        assert report.makespan == 3.0
        assert report.total_work == 12.0
        assert report.speedup_vs_flat_serial == pytest.approx(4.0)
        assert report.utilization == pytest.approx(1.0)
        solo = simulate(dag, 1)
        assert solo.utilization == pytest.approx(1.0)
        assert solo.speedup_vs_flat_serial == pytest.approx(1.0)


class TestCompareStrategies:
    def test_grouped_beats_flat_with_enough_workers(self):
        plan = unit_plan(groups=4, slices=6)
        costs = CostModel(base_cost=1.0, per_channel_cost=0.25,
                          sync_overhead=0.3)
        rows = compare_strategies(plan, costs, [1, 2, 4, 8])
        assert [r.workers for r in rows] == [1, 2, 4, 8]
        flat_span = rows[0].flat_makespan
        # Flat is serial: worker count changes nothing.
        assert all(r.flat_makespan == flat_span for r in rows)
        # With P >= G every group runs in parallel.
        per_chain = 6 * costs.task_cost(1) + 0.3
        assert rows[2].grouped_makespan == pytest.approx(per_chain)
        assert rows[3].speedup_grouped_vs_flat == pytest.approx(
            flat_span / per_chain
        )
        assert rows[3].speedup_grouped_vs_flat > 2.0
        # More workers never slow the grouped schedule down.
        spans = [r.grouped_makespan for r in rows]
        assert spans == sorted(spans, reverse=True)

    def test_single_worker_ratio_reflects_sync_cost_only(self):
        plan = unit_plan(groups=3, slices=4)
        costs = CostModel(base_cost=1.0, per_channel_cost=0.0,
                          sync_overhead=0.5)
        rows = compare_strategies(plan, costs, [1])
        # Same work on one worker; grouped pays the last chain's sync.
        assert rows[0].grouped_makespan == pytest.approx(12.5)
        assert rows[0].flat_makespan == pytest.approx(12.0)
        assert rows[0].speedup_grouped_vs_flat < 1.0
