"""Deterministic simulator for slice-parallel entropy decode schedules.

Two DAG shapes are compared. The grouped shape has one serial chain per
channel group (its slices decode in order, but different groups are
independent) plus one chain for the bias/residual channels. The flat shape is
a single serial chain over the same total work, which is how a decoder
without the grouping plan must proceed.

Costs are affine in the number of channels a task touches. A fixed
synchronization overhead is charged once per chain in the grouped shape (the
cost of merging a group's slices back together); the flat shape pays none.
Scheduling is greedy list scheduling: ready tasks start as early as possible,
ties broken by (chain index, task index), workers by lowest id.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from .grouping import GroupingPlan


@dataclass(frozen=True)
class CostModel:
    base_cost: float = 1.0
    per_channel_cost: float = 0.25
    sync_overhead: float = 0.0

    def __post_init__(self) -> None:
        if self.base_cost < 0 or self.per_channel_cost < 0 or self.sync_overhead < 0:
            raise ValueError("cost components must be >= 0")
        if self.base_cost == 0 and self.per_channel_cost == 0:
            raise ValueError("cost model degenerates to zero-cost tasks")

    def task_cost(self, channel_count: int) -> float:
        return self.base_cost + self.per_channel_cost * channel_count


@dataclass(frozen=True)
class SliceTask:
    chain: int
    index: int            # position within the chain
    channels: tuple[int, ...]
    cost: float

    @property
    def label(self) -> str:
        return f"c{self.chain}.t{self.index}"


@dataclass(frozen=True)
class TaskDag:
    kind: str             # "grouped" | "flat"
    chains: tuple[tuple[SliceTask, ...], ...]
    sync_overhead: float  # charged at the end of every chain

    @property
    def task_count(self) -> int:
        return sum(len(c) for c in self.chains)

    @property
    def total_work(self) -> float:
        return sum(t.cost for c in self.chains for t in c)

    @property
    def critical_path(self) -> float:
        """Longest chain including its sync charge; a makespan lower bound."""
        if not self.chains:
            return 0.0
        return max(sum(t.cost for t in c) + self.sync_overhead for c in self.chains)


def build_grouped_dag(plan: GroupingPlan, costs: CostModel) -> TaskDag:
    """One chain per group (a task per slice) plus a bias/residual chain."""
    chains = []
    for slices in plan.groups:
        tasks = tuple(
            SliceTask(
                chain=len(chains),
                index=i,
                channels=tuple(sl),
                cost=costs.task_cost(len(sl)),
            )
            for i, sl in enumerate(slices)
        )
        chains.append(tasks)
    tail = plan.permutation[plan.grouped_channel_count :]
    if tail:
        chains.append(
            (
                SliceTask(
                    chain=len(chains),
                    index=0,
                    channels=tuple(tail),
                    cost=costs.task_cost(len(tail)),
                ),
            )
        )
    return TaskDag(
        kind="grouped", chains=tuple(chains), sync_overhead=costs.sync_overhead
    )


def build_flat_dag(
    plan: GroupingPlan, costs: CostModel, task_count: int | None = None
) -> TaskDag:
    """A single serial chain over all channels.

    The channel set is split into task_count contiguous runs of near-equal
    size (defaults to the grouped DAG's task count, making total work match
    it exactly). Serial dependencies mean extra workers cannot help.
    """
    channels = plan.permutation
    if task_count is None:
        task_count = sum(len(g) for g in plan.groups) + (
            1 if len(channels) > plan.grouped_channel_count else 0
        )
    if task_count < 1:
        raise ValueError("task_count must be >= 1")
    task_count = min(task_count, len(channels))
    n = len(channels)
    sizes = [n // task_count + (1 if i < n % task_count else 0) for i in range(task_count)]
    tasks = []
    at = 0
    for i, size in enumerate(sizes):
        tasks.append(
            SliceTask(
                chain=0,
                index=i,
                channels=tuple(channels[at : at + size]),
                cost=costs.task_cost(size),
            )
        )
        at += size
    return TaskDag(kind="flat", chains=(tuple(tasks),), sync_overhead=0.0)


@dataclass(frozen=True)
class ScheduledTask:
    task: SliceTask
    worker: int
    start: float
    end: float


@dataclass(frozen=True)
class ScheduleReport:
    kind: str
    workers: int
    makespan: float
    total_work: float
    critical_path: float
    records: tuple[ScheduledTask, ...]

    @property
    def speedup_vs_flat_serial(self) -> float:
        """Speedup against running every task back to back on one worker."""
        return self.total_work / self.makespan if self.makespan > 0 else float("inf")

    @property
    def utilization(self) -> float:
        denom = self.workers * self.makespan
        return self.total_work / denom if denom > 0 else 1.0


def simulate(dag: TaskDag, workers: int) -> ScheduleReport:
    """Greedy list scheduling of the DAG on the given worker count."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    chains = dag.chains
    next_idx = [0] * len(chains)
    ready_at = [0.0] * len(chains)
    free = [(0.0, w) for w in range(workers)]
    heapq.heapify(free)
    records = []
    remaining = dag.task_count
    while remaining:
        free_time, _ = free[0]
        # Earliest possible start over all chains with work left, ties by
        # chain index. A chain not ready yet can still be the best choice.
        best = None
        best_start = None
        for c in range(len(chains)):
            if next_idx[c] >= len(chains[c]):
                continue
            start = max(ready_at[c], free_time)
            if best_start is None or start < best_start:
                best = c
                best_start = start
        assert best is not None
        free_time, worker = heapq.heappop(free)
        task = chains[best][next_idx[best]]
        start = max(ready_at[best], free_time)
        end = start + task.cost
        records.append(ScheduledTask(task=task, worker=worker, start=start, end=end))
        next_idx[best] += 1
        ready_at[best] = end
        heapq.heappush(free, (end, worker))
        remaining -= 1

    chain_ends = [0.0] * len(chains)
    for rec in records:
        chain_ends[rec.task.chain] = max(chain_ends[rec.task.chain], rec.end)
    makespan = max(
        (e + dag.sync_overhead for e, c in zip(chain_ends, chains) if c),
        default=0.0,
    )

    lower = dag.critical_path
    if dag.chains:
        # Even perfectly packed, the last-finishing chain still pays its sync.
        lower = max(lower, dag.total_work / workers + dag.sync_overhead)
    if makespan + 1e-9 < lower:
        raise RuntimeError(
            f"scheduler produced an impossible makespan {makespan} < bound {lower}"
        )
    return ScheduleReport(
        kind=dag.kind,
        workers=workers,
        makespan=makespan,
        total_work=dag.total_work,
        critical_path=dag.critical_path,
        records=tuple(records),
    )


@dataclass(frozen=True)
class StrategyRow:
    workers: int
    grouped_makespan: float
    flat_makespan: float
    grouped_speedup_vs_serial: float
    speedup_grouped_vs_flat: float


def compare_strategies(
    plan: GroupingPlan, costs: CostModel, worker_counts: list[int]
) -> list[StrategyRow]:
    """Grouped vs flat makespans over worker counts. Total work matches by
    construction, so the ratios isolate the scheduling effect."""
    grouped = build_grouped_dag(plan, costs)
    flat = build_flat_dag(plan, costs)
    rows = []
    for p in worker_counts:
        g = simulate(grouped, p)
        f = simulate(flat, p)
        rows.append(
            StrategyRow(
                workers=p,
                grouped_makespan=g.makespan,
                flat_makespan=f.makespan,
                grouped_speedup_vs_serial=g.speedup_vs_flat_serial,
                speedup_grouped_vs_flat=(
                    f.makespan / g.makespan if g.makespan > 0 else float("inf")
                ),
            )
        )
    return rows
