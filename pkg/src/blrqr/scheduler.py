"""Execution engines: sequential loops, fork-join parallel loops, and a
priority-driven task-DAG pool for the tiled algorithm.

The DAG is derived from per-task read/write sets over grid cells and
reflector slots, walked in sequential order: each task depends on the last
writer of every cell it touches and on the readers preceding a write.  Any
schedule respecting those edges reproduces the sequential result bit for
bit, because tasks write disjoint cells and accumulate internally in a fixed
order.  Priorities are static per task kind (diagonal QR first, then update
QR, then reflector applications) with lexicographic coordinate tie-breaks.
"""

from __future__ import annotations

import enum
import heapq
import os
import threading
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field

from .core import BlrMatrix
from .factorize import (
    BlockedState,
    FactorizationResult,
    MgsState,
    TiledState,
)
from .lowrank import ToleranceConfig

__all__ = [
    "TaskKind",
    "Task",
    "TaskDag",
    "build_tiled_dag",
    "execute_sequential",
    "execute_forkjoin",
    "execute_taskgraph",
    "resolve_threads",
    "ALGORITHMS",
]

ALGORITHMS = ("mgs", "blocked-hh", "tiled-hh")

THREADS_ENV = "BLRQR_THREADS"
DEBUG_CONFLICTS_ENV = "BLRQR_DEBUG_CONFLICTS"


def resolve_threads(requested: int | None) -> int:
    """Requested thread count, overridden by the BLRQR_THREADS variable."""
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return max(1, requested or 1)


def _debug_conflicts_enabled() -> bool:
    return os.environ.get(DEBUG_CONFLICTS_ENV, "") not in ("", "0")


class TaskKind(enum.Enum):
    DIAG_QR = "DiagQR"
    PANEL_QR = "PanelQR"
    UPDATE_QR = "UpdateQR"
    APPLY_BLOCK_REFLECTOR = "ApplyBlockReflector"
    APPLY_TRAP_REFLECTOR = "ApplyTrapReflector"
    APPLY_COLUMN_REFLECTOR = "ApplyColumnReflector"
    MGS_PROJECT = "MgsProject"
    MGS_UPDATE = "MgsUpdate"


# smaller rank runs first; trapezoidal/block applications share a tier
_PRIORITY_RANK = {
    TaskKind.DIAG_QR: 0,
    TaskKind.PANEL_QR: 0,
    TaskKind.UPDATE_QR: 1,
    TaskKind.APPLY_TRAP_REFLECTOR: 2,
    TaskKind.APPLY_BLOCK_REFLECTOR: 2,
    TaskKind.APPLY_COLUMN_REFLECTOR: 2,
    TaskKind.MGS_PROJECT: 1,
    TaskKind.MGS_UPDATE: 2,
}


@dataclass(frozen=True)
class Task:
    """One block kernel instance; unused coordinates are -1."""

    kind: TaskKind
    k: int = -1
    i: int = -1
    j: int = -1

    @property
    def priority(self) -> int:
        return _PRIORITY_RANK[self.kind]

    def sort_key(self) -> tuple[int, int, int, int]:
        return (self.priority, self.k, self.i, self.j)

    def __str__(self) -> str:
        coords = ",".join(str(c) for c in (self.k, self.i, self.j) if c >= 0)
        return f"{self.kind.value}({coords})"


Cell = tuple[str, int, int]


def _tiled_access(task: Task) -> tuple[list[Cell], list[Cell]]:
    """(reads, writes) cell sets for one tiled task.

    Cells: ("A", i, j) grid tiles, ("D", k, k) diagonal reflectors,
    ("U", i, k) update reflectors.
    """
    k, i, j = task.k, task.i, task.j
    if task.kind is TaskKind.DIAG_QR:
        return [("A", k, k)], [("A", k, k), ("D", k, k)]
    if task.kind is TaskKind.APPLY_BLOCK_REFLECTOR:
        return [("D", k, k), ("A", k, j)], [("A", k, j)]
    if task.kind is TaskKind.UPDATE_QR:
        return [("A", k, k), ("A", i, k)], [("A", k, k), ("A", i, k), ("U", i, k)]
    if task.kind is TaskKind.APPLY_TRAP_REFLECTOR:
        return [("U", i, k), ("A", k, j), ("A", i, j)], [("A", k, j), ("A", i, j)]
    raise ValueError(f"not a tiled task: {task}")


def tiled_sequential_tasks(p: int, q: int) -> list[Task]:
    """Tiled kernel instances in canonical sweep order."""
    tasks: list[Task] = []
    for k in range(q):
        tasks.append(Task(TaskKind.DIAG_QR, k=k))
        for j in range(k + 1, q):
            tasks.append(Task(TaskKind.APPLY_BLOCK_REFLECTOR, k=k, j=j))
        for i in range(k + 1, p):
            tasks.append(Task(TaskKind.UPDATE_QR, k=k, i=i))
            for j in range(k + 1, q):
                tasks.append(Task(TaskKind.APPLY_TRAP_REFLECTOR, k=k, i=i, j=j))
    return tasks


@dataclass
class TaskDag:
    nodes: list[Task]
    edges: set[tuple[int, int]]
    successors: list[list[int]] = field(default_factory=list)
    indegree: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.successors:
            self.successors = [[] for _ in self.nodes]
            self.indegree = [0] * len(self.nodes)
            for u, v in sorted(self.edges):
                self.successors[u].append(v)
                self.indegree[v] += 1

    def edge_tasks(self) -> set[tuple[Task, Task]]:
        return {(self.nodes[u], self.nodes[v]) for u, v in self.edges}

    def topological_order(self) -> list[Task]:
        """One valid order (construction order is already topological)."""
        return list(self.nodes)

    def to_dot(self) -> str:
        lines = ["digraph blrqr {"]
        for node in self.nodes:
            lines.append(f'  "{node}" [label="{node}"];')
        for u, v in sorted(self.edges):
            lines.append(f'  "{self.nodes[u]}" -> "{self.nodes[v]}";')
        lines.append("}")
        return "\n".join(lines)


def build_tiled_dag(p: int, q: int) -> TaskDag:
    """Dependency DAG of the tiled factorization on a p x q grid.

    Edges come from read/write conflicts walked in sequential order, so any
    topological execution reproduces the sequential result.
    """
    if not 1 <= q <= p:
        raise ValueError("need p >= q >= 1")
    nodes = tiled_sequential_tasks(p, q)
    edges: set[tuple[int, int]] = set()
    last_writer: dict[Cell, int] = {}
    readers_since: dict[Cell, list[int]] = {}
    for idx, task in enumerate(nodes):
        reads, writes = _tiled_access(task)
        for cell in set(reads) | set(writes):
            w = last_writer.get(cell)
            if w is not None and w != idx:
                edges.add((w, idx))
        for cell in writes:
            for r in readers_since.get(cell, ()):
                if r != idx:
                    edges.add((r, idx))
        for cell in writes:
            last_writer[cell] = idx
            readers_since[cell] = []
        for cell in reads:
            if cell not in writes:
                readers_since.setdefault(cell, []).append(idx)
    return TaskDag(nodes, edges)


# ---------------------------------------------------------------------------
# task dispatch
# ---------------------------------------------------------------------------


def _run_tiled_task(state: TiledState, task: Task) -> None:
    if task.kind is TaskKind.DIAG_QR:
        state.diag_qr(task.k)
    elif task.kind is TaskKind.APPLY_BLOCK_REFLECTOR:
        state.apply_block_reflector(task.k, task.j)
    elif task.kind is TaskKind.UPDATE_QR:
        state.update_qr(task.k, task.i)
    elif task.kind is TaskKind.APPLY_TRAP_REFLECTOR:
        state.apply_trap_reflector(task.k, task.i, task.j)
    else:
        raise ValueError(f"not a tiled task: {task}")


class _ConflictTracker:
    """Debug-mode guard: no two in-flight tasks may touch a written cell."""

    def __init__(self):
        self._lock = threading.Lock()
        self._inflight: dict[Task, tuple[set[Cell], set[Cell]]] = {}

    def enter(self, task: Task) -> None:
        reads, writes = _tiled_access(task)
        rs, ws = set(reads), set(writes)
        with self._lock:
            for other, (ors, ows) in self._inflight.items():
                if ws & (ors | ows) or rs & ows:
                    raise RuntimeError(
                        f"write-set conflict: {task} overlaps running {other}"
                    )
            self._inflight[task] = (rs, ws)

    def exit(self, task: Task) -> None:
        with self._lock:
            self._inflight.pop(task, None)


# ---------------------------------------------------------------------------
# executors
# ---------------------------------------------------------------------------


def execute_sequential(
    algorithm: str, a: BlrMatrix, cfg: ToleranceConfig
) -> FactorizationResult:
    """Single-thread loop-order execution; the bitwise reference result."""
    if algorithm == "blocked-hh":
        state = BlockedState(a, cfg)
        for k in range(a.q):
            state.panel(k)
            for j in range(k + 1, a.q):
                state.apply_column(k, j)
        return state.result()
    if algorithm == "tiled-hh":
        state_t = TiledState(a, cfg)
        for task in tiled_sequential_tasks(a.p, a.q):
            _run_tiled_task(state_t, task)
        return state_t.result()
    if algorithm == "mgs":
        state_m = MgsState(a, cfg)
        for j in range(a.q):
            state_m.panel(j)
            for k in range(j + 1, a.q):
                state_m.project(j, k)
            for k in range(j + 1, a.q):
                for i in range(a.p):
                    state_m.update(j, i, k)
        return state_m.result()
    raise ValueError(f"unknown algorithm {algorithm!r}")


def _parallel_for(pool: ThreadPoolExecutor, fn, args_list) -> None:
    """Submit one task per argument tuple and barrier on completion."""
    futures = [pool.submit(fn, *args) for args in args_list]
    wait(futures)
    for fut in futures:
        fut.result()


def execute_forkjoin(
    algorithm: str, a: BlrMatrix, cfg: ToleranceConfig, threads: int
) -> FactorizationResult:
    """Fork-join execution: parallel loops over independent block updates,
    separated by full barriers; panel and diagonal kernels stay serial."""
    threads = max(1, threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        if algorithm == "blocked-hh":
            state = BlockedState(a, cfg)
            for k in range(a.q):
                state.panel(k)
                _parallel_for(
                    pool, state.apply_column, [(k, j) for j in range(k + 1, a.q)]
                )
            return state.result()
        if algorithm == "tiled-hh":
            state_t = TiledState(a, cfg)
            for k in range(a.q):
                state_t.diag_qr(k)
                _parallel_for(
                    pool,
                    state_t.apply_block_reflector,
                    [(k, j) for j in range(k + 1, a.q)],
                )
                for i in range(k + 1, a.p):
                    state_t.update_qr(k, i)
                    _parallel_for(
                        pool,
                        state_t.apply_trap_reflector,
                        [(k, i, j) for j in range(k + 1, a.q)],
                    )
            return state_t.result()
        if algorithm == "mgs":
            state_m = MgsState(a, cfg)
            for j in range(a.q):
                state_m.panel(j)
                _parallel_for(
                    pool, state_m.project, [(j, k) for k in range(j + 1, a.q)]
                )
                _parallel_for(
                    pool,
                    state_m.update,
                    [(j, i, k) for k in range(j + 1, a.q) for i in range(a.p)],
                )
            return state_m.result()
    raise ValueError(f"unknown algorithm {algorithm!r}")


def execute_taskgraph(
    dag: TaskDag, a: BlrMatrix, cfg: ToleranceConfig, threads: int
) -> FactorizationResult:
    """Worker pool over the tiled DAG: highest-priority ready task first.

    Aborts with a diagnostic if no task is ready while unexecuted tasks
    remain (a DAG construction bug), rather than hanging.
    """
    expected = tiled_sequential_tasks(a.p, a.q)
    if len(expected) != len(dag.nodes) or set(expected) != set(dag.nodes):
        raise ValueError("DAG does not match the operand's grid")
    threads = max(1, threads)
    state = TiledState(a, cfg)
    tracker = _ConflictTracker() if _debug_conflicts_enabled() else None

    cond = threading.Condition()
    indegree = list(dag.indegree)
    ready: list[tuple[int, int, int, int, int]] = []
    for idx, task in enumerate(dag.nodes):
        if indegree[idx] == 0:
            heapq.heappush(ready, (*task.sort_key(), idx))
    done = 0
    running = 0
    total = len(dag.nodes)
    failure: list[BaseException] = []

    def worker() -> None:
        nonlocal done, running
        while True:
            with cond:
                while True:
                    if failure or done >= total:
                        return
                    if ready:
                        break
                    if running == 0:
                        failure.append(
                            RuntimeError(
                                f"scheduler deadlock: {total - done} tasks "
                                "unexecuted but none ready"
                            )
                        )
                        cond.notify_all()
                        return
                    cond.wait()
                entry = heapq.heappop(ready)
                idx = entry[-1]
                task = dag.nodes[idx]
                running += 1
            try:
                if tracker is not None:
                    tracker.enter(task)
                _run_tiled_task(state, task)
                if tracker is not None:
                    tracker.exit(task)
            except BaseException as exc:  # propagate to the caller
                with cond:
                    failure.append(exc)
                    running -= 1
                    cond.notify_all()
                return
            with cond:
                running -= 1
                done += 1
                for succ in dag.successors[idx]:
                    indegree[succ] -= 1
                    if indegree[succ] == 0:
                        heapq.heappush(
                            ready, (*dag.nodes[succ].sort_key(), succ)
                        )
                cond.notify_all()

    workers = [threading.Thread(target=worker) for _ in range(threads)]
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    if failure:
        raise failure[0]
    if done != total:
        raise RuntimeError(f"scheduler stopped after {done}/{total} tasks")
    return state.result()
