"""Task orderings for the first scheduling stage.

Three policies: bottom level (BL), bottom level with the largest incoming
communication added (BLC), and a low-peak-memory traversal (MM).
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass
from functools import lru_cache

from .workflow import Workflow, WorkflowError, is_topological

EXACT_THRESHOLD = 10


class RankPolicy(str, enum.Enum):
    BL = "BL"
    BLC = "BLC"
    MM = "MM"


@dataclass(frozen=True)
class RankTable:
    rank: tuple
    order: tuple[int, ...]


def _priority_order(w: Workflow, rank) -> tuple[int, ...]:
    # Highest rank among ready tasks first, ties by id. Equal to a plain
    # sort when ranks strictly decrease along edges, and topological always.
    indeg = [len(p) for p in w.parents]
    heap = [(-rank[u], u) for u in range(len(w)) if indeg[u] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, u = heapq.heappop(heap)
        order.append(u)
        for c in w.children[u]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, (-rank[c], c))
    return tuple(order)


def bottom_level(w: Workflow) -> RankTable:
    bl = [0] * len(w)
    size = w.edge_size
    for u in reversed(w.topo_order):
        best = 0
        for v in w.children[u]:
            cand = size[(u, v)] + bl[v]
            if cand > best:
                best = cand
        bl[u] = w.tasks[u].work + best
    return RankTable(tuple(bl), _priority_order(w, bl))


def bottom_level_comm(w: Workflow) -> RankTable:
    blc = [0] * len(w)
    size = w.edge_size
    for u in reversed(w.topo_order):
        down = max((size[(u, v)] + blc[v] for v in w.children[u]), default=0)
        up = max((size[(p, u)] for p in w.parents[u]), default=0)
        blc[u] = w.tasks[u].work + down + up
    return RankTable(tuple(blc), _priority_order(w, blc))


def sequential_peak(w: Workflow, order) -> int:
    """Peak memory of running ``order`` on one unbounded processor.

    While ``u`` runs, memory holds every produced-but-unconsumed file
    (including u's inputs), u's own memory and u's outputs.
    """
    if not is_topological(w, order):
        raise WorkflowError("order is not a topological order of the workflow")
    resident = 0
    peak = 0
    for u in order:
        out = w.out_size(u)
        usage = resident + w.tasks[u].mem + out
        if usage > peak:
            peak = usage
        resident += out - w.in_size(u)
    return peak


def _exact_min_peak(w: Workflow) -> tuple[int, tuple[int, ...]]:
    n = len(w)
    mem = [t.mem for t in w.tasks]
    out = [w.out_size(u) for u in range(n)]
    inp = [w.in_size(u) for u in range(n)]
    need = [sum(1 << p for p in w.parents[u]) for u in range(n)]
    full = (1 << n) - 1

    # The resident set is a function of the done set, so the best
    # completion from a done set can be memoised.
    @lru_cache(maxsize=None)
    def best(done: int, resident: int):
        if done == full:
            return 0, ()
        best_peak, best_tail = None, None
        for u in range(n):
            bit = 1 << u
            if done & bit or (need[u] & done) != need[u]:
                continue
            usage = resident + mem[u] + out[u]
            if best_peak is not None and usage >= best_peak:
                continue
            sub_peak, sub_tail = best(done | bit, resident + out[u] - inp[u])
            peak = max(usage, sub_peak)
            if best_peak is None or peak < best_peak:
                best_peak, best_tail = peak, (u,) + sub_tail
        return best_peak, best_tail

    peak, order = best(0, 0)
    return peak, order


def _greedy_min_memory(w: Workflow, tiebreak_rank) -> tuple[int, ...]:
    # Resident memory is common to every ready task, so ranking by the
    # task's own footprint, then by its net change of the resident set,
    # is a static key.
    n = len(w)
    key = []
    for u in range(n):
        out = w.out_size(u)
        key.append((w.tasks[u].mem + out, out - w.in_size(u), -tiebreak_rank[u], u))
    indeg = [len(p) for p in w.parents]
    heap = [key[u] for u in range(n) if indeg[u] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)[-1]
        order.append(u)
        for c in w.children[u]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, key[c])
    return tuple(order)


def min_memory_order(w: Workflow, mode: str = "auto", threshold: int = EXACT_THRESHOLD) -> RankTable:
    """Topological order with low sequential peak memory.

    ``exact`` returns a peak-optimal order (ties resolved towards smaller
    task ids) and refuses workflows above ``threshold`` tasks.
    ``heuristic`` runs a greedy traversal and keeps it only when its peak
    does not exceed the bottom-level order's. ``auto`` picks exact for
    small workflows.
    """
    n = len(w)
    if mode == "auto":
        mode = "exact" if n <= threshold else "heuristic"
    if mode == "exact":
        if n > threshold:
            raise ValueError(f"exact min-memory order limited to {threshold} tasks, got {n}")
        _, order = _exact_min_peak(w)
    elif mode == "heuristic":
        bl = bottom_level(w)
        order = _greedy_min_memory(w, bl.rank)
        if sequential_peak(w, order) > sequential_peak(w, bl.order):
            order = bl.order
    else:
        raise ValueError(f"unknown mode {mode!r}")
    rank = [0] * n
    for pos, u in enumerate(order):
        rank[u] = n - pos
    return RankTable(tuple(rank), tuple(order))


def rank_tasks(w: Workflow, policy: RankPolicy | str, mm_mode: str = "auto") -> RankTable:
    policy = RankPolicy(policy)
    if policy is RankPolicy.BL:
        return bottom_level(w)
    if policy is RankPolicy.BLC:
        return bottom_level_comm(w)
    return min_memory_order(w, mm_mode)
