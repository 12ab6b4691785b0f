"""Workflow DAGs: tasks with work/memory weights and sized edge files.

Weights are non-negative integers (operations and bytes). Parents and
children are always derived from the edge list.
"""

from __future__ import annotations

import csv
import heapq
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Weights used when a task or edge carries no measurement.
DEFAULT_WORK = 1
DEFAULT_MEM = 50 * 10**6
DEFAULT_EDGE_SIZE = 10**3

DEFAULT_WEIGHT_RANGES = {
    "work": (10**9, 10**11),
    "mem": (10**8, 4 * 10**9),
    "edge": (10**6, 10**9),
}


class WorkflowError(ValueError):
    pass


class ParseError(WorkflowError):
    pass


class CycleError(WorkflowError):
    pass


class DuplicateIdError(WorkflowError):
    pass


@dataclass(frozen=True)
class Task:
    id: int
    name: str
    work: int
    mem: int


@dataclass(frozen=True)
class EdgeFile:
    src: int
    dst: int
    size: int


@dataclass(frozen=True, eq=False)
class Workflow:
    """A validated DAG of tasks.

    ``tasks[i].id == i`` always holds. Edges are stored sorted by
    ``(src, dst)``; duplicates are merged by summing their sizes.
    """

    tasks: tuple[Task, ...]
    edges: tuple[EdgeFile, ...]
    parents: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    children: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    edge_size: dict[tuple[int, int], int] = field(init=False, repr=False)
    topo_order: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        tasks = tuple(self.tasks)
        n = len(tasks)
        for i, t in enumerate(tasks):
            if t.id != i:
                raise WorkflowError(f"task ids must be dense 0..{n - 1}, got {t.id} at position {i}")
            if t.work < 0 or t.mem < 0:
                raise WorkflowError(f"task {t.id} has negative weight")
        sizes: dict[tuple[int, int], int] = {}
        for e in self.edges:
            if not (0 <= e.src < n and 0 <= e.dst < n):
                raise WorkflowError(f"edge {e.src}->{e.dst} references an unknown task")
            if e.src == e.dst:
                raise CycleError(f"self-loop on task {e.src}")
            if e.size < 0:
                raise WorkflowError(f"edge {e.src}->{e.dst} has negative size")
            key = (e.src, e.dst)
            sizes[key] = sizes.get(key, 0) + e.size
        edges = tuple(EdgeFile(s, d, sizes[(s, d)]) for s, d in sorted(sizes))
        parents: list[list[int]] = [[] for _ in range(n)]
        children: list[list[int]] = [[] for _ in range(n)]
        for e in edges:
            children[e.src].append(e.dst)
            parents[e.dst].append(e.src)
        parents_t = tuple(tuple(sorted(p)) for p in parents)
        children_t = tuple(tuple(c) for c in children)
        object.__setattr__(self, "tasks", tasks)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "parents", parents_t)
        object.__setattr__(self, "children", children_t)
        object.__setattr__(self, "edge_size", sizes)
        object.__setattr__(self, "topo_order", _topological_sort(n, parents_t, children_t))

    def __len__(self):
        return len(self.tasks)

    def __eq__(self, other):
        if not isinstance(other, Workflow):
            return NotImplemented
        return self.tasks == other.tasks and self.edges == other.edges

    def __hash__(self):
        return hash((self.tasks, self.edges))

    @property
    def work(self) -> list[int]:
        return [t.work for t in self.tasks]

    @property
    def mem(self) -> list[int]:
        return [t.mem for t in self.tasks]

    def in_size(self, u: int) -> int:
        return sum(self.edge_size[(p, u)] for p in self.parents[u])

    def out_size(self, u: int) -> int:
        return sum(self.edge_size[(u, c)] for c in self.children[u])

    def with_weights(self, work=None, mem=None, edges=None) -> "Workflow":
        """Copy with some weights replaced; arguments map task id / ``(src, dst)`` to values."""
        work = work or {}
        mem = mem or {}
        edges = edges or {}
        tasks = [
            Task(t.id, t.name, int(work.get(t.id, t.work)), int(mem.get(t.id, t.mem)))
            for t in self.tasks
        ]
        new_edges = [
            EdgeFile(e.src, e.dst, int(edges.get((e.src, e.dst), e.size))) for e in self.edges
        ]
        return Workflow(tuple(tasks), tuple(new_edges))

    def to_dict(self) -> dict:
        return {
            "tasks": [{"id": t.id, "name": t.name, "work": t.work, "mem": t.mem} for t in self.tasks],
            "edges": [{"src": e.src, "dst": e.dst, "size": e.size} for e in self.edges],
        }


def _topological_sort(n, parents, children) -> tuple[int, ...]:
    indeg = [len(p) for p in parents]
    heap = [u for u in range(n) if indeg[u] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for c in children[u]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(order) != n:
        stuck = sorted(u for u in range(n) if indeg[u] > 0)
        raise CycleError(f"workflow contains a cycle through tasks {stuck[:10]}")
    return tuple(order)


def is_topological(w: Workflow, order) -> bool:
    order = list(order)
    if sorted(order) != list(range(len(w))):
        return False
    pos = {u: i for i, u in enumerate(order)}
    return all(pos[e.src] < pos[e.dst] for e in w.edges)


def memory_requirement(w: Workflow, u: int) -> int:
    """Memory needed to run ``u`` alone: max of its own memory, total input, total output."""
    if not 0 <= u < len(w):
        raise WorkflowError(f"unknown task id {u}")
    return max(w.tasks[u].mem, w.in_size(u), w.out_size(u))


# -- JSON ---------------------------------------------------------------------


def workflow_from_dict(data: dict) -> Workflow:
    try:
        raw_tasks = data["tasks"]
        raw_edges = data.get("edges", [])
        by_id = {}
        for t in raw_tasks:
            tid = int(t["id"])
            if tid in by_id:
                raise DuplicateIdError(f"duplicate task id {tid}")
            by_id[tid] = Task(
                tid,
                str(t.get("name", tid)),
                int(t.get("work", DEFAULT_WORK)),
                int(t.get("mem", DEFAULT_MEM)),
            )
        edges = [
            EdgeFile(int(e["src"]), int(e["dst"]), int(e.get("size", DEFAULT_EDGE_SIZE)))
            for e in raw_edges
        ]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, WorkflowError):
            raise
        raise ParseError(f"malformed workflow JSON: {exc}") from exc
    if sorted(by_id) != list(range(len(by_id))):
        raise ParseError("task ids must be dense 0..n-1")
    return Workflow(tuple(by_id[i] for i in range(len(by_id))), tuple(edges))


def dump_workflow(w: Workflow, path) -> None:
    Path(path).write_text(json.dumps(w.to_dict(), indent=1) + "\n")


# -- DOT subset ---------------------------------------------------------------

_DOT_TOKEN = re.compile(
    r'"(?:\\.|[^"\\])*"'  # quoted id
    r"|->|--|[{}\[\];,=]"
    r"|[A-Za-z_0-9.\-+]+"
)

_DOT_PUNCT = frozenset(("->", "--", "{", "}", "[", "]", ";", ",", "="))


def _strip_dot_comments(text: str) -> str:
    text = re.sub(r"/\*.*?\*/", " ", text, flags=re.S)
    lines = []
    for line in text.splitlines():
        if line.lstrip().startswith("#"):
            continue
        # '//' outside of quotes
        out, in_q, i = [], False, 0
        while i < len(line):
            ch = line[i]
            if ch == '"' and (i == 0 or line[i - 1] != "\\"):
                in_q = not in_q
            if not in_q and line.startswith("//", i):
                break
            out.append(ch)
            i += 1
        lines.append("".join(out))
    return "\n".join(lines)


def _unquote(tok: str) -> str:
    if tok.startswith('"'):
        return tok[1:-1].replace('\\"', '"')
    return tok


def parse_dot(text: str) -> Workflow:
    """Parse a ``digraph`` with optional ``work``/``mem`` node and ``size`` edge attributes.

    Subgraphs, default-attribute statements (``node [...]``) and graph
    attributes are skipped. Chains ``a -> b -> c`` are supported.
    """
    toks = _DOT_TOKEN.findall(_strip_dot_comments(text))
    i = 0
    # header: [strict] digraph [name] {
    while i < len(toks) and toks[i] != "{":
        i += 1
    header = [t.lower() for t in toks[:i]]
    if "digraph" not in header or i == len(toks):
        raise ParseError("expected 'digraph ... {'")
    i += 1

    names: dict[str, int] = {}
    node_attrs: dict[str, dict] = {}
    edge_list: list[tuple[str, str, dict]] = []

    def node(name):
        if name not in names:
            names[name] = len(names)
            node_attrs[name] = {}
        return name

    def attr_list(j):
        attrs = {}
        while j < len(toks) and toks[j] == "[":
            j += 1
            while j < len(toks) and toks[j] != "]":
                if toks[j] in (",", ";"):
                    j += 1
                    continue
                key = _unquote(toks[j])
                if j + 2 < len(toks) and toks[j + 1] == "=":
                    attrs[key] = _unquote(toks[j + 2])
                    j += 3
                else:
                    j += 1
            if j == len(toks):
                raise ParseError("unterminated attribute list")
            j += 1
        return attrs, j

    depth = 1
    while i < len(toks):
        tok = toks[i]
        if tok == "}":
            depth -= 1
            i += 1
            if depth == 0:
                break
            continue
        if tok == "{":
            depth += 1
            i += 1
            continue
        if tok in (";", ","):
            i += 1
            continue
        low = tok.lower()
        if low in ("node", "edge", "graph") and i + 1 < len(toks) and toks[i + 1] == "[":
            _, i = attr_list(i + 1)
            continue
        if low == "subgraph":
            i += 1
            if i < len(toks) and toks[i] not in ("{",):
                i += 1
            continue
        if i + 1 < len(toks) and toks[i + 1] == "=":
            i += 3  # graph attribute a=b
            continue
        if tok in ("->", "--", "[", "]", "="):
            raise ParseError(f"unexpected token {tok!r}")
        chain = [node(_unquote(tok))]
        i += 1
        while i < len(toks) and toks[i] in ("->", "--"):
            if toks[i] == "--":
                raise ParseError("undirected edge in digraph")
            if i + 1 >= len(toks) or toks[i + 1] in _DOT_PUNCT:
                raise ParseError("dangling edge operator")
            chain.append(node(_unquote(toks[i + 1])))
            i += 2
        attrs, i = attr_list(i)
        if len(chain) == 1:
            node_attrs[chain[0]].update(attrs)
        else:
            for a, b in zip(chain, chain[1:]):
                edge_list.append((a, b, attrs))
    if depth != 0:
        raise ParseError("unbalanced braces")

    def as_int(value, what):
        try:
            return int(float(value))
        except ValueError as exc:
            raise ParseError(f"bad {what} value {value!r}") from exc

    tasks = []
    for name, idx in names.items():
        a = node_attrs[name]
        tasks.append(
            Task(
                idx,
                name,
                as_int(a["work"], "work") if "work" in a else DEFAULT_WORK,
                as_int(a["mem"], "mem") if "mem" in a else DEFAULT_MEM,
            )
        )
    edges = [
        EdgeFile(
            names[a], names[b], as_int(attrs["size"], "size") if "size" in attrs else DEFAULT_EDGE_SIZE
        )
        for a, b, attrs in edge_list
    ]
    return Workflow(tuple(tasks), tuple(edges))


def to_dot(w: Workflow) -> str:
    lines = ["digraph workflow {"]
    for t in w.tasks:
        lines.append(f'  "{t.name}" [work={t.work}, mem={t.mem}];')
    for e in w.edges:
        lines.append(f'  "{w.tasks[e.src].name}" -> "{w.tasks[e.dst].name}" [size={e.size}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def parse_workflow(path, format: str | None = None) -> Workflow:
    path = Path(path)
    if format is None:
        format = "dot" if path.suffix.lower() in (".dot", ".gv") else "json"
    text = path.read_text()
    if format == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        return workflow_from_dict(data)
    if format == "dot":
        return parse_dot(text)
    raise ValueError(f"unknown workflow format {format!r}")


def apply_weight_csv(w: Workflow, path) -> Workflow:
    """Overlay per-task weights from a CSV with columns task_name, work, mem, total_output_bytes.

    The output total is split evenly over the task's out-edges; the
    remainder goes to the lowest-numbered children so the total is kept.
    Tasks not listed keep their current weights.
    """
    by_name = {t.name: t.id for t in w.tasks}
    work, mem, sizes = {}, {}, {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"task_name", "work", "mem", "total_output_bytes"} - set(reader.fieldnames or ())
        if missing:
            raise ParseError(f"weight CSV lacks columns {sorted(missing)}")
        for row in reader:
            u = by_name.get(row["task_name"])
            if u is None:
                continue
            try:
                work[u] = int(float(row["work"]))
                mem[u] = int(float(row["mem"]))
                total = int(float(row["total_output_bytes"]))
            except ValueError as exc:
                raise ParseError(f"bad number in weight CSV row {row}") from exc
            kids = w.children[u]
            if kids:
                share, rest = divmod(total, len(kids))
                for k, c in enumerate(kids):
                    sizes[(u, c)] = share + (1 if k < rest else 0)
    return w.with_weights(work=work, mem=mem, edges=sizes)


# -- synthetic generation -------------------------------------------------------


def generate_synthetic(
    n_tasks: int,
    n_levels: int,
    fanout: int,
    weight_ranges: dict | None = None,
    seed: int = 0,
    extra_edge_prob: float = 0.3,
) -> Workflow:
    """Random layered DAG.

    Tasks are split evenly over ``n_levels`` levels. Every task below the
    first level gets one parent from an earlier level (the previous one
    when it has spare out-degree); extra forward edges are then added with
    probability ``extra_edge_prob`` per free out-slot. Out-degree never
    exceeds ``fanout``.
    """
    if n_tasks < 1 or n_levels < 1:
        raise WorkflowError("need n_tasks >= 1 and n_levels >= 1")
    if n_levels > n_tasks:
        raise WorkflowError("more levels than tasks")
    if n_levels > 1 and fanout < 1:
        raise WorkflowError("fanout 0 cannot connect more than one level")
    ranges = dict(DEFAULT_WEIGHT_RANGES)
    ranges.update(weight_ranges or {})
    for key, (lo, hi) in ranges.items():
        if lo < 0 or hi < lo:
            raise WorkflowError(f"bad range for {key}: {(lo, hi)}")
    rng = np.random.default_rng(seed)

    base, rem = divmod(n_tasks, n_levels)
    levels, start = [], 0
    for lv in range(n_levels):
        size = base + (1 if lv < rem else 0)
        levels.append(list(range(start, start + size)))
        start += size

    outdeg = [0] * n_tasks
    edges: set[tuple[int, int]] = set()
    for lv in range(1, n_levels):
        for v in levels[lv]:
            prev = [u for u in levels[lv - 1] if outdeg[u] < fanout]
            if not prev:
                prev = [u for l2 in levels[:lv] for u in l2 if outdeg[u] < fanout]
            if not prev:
                raise WorkflowError("fanout too small to connect all levels")
            u = prev[int(rng.integers(len(prev)))]
            edges.add((u, v))
            outdeg[u] += 1
    if extra_edge_prob > 0:
        for lv in range(n_levels - 1):
            later = [v for l2 in levels[lv + 1 : lv + 3] for v in l2]
            for u in levels[lv]:
                for _ in range(fanout - outdeg[u]):
                    if rng.random() >= extra_edge_prob:
                        continue
                    v = later[int(rng.integers(len(later)))]
                    if (u, v) not in edges:
                        edges.add((u, v))
                        outdeg[u] += 1

    def draw(key, count):
        lo, hi = ranges[key]
        return rng.integers(lo, hi, size=count, endpoint=True).tolist()

    works = draw("work", n_tasks)
    mems = draw("mem", n_tasks)
    edge_keys = sorted(edges)
    sizes = draw("edge", len(edge_keys))
    tasks = tuple(Task(i, f"t{i}", works[i], mems[i]) for i in range(n_tasks))
    return Workflow(tasks, tuple(EdgeFile(s, d, c) for (s, d), c in zip(edge_keys, sizes)))


# Lower/upper task counts of the reporting classes.
_SIZE_CLASSES = (("tiny", 0, 200), ("small", 1000, 8000), ("middle", 10000, 18000), ("big", 20000, 30000))


def size_class(w: Workflow | int) -> str:
    """Reporting label by task count; counts between classes go to the nearer one."""
    n = w if isinstance(w, int) else len(w)
    best, best_dist = None, None
    for name, lo, hi in _SIZE_CLASSES:
        dist = 0 if lo <= n <= hi else min(abs(n - lo), abs(n - hi))
        if best is None or dist < best_dist:
            best, best_dist = name, dist
    return best
