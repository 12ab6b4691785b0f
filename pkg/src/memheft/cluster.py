"""Heterogeneous clusters: processor speed, memory and communication buffer."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

GB = 10**9
DEFAULT_BANDWIDTH = 1e9  # bytes/s
BUFFER_FACTOR = 10

# (name, speed in 1e9 ops/s, memory in GB) for the default cluster.
REFERENCE_KINDS = (
    ("local", 4, 16),
    ("A1", 32, 32),
    ("A2", 6, 64),
    ("N1", 12, 16),
    ("N2", 8, 8),
    ("C2", 32, 192),
)


class ClusterError(ValueError):
    pass


@dataclass(frozen=True)
class Processor:
    id: int
    name: str
    speed: float
    memory: int
    buffer: int

    def __post_init__(self):
        if not self.speed > 0:
            raise ClusterError(f"processor {self.name}: speed must be positive")
        if self.memory <= 0:
            raise ClusterError(f"processor {self.name}: memory must be positive")
        if self.buffer < 0:
            raise ClusterError(f"processor {self.name}: buffer must be non-negative")


@dataclass(frozen=True)
class Cluster:
    processors: tuple[Processor, ...]
    bandwidth: float = DEFAULT_BANDWIDTH

    def __post_init__(self):
        object.__setattr__(self, "processors", tuple(self.processors))
        if not self.processors:
            raise ClusterError("cluster needs at least one processor")
        if not self.bandwidth > 0:
            raise ClusterError("bandwidth must be positive")
        for i, p in enumerate(self.processors):
            if p.id != i:
                raise ClusterError("processor ids must be dense and in order")

    def __len__(self):
        return len(self.processors)

    @property
    def speeds(self):
        return [p.speed for p in self.processors]

    @property
    def memories(self):
        return [p.memory for p in self.processors]

    def to_dict(self) -> dict:
        return {
            "bandwidth": self.bandwidth,
            "processors": [
                {"name": p.name, "speed": p.speed, "memory": p.memory, "buffer": p.buffer}
                for p in self.processors
            ],
        }


def cluster_from_dict(data: dict) -> Cluster:
    try:
        procs = [
            Processor(
                i,
                str(p.get("name", f"p{i}")),
                float(p["speed"]),
                int(p["memory"]),
                int(p["buffer"]) if p.get("buffer") is not None else BUFFER_FACTOR * int(p["memory"]),
            )
            for i, p in enumerate(data["processors"])
        ]
        bandwidth = float(data.get("bandwidth", DEFAULT_BANDWIDTH))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ClusterError):
            raise
        raise ClusterError(f"malformed cluster description: {exc}") from exc
    return Cluster(tuple(procs), bandwidth)


def parse_cluster(path) -> Cluster:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ClusterError(f"{path}: {exc}") from exc
    return cluster_from_dict(data)


def reference_cluster(kind: str = "default", replication: int = 12, bandwidth: float = DEFAULT_BANDWIDTH) -> Cluster:
    """The six-machine reference cluster, ``replication`` nodes of each machine kind.

    ``mem_constrained`` keeps the speeds and divides every memory by ten.
    Processors are numbered kind by kind.
    """
    if kind not in ("default", "mem_constrained"):
        raise ClusterError(f"unknown reference cluster {kind!r}")
    if replication < 1:
        raise ClusterError("replication must be >= 1")
    procs = []
    for name, speed, mem_gb in REFERENCE_KINDS:
        memory = mem_gb * GB if kind == "default" else mem_gb * GB // 10
        for r in range(replication):
            procs.append(
                Processor(len(procs), f"{name}-{r}", float(speed * 10**9), memory, BUFFER_FACTOR * memory)
            )
    return Cluster(tuple(procs), bandwidth)
