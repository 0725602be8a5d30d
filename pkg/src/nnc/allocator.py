"""Static buffer-pool planning for layer outputs.

Greedy first-fit over topological order: a node's output goes to the
lowest-index pool that holds neither one of the node's inputs nor any
buffer still awaiting a consumer; otherwise a new pool opens. A buffer
with several consumers stays live until the last of them (in topological
order) has executed. Pools are sized to their largest assigned buffer;
no packing beyond that is attempted, so total RAM is not minimal.

The Input node's data lives in the caller's buffer and takes no pool.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ir
from .ir import Graph, Shape


@dataclass(frozen=True)
class AllocationPlan:
    assignment: dict[str, int]
    pool_sizes: list[int]

    @property
    def pool_count(self) -> int:
        return len(self.pool_sizes)

    def as_dict(self) -> dict:
        return {"assignment": dict(self.assignment), "pool_sizes": list(self.pool_sizes)}


def plan_buffers(graph: Graph, shapes: dict[str, Shape]) -> AllocationPlan:
    order = ir.topo_order(graph)
    position = {node_id: i for i, node_id in enumerate(order)}
    users = ir.consumers(graph)
    last_use = {
        node_id: max((position[c] for c in users[node_id]), default=position[node_id])
        for node_id in graph.nodes
    }

    assignment: dict[str, int] = {}
    pool_sizes: list[int] = []
    for node_id in order:
        node = graph.nodes[node_id]
        if node.kind == "Input":
            continue
        forbidden = set()
        for src in node.inputs:
            if src in assignment:
                forbidden.add(assignment[src])
        for other, pool in assignment.items():
            if last_use[other] > position[node_id]:
                forbidden.add(pool)
        pool = next(p for p in range(len(pool_sizes) + 1) if p not in forbidden)
        if pool == len(pool_sizes):
            pool_sizes.append(0)
        assignment[node_id] = pool
        pool_sizes[pool] = max(pool_sizes[pool], shapes[node_id].size)
    return AllocationPlan(assignment=assignment, pool_sizes=pool_sizes)


def ram_bytes(plan: AllocationPlan, width) -> int:
    """Total scratch bytes: pool elements times the container size."""
    if width == "float":
        unit = 4
    elif width <= 8:
        unit = 1
    else:
        unit = 2
    return sum(plan.pool_sizes) * unit
