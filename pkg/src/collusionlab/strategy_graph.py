"""Transition graph of a pair of greedy policies over all joint price states.

Every node has exactly one successor, so the graph is a functional graph:
each weakly connected component drains into a single terminal cycle. Nodes on
a one-cycle are stable end-nodes, nodes on longer cycles are unstable
end-nodes, everything else is transient.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass

import numpy as np

from .environment import ObservationMode, successor_map
from .errors import InvalidAssignmentError


class NodeClass(str, enum.Enum):
    STABLE_END = "stable_end"
    UNSTABLE_END = "unstable_end"
    TRANSIENT = "transient"


@dataclass
class StrategyGraph:
    m: int
    successor: np.ndarray
    node_class: list[NodeClass]
    cycles: list[tuple[int, ...]]
    component: np.ndarray
    basin_sizes: list[int]

    @property
    def n_nodes(self) -> int:
        return self.successor.size

    @classmethod
    def from_successor(cls, successor, m: int) -> "StrategyGraph":
        succ = np.asarray(successor, dtype=np.int64)
        n = succ.size
        if n != m * m or np.any(succ < 0) or np.any(succ >= n):
            raise ValueError("successor must map each of the m*m states into range")
        # 0 unvisited, 1 on the current walk, 2 resolved
        status = np.zeros(n, dtype=np.int8)
        component = np.full(n, -1, dtype=np.int64)
        on_cycle = np.zeros(n, dtype=bool)
        cycles: list[tuple[int, ...]] = []
        for start in range(n):
            path = []
            x = start
            while status[x] == 0:
                status[x] = 1
                path.append(x)
                x = int(succ[x])
            if status[x] == 1:
                cycle = tuple(path[path.index(x):])
                on_cycle[list(cycle)] = True
                cycles.append(cycle)
                label = len(cycles) - 1
            else:
                label = int(component[x])
            component[path] = label
            status[path] = 2
        classes = []
        for s in range(n):
            if not on_cycle[s]:
                classes.append(NodeClass.TRANSIENT)
            elif len(cycles[component[s]]) == 1:
                classes.append(NodeClass.STABLE_END)
            else:
                classes.append(NodeClass.UNSTABLE_END)
        basins = np.bincount(component, minlength=len(cycles)).tolist()
        return cls(m, succ, classes, cycles, component, basins)

    def to_node_csv(self) -> str:
        buf = io.StringIO()
        buf.write("node,price_1,price_2,successor,class,component\n")
        for s in range(self.n_nodes):
            buf.write(f"{s},{s // self.m},{s % self.m},{self.successor[s]},"
                      f"{self.node_class[s].value},{self.component[s]}\n")
        return buf.getvalue()

    def to_dot(self, name: str = "strategies") -> str:
        colors = {NodeClass.STABLE_END: "blue", NodeClass.UNSTABLE_END: "green",
                  NodeClass.TRANSIENT: "gray"}
        lines = [f'digraph "{name}" {{']
        for s in range(self.n_nodes):
            lines.append(f'  {s} [label="{s // self.m},{s % self.m}", '
                         f'color={colors[self.node_class[s]]}];')
        lines.extend(f"  {s} -> {self.successor[s]};" for s in range(self.n_nodes))
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_strategy_graph(policy_1, policy_2) -> StrategyGraph:
    """Graph of joint greedy play for two policy dumps (lowest-index tie-break)."""
    if policy_1.context.mode != policy_2.context.mode:
        raise InvalidAssignmentError("policies use different observation modes")
    if tuple(policy_1.grid_prices) != tuple(policy_2.grid_prices):
        raise InvalidAssignmentError("policies were trained on different price grids")
    m = len(policy_1.grid_prices)
    succ = successor_map(policy_1.greedy, policy_2.greedy, policy_1.context.mode, m)
    return StrategyGraph.from_successor(succ, m)


def graph_from_greedy(greedy_1, greedy_2, mode: ObservationMode, m: int) -> StrategyGraph:
    return StrategyGraph.from_successor(successor_map(greedy_1, greedy_2, mode, m), m)


@dataclass(frozen=True)
class GraphStats:
    n_nodes: int
    n_stable_end: int
    n_unstable_end: int
    cycle_lengths: tuple[int, ...]
    basin_sizes: tuple[int, ...]
    unique_terminal: bool
    limit_absorbing: bool | None


def graph_stats(graph: StrategyGraph, limit_state: int | None = None) -> GraphStats:
    """Summary counts; ``limit_absorbing`` says whether every state drains into
    the component containing ``limit_state`` (None when no state is given)."""
    classes = graph.node_class
    absorbing = None
    if limit_state is not None:
        absorbing = bool(np.all(graph.component == graph.component[limit_state]))
    return GraphStats(
        graph.n_nodes,
        sum(c is NodeClass.STABLE_END for c in classes),
        sum(c is NodeClass.UNSTABLE_END for c in classes),
        tuple(len(c) for c in graph.cycles),
        tuple(graph.basin_sizes),
        len(graph.cycles) == 1,
        absorbing,
    )
