"""Random-walk filtration on a uniform time grid.

A symmetric walk with increments of +/- sqrt(dt) (probability 1/2 each)
approximates a one-dimensional Brownian motion. Nodes are atoms of the
filtration. Two layouts are supported:

* ``Recombining``: level ``i`` holds ``i + 1`` nodes, node ``(i, k)`` has
  walk value ``(2k - i) * sqrt(dt)``. Children of ``(i, k)`` are
  ``(i + 1, k + 1)`` (up) and ``(i + 1, k)`` (down).
* ``FullTree``: level ``i`` holds ``2**i`` nodes, one per path prefix. The
  bits of the index record the moves, so children of ``(i, k)`` are
  ``(i + 1, 2k + 1)`` (up) and ``(i + 1, 2k)`` (down). Every adapted
  stopping time is a stop-set on this layout.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .errors import InvalidNode, NonPositiveHorizon, TerminalNode, TreeTooDeep

MAX_TREE_DEPTH = 12


class Mode(str, enum.Enum):
    RECOMBINING = "Recombining"
    FULL_TREE = "FullTree"


class NodeId(NamedTuple):
    level: int
    index: int


@dataclass(frozen=True)
class Lattice:
    horizon: float
    steps: int
    mode: Mode
    _up: tuple = field(init=False, repr=False, compare=False)
    _down: tuple = field(init=False, repr=False, compare=False)
    _walk: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.horizon > 0:
            raise NonPositiveHorizon(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        if self.mode is Mode.FULL_TREE and self.steps > MAX_TREE_DEPTH:
            raise TreeTooDeep(
                f"full tree limited to N <= {MAX_TREE_DEPTH}, got N = {self.steps}"
            )
        up, down, walk = [], [], []
        for i in range(self.steps + 1):
            k = np.arange(self.level_size(i))
            if self.mode is Mode.RECOMBINING:
                net = 2 * k - i
                up.append(k + 1)
                down.append(k)
            else:
                ups = np.array([bin(j).count("1") for j in range(len(k))], dtype=int)
                net = 2 * ups - i
                up.append(2 * k + 1)
                down.append(2 * k)
            walk.append(net * self.increment)
            walk[-1].setflags(write=False)
        object.__setattr__(self, "_up", tuple(up[:-1]))
        object.__setattr__(self, "_down", tuple(down[:-1]))
        object.__setattr__(self, "_walk", tuple(walk))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def increment(self) -> float:
        return math.sqrt(self.dt)

    @property
    def root(self) -> NodeId:
        return NodeId(0, 0)

    def level_size(self, level: int) -> int:
        return level + 1 if self.mode is Mode.RECOMBINING else 2**level

    def time(self, level: int) -> float:
        return level * self.dt

    def walk(self, level: int) -> np.ndarray:
        """Walk values of every node at ``level`` (read-only array)."""
        return self._walk[level]

    def child_indices(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Index arrays into ``level + 1`` for the up and down children."""
        return self._up[level], self._down[level]

    @property
    def node_count(self) -> int:
        return sum(self.level_size(i) for i in range(self.steps + 1))

    @property
    def nonterminal_count(self) -> int:
        return self.node_count - self.level_size(self.steps)

    def nodes(self, level: int | None = None) -> Iterator[NodeId]:
        levels = range(self.steps + 1) if level is None else [level]
        for i in levels:
            for k in range(self.level_size(i)):
                yield NodeId(i, k)

    def check_node(self, node: NodeId) -> NodeId:
        level, index = node
        if not (0 <= level <= self.steps and 0 <= index < self.level_size(level)):
            raise InvalidNode(f"{tuple(node)} is not a node of this lattice")
        return NodeId(level, index)

    def children(self, node: NodeId) -> tuple[NodeId, NodeId]:
        level, index = self.check_node(node)
        if level == self.steps:
            raise TerminalNode(f"{tuple(node)} is terminal")
        return (
            NodeId(level + 1, int(self._up[level][index])),
            NodeId(level + 1, int(self._down[level][index])),
        )

    def parents(self, node: NodeId) -> list[NodeId]:
        level, index = self.check_node(node)
        if level == 0:
            return []
        if self.mode is Mode.FULL_TREE:
            return [NodeId(level - 1, index // 2)]
        return [NodeId(level - 1, j) for j in (index - 1, index) if 0 <= j < level]

    def walk_value(self, node: NodeId) -> float:
        level, index = self.check_node(node)
        return float(self._walk[level][index])


def build_lattice(T: float, N: int, mode: Mode | str = Mode.RECOMBINING) -> Lattice:
    return Lattice(float(T), int(N), Mode(mode))


def children(lat: Lattice, n: NodeId) -> tuple[NodeId, NodeId]:
    return lat.children(n)


def walk_value(lat: Lattice, n: NodeId) -> float:
    return lat.walk_value(n)


class AdaptedProcess:
    """A real value at every node, stored level by level."""

    def __init__(self, lattice: Lattice, values):
        values = [np.asarray(v, dtype=float) for v in values]
        if len(values) != lattice.steps + 1:
            raise ValueError("need one array per level")
        for i, v in enumerate(values):
            if v.shape != (lattice.level_size(i),):
                raise ValueError(f"level {i}: expected {lattice.level_size(i)} values")
        self.lattice = lattice
        self.values = values

    @classmethod
    def from_function(cls, lattice: Lattice, fn) -> "AdaptedProcess":
        """Evaluate ``fn(t, w)`` (vectorised in ``w``) on every level."""
        return cls(
            lattice,
            [
                np.broadcast_to(
                    np.asarray(fn(lattice.time(i), lattice.walk(i)), dtype=float),
                    (lattice.level_size(i),),
                ).copy()
                for i in range(lattice.steps + 1)
            ],
        )

    @classmethod
    def constant(cls, lattice: Lattice, c: float) -> "AdaptedProcess":
        return cls(lattice, [np.full(lattice.level_size(i), float(c)) for i in range(lattice.steps + 1)])

    def __getitem__(self, node: NodeId) -> float:
        level, index = self.lattice.check_node(node)
        return float(self.values[level][index])

    def level(self, i: int) -> np.ndarray:
        return self.values[i]

    @property
    def root(self) -> float:
        return float(self.values[0][0])

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def items(self) -> Iterator[tuple[NodeId, float]]:
        for i, v in enumerate(self.values):
            for k, x in enumerate(v):
                yield NodeId(i, k), float(x)

    def max_abs_diff(self, other: "AdaptedProcess") -> float:
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.values, other.values))

    def __repr__(self) -> str:
        return f"AdaptedProcess(root={self.root!r}, levels={len(self.values)})"
