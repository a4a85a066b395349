"""Discrete g-expectations on a random-walk lattice.

One backward step from children values ``x_up``, ``x_down`` sets
``z = (x_up - x_down) / (2 sqrt(dt))`` and solves the implicit equation
``x = (x_up + x_down) / 2 + dt * g(t, x, z)`` by Picard iteration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import MissingPayoff, NoConvergence
from .generators import Driver, as_driver, validate_step
from .lattice import AdaptedProcess, Lattice, Mode, NodeId

FIXED_POINT_TOL = 1e-12
MAX_PICARD = 100


def _one_step(driver: Driver, level: int, t: float, w, dt: float, x_up, x_down):
    sq = math.sqrt(dt)
    z = (x_up - x_down) / (2.0 * sq)
    e = 0.5 * (x_up + x_down)
    x = e
    for _ in range(MAX_PICARD):
        x_new = e + dt * driver(level, t, w, x, z)
        # NaN entries (unused nodes in masked sweeps) count as converged
        if not np.any(np.abs(x_new - x) > FIXED_POINT_TOL * (1.0 + np.abs(x_new))):
            return x_new, z
        x = x_new
    raise NoConvergence(
        f"Picard iteration did not settle in {MAX_PICARD} steps at level {level}; "
        "was validate_step bypassed?"
    )


def one_step(gen, t: float, dt: float, x_up: float, x_down: float, w: float = 0.0) -> tuple[float, float]:
    """Backward step for a single node; returns ``(x, z)``."""
    x, z = _one_step(as_driver(gen), -1, t, np.float64(w), dt, np.float64(x_up), np.float64(x_down))
    return float(x), float(z)


def _backward(
    lat: Lattice,
    driver: Driver,
    terminal: np.ndarray,
    stop_masks=None,
    stop_payoffs=None,
    lower=None,
    upper=None,
    last_level: int = 0,
):
    """Shared backward recursion.

    Arrays may carry leading batch axes; the last axis indexes the nodes of a
    level. Stopped nodes take their payoff, optional ``lower``/``upper``
    clamp the continuation value. Returns per-level lists
    ``(values, z, continuation)`` for levels ``last_level..N``.
    """
    N = lat.steps
    values: list = [None] * (N + 1)
    zs: list = [None] * (N + 1)
    cont: list = [None] * (N + 1)
    v = np.asarray(terminal, dtype=float)
    if stop_masks is not None:
        v = np.where(stop_masks[N], stop_payoffs[N], v)
    values[N] = v
    zs[N] = np.zeros_like(v)
    cont[N] = v
    for i in range(N - 1, last_level - 1, -1):
        up, down = lat.child_indices(i)
        nxt = values[i + 1]
        x, z = _one_step(driver, i, lat.time(i), lat.walk(i), lat.dt, nxt[..., up], nxt[..., down])
        cont[i] = x
        if lower is not None:
            x = np.minimum(np.maximum(x, lower[i]), upper[i])
        if stop_masks is not None:
            x = np.where(stop_masks[i], stop_payoffs[i], x)
        values[i] = x
        zs[i] = z
    return values, zs, cont


def terminal_array(lat: Lattice, terminal) -> np.ndarray:
    """Normalise a terminal condition to the array of level-N values."""
    n = lat.level_size(lat.steps)
    if isinstance(terminal, AdaptedProcess):
        return terminal.terminal.copy()
    if isinstance(terminal, Mapping):
        out = np.full(n, np.nan)
        for node, val in terminal.items():
            level, index = lat.check_node(node)
            if level == lat.steps:
                out[index] = val
        if np.isnan(out).any():
            missing = int(np.flatnonzero(np.isnan(out))[0])
            raise MissingPayoff(f"terminal value missing at node {(lat.steps, missing)}")
        return out
    if callable(terminal):
        return np.broadcast_to(
            np.asarray(terminal(lat.horizon, lat.walk(lat.steps)), dtype=float), (n,)
        ).copy()
    arr = np.asarray(terminal, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"terminal needs {n} values, got shape {arr.shape}")
    return arr.copy()


def solve_bsde(lat: Lattice, gen, terminal) -> tuple[AdaptedProcess, AdaptedProcess]:
    """Solve backward from ``terminal``; returns ``(X, Z)`` with ``Z = 0`` at T."""
    driver = as_driver(gen)
    validate_step(driver, lat.dt, lat.horizon)
    values, zs, _ = _backward(lat, driver, terminal_array(lat, terminal))
    return AdaptedProcess(lat, values), AdaptedProcess(lat, zs)


@dataclass(frozen=True)
class StoppingRule:
    """Stop-set over lattice nodes, stored as one boolean mask per level.

    The terminal level is always in the set. The stopping time a rule
    induces is the first level at which the path meets the set.
    """

    masks: tuple

    def __post_init__(self) -> None:
        masks = tuple(np.array(m, dtype=bool) for m in self.masks)
        masks[-1][:] = True
        for m in masks:
            m.setflags(write=False)
        object.__setattr__(self, "masks", masks)

    @classmethod
    def from_nodes(cls, lat: Lattice, nodes) -> "StoppingRule":
        masks = [np.zeros(lat.level_size(i), dtype=bool) for i in range(lat.steps + 1)]
        for node in nodes:
            level, index = lat.check_node(node)
            masks[level][index] = True
        return cls(tuple(masks))

    @classmethod
    def terminal_only(cls, lat: Lattice) -> "StoppingRule":
        return cls.from_nodes(lat, [])

    @classmethod
    def stop_from_level(cls, lat: Lattice, level: int) -> "StoppingRule":
        """Stop at every node of ``level`` and beyond."""
        return cls.from_nodes(lat, [n for n in lat.nodes() if n.level >= level])

    def __contains__(self, node) -> bool:
        level, index = node
        return bool(self.masks[level][index])

    @property
    def stop_set(self) -> frozenset:
        return frozenset(
            NodeId(i, int(k)) for i, m in enumerate(self.masks) for k in np.flatnonzero(m)
        )

    def union(self, other: "StoppingRule") -> "StoppingRule":
        return StoppingRule(tuple(a | b for a, b in zip(self.masks, other.masks)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, StoppingRule) or len(other.masks) != len(self.masks):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.masks, other.masks))

    def __hash__(self) -> int:
        return hash(tuple(m.tobytes() for m in self.masks))


def reachable_before_stop(lat: Lattice, rule: StoppingRule, start: NodeId) -> list[np.ndarray]:
    """Nodes reachable from ``start`` without passing through an earlier stop node.

    Stop nodes themselves are included (they are where paths end).
    """
    start = lat.check_node(start)
    reach = [np.zeros(lat.level_size(i), dtype=bool) for i in range(lat.steps + 1)]
    reach[start.level][start.index] = True
    for i in range(start.level, lat.steps):
        live = reach[i] & ~rule.masks[i]
        up, down = lat.child_indices(i)
        reach[i + 1][up[live]] = True
        reach[i + 1][down[live]] = True
    return reach


def hits_no_later(lat: Lattice, first: StoppingRule, second: StoppingRule, start: NodeId | None = None) -> bool:
    """True iff along every path the first hit of ``first`` is not after that of ``second``."""
    start = lat.root if start is None else start
    live = np.zeros(lat.level_size(start.level), dtype=bool)
    live[start.index] = True
    for i in range(start.level, lat.steps + 1):
        if np.any(live & second.masks[i] & ~first.masks[i]):
            return False
        live = live & ~first.masks[i]
        if i == lat.steps or not live.any():
            return True
        up, down = lat.child_indices(i)
        nxt = np.zeros(lat.level_size(i + 1), dtype=bool)
        nxt[up[live]] = True
        nxt[down[live]] = True
        live = nxt
    return True


def hit_levels(lat: Lattice, rule: StoppingRule) -> np.ndarray:
    """First-hit level along each of the ``2**N`` paths (leaf order of the full tree)."""
    N = lat.steps
    if N > 20:
        raise ValueError("too many paths to enumerate")
    paths = np.arange(2**N)
    out = np.full(2**N, N)
    done = np.zeros(2**N, dtype=bool)
    for i in range(N + 1):
        prefix = paths >> (N - i)
        if lat.mode is Mode.FULL_TREE:
            idx = prefix
        else:
            idx = np.array([bin(int(p)).count("1") for p in prefix])
        hit = rule.masks[i][idx] & ~done
        out[hit] = i
        done |= hit
    return out


def _payoff_arrays(lat: Lattice, payoff) -> list[np.ndarray]:
    if isinstance(payoff, AdaptedProcess):
        return [v.copy() for v in payoff.values]
    if callable(payoff) and not isinstance(payoff, Mapping):
        return AdaptedProcess.from_function(lat, payoff).values
    arrays = [np.full(lat.level_size(i), np.nan) for i in range(lat.steps + 1)]
    for node, val in payoff.items():
        level, index = lat.check_node(node)
        arrays[level][index] = val
    return arrays


def evaluate_at_rule(lat: Lattice, gen, payoff, rule: StoppingRule, from_node: NodeId | None = None) -> float:
    """g-expectation at ``from_node`` of the payoff collected at the first hit of ``rule``.

    ``payoff`` may be an :class:`AdaptedProcess`, a ``{NodeId: value}``
    mapping or a function ``(t, w)``; it only needs values on stop nodes
    that can actually be hit from ``from_node``.
    """
    from_node = lat.root if from_node is None else lat.check_node(from_node)
    driver = as_driver(gen)
    validate_step(driver, lat.dt, lat.horizon)
    pay = _payoff_arrays(lat, payoff)
    reach = reachable_before_stop(lat, rule, from_node)
    for i in range(from_node.level, lat.steps + 1):
        bad = reach[i] & rule.masks[i] & ~np.isfinite(pay[i])
        if bad.any():
            raise MissingPayoff(f"no payoff at stop node {(i, int(np.flatnonzero(bad)[0]))}")
    values, _, _ = _backward(
        lat, driver, pay[-1], stop_masks=rule.masks, stop_payoffs=pay, last_level=from_node.level
    )
    return float(values[from_node.level][from_node.index])


def evaluate_batch(lat: Lattice, driver: Driver, payoffs, masks) -> np.ndarray:
    """Root values for a batch of (payoff, stop-mask) pairs.

    ``payoffs[i]`` and ``masks[i]`` have shape ``(B, level_size(i))`` (or
    broadcast to it). Payoffs must be finite wherever they can be hit.
    """
    values, _, _ = _backward(lat, driver, payoffs[-1], stop_masks=masks, stop_payoffs=payoffs)
    return values[0][..., 0]
