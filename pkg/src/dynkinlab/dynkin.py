"""Dynkin stopping game evaluated under a g-expectation.

The maximiser picks a stop-set ``tau`` and receives ``L`` where it stops
first (ties included); the minimiser picks ``sigma`` and pays ``U`` if it
stops strictly first. The terminal reward is ``L(T)``. The game value is
the doubly reflected solution with terminal ``L(T)``; the saddle point
stops when the solution touches the respective barrier.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .bsde import StoppingRule, _backward, evaluate_at_rule
from .errors import EnumerationTooLarge, NonCoherentGenerator
from .generators import Driver, GeneratorSpec, as_driver, validate_step
from .lattice import AdaptedProcess, Lattice, NodeId
from .rbsde import BarrierSpec, SolutionTriple, solve_drbsde

HIT_TOL = 1e-9
# 2**15 rules per side; pairwise sweeps only up to 2**7 rules per side
MAX_FREE_NODES = 15
MAX_PAIRWISE_FREE_NODES = 7


@dataclass(frozen=True)
class GameInstance:
    lattice: Lattice
    generator: GeneratorSpec | Driver
    barriers: BarrierSpec

    def __post_init__(self) -> None:
        if not as_driver(self.generator).coherent:
            raise NonCoherentGenerator("game evaluation needs g(t, y, 0) = 0")
        self.barriers.validate(self.lattice)

    @property
    def driver(self) -> Driver:
        return as_driver(self.generator)

    def barrier_processes(self) -> tuple[AdaptedProcess, AdaptedProcess]:
        return self.barriers.processes(self.lattice)

    @property
    def terminal(self) -> np.ndarray:
        return self.barrier_processes()[0].terminal.copy()


@dataclass
class SaddleReport:
    value_root: float
    tau_star: StoppingRule
    sigma_star: StoppingRule
    lower_V: float
    upper_V: float
    max_left_violation: float
    max_right_violation: float
    pairs_checked: int
    saddle_value: float
    mode: str
    tolerance: float = 1e-10

    @property
    def value_gap(self) -> float:
        return max(abs(self.lower_V - self.value_root), abs(self.upper_V - self.value_root))

    @property
    def passed(self) -> bool:
        return (
            self.max_left_violation <= self.tolerance
            and self.max_right_violation <= self.tolerance
            and self.value_gap <= self.tolerance
            and self.lower_V <= self.upper_V
        )


def game_value(gi: GameInstance, driver: Driver | None = None) -> SolutionTriple:
    return solve_drbsde(gi.lattice, driver or gi.driver, gi.barriers, gi.terminal)


def saddle_times(sol: SolutionTriple, barriers: BarrierSpec, from_level: int = 0, tol: float = HIT_TOL):
    """Hitting rules of ``{X = L}`` and ``{X = U}`` from ``from_level`` on."""
    lat = sol.lattice
    L, U = barriers.processes(lat)
    tau, sigma = [], []
    for i in range(lat.steps + 1):
        x = sol.X.values[i]
        active = i >= from_level
        tau.append((np.abs(x - L.values[i]) <= tol) & active)
        sigma.append((np.abs(U.values[i] - x) <= tol) & active)
    return StoppingRule(tuple(tau)), StoppingRule(tuple(sigma))


def _pair_payoffs(L: AdaptedProcess, U: AdaptedProcess, tau_masks, sigma_masks):
    """Union stop masks and payoffs; the maximiser's stop wins ties."""
    masks, pays = [], []
    for t_m, s_m, l, u in zip(tau_masks, sigma_masks, L.values, U.values):
        masks.append(t_m | s_m)
        pays.append(np.where(t_m, l, u))
    return masks, pays


def evaluate_pair(gi: GameInstance, tau: StoppingRule, sigma: StoppingRule,
                  from_node: NodeId | None = None, driver: Driver | None = None) -> float:
    """g-expectation of the game reward for the pair ``(tau, sigma)``."""
    lat = gi.lattice
    L, U = gi.barrier_processes()
    masks, pays = _pair_payoffs(L, U, tau.masks, sigma.masks)
    pay = AdaptedProcess(lat, pays)
    return evaluate_at_rule(lat, driver or gi.driver, pay, StoppingRule(tuple(masks)), from_node)


def _free_nodes(lat: Lattice, from_level: int) -> list[NodeId]:
    return [n for n in lat.nodes() if from_level <= n.level < lat.steps]


def rule_count(lat: Lattice, from_level: int = 0) -> int:
    return 2 ** len(_free_nodes(lat, from_level))


def rule_masks(lat: Lattice, from_level: int = 0) -> list[np.ndarray]:
    """All rules at once: level ``i`` mask array of shape ``(2**free, level_size(i))``.

    Rule ``r`` stops at the ``j``-th free node (levels ascending, then
    index) iff bit ``j`` of ``r`` is set.
    """
    free = _free_nodes(lat, from_level)
    if len(free) > MAX_FREE_NODES:
        raise EnumerationTooLarge(f"{len(free)} free nodes gives 2**{len(free)} rules; cap is 2**{MAX_FREE_NODES}")
    R = 2 ** len(free)
    r = np.arange(R)
    masks = [np.zeros((R, lat.level_size(i)), dtype=bool) for i in range(lat.steps + 1)]
    for j, node in enumerate(free):
        masks[node.level][:, node.index] = ((r >> j) & 1).astype(bool)
    masks[-1][:] = True
    return masks


def enumerate_rules(lat: Lattice, from_level: int = 0) -> Iterator[StoppingRule]:
    masks = rule_masks(lat, from_level)
    for r in range(masks[0].shape[0]):
        yield StoppingRule(tuple(m[r] for m in masks))


def _sweep(lat: Lattice, driver: Driver, L, U, tau_masks, sigma_masks) -> np.ndarray:
    masks, pays = _pair_payoffs(L, U, tau_masks, sigma_masks)
    values, _, _ = _backward(lat, driver, pays[-1], stop_masks=masks, stop_payoffs=pays)
    return values[0][..., 0]


def best_response_values(gi: GameInstance, tau: StoppingRule, sigma: StoppingRule, driver: Driver | None = None):
    """Root values of ``(every rule, sigma)`` and ``(tau, every rule)``."""
    lat = gi.lattice
    driver = driver or gi.driver
    L, U = gi.barrier_processes()
    all_masks = rule_masks(lat)
    j_tau = _sweep(lat, driver, L, U, all_masks, [m[None, :] for m in sigma.masks])
    j_sigma = _sweep(lat, driver, L, U, [m[None, :] for m in tau.masks], all_masks)
    return j_tau, j_sigma


def payoff_matrix(gi: GameInstance, driver: Driver | None = None) -> np.ndarray:
    """Root values for every (tau, sigma) pair; rows are tau."""
    lat = gi.lattice
    free = len(_free_nodes(lat, 0))
    if free > MAX_PAIRWISE_FREE_NODES:
        raise EnumerationTooLarge(f"pairwise sweep needs <= {MAX_PAIRWISE_FREE_NODES} free nodes, got {free}")
    driver = driver or gi.driver
    L, U = gi.barrier_processes()
    masks = rule_masks(lat)
    return _sweep(lat, driver, L, U, [m[:, None, :] for m in masks], [m[None, :, :] for m in masks])


def verify_saddle(gi: GameInstance, tol: float = 1e-10, monotone: bool = True) -> SaddleReport:
    """Check the saddle inequalities of the hitting rules against every stop-set.

    Small lattices get the full pairwise payoff matrix and true lower/upper
    values. Larger ones (up to 2**15 rules per side) get single-sided sweeps:
    ``lower_V = min_sigma J(tau*, sigma)`` and ``upper_V = max_tau J(tau, sigma*)``,
    which bracket the true lower and upper values.
    """
    lat = gi.lattice
    validate_step(gi.driver, lat.dt, lat.horizon, monotone=monotone)
    sol = game_value(gi)
    tau_star, sigma_star = saddle_times(sol, gi.barriers)
    free = len(_free_nodes(lat, 0))
    if free > MAX_FREE_NODES:
        raise EnumerationTooLarge(f"{free} free nodes; cap is {MAX_FREE_NODES}")
    L, U = gi.barrier_processes()
    saddle = float(_sweep(lat, gi.driver, L, U, tau_star.masks, sigma_star.masks))
    j_tau, j_sigma = best_response_values(gi, tau_star, sigma_star)
    left = max(0.0, float(j_tau.max()) - saddle)
    right = max(0.0, saddle - float(j_sigma.min()))
    if free <= MAX_PAIRWISE_FREE_NODES:
        J = payoff_matrix(gi)
        lower = float(J.min(axis=1).max())
        upper = float(J.max(axis=0).min())
        pairs, mode = J.size, "pairwise"
    else:
        lower, upper = float(j_sigma.min()), float(j_tau.max())
        pairs, mode = j_tau.size + j_sigma.size, "single-sided"
    assert lower <= upper + 1e-15, "lower value exceeds upper value"
    return SaddleReport(
        value_root=sol.X.root,
        tau_star=tau_star,
        sigma_star=sigma_star,
        lower_V=lower,
        upper_V=upper,
        max_left_violation=left,
        max_right_violation=right,
        pairs_checked=pairs,
        saddle_value=saddle,
        mode=mode,
        tolerance=tol,
    )


def classical_dynkin_value(lat: Lattice, barriers: BarrierSpec) -> dict[NodeId, float]:
    """Plain-expectation Dynkin values by node-by-node min-max induction.

    Each node is a one-shot game: both stopping gives ``L``; only the
    maximiser stopping gives ``L``; only the minimiser gives ``U``; neither
    gives the average of the children. Written without the vectorised
    solver so it can serve as an independent reference.
    """
    L, U = barriers.processes(lat)
    V: dict[NodeId, float] = {}
    for node in lat.nodes(lat.steps):
        V[node] = L[node]
    for i in range(lat.steps - 1, -1, -1):
        for node in lat.nodes(i):
            up, down = lat.children(node)
            cont = 0.5 * (V[up] + V[down])
            l, u = L[node], U[node]
            maxmin = max(min(l, l), min(u, cont))
            minmax = min(max(l, u), max(l, cont))
            assert maxmin == minmax or abs(maxmin - minmax) <= 1e-15
            V[node] = maxmin
    return V
