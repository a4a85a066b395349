"""Constrained Dynkin game through the penalisation ladder ``g_m = g + m * phi``.

Each ladder level is an ordinary doubly reflected solve with driver
``g_m``. Values increase with ``m``; the minimal constrained solution is
approximated by the top level and ``residual_gap`` measures how far the
ladder still moves.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .bsde import StoppingRule, hits_no_later, solve_bsde, terminal_array
from .dynkin import (
    MAX_FREE_NODES,
    GameInstance,
    _free_nodes,
    best_response_values,
    game_value,
    saddle_times,
)
from .errors import LadderTooShort, NotMonotone
from .generators import ConstraintSpec, Driver, penalized_driver, validate_step
from .lattice import AdaptedProcess, Lattice, Mode
from .rbsde import SolutionTriple, lower_is_increasing

log = logging.getLogger(__name__)

DEFAULT_SCHEDULE = (1.0, 2.0, 4.0, 8.0)
MONOTONE_SLACK = 1e-12


@dataclass
class LadderLevel:
    m: float
    driver: Driver
    solution: SolutionTriple
    tau_star: StoppingRule
    sigma_star: StoppingRule
    penalty_increments: AdaptedProcess

    def penalty_cumulative(self) -> AdaptedProcess:
        """A^m along paths (full tree), zero at the root."""
        lat = self.solution.lattice
        if lat.mode is not Mode.FULL_TREE:
            raise ValueError("cumulative penalty is path dependent on a recombining lattice")
        out = [np.zeros(1)]
        for i in range(lat.steps):
            parent = np.arange(lat.level_size(i + 1)) // 2
            out.append(out[i][parent] + self.penalty_increments.values[i][parent])
        return AdaptedProcess(lat, out)


@dataclass
class PenalizationLadder:
    schedule: list[float]
    levels: list[LadderLevel]
    gaps: list[float]
    worst_value_drop: float
    monotone_values: bool
    monotone_tau: bool
    monotone_sigma: bool
    increasing_lower: bool
    warnings: list[str] = field(default_factory=list)

    @property
    def top(self) -> LadderLevel:
        return self.levels[-1]

    def root_values(self) -> list[float]:
        return [lv.solution.X.root for lv in self.levels]


def run_ladder(
    gi: GameInstance,
    phi: ConstraintSpec,
    schedule=DEFAULT_SCHEDULE,
    require_increasing_lower: bool = True,
) -> PenalizationLadder:
    """Solve the reflected game for every penalty level in ``schedule``.

    Barriers must lie in [0, B]. With ``require_increasing_lower`` the
    lower barrier must be nondecreasing along paths; otherwise a warning is
    recorded. Levels are reported in increasing ``m`` whatever the input order.
    """
    lat = gi.lattice
    schedule = sorted(float(m) for m in schedule)
    if not schedule:
        raise LadderTooShort("empty schedule")
    if schedule[0] < 0:
        raise ValueError("penalty levels must be nonnegative")
    warnings: list[str] = []
    strict = gi.barriers.increasing_lower or require_increasing_lower
    spec = gi.barriers
    if strict and not spec.increasing_lower:
        spec = replace(spec, increasing_lower=True)
    L, U = spec.validate(lat, constrained=True)
    increasing = lower_is_increasing(lat, L)
    if not increasing:
        msg = "lower barrier is not increasing; the limit saddle argument does not apply"
        log.warning(msg)
        warnings.append(msg)
    drivers = [penalized_driver(gi.driver, phi, m) for m in schedule]
    validate_step(drivers, lat.dt, lat.horizon, monotone=True)

    levels = []
    for m, drv in zip(schedule, drivers):
        sol = game_value(gi, drv)
        tau, sigma = saddle_times(sol, gi.barriers)
        inc = [
            m * phi.evaluate(lat.time(i), sol.X.values[i], sol.Z.values[i]) * lat.dt if i < lat.steps
            else np.zeros(lat.level_size(i))
            for i in range(lat.steps + 1)
        ]
        levels.append(LadderLevel(m, drv, sol, tau, sigma, AdaptedProcess(lat, inc)))

    gaps, drop = [], 0.0
    mono_tau = mono_sigma = True
    for lo, hi in zip(levels, levels[1:]):
        diffs = [h - l for h, l in zip(hi.solution.X.values, lo.solution.X.values)]
        gaps.append(max(float(np.max(np.abs(d))) for d in diffs))
        drop = max(drop, max(float(np.max(-d)) for d in diffs))
        # tau hits later as m grows: the old rule hits no later than the new one
        mono_tau &= hits_no_later(lat, lo.tau_star, hi.tau_star)
        mono_sigma &= hits_no_later(lat, hi.sigma_star, lo.sigma_star)
    return PenalizationLadder(
        schedule=schedule,
        levels=levels,
        gaps=gaps,
        worst_value_drop=max(drop, 0.0),
        monotone_values=drop <= MONOTONE_SLACK,
        monotone_tau=bool(mono_tau),
        monotone_sigma=bool(mono_sigma),
        increasing_lower=increasing,
        warnings=warnings,
    )


@dataclass
class ConstrainedReport:
    value_estimate: float
    residual_gap: float
    tau_limit: StoppingRule
    sigma_limit: StoppingRule
    stabilized: bool
    left_violation: float | None
    right_violation: float | None
    rules_checked: int
    constraint_residual: float
    max_value: float
    bound: float
    warnings: list[str]


def constrained_report(ladder: PenalizationLadder, gi: GameInstance, phi: ConstraintSpec) -> ConstrainedReport:
    """Summarise the ladder and sweep the discrete saddle inequalities.

    For every rule ``tau`` and every ladder level ``n`` the value of
    ``(tau, sigma_limit)`` under ``g_n`` must not exceed the estimate, and
    for every ``sigma`` the value of ``(tau_limit, sigma)`` under the top
    driver must not fall below it. The limit rules are the top-level
    hitting rules; ``stabilized`` says whether they equal the previous
    level's.
    """
    if len(ladder.levels) < 2:
        raise LadderTooShort("need at least two ladder levels")
    lat = gi.lattice
    top, prev = ladder.levels[-1], ladder.levels[-2]
    value = top.solution.X.root
    stabilized = top.tau_star == prev.tau_star and top.sigma_star == prev.sigma_star
    left = right = None
    checked = 0
    if len(_free_nodes(lat, 0)) <= MAX_FREE_NODES:
        left = 0.0
        for lv in ladder.levels:
            j_tau, _ = best_response_values(gi, top.tau_star, top.sigma_star, driver=lv.driver)
            left = max(left, float(j_tau.max()) - value)
            checked += j_tau.size
        _, j_sigma = best_response_values(gi, top.tau_star, top.sigma_star, driver=top.driver)
        right = max(0.0, value - float(j_sigma.min()))
        left = max(0.0, left)
        checked += j_sigma.size
    residual = max(
        float(np.max(phi.evaluate(lat.time(i), top.solution.X.values[i], top.solution.Z.values[i])))
        for i in range(lat.steps)
    )
    max_value = max(float(np.max(lv.solution.X.values[i])) for lv in ladder.levels for i in range(lat.steps + 1))
    return ConstrainedReport(
        value_estimate=value,
        residual_gap=ladder.gaps[-1],
        tau_limit=top.tau_star,
        sigma_limit=top.sigma_star,
        stabilized=stabilized,
        left_violation=left,
        right_violation=right,
        rules_checked=checked,
        constraint_residual=residual,
        max_value=max_value,
        bound=float(gi.barriers.bound),
        warnings=list(ladder.warnings),
    )


@dataclass
class ContinuityReport:
    schedule: list[float]
    table: np.ndarray  # root values, rows m, columns n
    limit_values: np.ndarray  # root values for the limit terminal, per m
    monotone_in_n: bool
    monotone_in_m: bool
    comparison_ok: bool
    terminal_gaps: np.ndarray
    diagonal_sup: float
    limit_sup: float
    tolerance: float

    @property
    def terminal_gap(self) -> float:
        return float(self.terminal_gaps.max())

    @property
    def interchange_gap(self) -> float:
        return abs(self.limit_sup - self.diagonal_sup)

    @property
    def passed(self) -> bool:
        return (
            self.monotone_in_n
            and self.monotone_in_m
            and self.comparison_ok
            and self.terminal_gap <= self.tolerance
            and self.interchange_gap <= self.tolerance
        )


def continuity_from_below_check(
    lat: Lattice,
    gen,
    phi: ConstraintSpec,
    terminal_sequence,
    limit_terminal,
    schedule=DEFAULT_SCHEDULE,
    tol: float = 1e-8,
) -> ContinuityReport:
    """Penalised values ``x^m(xi_n)`` at the root for a nondecreasing terminal sequence.

    Checks monotonicity in ``n`` and ``m``, the gap between the last
    sequence element and the limit terminal, and whether the supremum over
    the (m, n) table matches the supremum over ``m`` of the limit values.
    """
    seq = [terminal_array(lat, t) for t in terminal_sequence]
    limit = terminal_array(lat, limit_terminal)
    for a, b in zip(seq, seq[1:]):
        if np.any(b < a):
            raise NotMonotone("terminal sequence is not nodewise nondecreasing")
    if seq and np.any(seq[-1] > limit):
        raise NotMonotone("terminal sequence exceeds its limit")
    schedule = sorted(float(m) for m in schedule)
    drivers = [penalized_driver(gen, phi, m) for m in schedule]
    validate_step(drivers, lat.dt, lat.horizon, monotone=True)
    table = np.empty((len(schedule), len(seq)))
    limits = np.empty(len(schedule))
    comparison = True
    for r, drv in enumerate(drivers):
        prev_x = None
        for c, xi in enumerate(seq):
            X, _ = solve_bsde(lat, drv, xi)
            table[r, c] = X.root
            if prev_x is not None:
                comparison &= all(np.all(a >= b - MONOTONE_SLACK) for a, b in zip(X.values, prev_x.values))
            prev_x = X
        X, _ = solve_bsde(lat, drv, limit)
        limits[r] = X.root
        if prev_x is not None:
            comparison &= all(np.all(a >= b - MONOTONE_SLACK) for a, b in zip(X.values, prev_x.values))
    mono_n = bool(np.all(np.diff(table, axis=1) >= -MONOTONE_SLACK))
    mono_m = bool(np.all(np.diff(table, axis=0) >= -MONOTONE_SLACK)) and bool(
        np.all(np.diff(limits) >= -MONOTONE_SLACK)
    )
    gaps = limits - table[:, -1] if seq else np.zeros(len(schedule))
    return ContinuityReport(
        schedule=schedule,
        table=table,
        limit_values=limits,
        monotone_in_n=mono_n,
        monotone_in_m=mono_m,
        comparison_ok=bool(comparison),
        terminal_gaps=gaps,
        diagonal_sup=float(table.max()) if seq else float("-inf"),
        limit_sup=float(limits.max()),
        tolerance=tol,
    )


def harmonic_sequence(xi: np.ndarray, count: int) -> list[np.ndarray]:
    """xi * (1 - 1/n) for n = 1..count."""
    return [xi * (1.0 - 1.0 / n) for n in range(1, count + 1)]


def geometric_sequence(xi: np.ndarray, count: int) -> list[np.ndarray]:
    """xi * (1 - 2**-n) for n = 1..count."""
    return [xi * (1.0 - 2.0 ** (-n)) for n in range(1, count + 1)]


__all__ = [
    "ConstrainedReport",
    "ContinuityReport",
    "PenalizationLadder",
    "constrained_report",
    "continuity_from_below_check",
    "run_ladder",
]
