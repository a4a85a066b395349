"""Doubly reflected backward recursion between a lower and an upper barrier."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bsde import _backward, _one_step, solve_bsde, terminal_array
from .errors import BarrierCrossing, HypothesisViolation, TerminalOutOfBand
from .generators import Driver, as_driver, validate_step
from .lattice import AdaptedProcess, Lattice, Mode, NodeId

FORMS = ("constant", "affine", "clipped", "abs")


@dataclass(frozen=True)
class NodeFunction:
    """Parametric function of (t, w).

    ``constant``: a0; ``affine``: a0 + a1 w + a2 t;
    ``clipped``: max(floor, a0 + a1 w + a2 t); ``abs``: a0 + a1 |w| + a2 t.
    """

    form: str = "constant"
    a0: float = 0.0
    a1: float = 0.0
    a2: float = 0.0
    floor: float = 0.0

    def __post_init__(self) -> None:
        if self.form not in FORMS:
            raise ValueError(f"unknown form {self.form!r}; expected one of {FORMS}")

    @classmethod
    def constant(cls, c: float) -> "NodeFunction":
        return cls("constant", a0=float(c))

    def __call__(self, t, w):
        w = np.asarray(w, dtype=float)
        if self.form == "constant":
            return np.full(w.shape, self.a0)
        if self.form == "abs":
            return self.a0 + self.a1 * np.abs(w) + self.a2 * t
        aff = self.a0 + self.a1 * w + self.a2 * t
        if self.form == "clipped":
            return np.maximum(self.floor, aff)
        return aff


def _as_process(lat: Lattice, f) -> AdaptedProcess:
    if isinstance(f, AdaptedProcess):
        if f.lattice != lat:
            raise ValueError("barrier process lives on a different lattice")
        return f
    if isinstance(f, (int, float)):
        return AdaptedProcess.constant(lat, f)
    return AdaptedProcess.from_function(lat, f)


@dataclass(frozen=True)
class BarrierSpec:
    """Lower and upper obstacles.

    ``lower``/``upper`` are :class:`NodeFunction` forms, constants, or
    :class:`AdaptedProcess` arrays. ``bound`` is the constant B of the
    constrained game (barriers must lie in [0, B] there).
    """

    lower: object
    upper: object
    bound: float | None = None
    increasing_lower: bool = False

    def processes(self, lat: Lattice) -> tuple[AdaptedProcess, AdaptedProcess]:
        return _as_process(lat, self.lower), _as_process(lat, self.upper)

    def validate(self, lat: Lattice, constrained: bool = False) -> tuple[AdaptedProcess, AdaptedProcess]:
        L, U = self.processes(lat)
        for i in range(lat.steps + 1):
            bad = L.values[i] > U.values[i]
            if bad.any():
                k = int(np.flatnonzero(bad)[0])
                raise BarrierCrossing(f"L > U at node {(i, k)}: {L.values[i][k]} > {U.values[i][k]}")
        if constrained:
            if self.bound is None or not self.bound > 0:
                raise HypothesisViolation("constrained game needs a bound B > 0")
            for i in range(lat.steps + 1):
                lo = min(L.values[i].min(), U.values[i].min())
                hi = max(L.values[i].max(), U.values[i].max())
                if lo < 0 or hi > self.bound:
                    raise HypothesisViolation(f"barriers leave [0, B] = [0, {self.bound}] at level {i}")
        if self.increasing_lower and not lower_is_increasing(lat, L):
            raise HypothesisViolation("lower barrier is not nondecreasing along every path")
        return L, U


def lower_is_increasing(lat: Lattice, L: AdaptedProcess) -> bool:
    for i in range(lat.steps):
        up, down = lat.child_indices(i)
        nxt = L.values[i + 1]
        if np.any(nxt[up] < L.values[i]) or np.any(nxt[down] < L.values[i]):
            return False
    return True


@dataclass
class SolutionTriple:
    """Reflected solution with the pushes of the two reflecting processes.

    ``dkplus``/``dkminus`` hold at each node the increment of K+ / K-
    applied there (zero at the terminal level). Cumulative processes are
    path sums of the increments of strict ancestors, so ``K(root) = 0``.
    """

    X: AdaptedProcess
    Z: AdaptedProcess
    dkplus: AdaptedProcess
    dkminus: AdaptedProcess
    continuation: AdaptedProcess

    @property
    def lattice(self) -> Lattice:
        return self.X.lattice

    def cumulative(self, which: str = "plus") -> AdaptedProcess:
        """Cumulative K+ (``"plus"``) or K- (``"minus"``); full-tree mode only."""
        lat = self.lattice
        if lat.mode is not Mode.FULL_TREE:
            raise ValueError("cumulative K is path dependent on a recombining lattice")
        inc = self.dkplus if which == "plus" else self.dkminus
        out = [np.zeros(1)]
        for i in range(lat.steps):
            parent = np.arange(lat.level_size(i + 1)) // 2
            out.append(out[i][parent] + inc.values[i][parent])
        return AdaptedProcess(lat, out)


def solve_drbsde(lat: Lattice, gen, barriers: BarrierSpec, terminal) -> SolutionTriple:
    """Backward step, then clamp into [L, U]; the clamp distance is the push."""
    driver = as_driver(gen)
    validate_step(driver, lat.dt, lat.horizon)
    L, U = barriers.validate(lat)
    xi = terminal_array(lat, terminal)
    if np.any(xi < L.terminal) or np.any(xi > U.terminal):
        raise TerminalOutOfBand("terminal value outside [L(T), U(T)]")
    values, zs, cont = _backward(lat, driver, xi, lower=L.values, upper=U.values)
    dkp = [np.maximum(x - c, 0.0) for x, c in zip(values, cont)]
    dkm = [np.maximum(c - x, 0.0) for x, c in zip(values, cont)]
    sol = SolutionTriple(
        AdaptedProcess(lat, values),
        AdaptedProcess(lat, zs),
        AdaptedProcess(lat, dkp),
        AdaptedProcess(lat, dkm),
        AdaptedProcess(lat, cont),
    )
    for i in range(lat.steps + 1):
        assert np.all(L.values[i] <= values[i]) and np.all(values[i] <= U.values[i])
        assert np.all(dkp[i] * (values[i] - L.values[i]) == 0.0)
        assert np.all(dkm[i] * (U.values[i] - values[i]) == 0.0)
    return sol


def barrier_penalty_driver(gen, lat: Lattice, barriers: BarrierSpec, p: float) -> Driver:
    """Driver ``g + p (L - y)^+ - p (y - U)^+`` with node-dependent barriers."""
    base = as_driver(gen)
    L, U = barriers.processes(lat)
    p = float(p)

    def fn(level, t, w, y, z):
        out = base(level, t, w, y, z)
        if level < 0:
            return out
        return out + p * np.maximum(L.values[level] - y, 0.0) - p * np.maximum(y - U.values[level], 0.0)

    return Driver(fn, base.lipschitz + p, base.z_lipschitz, base.coherent, label=f"{base.label}+barrier({p:g})")


def solve_drbsde_penalized(lat: Lattice, gen, barriers: BarrierSpec, terminal, p: float):
    """Unreflected solve with barrier penalties of strength ``p``; returns ``(X, Z)``."""
    if p < 0:
        raise ValueError("penalty must be nonnegative")
    barriers.validate(lat)
    return solve_bsde(lat, barrier_penalty_driver(gen, lat, barriers, p), terminal)


def skorokhod_residuals(sol: SolutionTriple, barriers: BarrierSpec) -> tuple[float, float]:
    """Largest |dK+ (X - L)| and |dK- (U - X)| over all nodes."""
    lat = sol.lattice
    L, U = barriers.processes(lat)
    rplus = max(float(np.max(np.abs(k * (x - l)))) for k, x, l in zip(sol.dkplus.values, sol.X.values, L.values))
    rminus = max(float(np.max(np.abs(k * (u - x)))) for k, x, u in zip(sol.dkminus.values, sol.X.values, U.values))
    return rplus, rminus


def median_clamp_residual(lat: Lattice, gen, barriers: BarrierSpec, sol: SolutionTriple) -> float:
    """Largest |X(n) - median(L(n), one_step(children of n), U(n))| over nonterminal nodes."""
    driver = as_driver(gen)
    L, U = barriers.processes(lat)
    worst = 0.0
    for i in range(lat.steps):
        up, down = lat.child_indices(i)
        nxt = sol.X.values[i + 1]
        x, _ = _one_step(driver, i, lat.time(i), lat.walk(i), lat.dt, nxt[up], nxt[down])
        med = np.median(np.stack([L.values[i], x, U.values[i]]), axis=0)
        worst = max(worst, float(np.max(np.abs(sol.X.values[i] - med))))
    return worst


def k_monotone(sol: SolutionTriple) -> bool:
    """Increments of both reflecting processes are nonnegative everywhere."""
    return all(np.all(v >= 0) for v in sol.dkplus.values + sol.dkminus.values)


def node_rows(sol: SolutionTriple) -> list[tuple]:
    """(level, index, t, w, X, Z, Kplus, Kminus) rows; K cumulative on full trees, increments otherwise."""
    lat = sol.lattice
    if lat.mode is Mode.FULL_TREE:
        kp, km = sol.cumulative("plus"), sol.cumulative("minus")
    else:
        kp, km = sol.dkplus, sol.dkminus
    rows = []
    for i in range(lat.steps + 1):
        t, w = lat.time(i), lat.walk(i)
        for k in range(lat.level_size(i)):
            rows.append(
                (i, k, t, float(w[k]), float(sol.X.values[i][k]), float(sol.Z.values[i][k]),
                 float(kp.values[i][k]), float(km.values[i][k]))
            )
    return rows


def unreflected_triple(X: AdaptedProcess, Z: AdaptedProcess) -> SolutionTriple:
    """Wrap a plain solution as a triple with zero reflection."""
    lat = X.lattice
    zero = AdaptedProcess.constant(lat, 0.0)
    return SolutionTriple(X, Z, zero, zero, X)


__all__ = [
    "BarrierSpec",
    "NodeFunction",
    "NodeId",
    "SolutionTriple",
    "barrier_penalty_driver",
    "k_monotone",
    "median_clamp_residual",
    "skorokhod_residuals",
    "solve_drbsde",
    "solve_drbsde_penalized",
]
