"""Scenario orchestration and report files."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bsde import StoppingRule, evaluate_at_rule, solve_bsde
from .config import Pipeline, Scenario
from .constrained import (
    constrained_report,
    continuity_from_below_check,
    geometric_sequence,
    harmonic_sequence,
    run_ladder,
)
from .dynkin import (
    GameInstance,
    classical_dynkin_value,
    evaluate_pair,
    game_value,
    saddle_times,
    verify_saddle,
)
from .errors import DynkinLabError
from .generators import GeneratorFamily, penalized_driver
from .lattice import AdaptedProcess, Mode
from .rbsde import (
    BarrierSpec,
    SolutionTriple,
    k_monotone,
    median_clamp_residual,
    node_rows,
    skorokhod_residuals,
    solve_drbsde,
    solve_drbsde_penalized,
    unreflected_triple,
)

COLUMNS = ("level", "index", "t", "w", "X", "Z", "Kplus", "Kminus")


@dataclass
class Check:
    name: str
    passed: bool
    value: float | None = None
    tolerance: float | None = None
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "value": _clean(self.value),
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


@dataclass
class RunReport:
    scenario: Scenario
    rows: list[tuple]
    outputs: dict
    checks: list[Check]
    k_columns: str = "cumulative"
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def summary(self) -> dict:
        return {
            "scenario": self.scenario.echo(),
            "pipeline": self.scenario.pipeline.value,
            "outputs": _clean(self.outputs),
            "checks": [c.as_dict() for c in self.checks],
            "k_columns": self.k_columns,
            "status": "pass" if self.passed else "fail",
        }


class ScenarioRunError(DynkinLabError):
    """A module error raised while running a scenario."""

    def __init__(self, scenario: str, cause: Exception):
        self.cause = cause
        super().__init__(f"scenario {scenario!r}: {type(cause).__name__}: {cause}")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _within(name: str, value: float, tol: float, detail: str = "") -> Check:
    return Check(name, bool(value <= tol), float(value), tol, detail)


def _rule_nodes(rule: StoppingRule, lat) -> list[list[int]]:
    """Interior stop nodes as [level, index] pairs (terminal level omitted)."""
    return sorted([n.level, n.index] for n in rule.stop_set if n.level < lat.steps)


def _band_checks(sc: Scenario, sol: SolutionTriple, gen, barriers: BarrierSpec) -> list[Check]:
    lat = sc.lattice
    L, U = barriers.processes(lat)
    band = max(
        max(float(np.max(l - x)), float(np.max(x - u)), 0.0)
        for l, x, u in zip(L.values, sol.X.values, U.values)
    )
    rplus, rminus = skorokhod_residuals(sol, barriers)
    return [
        Check("band_L_le_X_le_U", band == 0.0, band, 0.0),
        Check("k_nondecreasing", k_monotone(sol)),
        Check("skorokhod_plus_zero", rplus == 0.0, rplus, 0.0),
        Check("skorokhod_minus_zero", rminus == 0.0, rminus, 0.0),
        _within("median_clamp_identity", median_clamp_residual(lat, gen, barriers, sol), sc.tolerances["clamp"]),
    ]


def _random_nested_rules(lat, rng, count):
    for _ in range(count):
        sigma = [rng.random(lat.level_size(i)) < 0.3 for i in range(lat.steps + 1)]
        extra = [rng.random(lat.level_size(i)) < 0.3 for i in range(lat.steps + 1)]
        tau = [s | e for s, e in zip(sigma, extra)]
        yield StoppingRule(tuple(tau)), StoppingRule(tuple(sigma))


def _run_bsde(sc: Scenario, rng) -> RunReport:
    lat, gen = sc.lattice, sc.generator
    xi = sc.terminal(lat.horizon, lat.walk(lat.steps))
    X, Z = solve_bsde(lat, gen, xi)
    checks = [Check("finite_values", all(np.isfinite(v).all() for v in X.values))]
    tol = sc.tolerances
    worst = 0.0
    for _ in range(sc.sweeps["comparison"]):
        bump = rng.uniform(0.0, 1.0, size=xi.shape) * (rng.random(xi.shape) < 0.5)
        X2, _ = solve_bsde(lat, gen, xi + bump)
        worst = max(worst, max(float(np.max(a - b)) for a, b in zip(X.values, X2.values)))
    checks.append(_within("comparison", max(worst, 0.0), tol["comparison"], f"{sc.sweeps['comparison']} pairs"))
    if gen.family is GeneratorFamily.ZERO:
        avg = [xi]
        for i in range(lat.steps - 1, -1, -1):
            up, down = lat.child_indices(i)
            avg.insert(0, 0.5 * (avg[0][up] + avg[0][down]))
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(avg, X.values))
        checks.append(_within("zero_generator_conditional_expectation", diff, tol["classical"]))
    if gen.coherent:
        worst = 0.0
        for tau, sigma in _random_nested_rules(lat, rng, sc.sweeps["coherence"]):
            inner = AdaptedProcess(
                lat,
                [np.array([evaluate_at_rule(lat, gen, X, sigma, n) for n in lat.nodes(i)]) for i in range(lat.steps + 1)],
            )
            outer = evaluate_at_rule(lat, gen, inner, tau)
            worst = max(worst, abs(outer - X.root))
        checks.append(_within("coherence", worst, tol["coherence"], f"{sc.sweeps['coherence']} nested pairs"))
        if lat.mode is Mode.FULL_TREE:
            worst = 0.0
            for _, sigma in _random_nested_rules(lat, rng, sc.sweeps["coherence"]):
                stopped = _stopped_terminal(lat, X, sigma)
                Xs, _ = solve_bsde(lat, gen, stopped)
                direct = evaluate_at_rule(lat, gen, X, sigma)
                worst = max(worst, abs(Xs.root - direct))
            checks.append(_within("stopped_terminal_invariance", worst, tol["stopped_terminal"]))
    outputs = {"value_root": X.root}
    return RunReport(sc, node_rows(unreflected_triple(X, Z)), outputs, checks)


def _stopped_terminal(lat, payoff: AdaptedProcess, rule: StoppingRule) -> np.ndarray:
    """Leaf values equal to the payoff at the first hit of ``rule`` (full tree)."""
    N = lat.steps
    leaves = np.arange(lat.level_size(N))
    out = np.empty(len(leaves))
    done = np.zeros(len(leaves), dtype=bool)
    for i in range(N + 1):
        idx = leaves >> (N - i)
        hit = rule.masks[i][idx] & ~done
        out[hit] = payoff.values[i][idx[hit]]
        done |= hit
    return out


def _run_reflected(sc: Scenario, rng) -> RunReport:
    lat, gen, bar = sc.lattice, sc.generator, sc.barriers
    L, U = bar.processes(lat)
    xi = L.terminal if sc.terminal is None else sc.terminal(lat.horizon, lat.walk(lat.steps))
    sol = solve_drbsde(lat, gen, bar, xi)
    checks = _band_checks(sc, sol, gen, bar)
    errors = []
    for p in sc.penalties:
        Xp, _ = solve_drbsde_penalized(lat, gen, bar, xi, p)
        errors.append(abs(Xp.root - sol.X.root))
    nonincreasing = all(b <= a for a, b in zip(errors, errors[1:]))
    checks.append(Check("penalized_error_nonincreasing", nonincreasing, detail=f"penalties {sc.penalties}"))
    worst = 0.0
    for _ in range(sc.sweeps["barrier_raise"]):
        bump = [rng.uniform(0, 1, l.shape) * (u - l) for l, u in zip(L.values, U.values)]
        raised = BarrierSpec(AdaptedProcess(lat, [l + b for l, b in zip(L.values, bump)]), U)
        xi2 = np.maximum(xi, raised.processes(lat)[0].terminal)
        sol2 = solve_drbsde(lat, gen, raised, xi2)
        worst = max(worst, max(float(np.max(a - b)) for a, b in zip(sol.X.values, sol2.X.values)))
    checks.append(_within("raising_L_never_lowers_X", max(worst, 0.0), sc.tolerances["comparison"]))
    outputs = {
        "value_root": sol.X.root,
        "penalties": list(sc.penalties),
        "penalized_root_errors": errors,
    }
    return _with_rows(sc, sol, outputs, checks)


def _with_rows(sc: Scenario, sol: SolutionTriple, outputs, checks) -> RunReport:
    kind = "cumulative" if sc.lattice.mode is Mode.FULL_TREE else "increments"
    return RunReport(sc, node_rows(sol), outputs, checks, k_columns=kind)


def _run_game(sc: Scenario, rng) -> RunReport:
    lat = sc.lattice
    gi = GameInstance(lat, sc.generator, sc.barriers)
    sol = game_value(gi)
    tau, sigma = saddle_times(sol, sc.barriers)
    checks = _band_checks(sc, sol, sc.generator, sc.barriers)
    pair = evaluate_pair(gi, tau, sigma)
    checks.append(_within("saddle_pair_value_equals_X", abs(pair - sol.X.root), sc.tolerances["value_identity"]))
    if sc.generator.family is GeneratorFamily.ZERO:
        ref = classical_dynkin_value(lat, sc.barriers)
        diff = max(abs(v - sol.X[n]) for n, v in ref.items())
        checks.append(_within("classical_dynkin_reduction", diff, sc.tolerances["classical"]))
    outputs = {
        "value_root": sol.X.root,
        "saddle_pair_value": pair,
        "tau_star_interior": _rule_nodes(tau, lat),
        "sigma_star_interior": _rule_nodes(sigma, lat),
    }
    return _with_rows(sc, sol, outputs, checks)


def _run_game_verify(sc: Scenario, rng) -> RunReport:
    lat = sc.lattice
    gi = GameInstance(lat, sc.generator, sc.barriers)
    sol = game_value(gi)
    rep = verify_saddle(gi, tol=sc.tolerances["saddle"])
    tol = sc.tolerances
    checks = _band_checks(sc, sol, sc.generator, sc.barriers)
    checks += [
        _within("saddle_left_violation", rep.max_left_violation, tol["saddle"]),
        _within("saddle_right_violation", rep.max_right_violation, tol["saddle"]),
        _within("lower_value_equals_X", abs(rep.lower_V - rep.value_root), tol["value_identity"]),
        _within("upper_value_equals_X", abs(rep.upper_V - rep.value_root), tol["value_identity"]),
        Check("lower_le_upper", rep.lower_V <= rep.upper_V, rep.upper_V - rep.lower_V),
    ]
    if sc.generator.family is GeneratorFamily.ZERO:
        ref = classical_dynkin_value(lat, sc.barriers)
        diff = max(abs(v - sol.X[n]) for n, v in ref.items())
        checks.append(_within("classical_dynkin_reduction", diff, tol["classical"]))
    outputs = {
        "value_root": rep.value_root,
        "lower_V": rep.lower_V,
        "upper_V": rep.upper_V,
        "saddle_value": rep.saddle_value,
        "max_left_violation": rep.max_left_violation,
        "max_right_violation": rep.max_right_violation,
        "pairs_checked": rep.pairs_checked,
        "sweep_mode": rep.mode,
        "tau_star_interior": _rule_nodes(rep.tau_star, lat),
        "sigma_star_interior": _rule_nodes(rep.sigma_star, lat),
    }
    return _with_rows(sc, sol, outputs, checks)


def _run_constrained(sc: Scenario, rng) -> RunReport:
    lat, phi = sc.lattice, sc.constraint
    gi = GameInstance(lat, sc.generator, sc.barriers)
    ladder = run_ladder(gi, phi, sc.schedule, require_increasing_lower=sc.barriers.increasing_lower)
    rep = constrained_report(ladder, gi, phi)
    tol = sc.tolerances
    top = ladder.top.solution
    checks = _band_checks(sc, top, ladder.top.driver, sc.barriers)
    checks += [
        _within("ladder_values_nondecreasing", ladder.worst_value_drop, tol["ladder_slack"]),
        Check("tau_hits_nondecreasing_in_m", ladder.monotone_tau),
        Check("sigma_hits_nonincreasing_in_m", ladder.monotone_sigma),
        _within("values_bounded_by_B", max(rep.max_value - rep.bound, 0.0), tol["bound"]),
    ]
    if rep.left_violation is not None:
        checks.append(_within("sweep_left_violation", rep.left_violation, tol["ladder_sweep"]))
        checks.append(_within("sweep_right_violation", rep.right_violation, tol["ladder_sweep"]))
    if phi.lipschitz_Mphi == 0.0:
        base = game_value(gi)
        diff = max(lv.solution.X.max_abs_diff(base.X) for lv in ladder.levels)
        checks.append(_within("zero_constraint_reduction", diff, tol["reduction"]))
    outputs = {
        "schedule": ladder.schedule,
        "root_values": ladder.root_values(),
        "gaps": ladder.gaps,
        "value_estimate": rep.value_estimate,
        "residual_gap": rep.residual_gap,
        "stabilized": rep.stabilized,
        "tau_limit_interior": _rule_nodes(rep.tau_limit, lat),
        "sigma_limit_interior": _rule_nodes(rep.sigma_limit, lat),
        "constraint_residual": rep.constraint_residual,
        "left_violation": rep.left_violation,
        "right_violation": rep.right_violation,
        "rules_checked": rep.rules_checked,
        "increasing_lower": ladder.increasing_lower,
        "warnings": rep.warnings,
        "step_note": "dt is bound by the top penalty level (discretisation requirement)",
    }
    return _with_rows(sc, top, outputs, checks)


def _run_continuity(sc: Scenario, rng) -> RunReport:
    lat = sc.lattice
    xi = sc.terminal(lat.horizon, lat.walk(lat.steps))
    make = harmonic_sequence if sc.sequence_kind == "harmonic" else geometric_sequence
    seq = make(xi, sc.sequence_count)
    tol = sc.tolerances["continuity"]
    rep = continuity_from_below_check(lat, sc.generator, sc.constraint, seq, xi, sc.schedule, tol=tol)
    checks = [
        Check("monotone_in_n", rep.monotone_in_n),
        Check("monotone_in_m", rep.monotone_in_m),
        Check("nodewise_comparison", rep.comparison_ok),
        _within("terminal_gap", rep.terminal_gap, tol),
        _within("limit_interchange", rep.interchange_gap, tol),
    ]
    drv = penalized_driver(sc.generator, sc.constraint, rep.schedule[-1])
    X, Z = solve_bsde(lat, drv, xi)
    outputs = {
        "schedule": rep.schedule,
        "sequence": {"kind": sc.sequence_kind, "count": sc.sequence_count},
        "limit_values": rep.limit_values.tolist(),
        "last_sequence_values": rep.table[:, -1].tolist(),
        "terminal_gaps": rep.terminal_gaps.tolist(),
        "diagonal_sup": rep.diagonal_sup,
        "limit_sup": rep.limit_sup,
    }
    return RunReport(sc, node_rows(unreflected_triple(X, Z)), outputs, checks)


_PIPELINES = {
    Pipeline.BSDE: _run_bsde,
    Pipeline.REFLECTED: _run_reflected,
    Pipeline.GAME: _run_game,
    Pipeline.GAME_VERIFY: _run_game_verify,
    Pipeline.CONSTRAINED: _run_constrained,
    Pipeline.CONTINUITY: _run_continuity,
}


def run_scenario(sc: Scenario) -> RunReport:
    rng = np.random.default_rng(sc.seed)
    start = time.perf_counter()
    try:
        report = _PIPELINES[sc.pipeline](sc, rng)
    except DynkinLabError as exc:
        raise ScenarioRunError(sc.name, exc) from exc
    report.wall_time = time.perf_counter() - start
    return report


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def emit_report(report: RunReport, out_dir: str | Path) -> int:
    """Write ``values.csv`` and ``summary.json``; return the exit status."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "values.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in report.rows:
            writer.writerow([_fmt(v) for v in row])
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(report.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report.exit_code
