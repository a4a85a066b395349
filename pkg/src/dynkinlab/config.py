"""Scenario files: YAML documents describing one pipeline run.

See ``scenarios/annotated_example.yaml`` for every key with comments.
"""
from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import dynkin
from .errors import DynkinLabError, ParseError, StepTooCoarse, ValidationError
from .generators import (
    ConstraintFamily,
    ConstraintSpec,
    GeneratorFamily,
    GeneratorSpec,
    penalized_driver,
    validate_step,
)
from .lattice import MAX_TREE_DEPTH, Lattice, Mode
from .rbsde import FORMS, BarrierSpec, NodeFunction, barrier_penalty_driver

SCENARIO_DIR = Path(__file__).parent / "scenarios"


class Pipeline(str, enum.Enum):
    BSDE = "Bsde"
    REFLECTED = "Reflected"
    GAME = "Game"
    GAME_VERIFY = "GameVerify"
    CONSTRAINED = "Constrained"
    CONTINUITY = "ContinuityCheck"


DEFAULT_TOLERANCES = {
    "saddle": 1e-10,
    "value_identity": 1e-10,
    "clamp": 1e-12,
    "comparison": 1e-12,
    "coherence": 1e-10,
    "stopped_terminal": 1e-12,
    "classical": 1e-12,
    "ladder_slack": 1e-12,
    "ladder_sweep": 1e-8,
    "reduction": 1e-12,
    "bound": 1e-12,
    "continuity": 1e-8,
}

DEFAULT_SWEEPS = {"comparison": 20, "coherence": 10, "barrier_raise": 10}

_TOP_KEYS = {
    "name", "pipeline", "seed", "lattice", "generator", "constraint", "barriers",
    "terminal", "schedule", "penalties", "sequence", "tolerances", "sweeps",
}


@dataclass
class Scenario:
    name: str
    pipeline: Pipeline
    lattice: Lattice
    generator: GeneratorSpec
    constraint: ConstraintSpec
    barriers: BarrierSpec
    terminal: NodeFunction | None = None
    schedule: list[float] = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])
    penalties: list[float] = field(default_factory=lambda: [4.0, 8.0, 16.0, 32.0])
    sequence_kind: str = "harmonic"
    sequence_count: int = 64
    tolerances: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    sweeps: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_SWEEPS))
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)

    def echo(self) -> dict:
        """Normalised scenario as plain data (written into the summary)."""
        def form(f):
            return None if f is None else {"form": f.form, "a0": f.a0, "a1": f.a1, "a2": f.a2, "floor": f.floor}

        g, c, b = self.generator, self.constraint, self.barriers
        return {
            "name": self.name,
            "pipeline": self.pipeline.value,
            "seed": self.seed,
            "lattice": {"T": self.lattice.horizon, "N": self.lattice.steps, "mode": self.lattice.mode.value},
            "generator": {"family": g.family.value, "a": g.a, "b": g.b, "kappa": g.kappa},
            "constraint": {"family": c.family.value, "lambda": c.lam, "c": c.c},
            "barriers": {
                "lower": form(b.lower),
                "upper": form(b.upper),
                "bound": b.bound,
                "increasing_lower": b.increasing_lower,
            },
            "terminal": form(self.terminal),
            "schedule": list(self.schedule),
            "penalties": list(self.penalties),
            "sequence": {"kind": self.sequence_kind, "count": self.sequence_count},
            "tolerances": dict(sorted(self.tolerances.items())),
            "sweeps": dict(sorted(self.sweeps.items())),
        }


def _num(value, key: str, integer: bool = False) -> float:
    # PyYAML reads "1e-10" (no dot) as a string
    if isinstance(value, bool):
        raise ValidationError(key, "expected a number")
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            raise ValidationError(key, f"expected a number, got {value!r}") from None
    if not isinstance(value, (int, float)):
        raise ValidationError(key, f"expected a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ValidationError(key, "expected an integer")
        return int(value)
    return float(value)


def _section(data: dict, key: str, required: bool = True) -> dict:
    sec = data.get(key)
    if sec is None:
        if required:
            raise ValidationError(key, "missing section")
        return {}
    if not isinstance(sec, dict):
        raise ValidationError(key, "expected a mapping")
    return sec


def _enum(cls, value, key: str):
    try:
        return cls(value)
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        raise ValidationError(key, f"unknown value {value!r}; allowed: {allowed}") from None


def _check_keys(sec: dict, allowed: set, prefix: str) -> None:
    extra = sorted(set(sec) - allowed)
    if extra:
        raise ValidationError(f"{prefix}.{extra[0]}" if prefix else extra[0], "unknown key")


def _node_function(value, key: str) -> NodeFunction:
    if isinstance(value, (int, float, str)) and not isinstance(value, bool):
        return NodeFunction.constant(_num(value, key))
    if not isinstance(value, dict):
        raise ValidationError(key, "expected a number or a form mapping")
    _check_keys(value, {"form", "a0", "a1", "a2", "floor"}, key)
    form = value.get("form", "constant")
    if form not in FORMS:
        raise ValidationError(f"{key}.form", f"unknown form {form!r}; allowed: {', '.join(FORMS)}")
    return NodeFunction(
        form,
        **{k: _num(value.get(k, 0.0), f"{key}.{k}") for k in ("a0", "a1", "a2", "floor")},
    )


def _generator(sec: dict) -> GeneratorSpec:
    _check_keys(sec, {"family", "a", "b", "kappa"}, "generator")
    fam = _enum(GeneratorFamily, sec.get("family", "Zero"), "generator.family")
    params = {k: _num(sec.get(k, 0.0), f"generator.{k}") for k in ("a", "b", "kappa")}
    if params["kappa"] < 0:
        raise ValidationError("generator.kappa", "must be >= 0")
    return GeneratorSpec(fam, **params)


def _constraint(sec: dict) -> ConstraintSpec:
    _check_keys(sec, {"family", "lambda", "c"}, "constraint")
    fam = _enum(ConstraintFamily, sec.get("family", "None"), "constraint.family")
    lam = _num(sec.get("lambda", 0.0), "constraint.lambda")
    c = _num(sec.get("c", 0.0), "constraint.c")
    if lam < 0:
        raise ValidationError("constraint.lambda", "must be >= 0")
    if c < 0:
        raise ValidationError("constraint.c", "must be >= 0")
    return ConstraintSpec(fam, lam=lam, c=c)


def _number_list(value, key: str) -> list[float]:
    if not isinstance(value, list) or not value:
        raise ValidationError(key, "expected a nonempty list of numbers")
    out = [_num(v, f"{key}[{i}]") for i, v in enumerate(value)]
    if any(v < 0 for v in out):
        raise ValidationError(key, "entries must be >= 0")
    return out


def load_yaml(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ParseError(None, None, f"no such file: {path}") from None
    except UnicodeDecodeError as exc:
        raise ParseError(None, None, f"not UTF-8 text: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = mark.line + 1 if mark is not None else None
        raise ParseError(line, None, exc.problem or str(exc)) from None
    if not isinstance(data, dict):
        raise ParseError(1, None, "top level must be a mapping")
    return data


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key.path=value`` strings; values are read as YAML scalars."""
    data = copy.deepcopy(data)
    for item in overrides or []:
        if "=" not in item:
            raise ValidationError(item, "override must look like key=value")
        key, _, raw = item.partition("=")
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            if not isinstance(nxt, dict):
                raise ValidationError(key, f"{p} is not a mapping")
            node = nxt
        node[parts[-1]] = yaml.safe_load(raw)
    return data


def scenario_from_dict(data: dict) -> Scenario:
    _check_keys(data, _TOP_KEYS, "")
    name = data.get("name")
    if not isinstance(name, str) or not name.strip():
        raise ValidationError("name", "required nonempty string")
    pipeline = _enum(Pipeline, data.get("pipeline"), "pipeline")
    seed = _num(data.get("seed", 0), "seed", integer=True)

    lsec = _section(data, "lattice")
    _check_keys(lsec, {"T", "N", "mode"}, "lattice")
    T = _num(lsec.get("T", 1.0), "lattice.T")
    N = _num(lsec.get("N"), "lattice.N", integer=True) if "N" in lsec else None
    if N is None:
        raise ValidationError("lattice.N", "required")
    mode = _enum(Mode, lsec.get("mode", "Recombining"), "lattice.mode")
    if T <= 0:
        raise ValidationError("lattice.T", "must be > 0")
    if N < 1:
        raise ValidationError("lattice.N", "must be >= 1")
    if mode is Mode.FULL_TREE and N > MAX_TREE_DEPTH:
        raise ValidationError("lattice", f"FullTree requires N <= {MAX_TREE_DEPTH}")
    lat = Lattice(T, N, mode)

    gen = _generator(_section(data, "generator", required=False))
    phi = _constraint(_section(data, "constraint", required=False))

    bsec = _section(data, "barriers", required=pipeline is not Pipeline.BSDE)
    _check_keys(bsec, {"lower", "upper", "bound", "increasing_lower"}, "barriers")
    lower = _node_function(bsec.get("lower", -1e10), "barriers.lower")
    upper = _node_function(bsec.get("upper", 1e10), "barriers.upper")
    bound = bsec.get("bound")
    bound = None if bound is None else _num(bound, "barriers.bound")
    inc = bsec.get("increasing_lower", pipeline is Pipeline.CONSTRAINED)
    if not isinstance(inc, bool):
        raise ValidationError("barriers.increasing_lower", "expected true or false")
    barriers = BarrierSpec(lower, upper, bound, inc)

    terminal = _node_function(data["terminal"], "terminal") if data.get("terminal") is not None else None
    schedule = _number_list(data.get("schedule", [1, 2, 4, 8]), "schedule")
    penalties = _number_list(data.get("penalties", [4, 8, 16, 32]), "penalties")
    ssec = _section(data, "sequence", required=False)
    _check_keys(ssec, {"kind", "count"}, "sequence")
    kind = ssec.get("kind", "harmonic")
    if kind not in ("harmonic", "geometric"):
        raise ValidationError("sequence.kind", "allowed: harmonic, geometric")
    count = _num(ssec.get("count", 64), "sequence.count", integer=True)
    if count < 1:
        raise ValidationError("sequence.count", "must be >= 1")

    tol = dict(DEFAULT_TOLERANCES)
    tsec = _section(data, "tolerances", required=False)
    _check_keys(tsec, set(DEFAULT_TOLERANCES), "tolerances")
    tol.update({k: _num(v, f"tolerances.{k}") for k, v in tsec.items()})
    sweeps = dict(DEFAULT_SWEEPS)
    wsec = _section(data, "sweeps", required=False)
    _check_keys(wsec, set(DEFAULT_SWEEPS), "sweeps")
    sweeps.update({k: _num(v, f"sweeps.{k}", integer=True) for k, v in wsec.items()})

    sc = Scenario(
        name=name.strip(), pipeline=pipeline, lattice=lat, generator=gen, constraint=phi,
        barriers=barriers, terminal=terminal, schedule=schedule, penalties=penalties,
        sequence_kind=kind, sequence_count=count, tolerances=tol, sweeps=sweeps, seed=seed, raw=data,
    )
    cross_validate(sc)
    return sc


def cross_validate(sc: Scenario) -> None:
    """Pipeline-specific requirements, checked before anything is solved."""
    lat, p = sc.lattice, sc.pipeline
    if p is Pipeline.CONSTRAINED and sc.barriers.bound is None:
        raise ValidationError("barriers.bound", "required for the constrained game")
    if p is not Pipeline.BSDE:
        try:
            sc.barriers.validate(lat, constrained=p is Pipeline.CONSTRAINED)
        except DynkinLabError as exc:
            rule = "L <= U" if "L > U" in str(exc) else str(exc)
            raise ValidationError("barriers", rule) from None
    needs_coherent = p in (Pipeline.GAME, Pipeline.GAME_VERIFY, Pipeline.CONSTRAINED, Pipeline.CONTINUITY)
    if needs_coherent and not sc.generator.coherent:
        raise ValidationError("generator", "pipeline needs g(t, y, 0) = 0 (LinearYZ with a != 0 is not allowed)")
    if p in (Pipeline.BSDE, Pipeline.CONTINUITY) and sc.terminal is None:
        raise ValidationError("terminal", "required for this pipeline")
    if p is Pipeline.REFLECTED and sc.terminal is not None:
        L, U = sc.barriers.processes(lat)
        xi = sc.terminal(lat.horizon, lat.walk(lat.steps))
        if (xi < L.terminal).any() or (xi > U.terminal).any():
            raise ValidationError("terminal", "must lie in [L(T), U(T)]")
    if p is Pipeline.GAME_VERIFY:
        free = lat.nonterminal_count
        if free > dynkin.MAX_FREE_NODES:
            raise ValidationError(
                "lattice", f"enumeration cap: {free} nonterminal nodes exceeds {dynkin.MAX_FREE_NODES}"
            )
    if p is Pipeline.CONSTRAINED and len(sc.schedule) < 2:
        raise ValidationError("schedule", "need at least two penalty levels")
    try:
        if p in (Pipeline.CONSTRAINED, Pipeline.CONTINUITY):
            validate_step([penalized_driver(sc.generator, sc.constraint, m) for m in sc.schedule],
                          lat.dt, lat.horizon, monotone=True)
        else:
            validate_step(sc.generator, lat.dt, lat.horizon, monotone=True)
        if p is Pipeline.REFLECTED:
            validate_step([barrier_penalty_driver(sc.generator, lat, sc.barriers, q) for q in sc.penalties],
                          lat.dt, lat.horizon)
    except StepTooCoarse as exc:
        raise ValidationError("lattice", str(exc)) from None


def resolve_config(ref: str | Path) -> Path:
    """A path, or the name of a shipped scenario (with or without ``.yaml``)."""
    path = Path(ref)
    if path.exists():
        return path
    for cand in (SCENARIO_DIR / str(ref), SCENARIO_DIR / f"{ref}.yaml"):
        if cand.exists():
            return cand
    return path


def parse_config(path: str | Path, overrides=None) -> Scenario:
    data = load_yaml(resolve_config(path))
    return scenario_from_dict(apply_overrides(data, overrides))


def list_examples() -> list[Path]:
    return sorted(SCENARIO_DIR.glob("*.yaml"))
