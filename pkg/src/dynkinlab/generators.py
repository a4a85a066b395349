"""Driver and constraint families with known Lipschitz constants.

Solvers work with :class:`Driver` objects, a vectorised callable
``fn(level, t, w, y, z)`` plus its Lipschitz constants. Generator and
constraint specs convert to drivers; penalised drivers (``g + m * phi`` or
barrier penalties) are built on top of them.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import StepTooCoarse

# the implicit one-step scheme contracts when dt * M <= STEP_BOUND
STEP_BOUND = 0.5


class GeneratorFamily(str, enum.Enum):
    ZERO = "Zero"
    LINEAR_Z = "LinearZ"
    KAPPA_ABS = "KappaAbs"
    LINEAR_YZ = "LinearYZ"


class ConstraintFamily(str, enum.Enum):
    NONE = "None"
    ABS_Z = "AbsZ"
    NEG_Z = "NegZ"
    Z_ABOVE_C = "ZAboveC"


@dataclass(frozen=True)
class Driver:
    fn: Callable[..., np.ndarray]
    lipschitz: float
    z_lipschitz: float
    coherent: bool
    label: str = "driver"

    def __call__(self, level, t, w, y, z):
        return self.fn(level, t, w, y, z)


@dataclass(frozen=True)
class GeneratorSpec:
    """g(t, y, z) from a closed parametric family.

    ``Zero``: 0; ``LinearZ``: b z; ``KappaAbs``: -kappa |z|;
    ``LinearYZ``: a y + b z (not coherent when a != 0).
    """

    family: GeneratorFamily = GeneratorFamily.ZERO
    a: float = 0.0
    b: float = 0.0
    kappa: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", GeneratorFamily(self.family))
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")

    @classmethod
    def zero(cls) -> "GeneratorSpec":
        return cls(GeneratorFamily.ZERO)

    @classmethod
    def linear_z(cls, b: float) -> "GeneratorSpec":
        return cls(GeneratorFamily.LINEAR_Z, b=float(b))

    @classmethod
    def kappa_abs(cls, kappa: float) -> "GeneratorSpec":
        return cls(GeneratorFamily.KAPPA_ABS, kappa=float(kappa))

    @classmethod
    def linear_yz(cls, a: float, b: float) -> "GeneratorSpec":
        return cls(GeneratorFamily.LINEAR_YZ, a=float(a), b=float(b))

    @property
    def lipschitz_M(self) -> float:
        f = self.family
        if f is GeneratorFamily.ZERO:
            return 0.0
        if f is GeneratorFamily.LINEAR_Z:
            return abs(self.b)
        if f is GeneratorFamily.KAPPA_ABS:
            return self.kappa
        return max(abs(self.a), abs(self.b))

    @property
    def z_lipschitz(self) -> float:
        f = self.family
        if f is GeneratorFamily.KAPPA_ABS:
            return self.kappa
        if f in (GeneratorFamily.LINEAR_Z, GeneratorFamily.LINEAR_YZ):
            return abs(self.b)
        return 0.0

    @property
    def coherent(self) -> bool:
        """g(t, y, 0) = 0 for every (t, y)."""
        return self.family is not GeneratorFamily.LINEAR_YZ or self.a == 0.0

    def evaluate(self, t, y, z):
        f = self.family
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        if f is GeneratorFamily.ZERO:
            return np.zeros(np.broadcast(y, z).shape)
        if f is GeneratorFamily.LINEAR_Z:
            return self.b * z + 0.0 * y
        if f is GeneratorFamily.KAPPA_ABS:
            return -self.kappa * np.abs(z) + 0.0 * y
        return self.a * y + self.b * z

    def driver(self) -> Driver:
        return Driver(
            lambda level, t, w, y, z: self.evaluate(t, y, z),
            self.lipschitz_M,
            self.z_lipschitz,
            self.coherent,
            label=self.family.value,
        )


@dataclass(frozen=True)
class ConstraintSpec:
    """Nonnegative constraint phi(t, y, z); the constraint set is {phi = 0}.

    ``None``: 0; ``AbsZ``: lam |z|; ``NegZ``: lam z^-; ``ZAboveC``: lam (z - c)^+.
    """

    family: ConstraintFamily = ConstraintFamily.NONE
    lam: float = 0.0
    c: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", ConstraintFamily(self.family))
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.c < 0:
            raise ValueError("c must be nonnegative so that phi(t, y, 0) = 0")

    @classmethod
    def none(cls) -> "ConstraintSpec":
        return cls(ConstraintFamily.NONE)

    @classmethod
    def abs_z(cls, lam: float) -> "ConstraintSpec":
        return cls(ConstraintFamily.ABS_Z, lam=float(lam))

    @classmethod
    def neg_z(cls, lam: float) -> "ConstraintSpec":
        return cls(ConstraintFamily.NEG_Z, lam=float(lam))

    @classmethod
    def z_above_c(cls, c: float, lam: float) -> "ConstraintSpec":
        return cls(ConstraintFamily.Z_ABOVE_C, lam=float(lam), c=float(c))

    @property
    def lipschitz_Mphi(self) -> float:
        return 0.0 if self.family is ConstraintFamily.NONE else self.lam

    def evaluate(self, t, y, z):
        f = self.family
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        if f is ConstraintFamily.NONE:
            return np.zeros(np.broadcast(y, z).shape)
        if f is ConstraintFamily.ABS_Z:
            return self.lam * np.abs(z) + 0.0 * y
        if f is ConstraintFamily.NEG_Z:
            return self.lam * np.maximum(-z, 0.0) + 0.0 * y
        return self.lam * np.maximum(z - self.c, 0.0) + 0.0 * y


def eval_generator(spec: GeneratorSpec, t: float, y: float, z: float) -> float:
    return float(spec.evaluate(t, y, z))


def eval_constraint(spec: ConstraintSpec, t: float, y: float, z: float) -> float:
    return float(spec.evaluate(t, y, z))


def as_driver(gen) -> Driver:
    if isinstance(gen, Driver):
        return gen
    if isinstance(gen, GeneratorSpec):
        return gen.driver()
    raise TypeError(f"cannot use {type(gen).__name__} as a driver")


def penalized_driver(gen: GeneratorSpec | Driver, phi: ConstraintSpec, m: float) -> Driver:
    """Driver ``g + m * phi``; coherent whenever ``g`` is (phi vanishes at z = 0)."""
    base = as_driver(gen)
    m = float(m)

    def fn(level, t, w, y, z):
        return base(level, t, w, y, z) + m * phi.evaluate(t, y, z)

    return Driver(
        fn,
        base.lipschitz + m * phi.lipschitz_Mphi,
        base.z_lipschitz + m * phi.lipschitz_Mphi,
        base.coherent,
        label=f"{base.label}+{m:g}*phi",
    )


def _lipschitz_of(item) -> tuple[float, float]:
    if isinstance(item, (int, float)):
        return float(item), float(item)
    d = as_driver(item)
    return d.lipschitz, d.z_lipschitz


def validate_step(specs, dt: float, horizon: float | None = None, monotone: bool = False) -> None:
    """Raise :class:`StepTooCoarse` unless ``dt * M_eff <= 0.5``.

    ``specs`` is a driver, generator spec, plain Lipschitz constant, or an
    iterable of those; the largest constant is checked. With
    ``monotone=True`` the z-slope must also satisfy ``sqrt(dt) * M_z <= 1``,
    without which the one-step operator is not order preserving.
    """
    items = list(specs) if isinstance(specs, Iterable) and not isinstance(specs, (str, bytes)) else [specs]
    m_eff = max((_lipschitz_of(s)[0] for s in items), default=0.0)
    mz_eff = max((_lipschitz_of(s)[1] for s in items), default=0.0)
    T = horizon if horizon is not None else 1.0
    if dt * m_eff > STEP_BOUND:
        need = math.ceil(m_eff * T / STEP_BOUND - 1e-12)
        what = f"N >= {need}" if horizon is not None else f"N >= {m_eff / STEP_BOUND:g}*T"
        raise StepTooCoarse(need, f"dt*M = {dt * m_eff:g} exceeds {STEP_BOUND}; need {what}")
    if monotone and math.sqrt(dt) * mz_eff > 1.0:
        need = math.ceil(mz_eff**2 * T - 1e-12)
        what = f"N >= {need}" if horizon is not None else f"N >= {mz_eff**2:g}*T"
        raise StepTooCoarse(
            need, f"sqrt(dt)*M_z = {math.sqrt(dt) * mz_eff:g} exceeds 1 (scheme not monotone); need {what}"
        )
