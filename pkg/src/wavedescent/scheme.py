"""Explicit time-stepping schemes for the damped-wave descent flow.

The flow ``rho * u_tt + rho * a * u_t = -grad E(u)`` turns gradient descent's
diffusion-like dynamics into wave-like dynamics, which admits time steps
proportional to dx instead of dx^2.  All schemes below are written in
recursive increment form: the state carries the previous increment
``du = u^n - u^{n-1}`` and each step produces the next one.

With ``G = grad E(u^n) / rho``:

* gradient descent     du^n = -dt * G
* accel1 (forward-difference friction)
                       du^n = (du^{n-1} - dt^2 G) / (1 + a dt)
* accel2 (central-difference friction)
                       du^n = (2 - a dt)/(2 + a dt) du^{n-1}
                              - 2 dt^2/(2 + a dt) G
* semi (semi-implicit) predict v = u^n + (2 - a dt)/(2 + a dt) du^{n-1},
                       then u^{n+1} = v - 2 dt^2/(2 + a dt) grad E(v)/rho

The two explicit accelerated schemes are the same flow on slightly different
clocks: ``remap_first_to_second`` and ``remap_second_to_first`` convert
(a, dt) pairs between them step-for-step.  At ``a2 * dt2 = 2`` the
central-difference scheme degenerates to gradient descent with an effective
step dt2^2/2, and beyond it the previous increment acts as resistance;
``classify_damping`` names these regimes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .energy import ProblemSpec, gradient
from .grid import GridField

__all__ = [
    "SchemeKind",
    "AutoCFL",
    "SchemeConfig",
    "SolverState",
    "BlowUpError",
    "step",
    "remap_first_to_second",
    "remap_second_to_first",
    "DampingRegime",
    "classify_damping",
    "DEFAULT_QUANTIZATION",
]

# Gray-level quantization step assumed by the total-variation step-size bound:
# images read from 8-bit files change in multiples of 1/255.
DEFAULT_QUANTIZATION = 1.0 / 255.0


class SchemeKind(str, Enum):
    GRADIENT_DESCENT = "gd"
    ACCEL1 = "accel1"
    ACCEL2 = "accel2"
    SEMI_IMPLICIT = "semi"


@dataclass(frozen=True)
class AutoCFL:
    """Ask the solver to derive dt from the problem's amplification bound.

    ``safety`` scales the analytic limit; ``None`` picks 1.0 for quadratic
    penalties (whose bound is attained) and 0.9 for the nonlinear ones
    (whose bound is conservative but field-dependent in practice).
    """

    safety: float | None = None

    def __post_init__(self) -> None:
        if self.safety is not None and not 0 < self.safety <= 1:
            raise ValueError("CFL safety factor must lie in (0, 1]")


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme selection plus step-size policy."""

    kind: SchemeKind = SchemeKind.ACCEL2
    dt: float | AutoCFL = AutoCFL()
    quantization: float = DEFAULT_QUANTIZATION

    def __post_init__(self) -> None:
        if isinstance(self.dt, (int, float)) and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.quantization > 0:
            raise ValueError("quantization step must be positive")


@dataclass(frozen=True)
class SolverState:
    """Current field, previous increment, and simulated time."""

    u: GridField
    prev_increment: GridField
    iteration: int = 0
    time: float = 0.0

    @classmethod
    def initial(cls, u0: GridField, prev_increment: GridField | None = None) -> "SolverState":
        """State at iteration zero; the increment history defaults to zero."""
        if prev_increment is None:
            prev_increment = u0.zeros_like()
        if prev_increment.data.shape != u0.data.shape:
            raise ValueError("initial increment must live on the field's grid")
        return cls(u0, prev_increment)


class BlowUpError(RuntimeError):
    """The iteration produced non-finite (or runaway) samples."""

    def __init__(self, iteration: int, message: str | None = None):
        super().__init__(message or f"solution blew up at iteration {iteration}")
        self.iteration = iteration
        self.log = None  # solver attaches its partial log when propagating


GradFn = Callable[[GridField], GridField]


def _resolved_dt(cfg: SchemeConfig) -> float:
    if isinstance(cfg.dt, AutoCFL):
        raise TypeError("dt is still an AutoCFL policy; resolve it before stepping")
    return float(cfg.dt)


def step(
    spec: ProblemSpec,
    cfg: SchemeConfig,
    state: SolverState,
    grad_fn: GradFn | None = None,
) -> SolverState:
    """Advance the flow by one time step.

    ``grad_fn`` overrides the energy gradient (it still gets divided by rho);
    by default the gradient of ``spec``'s energy is used.  Raises
    ``BlowUpError`` as soon as the updated field contains non-finite samples.
    """
    dt = _resolved_dt(cfg)
    if spec.damping is None:
        raise ValueError("spec.damping is unresolved; set it before stepping")
    a = spec.damping
    if grad_fn is None:
        grad_fn = lambda u: gradient(spec, u)

    u = state.u.data
    prev = state.prev_increment.data
    kind = cfg.kind

    if kind is SchemeKind.GRADIENT_DESCENT:
        G = grad_fn(state.u).data / spec.rho
        du = -dt * G
    elif kind is SchemeKind.ACCEL1:
        G = grad_fn(state.u).data / spec.rho
        du = (prev - dt * dt * G) / (1.0 + a * dt)
    elif kind is SchemeKind.ACCEL2:
        G = grad_fn(state.u).data / spec.rho
        w = (2.0 - a * dt) / (2.0 + a * dt)
        du = w * prev - (2.0 * dt * dt / (2.0 + a * dt)) * G
    elif kind is SchemeKind.SEMI_IMPLICIT:
        w = (2.0 - a * dt) / (2.0 + a * dt)
        v = state.u.with_data(u + w * prev)
        Gv = grad_fn(v).data / spec.rho
        du = (v.data - (2.0 * dt * dt / (2.0 + a * dt)) * Gv) - u
    else:  # pragma: no cover - the enum is exhaustive
        raise ValueError(f"unknown scheme kind {kind!r}")

    u_next = u + du
    iteration = state.iteration + 1
    if not np.all(np.isfinite(u_next)):
        raise BlowUpError(iteration)
    return SolverState(
        u=state.u.with_data(u_next),
        prev_increment=state.u.with_data(du),
        iteration=iteration,
        time=state.time + dt,
    )


def remap_first_to_second(a1: float, dt1: float) -> tuple[float, float]:
    """Parameters (a2, dt2) making the accel2 scheme reproduce accel1's steps."""
    if not (a1 >= 0 and dt1 > 0):
        raise ValueError("need a1 >= 0 and dt1 > 0")
    factor = math.sqrt(1.0 + a1 * dt1 / 2.0)
    return a1 / factor, dt1 / factor


def remap_second_to_first(a2: float, dt2: float) -> tuple[float, float]:
    """Inverse of ``remap_first_to_second``.

    Defined only in the under-damped regime ``a2 * dt2 < 2``; at or beyond
    critical damping no forward-difference parameters reproduce the flow, and
    a ``ValueError`` is raised.
    """
    if not (a2 >= 0 and dt2 > 0):
        raise ValueError("need a2 >= 0 and dt2 > 0")
    if a2 * dt2 >= 2.0:
        raise ValueError(
            "no first-order equivalent: a2*dt2 >= 2 (critical or resisted regime)"
        )
    factor = math.sqrt(1.0 - a2 * dt2 / 2.0)
    return a2 / factor, dt2 / factor


class DampingRegime(Enum):
    UNDERDAMPED = "underdamped"
    CRITICAL_GRADIENT_DESCENT = "critical-gradient-descent"
    RESISTED_GRADIENT_DESCENT = "resisted-gradient-descent"


def classify_damping(a2: float, dt2: float, z_max: float) -> DampingRegime:
    """Regime of the accel2 scheme at friction ``a2`` and step ``dt2``.

    Below ``a2 * dt2 = 2`` the previous increment assists the update
    (momentum); at exactly 2 the scheme is plain gradient descent with step
    dt2^2/2; beyond it the increment weight turns negative and acts as
    resistance.  ``z_max`` gives the stable-step context: when
    ``a2 < sqrt(z_max)`` every stable step keeps the scheme under-damped.
    """
    if not (a2 >= 0 and dt2 > 0 and z_max > 0):
        raise ValueError("classification needs a2 >= 0, dt2 > 0, z_max > 0")
    product = a2 * dt2
    if product < 2.0:
        return DampingRegime.UNDERDAMPED
    if product == 2.0:
        return DampingRegime.CRITICAL_GRADIENT_DESCENT
    return DampingRegime.RESISTED_GRADIENT_DESCENT
