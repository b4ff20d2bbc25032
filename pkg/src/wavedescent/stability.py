"""Von Neumann stability analysis for the descent schemes.

Frozen-coefficient analysis reduces every scheme to a scalar recursion per
spatial frequency, governed by an amplifier ``z = zhat(omega)`` that collects
the fidelity weight and the linearized penalty flux.  A scheme is stable when
the roots of its characteristic quadratic ``A xi^2 + B xi + C = 0`` stay
inside the closed unit disk for every z up to the problem's bound ``z_max``.

The module provides

* amplifier bounds (``zmax_quadratic``, ``zmax_general``,
  ``zmax_tv_quantized``),
* the root-magnitude predicate ``root_amplitude_ok`` (|xi| <= 1 iff
  |B|/|A| - 1 <= C/A <= 1),
* per-scheme amplification factors and closed-form step limits,
* ``empirical_max_dt``, a bisection cross-check of the closed forms, and a
  CSV boundary sweep for the command-line analyzer.

Besides the four runnable schemes the analyzer also covers the
backward-difference friction discretization (kind ``"backward"``).  That
scheme loses unconditional-in-``a`` stability (its step limit shrinks with
the friction), which is why it is analyzed here but never integrated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .scheme import SchemeKind

__all__ = [
    "BACKWARD_DIFFERENCE",
    "AmplifierBound",
    "zmax_quadratic",
    "zmax_general",
    "zmax_tv_quantized",
    "root_amplitude_ok",
    "amplification_factor",
    "cfl_max_dt",
    "empirical_max_dt",
    "stability_boundary",
    "write_stability_csv",
    "STABILITY_CSV_COLUMNS",
]

# Analyzer-only scheme label (see module docstring).
BACKWARD_DIFFERENCE = "backward"

_ANALYZER_KINDS = tuple(k.value for k in SchemeKind) + (BACKWARD_DIFFERENCE,)

STABILITY_CSV_COLUMNS = ("scheme", "z", "dt", "a", "max_root_magnitude")


def _kind_key(kind: SchemeKind | str) -> str:
    key = kind.value if isinstance(kind, SchemeKind) else str(kind)
    if key not in _ANALYZER_KINDS:
        raise ValueError(f"unknown scheme kind {kind!r}; expected one of {_ANALYZER_KINDS}")
    return key


@dataclass(frozen=True)
class AmplifierBound:
    """Range of the frozen-coefficient amplifier zhat(omega).

    ``attained`` records whether ``z_max`` is reached by an actual frequency
    (true for the quadratic penalty at omega = (pi, ..., pi)) or is only an
    upper bound, in which case running exactly at the nominal step limit
    still leaves a stability margin.
    """

    z_min: float
    z_max: float
    attained: bool

    def __post_init__(self) -> None:
        if not 0 <= self.z_min <= self.z_max:
            raise ValueError("need 0 <= z_min <= z_max")


def zmax_quadratic(lam: float, c: float, ndim: int, dx: float) -> AmplifierBound:
    """Exact amplifier range for the quadratic penalty without a forward model.

    zhat(omega) = lam + (2c/dx^2) * sum_k (1 - cos(omega_k dx)) ranges from
    ``lam`` (constant mode) to ``lam + 4*ndim*c/dx^2``, attained at the
    checkerboard frequency.
    """
    _check_bound_args(lam, ndim, dx)
    if not c > 0:
        raise ValueError("need c > 0")
    return AmplifierBound(lam, lam + 4.0 * ndim * c / dx**2, attained=True)


def zmax_general(
    lambda_max: float,
    c_max: float,
    d_max: float,
    ndim: int,
    dx: float,
    max_dft_sq: float = 1.0,
) -> AmplifierBound:
    """Conservative amplifier bound for a differentiable penalty.

    Freezing the flux coefficients at their suprema and bounding the fidelity
    symbol by the kernel's peak DFT magnitude gives

        z_max <= max|DFT K|^2 * lambda_max + 4*((ndim-1)*c_max + d_max)/dx^2.

    With ``c_max = d_max = c`` this recovers the exact quadratic bound, but in
    general no frequency attains it.
    """
    _check_bound_args(lambda_max, ndim, dx)
    if c_max < 0 or d_max < 0 or max_dft_sq < 0:
        raise ValueError("coefficient bounds must be nonnegative")
    zmax = max_dft_sq * lambda_max + 4.0 * ((ndim - 1) * c_max + d_max) / dx**2
    return AmplifierBound(0.0, zmax, attained=False)


def zmax_tv_quantized(lam: float, quantization: float, ndim: int, dx: float) -> AmplifierBound:
    """Amplifier bound for total variation on quantized gray levels.

    The TV flux coefficient 1/|grad u| is unbounded in general, but when
    nonzero gray-level differences cannot fall below a quantization step Q
    (1/255 for 8-bit data), the gradient magnitude is either 0 or at least
    Q/dx per axis, giving z_max <= lam + 4*sqrt(ndim)/(Q*dx).
    """
    _check_bound_args(lam, ndim, dx)
    if not quantization > 0:
        raise ValueError("quantization step must be positive")
    zmax = lam + 4.0 * math.sqrt(ndim) / (quantization * dx)
    return AmplifierBound(lam, zmax, attained=False)


def _check_bound_args(lam: float, ndim: int, dx: float) -> None:
    if lam < 0:
        raise ValueError("fidelity weight bound must be nonnegative")
    if ndim not in (1, 2):
        raise ValueError("ndim must be 1 or 2")
    if not dx > 0:
        raise ValueError("dx must be positive")


def root_amplitude_ok(A: float, B: float, C: float) -> bool:
    """Whether both roots of A xi^2 + B xi + C lie in the closed unit disk.

    Equivalent to |B|/|A| - 1 <= C/A <= 1 (for A != 0), covering real and
    complex root pairs alike.
    """
    if A == 0:
        raise ValueError("leading coefficient A must be nonzero")
    ratio = C / A
    return abs(B) / abs(A) - 1.0 <= ratio <= 1.0


def _characteristic_coefficients(kind: str, z, dt: float, a: float):
    """Coefficients (A, B, C) of the per-frequency update quadratic."""
    z = np.asarray(z, dtype=float)
    one = np.ones_like(z)
    if kind == SchemeKind.ACCEL1.value:
        A = (1.0 + a * dt) * one
        B = dt * dt * z - 2.0 - a * dt
        C = one
    elif kind == SchemeKind.ACCEL2.value:
        A = (1.0 + a * dt / 2.0) * one
        B = dt * dt * z - 2.0
        C = (1.0 - a * dt / 2.0) * one
    elif kind == SchemeKind.SEMI_IMPLICIT.value:
        A = (2.0 + a * dt) ** 2 * one
        B = -4.0 * (2.0 + a * dt - 2.0 * dt * dt * z)
        C = (2.0 - a * dt) * (2.0 + a * dt - 2.0 * dt * dt * z)
    elif kind == BACKWARD_DIFFERENCE:
        A = one
        B = dt * dt * z + a * dt - 2.0
        C = (1.0 - a * dt) * one
    else:
        raise ValueError(f"no characteristic quadratic for scheme {kind!r}")
    return A, B, C


def amplification_factor(kind: SchemeKind | str, z, dt: float, a: float = 0.0):
    """Largest root magnitude of the scheme's update recursion at amplifier z.

    Accepts a scalar or array ``z`` (vectorized); gradient descent is the
    first-order special case |1 - dt*z|.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    key = _kind_key(kind)
    z_arr = np.asarray(z, dtype=float)
    if key == SchemeKind.GRADIENT_DESCENT.value:
        out = np.abs(1.0 - dt * z_arr)
    else:
        A, B, C = _characteristic_coefficients(key, z_arr, dt, a)
        disc = (B * B - 4.0 * A * C).astype(complex)
        sqrt_disc = np.sqrt(disc)
        r1 = (-B + sqrt_disc) / (2.0 * A)
        r2 = (-B - sqrt_disc) / (2.0 * A)
        out = np.maximum(np.abs(r1), np.abs(r2))
    return float(out) if np.isscalar(z) or out.ndim == 0 else out


def cfl_max_dt(kind: SchemeKind | str, z_max: float, a: float = 0.0) -> float:
    """Closed-form step-size limit for the scheme at amplifier bound z_max.

    * gradient descent: 2 / z_max
    * accel1:  sqrt(4/z_max + (a/z_max)^2) + a/z_max  (grows with friction)
    * accel2:  2 / sqrt(z_max)  (friction-independent)
    * semi:    2 / sqrt(3 z_max)  (sufficient bound)
    * backward: sqrt(4/z_max + (a/z_max)^2) - a/z_max  (shrinks with friction)

    The gradient-descent and accel2 limits are exact; accel1's is exact as
    well, while the semi-implicit bound is sufficient only.
    """
    if not z_max > 0:
        raise ValueError("z_max must be positive")
    if a < 0:
        raise ValueError("damping must be nonnegative")
    key = _kind_key(kind)
    if key == SchemeKind.GRADIENT_DESCENT.value:
        return 2.0 / z_max
    if key == SchemeKind.ACCEL1.value:
        return math.sqrt(4.0 / z_max + (a / z_max) ** 2) + a / z_max
    if key == SchemeKind.ACCEL2.value:
        return 2.0 / math.sqrt(z_max)
    if key == SchemeKind.SEMI_IMPLICIT.value:
        return 2.0 / math.sqrt(3.0 * z_max)
    return math.sqrt(4.0 / z_max + (a / z_max) ** 2) - a / z_max


def empirical_max_dt(
    kind: SchemeKind | str,
    z_max: float,
    a: float = 0.0,
    *,
    samples: int = 1024,
    rel_tol: float = 1e-9,
    margin: float = 1e-9,
) -> float:
    """Stability threshold found by bisection on the amplification factor.

    Scans ``samples`` amplifier values in [0, z_max] and bisects on the step
    size until the largest root magnitude crosses 1 (within ``margin``).
    Used to cross-check the closed forms in ``cfl_max_dt``.
    """
    if not z_max > 0:
        raise ValueError("z_max must be positive")
    key = _kind_key(kind)
    z_grid = np.linspace(0.0, z_max, samples)

    def stable(dt: float) -> bool:
        amp = amplification_factor(key, z_grid, dt, a)
        return bool(np.max(amp) <= 1.0 + margin)

    guess = cfl_max_dt(key, z_max, a)
    lo, hi = 0.5 * guess, 1.5 * guess
    while stable(hi):
        lo, hi = hi, 2.0 * hi
    while not stable(lo):
        hi, lo = lo, 0.5 * lo
    while (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if stable(mid):
            lo = mid
        else:
            hi = mid
    return lo


def stability_boundary(
    kind: SchemeKind | str,
    z_values: Sequence[float] | np.ndarray,
    a: float = 0.0,
) -> list[tuple[str, float, float, float, float]]:
    """Empirical stability-boundary rows (scheme, z, dt, a, max_root_magnitude).

    For each amplifier value the step size is bisected to the single-mode
    stability boundary, so plotting dt against z traces the scheme's stable
    region outline.
    """
    key = _kind_key(kind)
    rows = []
    for z in z_values:
        z = float(z)
        dt = empirical_max_dt(key, z, a, samples=2)
        amp = float(amplification_factor(key, z, dt, a))
        rows.append((key, z, dt, a, amp))
    return rows


def write_stability_csv(
    target: TextIO,
    rows: Iterable[tuple[str, float, float, float, float]],
) -> None:
    """Write boundary/sweep rows with the fixed analyzer column layout."""
    writer = csv.writer(target)
    writer.writerow(STABILITY_CSV_COLUMNS)
    for row in rows:
        kind, z, dt, a, amp = row
        writer.writerow([kind, repr(float(z)), repr(float(dt)), repr(float(a)), repr(float(amp))])
