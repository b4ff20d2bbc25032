"""Restoration energies, their gradients, and convolution forward models.

Every problem handled here minimizes

    E(u) = sum_x [ lambda(x)/2 * (K*u - g)^2 + r(|grad u|) ] * dx^N

over fields ``u``, where ``K`` is an optional blur kernel, ``g`` the observed
data, ``lambda(x)`` a per-cell fidelity weight (zero inside inpainting
regions), and ``r`` one of three gradient penalties:

* quadratic      r(s) = c/2 * s^2
* Beltrami       r(s) = sqrt(1 + beta^2 s^2) / beta
* total variation r(s) = s

The gradient decomposes into a fidelity part and the negative divergence of
the flux ``rdot(|grad u|)/|grad u| * grad u``.  The flux coefficient
``rdot(s)/s`` and the second derivative ``rddot(s)`` also drive the stability
bounds, so each regularizer exposes its suprema via ``coefficient_bounds``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .grid import GridField, VectorField, backward_divergence, forward_gradient

__all__ = [
    "Regularizer",
    "Quadratic",
    "Beltrami",
    "TotalVariation",
    "regularizer_coefficient_bounds",
    "Kernel",
    "gaussian_kernel",
    "apply_kernel",
    "adjoint_kernel",
    "ProblemSpec",
    "denoise_spec",
    "deblur_spec",
    "energy",
    "gradient",
]


class Regularizer:
    """Base class for gradient penalties r(|grad u|)."""

    def penalty(self, s: np.ndarray) -> np.ndarray:
        """Pointwise penalty r(s) for an array of gradient magnitudes."""
        raise NotImplementedError

    def flux_coefficient(self, s: np.ndarray) -> np.ndarray:
        """Pointwise rdot(s)/s, the scalar weight applied to grad u in the flux."""
        raise NotImplementedError

    def coefficient_bounds(self) -> tuple[float, float]:
        """Suprema (c_max, d_max) of rdot(s)/s and rddot(s) over s >= 0."""
        raise NotImplementedError


@dataclass(frozen=True)
class Quadratic(Regularizer):
    """r(s) = c/2 * s^2; the flow's diffusion term is c times the Laplacian."""

    c: float = 1.0

    def __post_init__(self) -> None:
        if not self.c > 0:
            raise ValueError("quadratic coefficient c must be positive")

    def penalty(self, s):
        return 0.5 * self.c * np.square(s)

    def flux_coefficient(self, s):
        return np.full_like(np.asarray(s, dtype=float), self.c)

    def coefficient_bounds(self):
        return (self.c, self.c)


@dataclass(frozen=True)
class Beltrami(Regularizer):
    """r(s) = sqrt(1 + beta^2 s^2) / beta.

    Smooth edge-preserving penalty: quadratic for small slopes, linear (TV-like)
    for large ones.  Both rdot(s)/s and rddot(s) are bounded by beta, with the
    bound attained at s = 0, which keeps explicit schemes stable at time steps
    independent of the evolving field.
    """

    beta: float = 1.0

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ValueError("Beltrami parameter beta must be positive")

    def penalty(self, s):
        return np.sqrt(1.0 + (self.beta * s) ** 2) / self.beta

    def flux_coefficient(self, s):
        return self.beta / np.sqrt(1.0 + (self.beta * s) ** 2)

    def coefficient_bounds(self):
        return (self.beta, self.beta)


@dataclass(frozen=True)
class TotalVariation(Regularizer):
    """r(s) = s, without smoothing.

    The flux grad u / |grad u| is taken to be zero wherever the gradient
    vanishes (a valid subgradient), so no epsilon-regularization enters the
    dynamics.  rdot(s)/s is unbounded near s = 0, hence ``coefficient_bounds``
    reports an infinite c_max; step-size selection for TV goes through the
    quantized bound instead (see the stability module).
    """

    def penalty(self, s):
        return np.asarray(s, dtype=float).copy()

    def flux_coefficient(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        np.divide(1.0, s, out=out, where=s > 0)
        return out

    def coefficient_bounds(self):
        return (np.inf, 0.0)


def regularizer_coefficient_bounds(reg: Regularizer) -> tuple[float, float]:
    """Suprema (c_max, d_max) of the flux coefficient and rddot for ``reg``."""
    return reg.coefficient_bounds()


def _max_dft_magnitude(taps: np.ndarray, min_grid: int = 256) -> float:
    """Max of |DFT(taps)| sampled on a dense zero-padded frequency grid."""
    rows = max(min_grid, 4 * taps.shape[0])
    cols = max(min_grid, 4 * taps.shape[1])
    return float(np.abs(np.fft.fft2(taps, s=(rows, cols))).max())


@dataclass(frozen=True)
class Kernel:
    """Convolution taps with odd side lengths, centered at the middle tap.

    ``max_dft_magnitude`` caches the peak magnitude of the kernel's discrete
    Fourier transform, which bounds the fidelity term's contribution to the
    flow's amplification factor.  Mean-preserving blur kernels (nonnegative
    taps summing to one) have a peak of exactly 1 at zero frequency.
    """

    taps: np.ndarray
    max_dft_magnitude: float = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        taps = np.asarray(self.taps, dtype=float)
        if taps.ndim != 2 or taps.shape[0] % 2 == 0 or taps.shape[1] % 2 == 0:
            raise ValueError("kernel taps must form a 2D array with odd side lengths")
        if not np.all(np.isfinite(taps)):
            raise ValueError("kernel taps must be finite")
        object.__setattr__(self, "taps", taps)
        if self.max_dft_magnitude is None:
            object.__setattr__(self, "max_dft_magnitude", _max_dft_magnitude(taps))

    @property
    def radius(self) -> tuple[int, int]:
        return (self.taps.shape[0] // 2, self.taps.shape[1] // 2)

    @property
    def max_dft_sq(self) -> float:
        return self.max_dft_magnitude**2


def gaussian_kernel(sigma: float) -> Kernel:
    """Normalized Gaussian blur taps truncated at three standard deviations."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    radius = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=float)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    taps = np.outer(g, g)
    return Kernel(taps / taps.sum())


def _reflect_indices(n: int, radius: int) -> np.ndarray:
    """Sample indices of the symmetric (edge-inclusive) extension of length n."""
    idx = np.arange(-radius, n + radius)
    idx = np.where(idx < 0, -1 - idx, idx)
    idx = np.where(idx >= n, 2 * n - 1 - idx, idx)
    return idx


def _check_kernel_fits(kernel: Kernel, u: GridField) -> None:
    kh, kw = kernel.taps.shape
    if kh > u.rows or kw > u.cols:
        raise ValueError(
            f"kernel of shape {kernel.taps.shape} is larger than the "
            f"{u.rows}x{u.cols} field"
        )


def apply_kernel(kernel: Kernel, u: GridField) -> GridField:
    """Convolve ``u`` with the kernel under reflective boundary extension."""
    _check_kernel_fits(kernel, u)
    rh, rw = kernel.radius
    rows = u.data[_reflect_indices(u.rows, rh)]
    padded = rows[:, _reflect_indices(u.cols, rw)]
    out = signal.convolve(padded, kernel.taps, mode="valid", method="auto")
    return u.with_data(out)


def adjoint_kernel(kernel: Kernel, v: GridField) -> GridField:
    """Exact adjoint of ``apply_kernel`` with the same kernel.

    Computed as the transpose of (reflect-pad, then valid convolution):
    a full correlation followed by folding the border back onto the interior
    cells that produced it.
    """
    _check_kernel_fits(kernel, v)
    rh, rw = kernel.radius
    spread = signal.correlate(v.data, kernel.taps, mode="full", method="auto")
    out = np.zeros_like(v.data)
    rmap = _reflect_indices(v.rows, rh)
    cmap = _reflect_indices(v.cols, rw)
    np.add.at(out, (rmap[:, None], cmap[None, :]), spread)
    return v.with_data(out)


@dataclass(frozen=True)
class ProblemSpec:
    """One restoration problem: data, fidelity weights, penalty, dynamics knobs.

    Parameters
    ----------
    data : GridField
        Observed image g.
    fidelity_weight : GridField
        Per-cell weight lambda(x) >= 0 on the same grid as ``data``.  Zero
        entries remove the data term there (inpainting).
    regularizer : Regularizer
        Gradient penalty.
    kernel : Kernel, optional
        Blur forward model; identity when absent.
    damping : float, optional
        Friction coefficient a of the wave flow.  ``None`` lets the solver
        pick the critically-damped default for the problem.
    rho : float
        Mass density of the wave flow (the gradient is divided by it).
    """

    data: GridField
    fidelity_weight: GridField
    regularizer: Regularizer
    kernel: Kernel | None = None
    damping: float | None = None
    rho: float = 1.0

    def __post_init__(self) -> None:
        if self.fidelity_weight.data.shape != self.data.data.shape:
            raise ValueError("fidelity weight and data must share one grid")
        if self.fidelity_weight.dx != self.data.dx:
            raise ValueError("fidelity weight and data must share one spacing")
        if np.any(self.fidelity_weight.data < 0) or not np.all(
            np.isfinite(self.fidelity_weight.data)
        ):
            raise ValueError("fidelity weights must be finite and nonnegative")
        if self.damping is not None and not self.damping >= 0:
            raise ValueError("damping must be nonnegative")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.kernel is not None:
            _check_kernel_fits(self.kernel, self.data)

    @property
    def lambda_max(self) -> float:
        return float(self.fidelity_weight.data.max())


def denoise_spec(
    g: GridField,
    lam: float,
    regularizer: Regularizer,
    damping: float | None = None,
    rho: float = 1.0,
) -> ProblemSpec:
    """Denoising problem with a constant fidelity weight and no forward model."""
    weight = g.with_data(np.full_like(g.data, float(lam)))
    return ProblemSpec(g, weight, regularizer, damping=damping, rho=rho)


def deblur_spec(
    g: GridField,
    lam: float,
    regularizer: Regularizer,
    kernel: Kernel,
    damping: float | None = None,
    rho: float = 1.0,
) -> ProblemSpec:
    """Deblurring problem: like denoising but with a convolution forward model."""
    weight = g.with_data(np.full_like(g.data, float(lam)))
    return ProblemSpec(g, weight, regularizer, kernel=kernel, damping=damping, rho=rho)


def _residual(spec: ProblemSpec, u: GridField) -> np.ndarray:
    if spec.kernel is not None:
        return apply_kernel(spec.kernel, u).data - spec.data.data
    return u.data - spec.data.data


def energy(spec: ProblemSpec, u: GridField) -> float:
    """Total energy of ``u``: weighted squared residual plus gradient penalty."""
    res = _residual(spec, u)
    fidelity = 0.5 * spec.fidelity_weight.data * res**2
    s = forward_gradient(u).magnitude().data
    return float((fidelity + spec.regularizer.penalty(s)).sum() * u.cell_measure)


def gradient(spec: ProblemSpec, u: GridField) -> GridField:
    """Cellwise gradient of ``energy`` with respect to the samples of ``u``.

    Returns the fidelity term minus the divergence of the penalty flux.  The
    weighted residual is pushed through the kernel adjoint, so the result is
    the exact discrete energy gradient even when the fidelity weight varies
    across the image.
    """
    weighted = spec.fidelity_weight.data * _residual(spec, u)
    if spec.kernel is not None:
        fidelity = adjoint_kernel(spec.kernel, u.with_data(weighted)).data
    else:
        fidelity = weighted
    grad = forward_gradient(u)
    coeff = spec.regularizer.flux_coefficient(grad.magnitude().data)
    flux = VectorField(tuple(c.with_data(coeff * c.data) for c in grad.components))
    return u.with_data(fidelity - backward_divergence(flux).data)
