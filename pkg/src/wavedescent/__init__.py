"""Damped-wave descent flows for variational image restoration.

Gradient descent on a restoration energy behaves like diffusion and forces
time steps of order dx^2.  Evolving the damped nonlinear wave equation
``rho u_tt + rho a u_t = -grad E(u)`` instead relaxes the limit to order dx
while converging to the same minimizers, with the friction ``a`` tuned to
critically damp the slowest mode.  This package implements that idea end to
end: discrete energies and gradients, four explicit time-stepping schemes,
von Neumann step-size analysis, a convergence-diagnostics run loop, and a
small imaging toolbox with a command-line front end for denoising,
deblurring, and inpainting.
"""

from .energy import (
    Beltrami,
    Kernel,
    ProblemSpec,
    Quadratic,
    TotalVariation,
    adjoint_kernel,
    apply_kernel,
    deblur_spec,
    denoise_spec,
    energy,
    gaussian_kernel,
    gradient,
    regularizer_coefficient_bounds,
)
from .grid import (
    GridField,
    VectorField,
    backward_divergence,
    forward_gradient,
    inner,
    laplacian,
)
from .imaging import (
    InpaintMask,
    gaussian_noise,
    inpaint_spec,
    nearest_fill,
    noisy_square,
    psnr,
    read_image,
    read_mask,
    synthetic_scene,
    write_image,
)
from .scheme import (
    AutoCFL,
    BlowUpError,
    DampingRegime,
    SchemeConfig,
    SchemeKind,
    SolverState,
    classify_damping,
    remap_first_to_second,
    remap_second_to_first,
    step,
)
from .solver import (
    ConvergenceLog,
    StoppingRule,
    check_energy_monotone,
    default_damping,
    fit_convergence_rate,
    optimal_damping,
    quadratic_oracle,
    resolve_dt,
    run,
)
from .stability import (
    AmplifierBound,
    amplification_factor,
    cfl_max_dt,
    empirical_max_dt,
    root_amplitude_ok,
    zmax_general,
    zmax_quadratic,
    zmax_tv_quantized,
)

__version__ = "0.1.0"
