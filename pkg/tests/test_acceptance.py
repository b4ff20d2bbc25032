"""Acceptance suite: twelve end-to-end guarantees of the solver stack.

Every test prints exactly one ``[PASS]``/``[FAIL]`` line on the real stdout
(the ``report`` fixture suspends pytest's capture for that line, so verdicts
of passing tests are visible too) and then asserts the same condition.
Tolerances are part of the contract and are not to be loosened.
"""

import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from wavedescent.energy import (
    Beltrami,
    Quadratic,
    TotalVariation,
    apply_kernel,
    deblur_spec,
    denoise_spec,
    energy,
    gaussian_kernel,
    gradient,
)
from wavedescent.grid import (
    GridField,
    VectorField,
    backward_divergence,
    forward_gradient,
    inner,
)
from wavedescent.imaging import noisy_square, psnr, synthetic_scene
from wavedescent.scheme import (
    DEFAULT_QUANTIZATION,
    AutoCFL,
    BlowUpError,
    SchemeConfig,
    SchemeKind,
    SolverState,
    remap_first_to_second,
    step,
)
from wavedescent.solver import (
    StoppingRule,
    amplifier_bound,
    check_energy_monotone,
    fit_convergence_rate,
    laplacian_matrix,
    optimal_damping,
    quadratic_oracle,
    run,
)
from wavedescent.stability import (
    cfl_max_dt,
    root_amplitude_ok,
    zmax_quadratic,
    zmax_tv_quantized,
)

RUN_FOREVER = StoppingRule(tol=1e-300, max_iters=5000)


@pytest.fixture
def report(capfd):
    def _report(num: int, description: str, ok: bool) -> bool:
        with capfd.disabled():
            print(f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d}: {description}",
                  flush=True)
        return ok

    return _report


def _rel_l2(u: GridField, ref: GridField) -> float:
    return float(np.linalg.norm(u.data - ref.data) / np.linalg.norm(ref.data))


def _sparse_oracle(spec):
    """Direct solve of the quadratic stationarity system on any grid size."""
    lap = laplacian_matrix(spec.data.rows, spec.data.cols, spec.data.dx)
    n = spec.data.n_cells
    matrix = (spec.lambda_max * sp.identity(n, format="csr") - lap).tocsc()
    rhs = spec.lambda_max * spec.data.data.ravel()
    solution = spla.spsolve(matrix, rhs).reshape(spec.data.rows, spec.data.cols)
    return spec.data.with_data(solution)


def test_criterion_01_quantized_tv_step_bound_figure(report):
    bound = zmax_tv_quantized(1000.0, 1.0 / 255.0, 2, 1.0 / 512.0)
    ratio = cfl_max_dt(SchemeKind.ACCEL2, bound.z_max) * 512.0
    ok = 1.18 <= ratio <= 1.20
    assert report(
        1, f"quantized TV bound gives dt/dx = {ratio:.4f}, within [1.18, 1.20]", ok
    )


def test_criterion_02_stability_boundary_is_sharp(report):
    _, noisy = noisy_square(64, seed=11)
    spec = denoise_spec(noisy, 1000.0, Quadratic(1.0))
    z_max = zmax_quadratic(1000.0, 1.0, 2, noisy.dx).z_max
    outcomes = []
    for kind in (SchemeKind.ACCEL2, SchemeKind.GRADIENT_DESCENT):
        dt_cfl = cfl_max_dt(kind, z_max)
        u, log = run(spec, SchemeConfig(kind=kind, dt=0.99 * dt_cfl), RUN_FOREVER, noisy)
        stable_ok = (
            log.stop_reason == "max_iters"
            and bool(np.all(np.isfinite(u.data)))
            and check_energy_monotone(log, rel_tol=1e-6)
        )
        try:
            run(spec, SchemeConfig(kind=kind, dt=1.05 * dt_cfl),
                StoppingRule(tol=1e-300, max_iters=2000), noisy)
            blew_up_at = None
        except BlowUpError as err:
            blew_up_at = err.iteration
        outcomes.append((kind.value, stable_ok, blew_up_at))
    ok = all(stable and blow is not None and blow <= 2000
             for _, stable, blow in outcomes)
    detail = ", ".join(
        f"{name}: 0.99 CFL monotone={stable}, 1.05 CFL blow-up at {blow}"
        for name, stable, blow in outcomes
    )
    assert report(2, detail, ok)


def test_criterion_03_every_scheme_reaches_the_direct_solution(report):
    _, noisy = noisy_square(32, seed=4)
    spec = denoise_spec(noisy, 100.0, Quadratic(1.0))
    star = quadratic_oracle(spec)
    errors = {}
    for kind in SchemeKind:
        u, log = run(spec, SchemeConfig(kind=kind, dt=AutoCFL()),
                     StoppingRule(tol=1e-8, max_iters=20000), noisy)
        errors[kind.value] = _rel_l2(u, star) if log.converged else math.inf
    worst = max(errors.values())
    ok = worst <= 1e-6
    assert report(
        3, f"relative L2 error vs direct solve, worst of four schemes = {worst:.2e} <= 1e-6", ok
    )


def _iterations_to_match_oracle(spec, kind, star, tol=1e-5, cap=40000):
    bound = amplifier_bound(spec, DEFAULT_QUANTIZATION)
    dt = cfl_max_dt(kind, bound.z_max / spec.rho, spec.damping)
    cfg = SchemeConfig(kind=kind, dt=dt)
    state = SolverState.initial(spec.data)
    ref_norm = np.linalg.norm(star.data)
    for k in range(1, cap + 1):
        state = step(spec, cfg, state)
        if np.linalg.norm(state.u.data - star.data) <= tol * ref_norm:
            return k
    return math.inf


def test_criterion_04_acceleration_changes_the_scaling_law(report):
    damping = optimal_damping(math.pi ** 2, 100.0)
    counts = {}
    for size in (32, 64, 128):
        _, noisy = noisy_square(size, seed=4)
        spec = denoise_spec(noisy, 100.0, Quadratic(1.0), damping=damping)
        star = quadratic_oracle(spec) if size <= 64 else _sparse_oracle(spec)
        counts[("accel2", size)] = _iterations_to_match_oracle(spec, SchemeKind.ACCEL2, star)
        counts[("gd", size)] = _iterations_to_match_oracle(
            spec, SchemeKind.GRADIENT_DESCENT, star)
    growth = {
        name: (counts[(name, 64)] / counts[(name, 32)],
               counts[(name, 128)] / counts[(name, 64)])
        for name in ("accel2", "gd")
    }
    gap = counts[("gd", 128)] / counts[("accel2", 128)]
    ok = (
        max(growth["accel2"]) <= 2.2
        and min(growth["gd"]) >= 3.2
        and gap >= 5.0
    )
    assert report(
        4,
        "iterations per grid doubling: accel2 x{:.2f}/x{:.2f} <= 2.2, "
        "gd x{:.2f}/x{:.2f} >= 3.2, 128-grid gap {:.1f}x >= 5".format(
            *growth["accel2"], *growth["gd"], gap),
        ok,
    )


def test_criterion_05_scheme_remap_reproduces_trajectories(report):
    _, noisy = noisy_square(16, seed=9)
    a1, lam = 10.0, 50.0
    z_max = zmax_quadratic(lam, 1.0, 2, noisy.dx).z_max
    dt1 = 0.8 * cfl_max_dt(SchemeKind.ACCEL1, z_max, a1)
    a2, dt2 = remap_first_to_second(a1, dt1)

    spec1 = denoise_spec(noisy, lam, Quadratic(1.0), damping=a1)
    spec2 = denoise_spec(noisy, lam, Quadratic(1.0), damping=a2)
    s1 = SolverState.initial(noisy)
    s2 = SolverState.initial(noisy)
    cfg1 = SchemeConfig(kind=SchemeKind.ACCEL1, dt=dt1)
    cfg2 = SchemeConfig(kind=SchemeKind.ACCEL2, dt=dt2)
    remap_gap = 0.0
    for _ in range(100):
        s1 = step(spec1, cfg1, s1)
        s2 = step(spec2, cfg2, s2)
        remap_gap = max(remap_gap, float(np.max(np.abs(s1.u.data - s2.u.data))))

    # at the critical product a*dt = 2 the two-step update degenerates into
    # plain gradient descent with step dt^2 / 2
    dt_c = 0.01
    spec_c = denoise_spec(noisy, lam, Quadratic(1.0), damping=2.0 / dt_c)
    cfg_c = SchemeConfig(kind=SchemeKind.ACCEL2, dt=dt_c)
    cfg_g = SchemeConfig(kind=SchemeKind.GRADIENT_DESCENT, dt=dt_c * dt_c / 2.0)
    s_c = SolverState.initial(noisy)
    s_g = SolverState.initial(noisy)
    critical_gap = 0.0
    for _ in range(100):
        s_c = step(spec_c, cfg_c, s_c)
        s_g = step(spec_c, cfg_g, s_g)
        critical_gap = max(critical_gap, float(np.max(np.abs(s_c.u.data - s_g.u.data))))

    ok = remap_gap <= 1e-10 and critical_gap <= 1e-13
    assert report(
        5,
        f"100-step remap gap {remap_gap:.2e} <= 1e-10, "
        f"critical-damping gap {critical_gap:.2e} <= 1e-13",
        ok,
    )


def test_criterion_06_implicit_fidelity_is_a_reparametrization(report):
    rng = np.random.default_rng(6)
    g = GridField.from_array(rng.uniform(0.0, 1.0, (4, 4)), 0.25)
    u0 = GridField.from_array(rng.uniform(0.0, 1.0, (4, 4)), 0.25)
    lam, dt, a = 7.0, 0.01, 3.0
    reg = Beltrami(1.0)
    reg_only = denoise_spec(g, 0.0, reg, damping=0.0)

    def reg_grad(u):
        return gradient(reg_only, u).data

    # gradient descent with the fidelity term treated implicitly, coded directly
    spec_gd = denoise_spec(g, lam, reg, damping=0.0)
    cfg_gd = SchemeConfig(kind=SchemeKind.GRADIENT_DESCENT, dt=dt / (1.0 + lam * dt))
    state = SolverState.initial(u0)
    u = u0
    gd_gap = 0.0
    for _ in range(10):
        u = u.with_data(
            (u.data + dt * lam * g.data - dt * reg_grad(u)) / (1.0 + lam * dt))
        state = step(spec_gd, cfg_gd, state)
        gd_gap = max(gd_gap, float(np.max(np.abs(u.data - state.u.data))))

    # two-step flow with implicit fidelity, coded directly; the explicit
    # scheme absorbs it as extra friction at the same step size
    spec_acc = denoise_spec(g, lam, reg, damping=a + lam * dt)
    cfg_acc = SchemeConfig(kind=SchemeKind.ACCEL1, dt=dt)
    state = SolverState.initial(u0)
    u, u_prev = u0, u0
    acc_gap = 0.0
    denom = 1.0 + a * dt + lam * dt * dt
    for _ in range(10):
        u_next = (2.0 * u.data - u_prev.data + a * dt * u.data
                  + dt * dt * (lam * g.data - reg_grad(u))) / denom
        u, u_prev = u.with_data(u_next), u
        state = step(spec_acc, cfg_acc, state)
        acc_gap = max(acc_gap, float(np.max(np.abs(u.data - state.u.data))))

    ok = gd_gap <= 1e-12 and acc_gap <= 1e-12
    assert report(
        6,
        f"implicit-fidelity gaps: gradient descent {gd_gap:.2e}, "
        f"two-step {acc_gap:.2e}, both <= 1e-12",
        ok,
    )


def test_criterion_07_gradients_match_central_differences(report):
    rng = np.random.default_rng(77)
    eps = 1e-5
    worst = 0.0
    for reg in (Beltrami(1.0), Quadratic(1.0)):
        for _ in range(50):
            g = GridField.from_array(rng.uniform(0.0, 1.0, (8, 8)), 1.0 / 8.0)
            u = GridField.from_array(rng.uniform(0.0, 1.0, (8, 8)), 1.0 / 8.0)
            spec = denoise_spec(g, 10.0, reg, damping=0.0)
            grad = gradient(spec, u).data
            fd = np.zeros_like(grad)
            for i in range(8):
                for j in range(8):
                    bumped = u.data.copy()
                    bumped[i, j] += eps
                    plus = energy(spec, u.with_data(bumped))
                    bumped[i, j] -= 2.0 * eps
                    minus = energy(spec, u.with_data(bumped))
                    fd[i, j] = (plus - minus) / (2.0 * eps * u.cell_measure)
            worst = max(worst, float(np.linalg.norm(fd - grad) / np.linalg.norm(grad)))
    ok = worst <= 1e-4
    assert report(
        7, f"central differences vs analytic gradients, worst of 100 trials {worst:.2e} <= 1e-4", ok
    )


def test_criterion_08_optimally_damped_decay_rate(report):
    _, noisy = noisy_square(64, seed=11)
    damping = optimal_damping(math.pi ** 2, 1000.0)
    spec = denoise_spec(noisy, 1000.0, Quadratic(1.0), damping=damping)
    star = quadratic_oracle(spec)
    _, log = run(spec, SchemeConfig(kind=SchemeKind.ACCEL2, dt=AutoCFL(0.9)),
                 StoppingRule(tol=1e-8, max_iters=10000), noisy, reference=star)
    rate = fit_convergence_rate(log)
    ok = 0.5 * damping <= rate <= 1.5 * damping
    assert report(
        8,
        f"envelope decay rate {rate:.2f} = {rate / damping:.3f}a, within [0.5a, 1.5a]",
        ok,
    )


def _smoothing_iterations(lam: float, beta: float) -> int:
    _, noisy = noisy_square(128, seed=7)
    spec = denoise_spec(noisy, lam, Beltrami(beta))
    _, log = run(spec, SchemeConfig(kind=SchemeKind.ACCEL1, dt=AutoCFL()),
                 StoppingRule(tol=1e-4, max_iters=10000), noisy)
    assert log.converged, f"run lam={lam} beta={beta} did not converge"
    return log.records[-1].iteration


def test_criterion_09_iteration_trends_track_conditioning(report):
    by_lam = [_smoothing_iterations(lam, 1.0) for lam in (1000.0, 5000.0, 7000.0)]
    by_beta = [_smoothing_iterations(5000.0, beta) for beta in (0.2, 1.0, 5.0)]
    ok = (by_lam[0] > by_lam[1] > by_lam[2]) and (by_beta[0] < by_beta[1] < by_beta[2])
    assert report(
        9,
        f"iterations fall in lambda {by_lam} and rise in beta {by_beta}",
        ok,
    )


def test_criterion_10_tv_step_size_regimes(report):
    _, noisy = noisy_square(128, seed=7)
    lam = 1000.0
    spec = denoise_spec(noisy, lam, TotalVariation(), damping=6.0 * math.sqrt(lam))
    dx = noisy.dx

    # half-cell steps: expected to reach the increment tolerance
    _, log = run(spec, SchemeConfig(kind=SchemeKind.ACCEL1, dt=0.5 * dx),
                 StoppingRule(tol=1e-4, max_iters=10000), noisy)
    converged = log.converged
    final_sup = log.records[-1].increment_sup

    # ten-cell steps stay below the fidelity-floor stability ceiling, so the
    # iterates must stay bounded even though the tolerance is never met
    dt_big = 10.0 * dx
    ceiling = cfl_max_dt(SchemeKind.ACCEL1, lam, spec.damping)
    cfg = SchemeConfig(kind=SchemeKind.ACCEL1, dt=dt_big)
    state = SolverState.initial(noisy)
    max_sup, min_increment = 0.0, math.inf
    for _ in range(10000):
        state = step(spec, cfg, state)
        max_sup = max(max_sup, state.u.sup_norm())
        min_increment = min(min_increment, state.prev_increment.sup_norm())
    bounded = dt_big < ceiling and max_sup <= 2.0 and min_increment >= 1e-4

    ok = converged and bounded
    assert report(
        10,
        f"TV at dt=dx/2 converged={converged} (final increment {final_sup:.2e}); "
        f"at dt=10dx bounded: sup {max_sup:.3f} <= 2.0, tolerance never met={min_increment >= 1e-4}",
        ok,
    )


def test_criterion_11_deblurring_recovers_three_decibels(report):
    scene = synthetic_scene(128)
    kernel = gaussian_kernel(3.0)
    blurred = apply_kernel(kernel, scene)
    baseline = psnr(scene, blurred)
    spec = deblur_spec(blurred, 1e7, Beltrami(1.0), kernel, damping=4.0)
    _, log = run(spec, SchemeConfig(kind=SchemeKind.ACCEL2, dt=AutoCFL(1.0)),
                 StoppingRule(tol=1e-300, max_iters=3000), blurred, reference=scene)
    best = float(np.nanmax(log.column("psnr")))
    gain = best - baseline
    ok = gain >= 3.0
    assert report(
        11,
        f"deblurring gain {gain:.2f} dB >= 3.0 within 3000 iterations "
        f"({baseline:.2f} -> {best:.2f} dB)",
        ok,
    )


def test_criterion_12_adjointness_and_root_magnitudes(report):
    rng = np.random.default_rng(123)
    adjoint_gap = 0.0
    for _ in range(20):
        u = GridField.from_array(rng.standard_normal((16, 16)), 1.0 / 16.0)
        p = VectorField(tuple(
            GridField.from_array(rng.standard_normal((16, 16)), u.dx)
            for _ in range(2)))
        lhs = inner(forward_gradient(u), p)
        rhs = -inner(u, backward_divergence(p))
        adjoint_gap = max(adjoint_gap, abs(lhs - rhs) / max(1.0, abs(lhs)))

    checked, mismatches = 0, 0
    while checked < 10000:
        A, B, C = rng.uniform(-3.0, 3.0, size=3)
        if abs(A) < 1e-12:
            continue
        magnitude = float(np.max(np.abs(np.roots([A, B, C]))))
        if abs(magnitude - 1.0) <= 1e-9:
            continue  # on the verdict boundary, numeric roots are ambiguous
        checked += 1
        if root_amplitude_ok(A, B, C) != (magnitude <= 1.0):
            mismatches += 1

    ok = adjoint_gap <= 1e-12 and mismatches == 0
    assert report(
        12,
        f"adjoint identity gap {adjoint_gap:.2e} <= 1e-12; "
        f"root predicate matched numeric roots on {checked} triples "
        f"with {mismatches} mismatches",
        ok,
    )
