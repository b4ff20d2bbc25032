"""Command-line interface.

Subcommands
-----------
denoise / deblur / inpaint
    Load a grayscale image, run the selected descent flow, write the result
    and an optional per-iteration CSV log.
analyze
    Print closed-form step-size limits, or sweep the empirical stability
    boundary to CSV.
gen
    Write deterministic synthetic test images (noisy square, blurred scene).

Exit codes: 0 converged, 1 configuration error, 2 iteration budget
exhausted, 3 blow-up.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from .energy import (
    Beltrami,
    Quadratic,
    TotalVariation,
    apply_kernel,
    deblur_spec,
    denoise_spec,
    gaussian_kernel,
)
from .imaging import (
    ImageError,
    inpaint_spec,
    noisy_square,
    read_image,
    read_mask,
    synthetic_scene,
    write_image,
)
from .scheme import (
    DEFAULT_QUANTIZATION,
    AutoCFL,
    BlowUpError,
    SchemeConfig,
    SchemeKind,
)
from .solver import StoppingRule, run
from .stability import (
    BACKWARD_DIFFERENCE,
    cfl_max_dt,
    stability_boundary,
    write_stability_csv,
)

__all__ = ["main", "ConfigError"]

_ANALYZE_SCHEMES = [k.value for k in SchemeKind] + [BACKWARD_DIFFERENCE]

# Named experiment configurations; explicit flags override preset entries.
# "damping_sqrt_mult" m selects a = m * sqrt(lambda); "dt_dx_fraction" f
# selects dt = f * dx of the loaded image.
_PRESETS = {
    "tv-square": {
        "reg": "tv",
        "lam": 1000.0,
        "scheme": "accel1",
        "damping_sqrt_mult": 6.0,
        "dt_dx_fraction": 0.5,
    },
    "tv-lenna7000": {
        "reg": "tv",
        "lam": 7000.0,
        "scheme": "accel1",
        "damping_sqrt_mult": 2.0,
    },
    "beltrami-denoise": {
        "reg": "beltrami",
        "beta": 1.0,
        "scheme": "accel1",
    },
}


class ConfigError(Exception):
    """Invalid command line or option combination (exit code 1)."""


# Sentinel distinguishing "flag not given" from an explicit 'auto' (None).
_UNSET = object()


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise ConfigError(message)


def _positive(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return value


def _damping_arg(text: str) -> float | None:
    if text == "auto":
        return None
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError("damping must be nonnegative or 'auto'")
    return value


def _add_run_options(sub: argparse.ArgumentParser, default_lam: float) -> None:
    sub.add_argument("input", help="input image (PGM or 8-bit grayscale PNG)")
    sub.add_argument("-o", "--output", help="write the restored image here")
    sub.add_argument("--log", help="write the per-iteration CSV log here")
    sub.add_argument("--reference", help="clean image for the PSNR column")
    sub.add_argument(
        "--reg",
        choices=["quadratic", "beltrami", "tv"],
        default=None,
        help="gradient penalty (default beltrami)",
    )
    sub.add_argument("--lambda", dest="lam", type=_positive, default=None,
                     help=f"fidelity weight (default {default_lam:g})")
    sub.add_argument("--beta", type=_positive, default=None,
                     help="Beltrami parameter (default 1)")
    sub.add_argument("--c", type=_positive, default=None,
                     help="quadratic penalty coefficient (default 1)")
    sub.add_argument("--quant", type=_positive, default=None,
                     help="gray-level quantization step for the TV step bound "
                          f"(default {DEFAULT_QUANTIZATION:g})")
    sub.add_argument("--scheme", choices=[k.value for k in SchemeKind], default=None,
                     help="time-stepping scheme (default accel1)")
    sub.add_argument("--dt", type=_positive, default=None,
                     help="explicit time step (default: automatic CFL limit)")
    sub.add_argument("--safety", type=_positive, default=None,
                     help="fraction of the CFL limit used by the automatic step")
    sub.add_argument("--damping", type=_damping_arg, default=_UNSET,
                     help="friction coefficient a, or 'auto' (default auto)")
    sub.add_argument("--rho", type=_positive, default=1.0, help="wave mass density")
    sub.add_argument("--tol", type=_positive, default=1e-4,
                     help="stop when the increment sup-norm drops below this")
    sub.add_argument("--max-iters", type=int, default=10000,
                     help="iteration budget")
    sub.add_argument("--preset", choices=sorted(_PRESETS), default=None,
                     help="named experiment configuration")
    sub.set_defaults(default_lam=default_lam)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="wavedescent",
        description="Damped-wave descent flows for variational image restoration.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    denoise = subs.add_parser("denoise", help="remove noise from an image")
    _add_run_options(denoise, default_lam=1000.0)
    denoise.set_defaults(func=_cmd_restore, mode="denoise")

    deblur = subs.add_parser("deblur", help="undo Gaussian blur")
    _add_run_options(deblur, default_lam=1e7)
    deblur.add_argument("--sigma", type=_positive, default=3.0,
                        help="blur standard deviation in pixels (default 3)")
    deblur.set_defaults(func=_cmd_restore, mode="deblur")

    inpaint = subs.add_parser("inpaint", help="fill masked regions")
    _add_run_options(inpaint, default_lam=1e4)
    inpaint.add_argument("--mask", required=True,
                         help="mask image; gray >= 0.5 marks missing cells")
    inpaint.set_defaults(func=_cmd_restore, mode="inpaint")

    analyze = subs.add_parser("analyze", help="stability analysis of the schemes")
    analyze.add_argument("--scheme", choices=_ANALYZE_SCHEMES + ["all"],
                         default="all", help="scheme to analyze")
    analyze.add_argument("--zmax", type=_positive, required=True,
                         help="amplifier bound z_max of the problem")
    analyze.add_argument("--damping", type=_damping_arg, default=0.0,
                         help="friction coefficient (default 0)")
    analyze.add_argument("--sweep", action="store_true",
                         help="bisect the empirical stability boundary over z")
    analyze.add_argument("--samples", type=int, default=64,
                         help="number of z samples for --sweep")
    analyze.add_argument("--out", help="CSV destination for --sweep (default stdout)")
    analyze.set_defaults(func=_cmd_analyze)

    gen = subs.add_parser("gen", help="write synthetic test images")
    group = gen.add_mutually_exclusive_group(required=True)
    group.add_argument("--square", type=int, metavar="SIZE",
                       help="noisy centered square of this side length")
    group.add_argument("--scene", type=int, metavar="SIZE",
                       help="piecewise scene blurred with a Gaussian")
    gen.add_argument("--seed", type=int, default=0, help="noise seed")
    gen.add_argument("--sigma", type=_positive, default=0.3,
                     help="noise standard deviation for --square")
    gen.add_argument("--blur-sigma", type=_positive, default=3.0,
                     help="blur standard deviation for --scene")
    gen.add_argument("--out", required=True, metavar="PREFIX",
                     help="output path prefix")
    gen.set_defaults(func=_cmd_gen)

    return parser


def _preset_value(args, key, fallback):
    preset = _PRESETS.get(args.preset, {})
    return preset.get(key, fallback)


def _resolve_regularizer(args):
    reg_name = args.reg or _preset_value(args, "reg", "beltrami")
    if args.c is not None and reg_name != "quadratic":
        raise ConfigError("--c applies to the quadratic penalty only")
    if args.beta is not None and reg_name != "beltrami":
        raise ConfigError("--beta applies to the Beltrami penalty only")
    if args.quant is not None and reg_name != "tv":
        raise ConfigError("--quant applies to the tv penalty only")
    if reg_name == "quadratic":
        return Quadratic(args.c if args.c is not None else 1.0), reg_name
    if reg_name == "beltrami":
        beta = args.beta if args.beta is not None else _preset_value(args, "beta", 1.0)
        return Beltrami(beta), reg_name
    return TotalVariation(), reg_name


def _resolve_damping(args, lam: float) -> float | None:
    if args.damping is not _UNSET:
        return args.damping  # explicit number or None for 'auto'
    mult = _preset_value(args, "damping_sqrt_mult", None)
    if mult is not None:
        return mult * math.sqrt(lam)
    return None


def _resolve_dt(args, dx: float):
    if args.dt is not None and args.safety is not None:
        raise ConfigError("--dt and --safety are mutually exclusive")
    if args.dt is not None:
        return float(args.dt)
    fraction = _preset_value(args, "dt_dx_fraction", None)
    if fraction is not None and args.safety is None:
        return fraction * dx
    return AutoCFL(args.safety)


def _cmd_restore(args) -> int:
    g = read_image(args.input)
    regularizer, reg_name = _resolve_regularizer(args)
    lam = args.lam if args.lam is not None else _preset_value(args, "lam", args.default_lam)
    damping = _resolve_damping(args, lam)
    scheme_name = args.scheme or _preset_value(args, "scheme", "accel1")
    quantization = args.quant if args.quant is not None else DEFAULT_QUANTIZATION

    init = g
    if args.mode == "denoise":
        spec = denoise_spec(g, lam, regularizer, damping=damping, rho=args.rho)
    elif args.mode == "deblur":
        spec = deblur_spec(g, lam, regularizer, gaussian_kernel(args.sigma),
                           damping=damping, rho=args.rho)
    else:
        mask = read_mask(args.mask)
        spec, init = inpaint_spec(g, mask, lambda_known=lam,
                                  regularizer=regularizer, damping=damping,
                                  rho=args.rho)

    cfg = SchemeConfig(
        kind=SchemeKind(scheme_name),
        dt=_resolve_dt(args, g.dx),
        quantization=quantization,
    )
    try:
        stopping = StoppingRule(tol=args.tol, max_iters=args.max_iters)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    reference = read_image(args.reference) if args.reference else None

    try:
        result, log = run(spec, cfg, stopping, init, reference=reference)
    except BlowUpError as err:
        print(f"{args.mode}: blow-up at iteration {err.iteration} "
              f"(time step too large for this problem)", file=sys.stderr)
        if args.log and err.log is not None and len(err.log):
            _write_log(args, err.log, reg_name, lam)
        return 3

    if args.output:
        write_image(args.output, result)
    if args.log:
        _write_log(args, log, reg_name, lam)

    last = log.records[-1]
    dt_note = "" if args.dt is not None else " (auto)"
    a_note = "" if isinstance(damping, float) else " (auto)"
    summary = (
        f"{args.mode}: {log.stop_reason} after {last.iteration} iterations "
        f"in {last.wall_seconds:.2f}s  dt={log.meta['dt']:.6g}{dt_note}  "
        f"damping={log.meta['damping']:.6g}{a_note}  energy={last.energy:.6g}"
    )
    if last.psnr is not None:
        summary += f"  psnr={last.psnr:.2f} dB"
    print(summary)
    return 0 if log.converged else 2


def _write_log(args, log, reg_name: str, lam: float) -> None:
    comments = [
        f"command={args.mode}",
        f"input={args.input}",
        f"regularizer={reg_name}",
        f"lambda={lam:g}",
    ] + [f"{key}={value:g}" if isinstance(value, float) else f"{key}={value}"
         for key, value in log.meta.items()]
    path = Path(args.log)
    with path.open("w", newline="") as handle:
        log.write_csv(handle, header_comments=comments)


def _cmd_analyze(args) -> int:
    schemes = _ANALYZE_SCHEMES if args.scheme == "all" else [args.scheme]
    damping = args.damping if args.damping is not None else 0.0
    if args.sweep:
        if args.samples < 2:
            raise ConfigError("--samples must be at least 2")
        z_values = [args.zmax * k / (args.samples - 1) for k in range(1, args.samples)]
        rows = []
        for scheme in schemes:
            rows.extend(stability_boundary(scheme, z_values, damping))
        if args.out:
            with open(args.out, "w", newline="") as handle:
                write_stability_csv(handle, rows)
        else:
            write_stability_csv(sys.stdout, rows)
        return 0
    for scheme in schemes:
        dt_max = cfl_max_dt(scheme, args.zmax, damping)
        print(f"scheme={scheme} z_max={args.zmax:g} damping={damping:g} "
              f"dt_max={dt_max:.6g}")
    return 0


def _cmd_gen(args) -> int:
    prefix = Path(args.out)
    if prefix.parent and not prefix.parent.exists():
        raise ConfigError(f"output directory {prefix.parent} does not exist")
    if args.square is not None:
        try:
            clean, noisy = noisy_square(args.square, args.seed, args.sigma)
        except ValueError as err:
            raise ConfigError(str(err)) from err
        paths = {"clean": clean, "noisy": noisy}
    else:
        try:
            clean = synthetic_scene(args.scene)
        except ValueError as err:
            raise ConfigError(str(err)) from err
        blurred = apply_kernel(gaussian_kernel(args.blur_sigma), clean)
        paths = {"clean": clean, "blurred": blurred}
    for tag, image in paths.items():
        path = prefix.parent / f"{prefix.name}_{tag}.pgm"
        write_image(path, image)
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except ImageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
