"""Grayscale image IO, synthetic test images, noise, PSNR, and inpainting setup.

Images are exchanged with the solvers as ``GridField``s with samples in
[0, 1] (files store 8-bit gray levels, divided by 255 on read).  Supported
formats are binary and ASCII PGM (P5/P2, maxval 255) and 8-bit grayscale
PNG.

Synthetic data is deterministic across platforms: the Gaussian sampler below
is counter-based (SplitMix64 feeding Box-Muller) rather than delegating to a
library generator, so a seed pins the exact byte content of generated images
forever.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .energy import Beltrami, ProblemSpec, Regularizer
from .grid import GridField

__all__ = [
    "ImageError",
    "UnsupportedImageFormat",
    "CorruptImage",
    "read_image",
    "write_image",
    "gaussian_noise",
    "noisy_square",
    "synthetic_scene",
    "psnr",
    "InpaintMask",
    "read_mask",
    "nearest_fill",
    "inpaint_spec",
]


class ImageError(Exception):
    """Base class for image IO failures."""


class UnsupportedImageFormat(ImageError):
    """The file is not an 8-bit grayscale PGM or PNG."""


class CorruptImage(ImageError):
    """The file header or payload is truncated or malformed."""


def _parse_pgm(raw: bytes) -> np.ndarray:
    """Parse P2/P5 payloads with comment support, returning a uint8 array."""
    magic = raw[:2]
    pos = 2
    tokens: list[int] = []
    # Header: width, height, maxval as whitespace-separated tokens, '#' comments.
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise CorruptImage("truncated PGM header")
        if raw[pos : pos + 1] == b"#":
            end = raw.find(b"\n", pos)
            if end == -1:
                raise CorruptImage("truncated PGM comment")
            pos = end + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        try:
            tokens.append(int(raw[start:pos]))
        except ValueError as err:
            raise CorruptImage(f"bad PGM header token {raw[start:pos]!r}") from err
    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise CorruptImage("PGM dimensions must be positive")
    if maxval != 255:
        raise UnsupportedImageFormat(f"only 8-bit PGM supported, got maxval {maxval}")
    if magic == b"P5":
        pos += 1  # single whitespace byte after the header
        payload = raw[pos : pos + width * height]
        if len(payload) < width * height:
            raise CorruptImage("truncated PGM payload")
        return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    values = raw[pos:].split()
    if len(values) < width * height:
        raise CorruptImage("truncated PGM payload")
    try:
        flat = np.array([int(v) for v in values[: width * height]], dtype=int)
    except ValueError as err:
        raise CorruptImage("non-numeric PGM sample") from err
    if flat.min() < 0 or flat.max() > 255:
        raise CorruptImage("PGM sample out of range")
    return flat.astype(np.uint8).reshape(height, width)


def read_image(path: str | Path, dx: float | None = None) -> GridField:
    """Read a PGM or 8-bit grayscale PNG into a field with samples in [0, 1]."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as err:
        raise ImageError(f"cannot read {path}: {err}") from err
    if raw[:2] in (b"P5", b"P2"):
        levels = _parse_pgm(raw)
    elif raw[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            with Image.open(path) as img:
                if img.mode != "L":
                    raise UnsupportedImageFormat(
                        f"PNG must be 8-bit grayscale (mode L), got mode {img.mode}"
                    )
                levels = np.asarray(img, dtype=np.uint8)
        except ImageError:
            raise
        except Exception as err:
            raise CorruptImage(f"cannot decode PNG {path}: {err}") from err
    else:
        raise UnsupportedImageFormat(f"{path} is neither a PGM nor a PNG file")
    return GridField.from_array(levels.astype(float) / 255.0, dx=dx)


def write_image(path: str | Path, u: GridField) -> None:
    """Write a field as 8-bit gray levels; format picked from the extension.

    Samples are clamped to [0, 1] and rounded to the nearest level, so
    writing what ``read_image`` returned reproduces the file content.
    """
    path = Path(path)
    levels = np.clip(np.rint(u.data * 255.0), 0, 255).astype(np.uint8)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        header = f"P5\n{levels.shape[1]} {levels.shape[0]}\n255\n".encode()
        path.write_bytes(header + levels.tobytes())
    elif suffix == ".png":
        Image.fromarray(levels, mode="L").save(path, format="PNG")
    else:
        raise UnsupportedImageFormat(f"cannot infer image format from {path.name!r}")


# SplitMix64 finalizer constants.
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> np.uint64(30))) * _MIX1
    x = (x ^ (x >> np.uint64(27))) * _MIX2
    return x ^ (x >> np.uint64(31))


def gaussian_noise(shape: tuple[int, int], sigma: float, seed: int) -> np.ndarray:
    """Deterministic N(0, sigma^2) samples from a counter-based generator.

    Stream definition: counter k feeds SplitMix64,
    ``x_k = mix64(mix64(seed) + (k+1) * 0x9E3779B97F4A7C15)``, whose high 53
    bits become uniforms; consecutive pairs are turned into normals with the
    Box-Muller transform.  Independent of platform, numpy version, and call
    order.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    count = int(np.prod(shape))
    pairs = (count + 1) // 2
    # Work on arrays throughout: numpy wraps unsigned array arithmetic
    # silently, which is the modular behavior SplitMix64 needs.
    base = _mix64(np.array([int(seed) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
    counters = np.arange(1, 2 * pairs + 1, dtype=np.uint64)
    bits = _mix64(base + counters * _GOLDEN)
    uniforms = (bits >> np.uint64(11)).astype(float) * 2.0**-53
    u1 = uniforms[:pairs] + 2.0**-53  # in (0, 1], keeps the log finite
    u2 = uniforms[pairs:]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    normals = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
    return sigma * normals[:count].reshape(shape)


def noisy_square(size: int, seed: int, sigma: float = 0.3) -> tuple[GridField, GridField]:
    """Clean and noisy versions of the centered-square test image.

    Background gray 0.25, a centered square of side ``size // 2`` at 0.75,
    plus Gaussian noise of standard deviation ``sigma`` (unclamped, so the
    noisy field ranges outside [0, 1] like the measurement model assumes).
    """
    if size < 16:
        raise ValueError("noisy_square needs size >= 16")
    clean = np.full((size, size), 0.25)
    lo, hi = size // 4, size // 4 + size // 2
    clean[lo:hi, lo:hi] = 0.75
    noisy = clean + gaussian_noise((size, size), sigma, seed)
    dx = 1.0 / size
    return GridField(clean, dx), GridField(noisy, dx)


def synthetic_scene(size: int) -> GridField:
    """Deterministic piecewise test scene (square, disk, ramp) for deblurring."""
    if size < 16:
        raise ValueError("synthetic_scene needs size >= 16")
    img = np.full((size, size), 0.2)
    lo, hi = size // 8, size // 8 + size // 3
    img[lo:hi, lo:hi] = 0.85
    yy, xx = np.mgrid[0:size, 0:size]
    disk = (yy - 0.65 * size) ** 2 + (xx - 0.6 * size) ** 2 <= (0.18 * size) ** 2
    img[disk] = 0.5
    strip = slice(int(0.75 * size), int(0.9 * size))
    img[strip, :] = np.linspace(0.1, 0.95, size)[None, :]
    return GridField(img, 1.0 / size)


def psnr(u: GridField, reference: GridField) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images.

    Symmetric in its arguments; identical fields give ``math.inf``.
    """
    if u.data.shape != reference.data.shape:
        raise ValueError("PSNR needs fields on the same grid")
    mse = float(np.mean((u.data - reference.data) ** 2))
    return math.inf if mse == 0 else -10.0 * math.log10(mse)


@dataclass(frozen=True)
class InpaintMask:
    """Boolean mask of missing cells (True = no data there)."""

    missing: np.ndarray

    def __post_init__(self) -> None:
        mask = np.asarray(self.missing, dtype=bool)
        if mask.ndim != 2 or mask.size == 0:
            raise ValueError("mask must be a non-empty 2D boolean array")
        if mask.all():
            raise ValueError("mask covers the whole image; nothing to anchor on")
        object.__setattr__(self, "missing", mask)

    @property
    def any_missing(self) -> bool:
        return bool(self.missing.any())


def read_mask(path: str | Path) -> InpaintMask:
    """Read a mask image; gray levels >= 0.5 mark missing cells."""
    field = read_image(path)
    return InpaintMask(field.data >= 0.5)


def nearest_fill(g: GridField, mask: InpaintMask) -> GridField:
    """Fill missing cells with the value of the nearest known cell."""
    if mask.missing.shape != g.data.shape:
        raise ValueError("mask and image must share one grid")
    if not mask.any_missing:
        return g.with_data(g.data.copy())
    idx = ndimage.distance_transform_edt(
        mask.missing, return_distances=False, return_indices=True
    )
    return g.with_data(g.data[tuple(idx)])


def inpaint_spec(
    g: GridField,
    mask: InpaintMask,
    lambda_known: float = 1e4,
    regularizer: Regularizer | None = None,
    damping: float | None = None,
    rho: float = 1.0,
) -> tuple[ProblemSpec, GridField]:
    """Inpainting problem plus its initial guess.

    The fidelity weight is ``lambda_known`` on known cells and zero on the
    mask, so the flow interpolates the hole from the penalty alone.  The
    returned initial guess is the nearest-neighbor fill of the data, which
    seeds the hole with plausible values instead of zeros.
    """
    if mask.missing.shape != g.data.shape:
        raise ValueError("mask and image must share one grid")
    if not lambda_known > 0:
        raise ValueError("lambda_known must be positive")
    if regularizer is None:
        regularizer = Beltrami(1.0)
    weight = np.where(mask.missing, 0.0, float(lambda_known))
    spec = ProblemSpec(
        data=g,
        fidelity_weight=g.with_data(weight),
        regularizer=regularizer,
        damping=damping,
        rho=rho,
    )
    return spec, nearest_fill(g, mask)
