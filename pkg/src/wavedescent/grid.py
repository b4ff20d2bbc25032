"""Scalar and vector fields on uniform grids, plus the discrete differential operators.

All flows in this package evolve fields sampled on a uniform grid with
homogeneous Neumann boundaries.  The spatial discretization is fixed
throughout:

* ``forward_gradient`` uses one-sided forward differences and returns zero in
  the last cell along each axis,
* ``backward_divergence`` is the exact negative adjoint of
  ``forward_gradient`` under the unweighted cell-sum inner product,
* ``laplacian`` is their composition, i.e. central second differences with
  mirrored (Neumann) ghost cells.

Keeping the gradient/divergence pair exactly adjoint makes the discrete
energy gradient the true gradient of the discrete energy, which the solvers
and their convergence diagnostics rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridField",
    "VectorField",
    "default_spacing",
    "forward_gradient",
    "backward_divergence",
    "laplacian",
    "inner",
]


def default_spacing(rows: int, cols: int) -> float:
    """Grid spacing that maps the longer image side onto a unit-length domain."""
    return 1.0 / max(rows, cols)


@dataclass(frozen=True)
class GridField:
    """Real samples on a uniform grid.

    ``data`` has shape ``(rows, cols)``; a single-column field is treated as
    one-dimensional.  Instances are value-like: operations return new fields
    and never mutate ``data`` in place.

    Parameters
    ----------
    data : ndarray
        Sample values, converted to a float64 array of shape (rows, cols).
    dx : float
        Grid spacing, identical along both axes.
    """

    data: np.ndarray
    dx: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("field data must be a non-empty 2D array")
        if not (np.isfinite(self.dx) and self.dx > 0):
            raise ValueError(f"grid spacing must be a positive real, got {self.dx!r}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "dx", float(self.dx))

    @classmethod
    def from_array(cls, values, dx: float | None = None) -> "GridField":
        """Wrap an array (1D arrays become single-column fields)."""
        arr = np.atleast_1d(np.asarray(values, dtype=float))
        if arr.ndim == 1:
            arr = arr[:, None]
        if dx is None:
            dx = default_spacing(*arr.shape)
        return cls(arr, dx)

    @classmethod
    def zeros(cls, rows: int, cols: int, dx: float | None = None) -> "GridField":
        if dx is None:
            dx = default_spacing(rows, cols)
        return cls(np.zeros((rows, cols)), dx)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def ndim(self) -> int:
        """Number of spatial axes: 1 for single-column fields, else 2."""
        return 1 if self.data.shape[1] == 1 else 2

    @property
    def n_cells(self) -> int:
        return self.data.size

    @property
    def cell_measure(self) -> float:
        """Volume of one grid cell, ``dx**ndim``."""
        return self.dx**self.ndim

    def with_data(self, data) -> "GridField":
        """New field on the same grid with different samples."""
        return GridField(np.asarray(data, dtype=float), self.dx)

    def zeros_like(self) -> "GridField":
        return GridField(np.zeros_like(self.data), self.dx)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.data)))


@dataclass(frozen=True)
class VectorField:
    """Per-axis component fields, e.g. the output of ``forward_gradient``.

    ``components[0]`` points along rows (axis 0), ``components[1]`` along
    columns.  One-dimensional fields carry a single component.
    """

    components: tuple[GridField, ...]

    def __post_init__(self) -> None:
        if not 1 <= len(self.components) <= 2:
            raise ValueError("a vector field has one or two components")
        first = self.components[0]
        for comp in self.components[1:]:
            if comp.data.shape != first.data.shape or comp.dx != first.dx:
                raise ValueError("vector field components must share one grid")

    @property
    def dx(self) -> float:
        return self.components[0].dx

    def magnitude(self) -> GridField:
        """Pointwise Euclidean norm of the vector samples."""
        sq = sum(comp.data**2 for comp in self.components)
        return self.components[0].with_data(np.sqrt(sq))


def forward_gradient(u: GridField) -> VectorField:
    """Forward-difference gradient, zero in the last cell along each axis."""
    comps = []
    for axis in range(u.ndim):
        g = np.zeros_like(u.data)
        if axis == 0:
            g[:-1, :] = (u.data[1:, :] - u.data[:-1, :]) / u.dx
        else:
            g[:, :-1] = (u.data[:, 1:] - u.data[:, :-1]) / u.dx
        comps.append(u.with_data(g))
    return VectorField(tuple(comps))


def backward_divergence(p: VectorField) -> GridField:
    """Backward-difference divergence, the exact negative adjoint of the gradient.

    For every pair of fields ``<forward_gradient(u), p> == -<u, backward_divergence(p)>``
    holds under the unweighted cell-sum inner product, including the boundary
    cells.  The last sample of each component never enters (the matching
    gradient entry is zero by construction).
    """
    first = p.components[0]
    out = np.zeros_like(first.data)
    for axis, comp in enumerate(p.components):
        d = comp.data
        n = d.shape[axis]
        if n == 1:
            continue
        if axis == 0:
            out[0, :] += d[0, :]
            out[1:-1, :] += d[1:-1, :] - d[:-2, :]
            out[-1, :] -= d[-2, :]
        else:
            out[:, 0] += d[:, 0]
            out[:, 1:-1] += d[:, 1:-1] - d[:, :-2]
            out[:, -1] -= d[:, -2]
    return first.with_data(out / first.dx)


def laplacian(u: GridField) -> GridField:
    """Five-point Laplacian with mirrored (Neumann) ghost cells.

    Identical to ``backward_divergence(forward_gradient(u))``; implemented as
    a single edge-padded stencil pass.
    """
    out = np.zeros_like(u.data)
    for axis in range(u.ndim):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (1, 1)
        padded = np.pad(u.data, pad, mode="edge")
        if axis == 0:
            out += padded[2:, :] - 2.0 * u.data + padded[:-2, :]
        else:
            out += padded[:, 2:] - 2.0 * u.data + padded[:, :-2]
    return u.with_data(out / u.dx**2)


def inner(x: GridField | VectorField, y: GridField | VectorField) -> float:
    """Unweighted cell-sum inner product of two fields of the same kind."""
    if isinstance(x, GridField) and isinstance(y, GridField):
        return float(np.vdot(x.data, y.data))
    if isinstance(x, VectorField) and isinstance(y, VectorField):
        if len(x.components) != len(y.components):
            raise ValueError("vector fields must have matching components")
        return sum(inner(a, b) for a, b in zip(x.components, y.components))
    raise TypeError("inner expects two GridFields or two VectorFields")
