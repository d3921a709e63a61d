"""Discrete calculus on cylinder grids.

Gradients use closed-form derivatives when the field carries them and
second-order finite differences otherwise (centered in periodic
directions, one-sided at the t-endpoints). The divergence-form operator

    f  |->  sum_i d_i ( A^{ij} d_j f )

uses the conservative flux stencil: coefficients are averaged to cell
midpoints, never differenced, so a coefficient that is merely continuous
in t (or rougher) is acceptable wherever the flux direction is angular.
Divergence values exist at interior t-layers only; the boundary layers of
the returned table are NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytic import AnalyticScalar
from .errors import BoundaryLayerRequested, GridMismatch
from .grid_geometry import CylinderGrid, MetricField


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Node table of scalars, optionally backed by a closed form."""

    grid: CylinderGrid
    values: np.ndarray
    source: AnalyticScalar | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise GridMismatch(f"values shape {v.shape}, expected {self.grid.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_source(cls, grid: CylinderGrid, source: AnalyticScalar) -> "ScalarField":
        if source.dim != grid.n:
            raise GridMismatch(f"source dim {source.dim} != grid dim {grid.n}")
        return cls(grid, source.value(grid.points), source=source)

    @classmethod
    def constant(cls, grid: CylinderGrid, a: float) -> "ScalarField":
        from .analytic import constant

        return cls(grid, np.full(grid.shape, float(a)), source=constant(a, grid.n))


@dataclass(frozen=True, eq=False)
class CovectorField:
    """Node table of one-forms, components shape ``(*grid.shape, n)``."""

    grid: CylinderGrid
    comps: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.comps, dtype=float)
        if c.shape != self.grid.shape + (self.grid.n,):
            raise GridMismatch(
                f"components shape {c.shape}, expected {self.grid.shape + (self.grid.n,)}"
            )
        object.__setattr__(self, "comps", c)


def _centered_diff(values: np.ndarray, grid: CylinderGrid, axis: int) -> np.ndarray:
    """Second-order first derivative along one axis.

    Periodic wrap on angular axes. On the t-axis, centered differences in
    the interior and one-sided three-point stencils at the endpoints (exact
    on linear functions).
    """
    h = grid.spacings[axis]
    if axis == 0:
        out = np.empty_like(values)
        out[1:-1] = (values[2:] - values[:-2]) / (2.0 * h)
        out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h)
        out[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * h)
        return out
    return (np.roll(values, -1, axis) - np.roll(values, 1, axis)) / (2.0 * h)


def gradient(f: ScalarField) -> CovectorField:
    """Exact gradient if the field has a closed form, else finite differences."""
    grid = f.grid
    if f.source is not None:
        return CovectorField(grid, f.source.gradient(grid.points))
    comps = np.stack(
        [_centered_diff(f.values, grid, ax) for ax in range(grid.n)], axis=-1
    )
    return CovectorField(grid, comps)


def oneform_inner(a: CovectorField, b: CovectorField, g: MetricField) -> ScalarField:
    """Pointwise inner product <a, b>_g = g^{ij} a_i b_j.

    Summed over the upper triangle with the symmetric pairing
    ``g^{ij} (a_i b_j + a_j b_i)`` so the result is bitwise symmetric in
    (a, b).
    """
    if a.grid is not g.grid and a.grid.shape != g.grid.shape:
        raise GridMismatch("one-form and metric grids differ")
    n = g.grid.n
    ginv = g.inv
    av, bv = a.comps, b.comps
    out = np.zeros(g.grid.shape)
    for i in range(n):
        out += ginv[..., i, i] * (av[..., i] * bv[..., i])
        for j in range(i + 1, n):
            out += ginv[..., i, j] * (av[..., i] * bv[..., j] + av[..., j] * bv[..., i])
    return ScalarField(g.grid, out)


def integrate_volume(f: ScalarField | np.ndarray, g: MetricField) -> float:
    """Quadrature of f against the metric volume element sqrt(det g)."""
    values = f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float)
    if values.shape != g.grid.shape:
        raise GridMismatch(f"field shape {values.shape}, expected {g.grid.shape}")
    return float(np.sum(values * g.sqrt_det * g.grid.quad_weights))


def _half_shift(values: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    """Average of a node table onto the half-nodes in one direction.

    For a periodic axis the result keeps the axis length (half-node k sits
    between nodes k and k+1, wrapping); for the t-axis it is one shorter.
    """
    if periodic:
        return 0.5 * (values + np.roll(values, -1, axis))
    lo = [slice(None)] * values.ndim
    hi = [slice(None)] * values.ndim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return 0.5 * (values[tuple(lo)] + values[tuple(hi)])


def divergence_form_apply(
    weight: np.ndarray, f: ScalarField | np.ndarray, grid: CylinderGrid
) -> np.ndarray:
    """Conservative flux stencil for sum_i d_i ( W^{ij} d_j f ).

    ``weight`` is a node table of symmetric matrices ``(*shape, n, n)``.
    Fluxes live on half-nodes: the weight and (for cross terms) the
    centered tangential derivative are averaged onto the half-node, the
    derivative along the flux direction is the natural two-point
    difference. Returns a full node table whose t-boundary layers are NaN.
    """
    values = f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float)
    n = grid.n
    if values.shape != grid.shape:
        raise GridMismatch(f"field shape {values.shape}, expected {grid.shape}")
    if weight.shape != grid.shape + (n, n):
        raise GridMismatch(f"weight shape {weight.shape}, expected {grid.shape + (n, n)}")
    h = grid.spacings

    # centered first derivatives at nodes, used for the cross terms
    centered = [_centered_diff(values, grid, ax) for ax in range(n)]

    out = np.zeros(grid.shape)
    for i in range(n):
        periodic = i > 0
        # flux_i on half-nodes of direction i
        if periodic:
            din = (np.roll(values, -1, i) - values) / h[i]
        else:
            lo = [slice(None)] * n
            hi = [slice(None)] * n
            lo[i] = slice(None, -1)
            hi[i] = slice(1, None)
            din = (values[tuple(hi)] - values[tuple(lo)]) / h[i]
        flux = _half_shift(weight[..., i, i], i, periodic) * din
        for j in range(n):
            if j == i:
                continue
            flux = flux + _half_shift(weight[..., i, j], i, periodic) * _half_shift(
                centered[j], i, periodic
            )
        if periodic:
            out += (flux - np.roll(flux, 1, i)) / h[i]
        else:
            out[1:-1] += (flux[1:] - flux[:-1]) / h[i]
    out[0] = np.nan
    out[-1] = np.nan
    return out


def laplace_beltrami_pointwise(g: MetricField, f: ScalarField | np.ndarray) -> np.ndarray:
    """Metric Laplacian via the divergence form with weight
    sqrt(det g) * g^{-1}, divided node-wise by sqrt(det g).

    Interior t-layers only; boundary layers are NaN.
    """
    div = divergence_form_apply(g.weight, f, g.grid)
    return div / g.sqrt_det


def interior(values: np.ndarray) -> np.ndarray:
    """The t-interior slab of a node table (drops both boundary layers)."""
    return values[1:-1]


def require_full_layers(values: np.ndarray, what: str = "field") -> np.ndarray:
    """Assert a node table has no NaN boundary layers left."""
    if np.isnan(values).any():
        raise BoundaryLayerRequested(
            f"{what} is undefined on the t-boundary layers; "
            "enable one-sided extension to use it there"
        )
    return values
