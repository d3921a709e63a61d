"""Conformal rescaling of metrics and everything that hangs off it.

For n >= 3 the package works with fourth-power scalings g -> c^4 g. The
load-bearing facts, each of which has a discrete counterpart here:

* scaling law:  -Lap_{c^4 g} u = c^{-(n+2)} (-Lap_g + q)(c^{n-2} u)
  with the potential q = c^{-(n-2)} Lap_g c^{n-2};
* an exact pointwise energy identity relating the c^4 g Dirichlet
  integrand to two g-integrands of products with c^{n-2} (both sides
  collapse to c^{2n-4} <du, dw>_g sqrt(det g));
* the weak gauge condition: c^{n-2} g-harmonic, c = 1 on the measurement
  component; with measurements on the full boundary this forces c == 1
  (global rigidity), which is why the counterexample needs rough
  coefficients.

In two dimensions the scaling that preserves the weak form is first power,
kept as a separate code path; fourth-power claims are refused at n = 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytic import AnalyticScalar, constant as analytic_constant
from .calculus import (
    CovectorField,
    ScalarField,
    divergence_form_apply,
    gradient,
    integrate_volume,
    laplace_beltrami_pointwise,
)
from .dn_solver import BoundaryTrace, StiffnessSystem, assemble_stiffness, solve_dirichlet
from .errors import (
    DimensionTooSmall,
    FactorTooLarge,
    GridMismatch,
    InsufficientSamples,
    MissingAnalyticGradient,
    NonPositiveFactor,
)
from .grid_geometry import GAMMA0, GAMMA1, CylinderGrid, MetricField


@dataclass(frozen=True, eq=False)
class ConformalFactor:
    """Strictly positive scalar factor c on a grid, with the power
    c^{n-2} cached since every identity is algebraic in that power."""

    field: ScalarField
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise DimensionTooSmall("conformal factors need n >= 2")
        if float(self.field.values.min()) <= 0.0:
            raise NonPositiveFactor(
                f"min factor value {float(self.field.values.min()):.3e} <= 0"
            )

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    @property
    def grid(self) -> CylinderGrid:
        return self.field.grid

    @property
    def source(self) -> AnalyticScalar | None:
        return self.field.source

    def power_nm2(self) -> ScalarField:
        """c^{n-2} as a field; carries a closed form when c does."""
        vals = self.values ** (self.n - 2)
        src = None
        if self.field.source is not None:
            src = self.field.source ** (self.n - 2)
        return ScalarField(self.grid, vals, source=src)

    @classmethod
    def from_source(cls, grid: CylinderGrid, source: AnalyticScalar, n: int) -> "ConformalFactor":
        return cls(ScalarField.from_source(grid, source), n)

    @classmethod
    def one(cls, grid: CylinderGrid, n: int) -> "ConformalFactor":
        return cls(ScalarField.constant(grid, 1.0), n)


def conformal_family(u: ScalarField, eps: float, n: int) -> ConformalFactor:
    """The one-parameter family with c^{n-2} = 1 + eps * u.

    For n = 3 the value 1 + eps*u must stay >= 1/2 (the family's positivity
    floor); for n > 3 it must stay positive. eps = 0 returns c identically
    one, exactly.
    """
    if n < 3:
        raise DimensionTooSmall("the conformal family is defined for n >= 3")
    eps = float(eps)
    base = 1.0 + eps * u.values
    lo = float(base.min())
    if n == 3:
        if lo < 0.5:
            raise FactorTooLarge(
                f"1 + eps*u drops to {lo:.4f} < 1/2 at eps = {eps}"
            )
    elif lo <= 0.0:
        raise FactorTooLarge(f"1 + eps*u drops to {lo:.4f} <= 0 at eps = {eps}")
    vals = base ** (1.0 / (n - 2))
    src = None
    if u.source is not None:
        src = (analytic_constant(1.0, u.grid.n) + eps * u.source) ** (1.0 / (n - 2))
    return ConformalFactor(ScalarField(u.grid, vals, source=src), n)


def scale_metric(g: MetricField, c: ConformalFactor) -> MetricField:
    """Fourth-power scaling c^4 g (n >= 3 only).

    The volume-element check ``sqrt(det(c^4 g)) = c^{2n} sqrt(det g)`` is
    enforced to 1e-12 relative; it is the discrete version of how volume
    responds to the scaling.
    """
    n = g.grid.n
    if n < 3:
        raise DimensionTooSmall(
            "fourth-power scaling is the n >= 3 convention; use scale_metric_2d"
        )
    if c.grid.shape != g.grid.shape:
        raise GridMismatch("factor and metric grids differ")
    c4 = (c.values**4)[..., None, None]
    out = MetricField(g.grid, c4 * g.mat, name=f"{g.name}*conf")
    expected = (c.values ** (2 * n)) * g.sqrt_det
    defect = np.abs(out.sqrt_det - expected)
    scale = np.maximum(np.abs(expected), 1e-300)
    if (defect > 1e-12 * scale).any():
        raise NonPositiveFactor("scaled volume element violates c^{2n} sqrt(det g)")
    return out


def scale_metric_2d(g: MetricField, c: ConformalFactor) -> MetricField:
    """First-power scaling c g; the 2-D invariance convention."""
    if g.grid.n != 2:
        raise GridMismatch("first-power scaling is the n = 2 convention")
    if c.grid.shape != g.grid.shape:
        raise GridMismatch("factor and metric grids differ")
    return MetricField(g.grid, c.values[..., None, None] * g.mat, name=f"{g.name}*conf2d")


def _extrapolate_t_ends(values: np.ndarray) -> np.ndarray:
    """Fill the NaN t-boundary layers by quadratic extrapolation from the
    three adjacent interior layers."""
    out = values.copy()
    out[0] = 3.0 * values[1] - 3.0 * values[2] + values[3]
    out[-1] = 3.0 * values[-2] - 3.0 * values[-3] + values[-4]
    return out


def conformal_potential(
    g: MetricField, c: ConformalFactor, one_sided: bool = False
) -> np.ndarray:
    """The scaling-law potential q = c^{-(n-2)} Lap_g c^{n-2} as a node
    table.

    The stencil Laplacian does not exist on the t-boundary layers; with
    ``one_sided`` they are filled by quadratic extrapolation (exact when c
    is constant near the ends), otherwise they stay NaN. If c^{n-2} is
    constant the result is identically zero, boundary layers included.
    """
    P = c.power_nm2()
    vals = P.values
    if np.ptp(vals) == 0.0:
        return np.zeros(g.grid.shape)
    lap = laplace_beltrami_pointwise(g, vals)
    q = lap / vals
    if one_sided:
        q = _extrapolate_t_ends(q)
    return q


def scaling_law_residual(g: MetricField, c: ConformalFactor, f: ScalarField) -> float:
    """Max interior defect of the discrete scaling law

        -Lap_{c^4 g} f  vs  c^{-(n+2)} ( -Lap_g + q )( c^{n-2} f ),

    with every Laplacian the same conservative stencil. Second-order small
    for smooth data; identically small when c == 1.
    """
    n = g.grid.n
    if f.grid.shape != g.grid.shape:
        raise GridMismatch("field and metric grids differ")
    g_scaled = scale_metric(g, c)
    lhs = -laplace_beltrami_pointwise(g_scaled, f.values)
    P = c.power_nm2().values
    q = conformal_potential(g, c)
    rhs = (c.values ** (-(n + 2))) * (
        -laplace_beltrami_pointwise(g, P * f.values) + q * (P * f.values)
    )
    return float(np.abs(lhs[1:-1] - rhs[1:-1]).max())


def _require_gradient(f: ScalarField, name: str) -> CovectorField:
    if f.source is None:
        raise MissingAnalyticGradient(f"{name} needs a closed-form gradient")
    return gradient(f)


def algebraic_identity_check(
    g: MetricField, c: ConformalFactor, u: ScalarField, w: ScalarField
) -> float:
    """Max nodal defect of the exact energy identity

        <du, dw>_{c^4 g} dVol_{c^4 g}
          = [ <d(Pu), d(Pw)>_g - <dP, d(P u w)>_g ] dVol_g,   P = c^{n-2}.

    All gradients are closed-form; products use the product rule, so the
    only error is floating point. Both sides equal c^{2n-4} <du,dw>_g
    sqrt(det g) pointwise.
    """
    grid = g.grid
    du = _require_gradient(u, "u")
    dw = _require_gradient(w, "w")
    if c.source is None:
        raise MissingAnalyticGradient("c needs a closed-form gradient")
    P = c.power_nm2()
    dP = gradient(P)

    g_scaled = scale_metric(g, c)
    inner_scaled = _inner(g_scaled, du.comps, dw.comps)
    lhs = inner_scaled * g_scaled.sqrt_det

    uv, wv, Pv = u.values, w.values, P.values
    d_Pu = Pv[..., None] * du.comps + uv[..., None] * dP.comps
    d_Pw = Pv[..., None] * dw.comps + wv[..., None] * dP.comps
    d_Puw = (
        (uv * wv)[..., None] * dP.comps
        + (Pv * wv)[..., None] * du.comps
        + (Pv * uv)[..., None] * dw.comps
    )
    rhs = (_inner(g, d_Pu, d_Pw) - _inner(g, dP.comps, d_Puw)) * g.sqrt_det
    return float(np.abs(lhs - rhs).max())


def _inner(g: MetricField, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...i,...j->...", g.inv, a, b)


@dataclass(frozen=True)
class WeakConditionResidual:
    """How far c^{n-2} is from the weak gauge condition relative to a
    stiffness matrix: residuals of the harmonicity test rows (split into
    interior rows and measurement-component rows) and the boundary defect
    max |c - 1| there."""

    residual: float
    interior_residual: float
    gamma_residual: float
    boundary_defect: float


def weak_condition_residual(
    sys: StiffnessSystem, c: ConformalFactor, gamma: str = GAMMA1
) -> WeakConditionResidual:
    """Test rows of K c^{n-2} at interior and gamma nodes, normalised by
    the operator's infinity norm times max |c^{n-2}|."""
    grid = sys.grid
    if c.grid.shape != grid.shape:
        raise GridMismatch("factor and system grids differ")
    K = sys.matrix
    P = c.power_nm2().values.ravel()
    r = np.abs(K @ P)
    norm = float(np.abs(K).sum(axis=1).max()) * float(np.abs(P).max())
    norm = max(norm, 1e-300)
    i_res = float(r[grid.interior_ids()].max()) / norm
    g_res = float(r[grid.boundary_ids(gamma)].max()) / norm
    defect = float(np.abs(c.values.reshape(grid.shape)[0 if gamma == GAMMA0 else -1] - 1.0).max())
    if gamma == "full":
        defect = float(
            max(np.abs(c.values[0] - 1.0).max(), np.abs(c.values[-1] - 1.0).max())
        )
        g_res = float(r[grid.boundary_ids("full")].max()) / norm
    return WeakConditionResidual(max(i_res, g_res), i_res, g_res, defect)


def harmonic_with_natural_bc(
    sys: StiffnessSystem, dirichlet_layer: np.ndarray, gamma_dirichlet: str = GAMMA0
) -> ScalarField:
    """Discrete harmonic field with Dirichlet data on one layer and the
    natural (do-nothing) condition on the other.

    This is how one manufactures a factor satisfying the weak gauge
    condition everywhere except the boundary normalisation: the result is
    K-harmonic on interior and natural-side rows by construction, but
    generically differs from 1 on the natural side.
    """
    grid = sys.grid
    vals = np.asarray(dirichlet_layer, dtype=float)
    if vals.shape != tuple(grid.num_ang):
        raise GridMismatch(f"layer shape {vals.shape}, expected {tuple(grid.num_ang)}")
    K = sys.matrix
    D = grid.boundary_ids(gamma_dirichlet)
    free = np.setdiff1d(np.arange(grid.node_count), D, assume_unique=False)
    u = np.zeros(grid.node_count)
    u[D] = vals.ravel()
    from .dn_solver import _factorize

    lu = _factorize(K[free][:, free], "free block")
    u[free] = lu.solve(-K[free][:, D] @ u[D])
    return ScalarField(grid, u.reshape(grid.shape))


def _det3(m: np.ndarray) -> np.ndarray:
    """Cofactor determinant of a (..., 3, 3) array, any float dtype."""
    return (
        m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
        - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
        + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0])
    )


def _solve_pivoted(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting in the dtype of A.

    LAPACK only handles double, so extended-precision right hand sides
    need this small hand-rolled path (systems here are 7x7).
    """
    A = A.copy()
    b = b.copy()
    m = len(b)
    for k in range(m):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        if A[p, k] == 0:
            raise InsufficientSamples("eps samples are numerically coincident")
        if p != k:
            A[[k, p]] = A[[p, k]]
            b[[k, p]] = b[[p, k]]
        for i in range(k + 1, m):
            f = A[i, k] / A[k, k]
            A[i, k:] -= f * A[k, k:]
            b[i] -= f * b[k]
    x = np.zeros_like(b)
    for k in range(m - 1, -1, -1):
        x[k] = (b[k] - A[k, k + 1 :] @ x[k + 1 :]) / A[k, k]
    return x


def volume_expansion(g: MetricField, u: ScalarField, eps_list) -> np.ndarray:
    """Coefficients p_0..p_6 of the exact degree-6 polynomial

        V(eps) = Vol_{c_eps^4 g}(M) - Vol_g(M),   c_eps^{n-2} = 1 + eps u,

    on the 3-D cylinder, fitted by an exact Vandermonde interpolation on
    the first seven distinct eps samples (scaled variable). Volumes are
    measured, not expanded symbolically: the scaled metric determinant is
    evaluated per node and differenced against the base volume element
    before summation. The whole pipeline runs in extended precision; in
    double the Vandermonde conditioning leaves the recovered coefficients
    dependent on the sample set at the 1e-8 level.
    """
    if g.grid.n != 3:
        raise DimensionTooSmall("the volume expansion argument is n = 3")
    if u.grid.shape != g.grid.shape:
        raise GridMismatch("field and metric grids differ")
    eps = []
    for e in np.asarray(eps_list, dtype=float).ravel():
        if not any(abs(e - x) < 1e-15 for x in eps):
            eps.append(float(e))
        if len(eps) == 7:
            break
    if len(eps) < 7:
        raise InsufficientSamples(f"need 7 distinct eps samples, got {len(eps)}")
    eps = np.array(eps, dtype=np.longdouble)
    w = g.grid.quad_weights.astype(np.longdouble)
    mat = g.mat.astype(np.longdouble)
    base = np.sqrt(_det3(mat))
    uu = u.values.astype(np.longdouble)
    V = np.empty(7, dtype=np.longdouble)
    for k, e in enumerate(eps):
        conformal_family(u, float(e), 3)  # range validation only
        c4 = (1 + e * uu) ** 4
        diff = np.sqrt(_det3(c4[..., None, None] * mat)) - base
        V[k] = np.sum(diff * w)
    s = np.abs(eps).max()
    if s == 0:
        raise InsufficientSamples("eps samples are all zero")
    A = np.vander(eps / s, 7, increasing=True)
    q = _solve_pivoted(A, V)
    return np.asarray(q / s ** np.arange(7), dtype=float)


def global_rigidity_check(g: MetricField) -> float:
    """Solve the Dirichlet problem with boundary data 1 on the whole
    boundary and report max |u - 1|.

    In the continuum, full-boundary measurements force a weak-condition
    factor to be identically 1; discretely the harmonic extension of 1 is
    1 up to solver precision, which is this number.
    """
    sys = assemble_stiffness(g)
    u = solve_dirichlet(sys, BoundaryTrace.constant(g.grid, 1.0))
    return float(np.abs(u.values - 1.0).max())
