"""Tensor grids on the cylinder [0,1] x T^{n-1} and metric fields on them.

The t-axis carries a uniform grid including both endpoints; every angular
axis carries a uniform periodic grid on [0, 2*pi) without a duplicate seam
node. Nodes are ordered lexicographically (t-major, C order), so the two
boundary layers are the first and last contiguous blocks of node ids.

Metrics live either as closed-form sources (evaluate anywhere) or as node
tables with cached determinants and inverses. The divergence-form
coefficient family with a one-dimensional Hoelder-rough part is assembled
into 3-D and n-D metrics here; the defining algebraic property is that the
metric's weight matrix sqrt(det g) * g^{-1} reproduces the coefficient
matrix exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import (
    Asymmetric,
    DegenerateDeterminant,
    DimensionTooSmall,
    GridMismatch,
    NonPositiveDefinite,
)

TWO_PI = 2.0 * np.pi

GAMMA0 = "gamma0"
GAMMA1 = "gamma1"
FULL_BOUNDARY = "full"
BOUNDARY_NAMES = (GAMMA0, GAMMA1, FULL_BOUNDARY)


@dataclass(frozen=True)
class CylinderGrid:
    """Uniform tensor grid on [0,1] x T^{n-1}.

    Parameters
    ----------
    n : int
        Ambient dimension, n >= 2.
    num_t : int
        Nodes along t including both endpoints, >= 3.
    num_ang : tuple of int
        Nodes per angular axis, each >= 4 (periodic, no duplicate seam).
    """

    n: int
    num_t: int
    num_ang: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "num_ang", tuple(int(m) for m in self.num_ang))
        if self.n < 2:
            raise DimensionTooSmall(f"cylinder dimension must be >= 2, got {self.n}")
        if len(self.num_ang) != self.n - 1:
            raise ValueError(
                f"expected {self.n - 1} angular sizes, got {len(self.num_ang)}"
            )
        if self.num_t < 3:
            raise ValueError(f"need at least 3 t-nodes, got {self.num_t}")
        if any(m < 4 for m in self.num_ang):
            raise ValueError(f"need at least 4 nodes per angular axis: {self.num_ang}")

    # -- basic geometry -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.num_t, *self.num_ang)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.shape))

    @property
    def layer_count(self) -> int:
        """Nodes in one t-layer."""
        return int(np.prod(self.num_ang))

    @property
    def h_t(self) -> float:
        return 1.0 / (self.num_t - 1)

    @property
    def h_ang(self) -> tuple[float, ...]:
        return tuple(TWO_PI / m for m in self.num_ang)

    @property
    def spacings(self) -> np.ndarray:
        return np.array([self.h_t, *self.h_ang])

    def axes(self) -> list[np.ndarray]:
        t = np.linspace(0.0, 1.0, self.num_t)
        angs = [TWO_PI * np.arange(m) / m for m in self.num_ang]
        return [t, *angs]

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, n)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """Trapezoid-in-t, uniform-per-angular-axis quadrature weights."""
        wt = np.full(self.num_t, self.h_t)
        wt[0] *= 0.5
        wt[-1] *= 0.5
        w = wt
        for m in self.num_ang:
            w = np.multiply.outer(w, np.full(m, TWO_PI / m))
        return w

    @cached_property
    def layer_weights(self) -> np.ndarray:
        """Quadrature weights of one boundary layer (flat measure)."""
        w = np.ones(())
        for m in self.num_ang:
            w = np.multiply.outer(w, np.full(m, TWO_PI / m))
        return w

    # -- node id sets -----------------------------------------------------

    def boundary_ids(self, gamma: str) -> np.ndarray:
        """Flat node ids of a boundary component, ascending."""
        P = self.layer_count
        if gamma == GAMMA0:
            return np.arange(P)
        if gamma == GAMMA1:
            return np.arange((self.num_t - 1) * P, self.num_t * P)
        if gamma == FULL_BOUNDARY:
            return np.concatenate([self.boundary_ids(GAMMA0), self.boundary_ids(GAMMA1)])
        raise ValueError(f"unknown boundary component {gamma!r}")

    def interior_ids(self) -> np.ndarray:
        P = self.layer_count
        return np.arange(P, (self.num_t - 1) * P)

    # -- refinement ------------------------------------------------------

    def refine(self, factor: int) -> "CylinderGrid":
        f = int(factor)
        return CylinderGrid(self.n, (self.num_t - 1) * f + 1, tuple(m * f for m in self.num_ang))

    def coarsen(self, stride: int) -> "CylinderGrid":
        s = int(stride)
        if (self.num_t - 1) % s or any(m % s for m in self.num_ang):
            raise GridMismatch(f"stride {s} does not divide grid {self.shape}")
        return CylinderGrid(self.n, (self.num_t - 1) // s + 1, tuple(m // s for m in self.num_ang))

    def compatible_cylinder(self, other: "CylinderGrid") -> bool:
        """Same manifold (dimension), possibly different refinement."""
        return self.n == other.n


def cyl_grid(n: int, size: int) -> CylinderGrid:
    """Convenience builder: ``size`` t-nodes, ``size - 1`` nodes per angle.

    A 'size 9' grid for n=3 is 9 x 8 x 8: halving h in every direction
    maps size 9 -> 17 -> 33, and the even angular count keeps dyadic
    coarsening exact.
    """
    return CylinderGrid(n, size, tuple([size - 1] * (n - 1)))


# ---------------------------------------------------------------------------
# metric sources and sampled metric fields


@dataclass(frozen=True)
class MetricSource:
    """Closed-form metric: evaluate a symmetric matrix at arbitrary points.

    Parameters
    ----------
    n : int
        Dimension.
    func : callable
        Maps points ``(..., n)`` to matrices ``(..., n, n)``.
    dfunc : callable, optional
        Coordinate derivatives, points to ``(..., n, n, n)`` with the
        leading matrix axes first and the derivative direction last.
    alpha_min : float, optional
        Declared uniform ellipticity floor, if known.
    name : str
        Identifier used in exported metadata.
    """

    n: int
    func: Callable[[np.ndarray], np.ndarray]
    dfunc: Callable[[np.ndarray], np.ndarray] | None = None
    alpha_min: float | None = None
    name: str = "custom"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.asarray(self.func(pts), dtype=float)


def flat_metric(n: int, name: str = "flat") -> MetricSource:
    def func(p):
        out = np.zeros(p.shape[:-1] + (n, n))
        idx = np.arange(n)
        out[..., idx, idx] = 1.0
        return out

    return MetricSource(n, func, alpha_min=1.0, name=name)


def constant_metric(mat, name: str = "constant") -> MetricSource:
    m = np.asarray(mat, dtype=float)
    n = m.shape[0]

    def func(p):
        return np.broadcast_to(m, p.shape[:-1] + (n, n)).copy()

    return MetricSource(n, func, alpha_min=float(np.linalg.eigvalsh(m).min()), name=name)


def random_trig_metric(
    n: int, seed: int, amplitude: float | None = None, max_mode: int = 2
) -> MetricSource:
    """Identity plus a small random trigonometric symmetric perturbation.

    The perturbation entries are bounded by ``amplitude`` in absolute value,
    so eigenvalues stay within ``1 +- n * amplitude``. The default keeps the
    spectrum inside [0.6, 1.4].
    """
    from .analytic import trig_sum

    if amplitude is None:
        amplitude = 0.4 / n
    rng = np.random.default_rng(seed)
    entries = {}
    for i in range(n):
        for j in range(i, n):
            entries[(i, j)] = trig_sum(n, rng, terms=2, amplitude=amplitude, max_mode=max_mode)

    def func(p):
        out = np.zeros(p.shape[:-1] + (n, n))
        for (i, j), expr in entries.items():
            v = expr.value(p)
            out[..., i, j] += v
            if i != j:
                out[..., j, i] += v
        idx = np.arange(n)
        out[..., idx, idx] += 1.0
        return out

    return MetricSource(
        n, func, alpha_min=1.0 - n * amplitude, name=f"random-trig-{seed}"
    )


@dataclass(frozen=True, eq=False)
class MetricField:
    """Metric sampled on a grid, with cached determinant and inverse.

    Invariants (enforced by :func:`sample_metric`): matrices symmetric,
    positive definite, ``inv @ mat = I`` to 1e-12, ``det > 0``.
    """

    grid: CylinderGrid
    mat: np.ndarray
    source: MetricSource | None = None
    name: str = "custom"

    @cached_property
    def det(self) -> np.ndarray:
        return np.linalg.det(self.mat)

    @cached_property
    def sqrt_det(self) -> np.ndarray:
        return np.sqrt(self.det)

    @cached_property
    def inv(self) -> np.ndarray:
        return np.linalg.inv(self.mat)

    @cached_property
    def weight(self) -> np.ndarray:
        """The divergence-form weight sqrt(det g) * g^{-1}."""
        return self.sqrt_det[..., None, None] * self.inv


def gershgorin_bounds(mat: np.ndarray) -> tuple[float, float]:
    """Cheap global eigenvalue bracket for a field of symmetric matrices."""
    diag = np.diagonal(mat, axis1=-2, axis2=-1)
    radius = np.abs(mat).sum(axis=-1) - np.abs(diag)
    return float((diag - radius).min()), float((diag + radius).max())


def sample_metric(
    source: MetricSource, grid: CylinderGrid, validate: bool = True
) -> MetricField:
    """Evaluate a metric source at the grid nodes and validate it.

    Raises
    ------
    Asymmetric
        If any node matrix deviates from symmetry beyond 1e-12 (relative).
    NonPositiveDefinite
        If any node matrix has an eigenvalue <= 0.
    """
    if source.n != grid.n:
        raise GridMismatch(f"metric dimension {source.n} != grid dimension {grid.n}")
    mat = source(grid.points)
    if mat.shape != grid.shape + (grid.n, grid.n):
        raise GridMismatch(
            f"source returned shape {mat.shape}, expected {grid.shape + (grid.n, grid.n)}"
        )
    if validate:
        defect = np.abs(mat - np.swapaxes(mat, -1, -2)).max(axis=(-1, -2))
        scale = np.maximum(1.0, np.abs(mat).max(axis=(-1, -2)))
        bad = defect > 1e-12 * scale
        if bad.any():
            node = np.unravel_index(int(np.argmax(defect / scale)), grid.shape)
            raise Asymmetric(node, float(defect[node]))
        # exact symmetry for downstream bitwise-symmetric algebra
        mat = 0.5 * (mat + np.swapaxes(mat, -1, -2))
        if grid.n > 4:
            lo, _ = gershgorin_bounds(mat)
            if lo > 0.0:
                return MetricField(grid, mat, source=source, name=source.name)
        eigs = np.linalg.eigvalsh(mat)
        lam_min = eigs[..., 0]
        if (lam_min <= 0.0).any():
            node = np.unravel_index(int(np.argmin(lam_min)), grid.shape)
            raise NonPositiveDefinite(node, float(lam_min[node]))
    return MetricField(grid, mat, source=source, name=source.name)


def metric_from_matrices(
    grid: CylinderGrid, mat: np.ndarray, name: str = "custom", validate: bool = True
) -> MetricField:
    """Wrap an explicit node table of matrices as a MetricField."""
    mat = np.asarray(mat, dtype=float)
    if mat.shape != grid.shape + (grid.n, grid.n):
        raise GridMismatch(
            f"matrix table shape {mat.shape}, expected {grid.shape + (grid.n, grid.n)}"
        )
    if validate:
        defect = np.abs(mat - np.swapaxes(mat, -1, -2)).max(axis=(-1, -2))
        scale = np.maximum(1.0, np.abs(mat).max(axis=(-1, -2)))
        if (defect > 1e-12 * scale).any():
            node = np.unravel_index(int(np.argmax(defect / scale)), grid.shape)
            raise Asymmetric(node, float(defect[node]))
        mat = 0.5 * (mat + np.swapaxes(mat, -1, -2))
        lam_min = np.linalg.eigvalsh(mat)[..., 0]
        if (lam_min <= 0.0).any():
            node = np.unravel_index(int(np.argmin(lam_min)), grid.shape)
            raise NonPositiveDefinite(node, float(lam_min[node]))
    return MetricField(grid, mat, name=name)


def ellipticity_constants(metric: MetricField) -> tuple[float, float]:
    """Global (min, max) eigenvalues over all nodes."""
    eigs = np.linalg.eigvalsh(metric.mat)
    return float(eigs[..., 0].min()), float(eigs[..., -1].max())


# ---------------------------------------------------------------------------
# divergence-form coefficient datasets and the metrics they induce


@dataclass(frozen=True, eq=False)
class MillerDataset:
    """Coefficients of a divergence-form operator on [0,1] x T^2 whose
    matrix is the identity in t and a symmetric 2x2 block in the angles:

        [[1, 0, 0], [0, 1+a1+A1, a2], [0, a2, 1+a3+A3]]

    together with a candidate solution field u. The smooth parts a1, a2, a3
    and u live on the full 3-D grid; the rough parts A1, A3 depend on t
    alone (they are never differenced in t anywhere in the package).

    Metadata: T is the time beyond which everything vanishes, rho the
    declared Hoelder order of A1, A3, alpha the declared eigenvalue floor
    (eigenvalues of the coefficient matrix lie in [alpha, 1/alpha]).
    """

    grid: CylinderGrid
    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    A1: np.ndarray
    A3: np.ndarray
    u: np.ndarray
    T: float = 1.0
    rho: float = 1.0 / 6.0
    alpha: float = 0.5

    def __post_init__(self):
        if self.grid.n != 3:
            raise DimensionTooSmall("coefficient datasets live on the 3-D cylinder")
        shape = self.grid.shape
        for nm in ("a1", "a2", "a3", "u"):
            arr = np.asarray(getattr(self, nm), dtype=float)
            if arr.shape != shape:
                raise GridMismatch(f"array {nm} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, nm, arr)
        for nm in ("A1", "A3"):
            arr = np.asarray(getattr(self, nm), dtype=float)
            if arr.shape != (self.grid.num_t,):
                raise GridMismatch(
                    f"array {nm} has shape {arr.shape}, expected ({self.grid.num_t},)"
                )
            object.__setattr__(self, nm, arr)

    # -- derived fields ----------------------------------------------------

    def rough1(self) -> np.ndarray:
        """A1 broadcast over the angular axes."""
        return self.A1[:, None, None]

    def rough3(self) -> np.ndarray:
        return self.A3[:, None, None]

    def coefficient_matrix(self) -> np.ndarray:
        """The divergence-form matrix per node, shape ``(*grid.shape, 3, 3)``."""
        shape = self.grid.shape
        A = np.zeros(shape + (3, 3))
        A[..., 0, 0] = 1.0
        A[..., 1, 1] = 1.0 + self.a1 + self.rough1()
        A[..., 1, 2] = self.a2
        A[..., 2, 1] = self.a2
        A[..., 2, 2] = 1.0 + self.a3 + self.rough3()
        return A

    def block_determinant(self) -> np.ndarray:
        """det of the angular 2x2 block (equals det of the full matrix)."""
        return (1.0 + self.a1 + self.rough1()) * (1.0 + self.a3 + self.rough3()) - self.a2**2

    @classmethod
    def zero(cls, grid: CylinderGrid, **meta) -> "MillerDataset":
        z = np.zeros(grid.shape)
        zt = np.zeros(grid.num_t)
        return cls(grid, z, z.copy(), z.copy(), zt, zt.copy(), z.copy(), **meta)

    def coarsen(self, stride: int) -> "MillerDataset":
        """Restrict all fields to every ``stride``-th node."""
        s = int(stride)
        cg = self.grid.coarsen(s)
        sl = (slice(None, None, s),) * 3
        return MillerDataset(
            cg,
            self.a1[sl],
            self.a2[sl],
            self.a3[sl],
            self.A1[::s],
            self.A3[::s],
            self.u[sl],
            T=self.T,
            rho=self.rho,
            alpha=self.alpha,
        )


def assemble_counterexample_metric_3d(data: MillerDataset, grid: CylinderGrid | None = None) -> MetricField:
    """Metric on [0,1] x T^2 whose weight matrix equals the dataset's
    coefficient matrix:

        g = D dt^2 + (1+a3+A3) dx^2 - 2 a2 dx dy + (1+a1+A1) dy^2,

    with D the coefficient determinant. Note the swap: the dx^2 slot takes
    the *a3* coefficient and the dy^2 slot the *a1* one; that is what makes
    sqrt(det g) * g^{-1} reproduce the coefficient matrix.
    """
    if grid is None:
        grid = data.grid
    if grid is not data.grid and grid.shape != data.grid.shape:
        raise GridMismatch("dataset grid does not match requested grid")
    D = data.block_determinant()
    if (D <= 0.0).any():
        node = np.unravel_index(int(np.argmin(D)), grid.shape)
        raise DegenerateDeterminant(node, float(D[node]))
    g = np.zeros(grid.shape + (3, 3))
    g[..., 0, 0] = D
    g[..., 1, 1] = 1.0 + data.a3 + data.rough3()
    g[..., 1, 2] = -data.a2
    g[..., 2, 1] = -data.a2
    g[..., 2, 2] = 1.0 + data.a1 + data.rough1()
    return MetricField(grid, g, name="counterexample-3d")


def assemble_counterexample_metric_nd(data: MillerDataset, grid: CylinderGrid) -> MetricField:
    """The n-dimensional version: a conformal power of the determinant times
    a block metric,

        g = D^{1/(n-2)} ( dt^2
                          + D^{-1} [ (1+a3+A3) dx1^2 - 2 a2 dx1 dx2 + (1+a1+A1) dx2^2 ]
                          + sum_{k>=3} dxk^2 ).

    The first two angular axes of ``grid`` must match the dataset's; fields
    are constant along any extra angular axes. For n = 3 this reproduces the
    3-D assembler node for node.
    """
    n = grid.n
    if n < 3:
        raise DimensionTooSmall("counterexample metrics need n >= 3")
    if grid.num_t != data.grid.num_t or grid.num_ang[:2] != data.grid.num_ang:
        raise GridMismatch(
            f"grid {grid.shape} incompatible with dataset grid {data.grid.shape}"
        )
    D3 = data.block_determinant()
    if (D3 <= 0.0).any():
        node = np.unravel_index(int(np.argmin(D3)), data.grid.shape)
        raise DegenerateDeterminant(node, float(D3[node]))
    extra = (1,) * (n - 3)
    D = D3.reshape(D3.shape + extra)
    b11 = (1.0 + data.a3 + data.rough3()).reshape(D.shape)
    b22 = (1.0 + data.a1 + data.rough1()).reshape(D.shape)
    b12 = (-data.a2).reshape(D.shape)

    factor = D ** (1.0 / (n - 2))
    g = np.zeros(data.grid.shape + extra + (n, n))
    g[..., 0, 0] = factor
    g[..., 1, 1] = factor * b11 / D
    g[..., 1, 2] = factor * b12 / D
    g[..., 2, 1] = factor * b12 / D
    g[..., 2, 2] = factor * b22 / D
    for k in range(3, n):
        g[..., k, k] = factor
    g = np.broadcast_to(g, grid.shape + (n, n)).copy()
    return MetricField(grid, g, name=f"counterexample-{n}d")


def weight_identity_check(data: MillerDataset) -> float:
    """Max abs deviation of sqrt(det g) * g^{-1} from the coefficient matrix
    for the 3-D metric, with determinant and inverse computed numerically."""
    g = assemble_counterexample_metric_3d(data)
    return float(np.abs(g.weight - data.coefficient_matrix()).max())
