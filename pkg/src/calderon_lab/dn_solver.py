"""Weak-form Dirichlet problems and partial Dirichlet-to-Neumann maps.

Discretisation: Q1 multilinear elements on the tensor cells of a cylinder
grid, tensor two-point Gauss quadrature, metric interpolated multilinearly
to quadrature points. The partial DN map on a boundary component Gamma is
the Schur complement

    Lam = K_GG - K_GI K_II^{-1} K_IG

of the stiffness matrix, with homogeneous Dirichlet conditions eliminated
on the rest of the boundary. Applied to a nodal trace it returns the dual
(quadrature-weighted) Neumann data, so mode eigenvalues are generalized
Rayleigh quotients against the boundary mass matrix.

Assembly is deterministic: element matrices are filled symmetrically and
scattered cell-major, and duplicates are summed with a stable sort, so the
stiffness matrix is bitwise symmetric and independent of chunking.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .calculus import ScalarField, require_full_layers
from .errors import (
    GridMismatch,
    NoConvergence,
    ShapeMismatch,
    SingularInteriorBlock,
)
from .grid_geometry import (
    FULL_BOUNDARY,
    GAMMA0,
    GAMMA1,
    CylinderGrid,
    MetricField,
)

_PIVOT_RATIO_FLOOR = 1e-9
_SOLVE_RTOL = 1e-10


# ---------------------------------------------------------------------------
# assembly


def _cell_nodes(grid: CylinderGrid) -> np.ndarray:
    """Global node ids of each cell's 2^n corners, shape (n_cells, 2^n).

    Cells are indexed lexicographically like nodes; the t-axis has
    num_t - 1 cells, each angular axis wraps and has as many cells as nodes.
    Corner L of a cell offsets the cell's base node by the bits of L
    (axis 0 = most significant bit), modulo the period on angular axes.
    """
    n = grid.n
    shape = grid.shape
    cell_shape = (grid.num_t - 1, *grid.num_ang)
    base = np.stack(
        np.meshgrid(*(np.arange(m) for m in cell_shape), indexing="ij"), axis=-1
    ).reshape(-1, n)
    n_loc = 1 << n
    corners = np.zeros((base.shape[0], n_loc), dtype=np.int64)
    strides = np.array([int(np.prod(shape[d + 1 :])) for d in range(n)], dtype=np.int64)
    for L in range(n_loc):
        idx = base.copy()
        for d in range(n):
            if (L >> (n - 1 - d)) & 1:
                idx[:, d] += 1
        for d in range(1, n):
            idx[:, d] %= shape[d]
        corners[:, L] = idx @ strides
    return corners


def _gauss_points(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor two-point Gauss rule on the reference cell [0,1]^n."""
    g = 0.5 / np.sqrt(3.0)
    pts1 = np.array([0.5 - g, 0.5 + g])
    grids = np.meshgrid(*([pts1] * n), indexing="ij")
    pts = np.stack([a.ravel() for a in grids], axis=-1)
    wts = np.full(pts.shape[0], 0.5**n)
    return pts, wts


def _shape_functions(n: int, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Q1 shape values and reference gradients at one quadrature point.

    Returns (N (2^n,), G (2^n, n)); G is with respect to the reference
    coordinates in [0,1].
    """
    n_loc = 1 << n
    N = np.ones(n_loc)
    G = np.ones((n_loc, n))
    for L in range(n_loc):
        for d in range(n):
            bit = (L >> (n - 1 - d)) & 1
            f = xi[d] if bit else 1.0 - xi[d]
            df = 1.0 if bit else -1.0
            N[L] *= f
            for dd in range(n):
                G[L, dd] *= df if dd == d else f
    return N, G


def _dedup_coo(
    rows: np.ndarray, cols: np.ndarray, vals: np.ndarray, size: int
) -> sp.csr_matrix:
    """Sum duplicate entries with a stable sort so the summation order is a
    deterministic function of the input layout."""
    order = np.lexsort((cols, rows))
    r, c, v = rows[order], cols[order], vals[order]
    if r.size == 0:
        return sp.csr_matrix((size, size))
    new = np.empty(r.size, dtype=bool)
    new[0] = True
    new[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
    starts = np.flatnonzero(new)
    summed = np.add.reduceat(v, starts)
    return sp.csr_matrix(
        (summed, (r[starts], c[starts])), shape=(size, size)
    )


@dataclass(frozen=True, eq=False)
class StiffnessSystem:
    """Assembled weak-form operator: Laplace part plus optional potential
    mass part, with the grid and id metadata needed downstream."""

    grid: CylinderGrid
    laplace: sp.csr_matrix
    mass: sp.csr_matrix | None = None
    metric_id: str = "custom"
    potential_id: str | None = None

    @property
    def matrix(self) -> sp.csr_matrix:
        if self.mass is None:
            return self.laplace
        return (self.laplace + self.mass).tocsr()


def assemble_stiffness(
    metric: MetricField,
    potential: ScalarField | np.ndarray | None = None,
    potential_id: str | None = None,
) -> StiffnessSystem:
    """Assemble the Q1 stiffness matrix for the metric Laplacian, plus the
    weighted mass matrix when a potential is given.

    The bilinear form is

        a(u, v) = int g^{ij} d_i u d_j v sqrt(det g)
                  + int V u v sqrt(det g).
    """
    grid = metric.grid
    n = grid.n
    n_loc = 1 << n
    h = grid.spacings
    cell_vol = float(np.prod(h))
    nodes = _cell_nodes(grid)
    n_cells = nodes.shape[0]
    size = grid.node_count

    g_flat = metric.mat.reshape(size, n, n)
    g_cells = g_flat[nodes]  # (n_cells, n_loc, n, n)

    v_cells = None
    if potential is not None:
        v_values = potential.values if isinstance(potential, ScalarField) else np.asarray(potential, dtype=float)
        if v_values.shape != grid.shape:
            raise GridMismatch(f"potential shape {v_values.shape}, expected {grid.shape}")
        require_full_layers(v_values, "potential")
        v_cells = v_values.reshape(size)[nodes]  # (n_cells, n_loc)

    qpts, qwts = _gauss_points(n)
    elem_k = np.zeros((n_cells, n_loc, n_loc))
    elem_m = np.zeros((n_cells, n_loc, n_loc)) if v_cells is not None else None

    for q in range(qpts.shape[0]):
        N, Gref = _shape_functions(n, qpts[q])
        G = Gref / h  # physical gradients, constant per uniform cell
        g_q = np.einsum("l,clij->cij", N, g_cells)
        ginv = np.linalg.inv(g_q)
        sdet = np.sqrt(np.linalg.det(g_q))
        w = qwts[q] * cell_vol
        common = w * sdet
        for a in range(n_loc):
            ga = G[a]
            for b in range(a, n_loc):
                val = common * np.einsum("cij,i,j->c", ginv, ga, G[b])
                elem_k[:, a, b] += val
                if a != b:
                    elem_k[:, b, a] = elem_k[:, a, b]
        if elem_m is not None:
            v_q = v_cells @ N
            for a in range(n_loc):
                for b in range(a, n_loc):
                    val = common * v_q * (N[a] * N[b])
                    elem_m[:, a, b] += val
                    if a != b:
                        elem_m[:, b, a] = elem_m[:, a, b]

    rows = np.repeat(nodes, n_loc, axis=1).ravel()
    cols = np.tile(nodes, (1, n_loc)).ravel()
    K = _dedup_coo(rows, cols, elem_k.ravel(), size)
    M = _dedup_coo(rows, cols, elem_m.ravel(), size) if elem_m is not None else None
    return StiffnessSystem(
        grid,
        K,
        mass=M,
        metric_id=metric.name,
        potential_id=potential_id if potential is not None else None,
    )


# ---------------------------------------------------------------------------
# boundary data and Dirichlet solves


@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    """Dirichlet data on the two boundary layers; ``None`` means zero,
    which encodes data supported in the other component."""

    grid: CylinderGrid
    g0: np.ndarray | None = None
    g1: np.ndarray | None = None

    def __post_init__(self):
        ang = tuple(self.grid.num_ang)
        for nm in ("g0", "g1"):
            arr = getattr(self, nm)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.shape != ang:
                raise GridMismatch(f"{nm} shape {arr.shape}, expected {ang}")
            object.__setattr__(self, nm, arr)

    @property
    def support(self) -> str:
        if self.g0 is not None and self.g1 is not None:
            return FULL_BOUNDARY
        if self.g1 is not None:
            return GAMMA1
        if self.g0 is not None:
            return GAMMA0
        return "empty"

    def layer(self, gamma: str) -> np.ndarray:
        arr = {GAMMA0: self.g0, GAMMA1: self.g1}[gamma]
        if arr is None:
            return np.zeros(self.grid.num_ang)
        return arr

    @classmethod
    def constant(cls, grid: CylinderGrid, a: float) -> "BoundaryTrace":
        ang = tuple(grid.num_ang)
        return cls(grid, np.full(ang, float(a)), np.full(ang, float(a)))


def _factorize(A: sp.spmatrix, what: str) -> spla.SuperLU:
    # MMD on A^T + A keeps fill-in low for these structurally symmetric
    # blocks (about 3x less than the COLAMD default on 3-D grids).
    try:
        lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise SingularInteriorBlock(f"{what}: {exc}") from exc
    d = np.abs(lu.U.diagonal())
    dmax = float(d.max()) if d.size else 0.0
    if dmax == 0.0 or float(d.min()) < _PIVOT_RATIO_FLOOR * dmax:
        ratio = float(d.min()) / dmax if dmax else 0.0
        raise SingularInteriorBlock(f"{what}: pivot ratio {ratio:.3e}")
    return lu


def solve_dirichlet(sys: StiffnessSystem, bc: BoundaryTrace) -> ScalarField:
    """Solve the weak problem with Dirichlet data on all of the boundary.

    Interior degrees of freedom are eliminated against one sparse LU
    factorisation; the solve residual is checked at 1e-10 relative.
    """
    grid = sys.grid
    if bc.grid.shape != grid.shape:
        raise GridMismatch("trace grid does not match system grid")
    K = sys.matrix
    I = grid.interior_ids()
    B = grid.boundary_ids(FULL_BOUNDARY)
    u = np.zeros(grid.node_count)
    u[grid.boundary_ids(GAMMA0)] = bc.layer(GAMMA0).ravel()
    u[grid.boundary_ids(GAMMA1)] = bc.layer(GAMMA1).ravel()
    rhs = -K[I][:, B] @ u[B]
    lu = _factorize(K[I][:, I], "interior block")
    uI = lu.solve(rhs)
    res = np.linalg.norm(K[I][:, I] @ uI - rhs)
    scale = max(np.linalg.norm(rhs), 1e-300)
    if res > _SOLVE_RTOL * scale:
        raise NoConvergence(res / scale, _SOLVE_RTOL)
    u[I] = uI
    return ScalarField(grid, u.reshape(grid.shape))


# ---------------------------------------------------------------------------
# DN maps


@dataclass(frozen=True, eq=False)
class DNMatrix:
    """Dense partial DN map on one boundary component.

    Rows/columns follow ascending node id on the component (for the full
    boundary: gamma0 block then gamma1 block). The matrix maps nodal
    Dirichlet values to quadrature-weighted Neumann data.
    """

    matrix: np.ndarray
    gamma: str
    grid: CylinderGrid
    metric_id: str = "custom"
    potential_id: str | None = None


def _schur_blocks(sys: StiffnessSystem, gamma: str):
    grid = sys.grid
    if gamma not in (GAMMA0, GAMMA1, FULL_BOUNDARY):
        raise ValueError(f"unknown boundary component {gamma!r}")
    K = sys.matrix
    G = grid.boundary_ids(gamma)
    I = grid.interior_ids()
    K_GG = K[G][:, G]
    K_GI = K[G][:, I]
    K_IG = K[I][:, G]
    lu = _factorize(K[I][:, I], "interior block")
    return K_GG, K_GI, K_IG, lu


def dn_map_partial(sys: StiffnessSystem, gamma: str, chunk: int = 256) -> DNMatrix:
    """Dense Schur-complement DN map on ``gamma``; Dirichlet-zero is
    imposed on the rest of the boundary."""
    K_GG, K_GI, K_IG, lu = _schur_blocks(sys, gamma)
    ng = K_GG.shape[0]
    lam = K_GG.toarray()
    for lo in range(0, ng, chunk):
        hi = min(lo + chunk, ng)
        X = lu.solve(K_IG[:, lo:hi].toarray())
        lam[:, lo:hi] -= K_GI @ X
    return DNMatrix(lam, gamma, sys.grid, sys.metric_id, sys.potential_id)


def dn_apply(sys: StiffnessSystem, gamma: str, traces: np.ndarray) -> np.ndarray:
    """Apply the DN map to trace columns without forming it densely.

    ``traces`` has shape (n_gamma, k); returns the same shape.
    """
    K_GG, K_GI, K_IG, lu = _schur_blocks(sys, gamma)
    V = np.asarray(traces, dtype=float)
    squeeze = V.ndim == 1
    if squeeze:
        V = V[:, None]
    X = lu.solve(K_IG @ V if sp.issparse(K_IG) else K_IG @ V)
    out = K_GG @ V - K_GI @ X
    return out[:, 0] if squeeze else out


def dn_map_schrodinger(
    metric: MetricField,
    potential: ScalarField | np.ndarray,
    gamma: str,
    potential_id: str | None = None,
    chunk: int = 256,
) -> DNMatrix:
    """DN map of the Schroedinger operator -Lap_g + V (weak form adds the
    V-weighted mass matrix)."""
    sys = assemble_stiffness(metric, potential, potential_id=potential_id)
    return dn_map_partial(sys, gamma, chunk=chunk)


# ---------------------------------------------------------------------------
# Fourier modes on the boundary torus


def _canonical_modes(n_ang: int, cut: float) -> list[tuple[int, ...]]:
    """Integer angular modes with 0 < |m| <= cut, one representative per
    {m, -m} pair (first nonzero component positive), plus the zero mode."""
    rng = range(-int(np.floor(cut)), int(np.floor(cut)) + 1)
    out = [tuple([0] * n_ang)]
    seen = set(out)
    cands = []
    import itertools

    for m in itertools.product(rng, repeat=n_ang):
        norm2 = sum(k * k for k in m)
        if norm2 == 0 or norm2 > cut * cut + 1e-9:
            continue
        first = next(k for k in m if k != 0)
        if first < 0:
            continue
        cands.append((norm2, m))
    cands.sort()
    for _, m in cands:
        if m not in seen:
            seen.add(m)
            out.append(m)
    return out


def fourier_modes(grid: CylinderGrid, cut: float) -> tuple[np.ndarray, list]:
    """Sampled cos/sin mode vectors on one boundary layer.

    Returns (V, labels) with V of shape (layer_count, n_vectors); labels
    are ("cos"|"sin", mode tuple). Modes must stay below the per-axis
    Nyquist limit of the layer grid.
    """
    n_ang = grid.n - 1
    modes = _canonical_modes(n_ang, cut)
    for m in modes:
        for k, N in zip(m, grid.num_ang):
            if 2 * abs(k) >= N:
                raise ShapeMismatch(
                    f"mode {m} aliases on angular axis with {N} nodes"
                )
    axes = grid.axes()[1:]
    mesh = np.meshgrid(*axes, indexing="ij")
    cols = []
    labels = []
    for m in modes:
        phase = sum(k * ax for k, ax in zip(m, mesh))
        phase = np.asarray(phase, dtype=float)
        cols.append(np.cos(phase).ravel())
        labels.append(("cos", m))
        if any(m):
            cols.append(np.sin(phase).ravel())
            labels.append(("sin", m))
    return np.stack(cols, axis=1), labels


def dn_mode_matrix(sys: StiffnessSystem, gamma: str, cut: float = 2.0) -> tuple[np.ndarray, list]:
    """Low-mode pairing matrix B[m, m'] = <Lam v_m, v_m'> computed with one
    interior solve per mode vector.

    Because the DN matrix returns quadrature-weighted Neumann data, B
    approximates the continuum pairing and is comparable across grid
    refinements of the same cylinder.
    """
    grid = sys.grid
    if gamma == FULL_BOUNDARY:
        Vl, labels = fourier_modes(grid, cut)
        z = np.zeros_like(Vl)
        V = np.block([[Vl, z], [z, Vl]])
        labels = [(GAMMA0, *l) for l in labels] + [(GAMMA1, *l) for l in labels]
    else:
        V, labels = fourier_modes(grid, cut)
    lamV = dn_apply(sys, gamma, V)
    return V.T @ lamV, labels


def mode_gap(B1: np.ndarray, B2: np.ndarray) -> float:
    denom = max(np.linalg.norm(B1), np.linalg.norm(B2))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(B1 - B2) / denom)


@dataclass(frozen=True)
class GapResult:
    frobenius: float
    low_mode: float


def operator_gap(dn1: DNMatrix, dn2: DNMatrix, mode_cut: float = 2.0) -> GapResult:
    """Relative Frobenius gap plus the gap of the low-mode pairing blocks.

    The Frobenius part requires identical grids (NaN otherwise); the
    low-mode part accepts two refinements of the same cylinder and is the
    number to use in convergence studies, since the highest modes carry the
    largest discretisation error.
    """
    if dn1.gamma != dn2.gamma:
        raise ShapeMismatch(f"boundary components differ: {dn1.gamma} vs {dn2.gamma}")
    if not dn1.grid.compatible_cylinder(dn2.grid):
        raise ShapeMismatch("operators live on different cylinders")
    if dn1.matrix.shape == dn2.matrix.shape:
        denom = max(np.linalg.norm(dn1.matrix), np.linalg.norm(dn2.matrix))
        frob = 0.0 if denom == 0.0 else float(np.linalg.norm(dn1.matrix - dn2.matrix) / denom)
    else:
        frob = float("nan")

    def project(dn: DNMatrix) -> np.ndarray:
        if dn.gamma == FULL_BOUNDARY:
            Vl, _ = fourier_modes(dn.grid, mode_cut)
            z = np.zeros_like(Vl)
            V = np.block([[Vl, z], [z, Vl]])
        else:
            V, _ = fourier_modes(dn.grid, mode_cut)
        return V.T @ dn.matrix @ V

    low = mode_gap(project(dn1), project(dn2))
    return GapResult(frob, low)


# ---------------------------------------------------------------------------
# boundary mass and mode eigenvalues


def _mass_1d_periodic(num: int, h: float) -> sp.csr_matrix:
    main = np.full(num, 2.0 * h / 3.0)
    off = np.full(num, h / 6.0)
    idx = np.arange(num)
    rows = np.concatenate([idx, idx, idx])
    cols = np.concatenate([idx, (idx + 1) % num, (idx - 1) % num])
    vals = np.concatenate([main, off, off])
    return sp.csr_matrix((vals, (rows, cols)), shape=(num, num))


def boundary_mass_matrix(
    grid: CylinderGrid, gamma: str, metric: MetricField | None = None
) -> sp.spmatrix:
    """Mass matrix of one boundary layer.

    Flat case: the consistent Q1 mass (tensor product of periodic 1-D
    masses). With a metric: diagonal (lumped) mass from layer quadrature
    weights and the induced angular block's volume element; sufficient for
    diagnostics.
    """
    if gamma not in (GAMMA0, GAMMA1):
        raise ValueError("boundary mass is defined per layer")
    if metric is None:
        M = sp.identity(1, format="csr")
        for num, h in zip(grid.num_ang, grid.h_ang):
            M = sp.kron(M, _mass_1d_periodic(num, h), format="csr")
        return M
    layer = 0 if gamma == GAMMA0 else -1
    block = metric.mat[layer][..., 1:, 1:]
    sdet = np.sqrt(np.linalg.det(block)).ravel()
    return sp.diags(grid.layer_weights.ravel() * sdet)


def dn_mode_eigenvalues(
    sys: StiffnessSystem,
    gamma: str,
    modes: list[tuple[int, ...]],
    metric: MetricField | None = None,
) -> np.ndarray:
    """Generalized Rayleigh quotients of the DN map on cosine mode vectors,

        mu_m = <Lam v_m, v_m> / <M v_m, v_m>,

    with M the boundary mass matrix. For the flat cylinder these converge
    to the separated-variables eigenvalues."""
    grid = sys.grid
    axes = grid.axes()[1:]
    mesh = np.meshgrid(*axes, indexing="ij")
    V = np.stack(
        [
            np.cos(sum(k * ax for k, ax in zip(m, mesh))).ravel()
            for m in modes
        ],
        axis=1,
    )
    lamV = dn_apply(sys, gamma, V)
    M = boundary_mass_matrix(grid, gamma, metric)
    num = np.einsum("ik,ik->k", V, lamV)
    den = np.einsum("ik,ik->k", V, M @ V)
    return num / den


def smallest_dirichlet_eigenvalue(
    metric: MetricField, tol: float = 1e-13, maxit: int = 1000, seed: int = 0
) -> float:
    """First Dirichlet eigenvalue of the metric Laplacian by inverse power
    iteration on the interior blocks of (stiffness, mass)."""
    ones = np.ones(metric.grid.shape)
    sys = assemble_stiffness(metric, potential=ones, potential_id="unit")
    I = metric.grid.interior_ids()
    K = sys.laplace[I][:, I]
    M = sys.mass[I][:, I]
    lu = _factorize(K, "interior block")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(K.shape[0])
    v /= np.linalg.norm(v)
    lam_old = np.inf
    for _ in range(maxit):
        w = lu.solve(M @ v)
        w /= np.linalg.norm(w)
        lam = float((w @ (K @ w)) / (w @ (M @ w)))
        v = w
        if abs(lam - lam_old) <= tol * abs(lam):
            return lam
        lam_old = lam
    raise NoConvergence(abs(lam - lam_old) / abs(lam), tol)


# ---------------------------------------------------------------------------
# export


def export_dn(dn: DNMatrix, path: str | Path) -> tuple[Path, Path]:
    """Write the dense DN matrix as row-major CSV (17 significant digits)
    with a JSON metadata sidecar ``<path>.meta.json``."""
    path = Path(path)
    np.savetxt(path, dn.matrix, fmt="%.17g", delimiter=",")
    meta = {
        "gamma": dn.gamma,
        "grid": {
            "n": dn.grid.n,
            "num_t": dn.grid.num_t,
            "num_ang": list(dn.grid.num_ang),
        },
        "metric_id": dn.metric_id,
        "potential_id": dn.potential_id,
    }
    meta_path = path.with_name(path.name + ".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, meta_path


def load_dn(path: str | Path) -> DNMatrix:
    path = Path(path)
    matrix = np.loadtxt(path, delimiter=",", ndmin=2)
    meta = json.loads(path.with_name(path.name + ".meta.json").read_text())
    grid = CylinderGrid(
        meta["grid"]["n"], meta["grid"]["num_t"], tuple(meta["grid"]["num_ang"])
    )
    return DNMatrix(
        matrix, meta["gamma"], grid, meta["metric_id"], meta.get("potential_id")
    )
