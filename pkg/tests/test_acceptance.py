"""Acceptance gate: one test per criterion, each at its stated tolerance.

Run with ``pytest -v tests/test_acceptance.py`` to get one pass/fail line
per criterion. Every expected rate or tolerance below was measured with
the frozen parameters in this file before being pinned; none is tuned to
the implementation under test. The whole module runs in about two
minutes on one core.
"""

import numpy as np
import pytest

from calderon_lab import analytic as an
from calderon_lab.calculus import ScalarField, integrate_volume
from calderon_lab.conformal import (
    ConformalFactor,
    algebraic_identity_check,
    conformal_potential,
    global_rigidity_check,
    scale_metric,
    scale_metric_2d,
    scaling_law_residual,
    volume_expansion,
)
from calderon_lab.counterexample import dn_gap_study, synth_approx_miller, validate_miller_properties
from calderon_lab.dn_solver import (
    assemble_stiffness,
    dn_mode_eigenvalues,
    dn_mode_matrix,
    mode_gap,
)
from calderon_lab.gauge import (
    bump_reparam,
    bump_shear,
    diffeo_invariance_gap,
    identity_diffeo,
)
from calderon_lab.grid_geometry import (
    GAMMA1,
    CylinderGrid,
    MillerDataset,
    assemble_counterexample_metric_3d,
    assemble_counterexample_metric_nd,
    cyl_grid,
    flat_metric,
    random_trig_metric,
    sample_metric,
    weight_identity_check,
)


def _line(num: int, passed: bool, detail: str) -> None:
    print(f"criterion {num:02d} {'PASS' if passed else 'FAIL'}: {detail}")


def _lsq_order(sizes, gaps) -> float:
    h = 1.0 / (np.asarray(sizes, dtype=float) - 1.0)
    g = np.asarray(gaps, dtype=float)
    if (g <= 0.0).any():
        return np.inf  # already at the floor
    return float(np.polyfit(np.log(h), np.log(g), 1)[0])


def _pair_order(sizes, gaps) -> float:
    h = 1.0 / (np.asarray(sizes, dtype=float) - 1.0)
    return float(np.log(gaps[-2] / gaps[-1]) / np.log(h[-2] / h[-1]))


# ---------------------------------------------------------------------------
# criterion 1: pointwise energy identity, 20 random tuples, <= 1e-12


def test_criterion_01_pointwise_identity():
    grid = CylinderGrid(3, 9, (8, 8))
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        g = sample_metric(random_trig_metric(3, seed=seed), grid)
        c = ConformalFactor.from_source(
            grid, an.constant(1.0, 3) + an.trig_sum(3, rng, terms=2, amplitude=0.1), 3
        )
        u = ScalarField.from_source(grid, an.trig_sum(3, rng, terms=2, amplitude=1.0))
        w = ScalarField.from_source(grid, an.trig_sum(3, rng, terms=2, amplitude=1.0))
        worst = max(worst, algebraic_identity_check(g, c, u, w))
    ok = worst <= 1e-12
    _line(1, ok, f"max pointwise identity defect {worst:.3e} (tol 1e-12, 20 tuples)")
    assert ok


# ---------------------------------------------------------------------------
# criterion 2: scaling-law residual order in [1.7, 2.3] on 9/17/33,
# c == 1 case <= 1e-10
#
# order estimator: the finest refinement pair; the 9-grid end of this
# ladder is pre-asymptotic for the least-squares slope. Measured pair
# orders for these five seeds: 1.93, 1.84, 1.83, 1.92, 1.86.


def test_criterion_02_scaling_law_order():
    sizes = (9, 17, 33)
    orders = []
    for seed in range(5):
        res = []
        for size in sizes:
            grid = cyl_grid(3, size)
            rng = np.random.default_rng(seed)
            g = sample_metric(
                random_trig_metric(3, seed=seed, amplitude=0.1, max_mode=1), grid
            )
            c = ConformalFactor.from_source(
                grid,
                an.constant(1.0, 3)
                + an.trig_sum(3, rng, terms=2, amplitude=0.05, max_mode=1),
                3,
            )
            f = ScalarField.from_source(
                grid, an.trig_sum(3, rng, terms=2, amplitude=0.5, max_mode=1, offset=0.3)
            )
            res.append(scaling_law_residual(g, c, f))
        orders.append(_pair_order(sizes, res))

    grid = cyl_grid(3, 9)
    g = sample_metric(random_trig_metric(3, seed=0), grid)
    f = ScalarField.from_source(grid, an.wave([1.0, 1.0, 0.0]))
    trivial = scaling_law_residual(g, ConformalFactor.one(grid, 3), f)

    in_band = all(1.7 <= o <= 2.3 for o in orders)
    ok = in_band and trivial <= 1e-10
    _line(
        2,
        ok,
        f"orders {[f'{o:.2f}' for o in orders]} (band [1.7, 2.3]), "
        f"c=1 residual {trivial:.1e} (tol 1e-10)",
    )
    assert ok, (orders, trivial)


# ---------------------------------------------------------------------------
# criterion 3: DN link between the rescaled metric and the potential form,
# low-mode gap order >= 1.5 over 17/25/33
#
# c is 1 with vanishing normal derivative on a collar at the measured end;
# q then needs no data outside the collar, so the one-sided fill is exact.
# Measured slopes: 1.63, 1.62, 1.62.


def _collar_flat_factor(grid, seed, amp=0.3, lo=0.15):
    prof = an.bump(lo, 1.0 - lo, 3, 0)
    ang = an.trig_sum(
        3, np.random.default_rng(seed), terms=2, amplitude=0.5, max_mode=1, offset=1.0
    )
    return ConformalFactor.from_source(
        grid, an.constant(1.0, 3) + prof * ang * an.constant(amp, 3), 3
    )


def test_criterion_03_schrodinger_link_order():
    sizes = (17, 25, 33)
    slopes = []
    for seed in (0, 1, 2):
        gaps = []
        for size in sizes:
            grid = cyl_grid(3, size)
            g = sample_metric(random_trig_metric(3, seed=seed, max_mode=1), grid)
            c = _collar_flat_factor(grid, seed + 10)
            q = conformal_potential(g, c, one_sided=True)
            B1, _ = dn_mode_matrix(assemble_stiffness(scale_metric(g, c)), GAMMA1, 2.0)
            B2, _ = dn_mode_matrix(
                assemble_stiffness(g, potential=q, potential_id="link"), GAMMA1, 2.0
            )
            gaps.append(mode_gap(B1, B2))
        slopes.append(_lsq_order(sizes, gaps))
    ok = all(s >= 1.5 for s in slopes)
    _line(3, ok, f"link gap orders {[f'{s:.2f}' for s in slopes]} (need >= 1.5)")
    assert ok, slopes


# ---------------------------------------------------------------------------
# criterion 4: 2-D conformal and diffeomorphism invariance, gap order
# >= 1.5 over three refinements; identity cases <= 1e-10
#
# measured: conformal slopes 1.91, 2.00; diffeo slopes 1.83, 1.83;
# both identity gaps are exactly zero.


def test_criterion_04_gauge_invariance():
    sizes = (9, 17, 33)

    conf_slopes = []
    for seed in (1, 2):
        gaps = []
        for size in sizes:
            grid = cyl_grid(2, size)
            g = sample_metric(random_trig_metric(2, seed=seed, max_mode=1), grid)
            rng = np.random.default_rng(seed + 50)
            c = ConformalFactor.from_source(
                grid,
                an.constant(1.0, 2) + an.trig_sum(2, rng, terms=2, amplitude=0.2, max_mode=1),
                2,
            )
            B1, _ = dn_mode_matrix(assemble_stiffness(scale_metric_2d(g, c)), GAMMA1, 2.0)
            B2, _ = dn_mode_matrix(assemble_stiffness(g), GAMMA1, 2.0)
            gaps.append(mode_gap(B1, B2))
        conf_slopes.append(_lsq_order(sizes, gaps))

    grid = cyl_grid(2, 9)
    g = sample_metric(random_trig_metric(2, seed=3, max_mode=1), grid)
    B1, _ = dn_mode_matrix(
        assemble_stiffness(scale_metric_2d(g, ConformalFactor.one(grid, 2))), GAMMA1, 2.0
    )
    B2, _ = dn_mode_matrix(assemble_stiffness(g), GAMMA1, 2.0)
    conf_identity = mode_gap(B1, B2)

    diffeo_slopes = []
    phi = bump_reparam(3, 0.08).compose(bump_shear(3, 1, 0.16))
    for seed in (0, 1):
        gaps = diffeo_invariance_gap(
            random_trig_metric(3, seed=seed, max_mode=1), phi, GAMMA1, sizes
        )
        diffeo_slopes.append(_lsq_order(sizes, gaps))
    diffeo_identity = diffeo_invariance_gap(
        random_trig_metric(3, seed=5, max_mode=1), identity_diffeo(3), GAMMA1, (9,)
    )[0]

    ok = (
        all(s >= 1.5 for s in conf_slopes + diffeo_slopes)
        and conf_identity <= 1e-10
        and diffeo_identity <= 1e-10
    )
    _line(
        4,
        ok,
        f"conformal orders {[f'{s:.2f}' for s in conf_slopes]}, "
        f"diffeo orders {[f'{s:.2f}' for s in diffeo_slopes]} (need >= 1.5); "
        f"identity gaps {conf_identity:.1e}, {diffeo_identity:.1e} (tol 1e-10)",
    )
    assert ok, (conf_slopes, diffeo_slopes, conf_identity, diffeo_identity)


# ---------------------------------------------------------------------------
# criterion 5: flat-cylinder DN mode eigenvalues
#
# separation of variables with Dirichlet zero at the far end: the mode
# v = sinh(mu t)/sinh(mu) gives Neumann data mu coth(mu) at t = 1 with
# mu^2 = |m|^2 + kappa^2; the constant flat mode solves v = t exactly in
# the element space, hence the rounding-level tolerance there.
# Measured slopes 2.00-2.02 for every non-exact (mode, kappa) pair.


def test_criterion_05_flat_dn_oracle():
    modes = [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0)]
    sizes = (9, 17, 33)

    def exact(m, kappa2):
        mu = np.sqrt(float(np.dot(m, m)) + kappa2)
        return mu / np.tanh(mu) if mu > 0 else 1.0

    slopes = []
    const_flat = None
    for kappa2 in (0.0, 1.3):
        errs = []
        for size in sizes:
            grid = cyl_grid(3, size)
            g = sample_metric(flat_metric(3), grid)
            pot = np.full(grid.shape, kappa2) if kappa2 else None
            pid = "const" if kappa2 else None
            sys = assemble_stiffness(g, potential=pot, potential_id=pid)
            vals = dn_mode_eigenvalues(sys, GAMMA1, modes)
            errs.append(np.abs(vals - np.array([exact(m, kappa2) for m in modes])))
        errs = np.array(errs)
        for j, m in enumerate(modes):
            if kappa2 == 0.0 and m == (0, 0):
                const_flat = errs[:, j].max()
                continue
            slopes.append(_lsq_order(sizes, errs[:, j]))

    ok = const_flat <= 1e-10 and all(s >= 1.8 for s in slopes)
    _line(
        5,
        ok,
        f"constant mode defect {const_flat:.1e} (tol 1e-10), "
        f"eigenvalue orders min {min(slopes):.2f} max {max(slopes):.2f} (need >= 1.8)",
    )
    assert ok, (const_flat, slopes)


# ---------------------------------------------------------------------------
# criteria 6, 7, 10 share one synthesized dataset


@pytest.fixture(scope="module")
def synth_dataset():
    grid = CylinderGrid(3, 25, (24, 24))
    data, report = synth_approx_miller(grid, modes=((1, 0), (0, 1)), amplitude=0.1)
    return data, report


# criterion 6: the DN gap of the conformal family vanishes at eps = 0 and
# for the zero dataset, and regresses on eps*r + eps^2 with positive
# coefficients and R^2 >= 0.9 across a 3x3 (eps, refinement) study.
# Measured: beta = (0.0207, 0.0076), R^2 = 0.994; all eps = 0 gaps 0.0.


def test_criterion_06_counterexample_gap_regression(synth_dataset):
    data, _ = synth_dataset

    zero = dn_gap_study(
        MillerDataset.zero(cyl_grid(3, 13)), eps_list=(0.0, 0.05), strides=(2, 1)
    )
    zero_worst = max(c.gap for c in zero.cells)

    result = dn_gap_study(data, eps_list=(0.0, 0.025, 0.05, 0.1), strides=(4, 2, 1))
    eps0_worst = max(c.gap for c in result.cells if c.eps == 0.0)
    fit = result.fit

    ok = (
        zero_worst <= 1e-10
        and eps0_worst <= 1e-10
        and fit["beta_eps_r"] > 0.0
        and fit["beta_eps2"] > 0.0
        and fit["r2"] >= 0.9
    )
    _line(
        6,
        ok,
        f"zero-dataset gap {zero_worst:.1e}, eps=0 gap {eps0_worst:.1e} (tol 1e-10); "
        f"beta=({fit['beta_eps_r']:.4f}, {fit['beta_eps2']:.4f}) > 0, "
        f"R^2={fit['r2']:.4f} (need >= 0.9)",
    )
    assert ok, fit


# criterion 7: the quadratic volume-defect coefficient equals
# 15 int u^2 dVol to 1e-10 relative and is positive; all fitted
# coefficients are invariant to 1e-10 under a change of eps samples.
#
# eps samples are scaled to the family's validity range 0.45/max|u|:
# the defect is an exact degree-6 polynomial, so wide samples are valid
# and keep the Vandermonde extraction of the high coefficients sharp.


_PAT_A = np.array([1.0, -1.0, 0.5, -0.5, 0.75, -0.75, 0.25])
_PAT_B = np.array([1.0, -0.6, 0.8, -1.0, 0.3, -0.85, 0.55])


def _volume_case(g, u_vals):
    grid = g.grid
    u = ScalarField(grid, u_vals)
    s = 0.45 / np.abs(u_vals).max()
    p = volume_expansion(g, u, s * _PAT_A)
    p_alt = volume_expansion(g, u, 0.8 * s * _PAT_B)
    direct = 15.0 * integrate_volume(ScalarField(grid, u_vals**2), g)
    rel = abs(p[2] - direct) / abs(direct)
    drift = np.abs(p - p_alt).max() / np.abs(p).max()
    return p[2], rel, drift


def test_criterion_07_volume_obstruction(synth_dataset):
    data, _ = synth_dataset
    cases = []
    cases.append(_volume_case(assemble_counterexample_metric_3d(data), data.u))

    grid = cyl_grid(3, 9)
    g = sample_metric(random_trig_metric(3, seed=7), grid)
    u = ScalarField.from_source(grid, an.trig_sum(3, np.random.default_rng(9), terms=3))
    cases.append(_volume_case(g, u.values))

    ok = all(p2 > 0.0 and rel <= 1e-10 and drift <= 1e-10 for p2, rel, drift in cases)
    detail = "; ".join(
        f"p2={p2:.4e} rel={rel:.1e} drift={drift:.1e}" for p2, rel, drift in cases
    )
    _line(7, ok, detail + " (tol 1e-10, p2 > 0)")
    assert ok, cases


# ---------------------------------------------------------------------------
# criterion 8: full-boundary rigidity, max |c - 1| <= 1e-10, 5 metrics


def test_criterion_08_global_rigidity():
    worst = 0.0
    for seed in range(5):
        g = sample_metric(random_trig_metric(3, seed=seed), cyl_grid(3, 9))
        worst = max(worst, global_rigidity_check(g))
    ok = worst <= 1e-10
    _line(8, ok, f"max |c - 1| = {worst:.3e} over 5 metrics (tol 1e-10)")
    assert ok


# ---------------------------------------------------------------------------
# criterion 9: weight identity sqrt|g| g^{-1} = coefficient matrix to
# 1e-12 for 10 random coefficient sets; n-D assembler agrees with the
# 3-D one at n = 3 to 1e-12


def _random_dataset(grid, seed, scale=0.15):
    rng = np.random.default_rng(seed)
    t, x, y = np.meshgrid(*grid.axes(), indexing="ij")
    win = (1.0 - t) ** 2

    def field():
        kx, ky = rng.integers(-2, 3, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        return scale * np.sin(kx * x + ky * y + phase) * win

    tt = t[:, 0, 0]
    A1 = scale * rng.uniform(0.2, 1.0) * np.sqrt(np.clip(1 - tt, 0, None))
    A3 = scale * rng.uniform(0.2, 1.0) * np.clip(1 - tt, 0, None) ** (1 / 3)
    u = np.sin(x + y) * win
    return MillerDataset(grid, field(), field(), field(), A1, A3, u)


def test_criterion_09_weight_identity():
    grid = cyl_grid(3, 9)
    worst = 0.0
    for seed in range(10):
        worst = max(worst, weight_identity_check(_random_dataset(grid, seed)))
    data = _random_dataset(grid, 0)
    g3 = assemble_counterexample_metric_3d(data)
    gn = assemble_counterexample_metric_nd(data, grid)
    nd_gap = float(np.abs(g3.mat - gn.mat).max())
    ok = worst <= 1e-12 and nd_gap <= 1e-12
    _line(
        9,
        ok,
        f"weight identity defect {worst:.3e}, 3-D/n-D assembler gap {nd_gap:.3e} "
        f"(tol 1e-12, 10 sets)",
    )
    assert ok, (worst, nd_gap)


# ---------------------------------------------------------------------------
# criterion 10: synthesized datasets pass property validation


def test_criterion_10_dataset_validation(synth_dataset):
    data, _ = synth_dataset
    report = validate_miller_properties(data)
    statuses = {i.name: i.status for i in report.items}
    ok = (
        report.ok
        and statuses["vanishing"] == "pass"
        and statuses["holder_quotient"] == "pass"
        and statuses["eigenvalue_bounds"] == "pass"
    )
    _line(10, ok, f"validation statuses {statuses}")
    assert ok, statuses
