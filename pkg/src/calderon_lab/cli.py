"""Config-driven experiment runner.

    calderon-lab <subcommand> --config <path> [--out <dir>] [--threads N]

Subcommands: verify-identities, dn-compare, counterexample-study,
validate-dataset, synth-dataset, rigidity-check. Each reads a JSON config,
runs the corresponding library routines, writes a deterministic report
(JSON + CSV + markdown) and exits 0 when every configured verdict passes,
1 on computational failure, 2 on config errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import analytic as an
from .calculus import ScalarField
from .conformal import (
    ConformalFactor,
    algebraic_identity_check,
    conformal_family,
    conformal_potential,
    global_rigidity_check,
    scale_metric,
    scale_metric_2d,
    scaling_law_residual,
)
from .counterexample import (
    dn_gap_study,
    load_dataset,
    nonisometry_check,
    save_dataset,
    synth_approx_miller,
    validate_miller_properties,
)
from .dn_solver import assemble_stiffness, dn_mode_matrix, mode_gap
from .errors import CalderonLabError, ConfigInvalid, TrivialU
from .gauge import bump_reparam, bump_shear, cubic_reparam, identity_diffeo, pullback_metric
from .grid_geometry import (
    BOUNDARY_NAMES,
    CylinderGrid,
    MillerDataset,
    cyl_grid,
    flat_metric,
    random_trig_metric,
    sample_metric,
)
from .report import ExperimentReport, emit_report

__all__ = ["main", "run"]


def _load_config(path) -> dict:
    if not os.path.exists(path):
        raise ConfigInvalid(f"config file {path!r} does not exist")
    try:
        with open(path) as f:
            cfg = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigInvalid(f"config is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigInvalid("config root must be a JSON object")
    return cfg


def _require(cfg: dict, key: str, kind=None):
    if key not in cfg:
        raise ConfigInvalid(f"config lacks required key {key!r}")
    val = cfg[key]
    if kind is not None and not isinstance(val, kind):
        raise ConfigInvalid(f"config key {key!r} has wrong type {type(val).__name__}")
    return val


def _gamma(cfg: dict, key: str = "gamma", default: str = "gamma1") -> str:
    g = cfg.get(key, default)
    if g not in BOUNDARY_NAMES:
        raise ConfigInvalid(f"{key} must be one of {BOUNDARY_NAMES}, got {g!r}")
    return g


def _metric_source(spec, n: int):
    if spec is None or spec == "flat" or (isinstance(spec, dict) and spec.get("kind") == "flat"):
        return flat_metric(n)
    if isinstance(spec, dict) and spec.get("kind") == "random-trig":
        return random_trig_metric(
            n,
            seed=int(spec.get("seed", 0)),
            amplitude=float(spec.get("amplitude", 0.4 / n)),
            max_mode=int(spec.get("max_mode", 1)),
        )
    raise ConfigInvalid(f"unknown metric spec {spec!r}")


def _random_factor_source(spec, n: int):
    if spec is None or spec == "one":
        return an.constant(1.0, n)
    if isinstance(spec, dict):
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        return an.trig_sum(
            n,
            rng,
            terms=int(spec.get("terms", 2)),
            amplitude=float(spec.get("amplitude", 0.25)),
            offset=float(spec.get("offset", 1.3)),
            max_mode=int(spec.get("max_mode", 1)),
        )
    raise ConfigInvalid(f"unknown conformal factor spec {spec!r}")


def _diffeo(spec, n: int):
    if spec is None or spec == "identity":
        return identity_diffeo(n)
    if not isinstance(spec, dict):
        raise ConfigInvalid(f"unknown diffeo spec {spec!r}")
    delta = float(spec.get("delta", 0.1))
    family = spec.get("family", "bump")
    amp = float(spec.get("amplitude", 0.08))
    if family == "bump":
        phi = bump_reparam(n, amp, delta)
    elif family == "cubic":
        phi = cubic_reparam(n, amp, delta)
    elif family == "identity":
        phi = identity_diffeo(n, delta)
    else:
        raise ConfigInvalid(f"unknown diffeo family {family!r}")
    shear = spec.get("shear")
    if shear:
        phi = phi.compose(
            bump_shear(n, int(shear.get("axis", 1)), float(shear.get("amplitude", 0.1)), delta)
        )
    return phi


def _order_fit(sizes, gaps):
    """Least-squares slope of log gap against log h, h = 1/(size-1)."""
    g = np.asarray(gaps, dtype=float)
    if (g <= 0).any():
        return float("inf")  # at roundoff floor; decrease is vacuous
    h = 1.0 / (np.asarray(sizes, dtype=float) - 1.0)
    A = np.column_stack([np.log(h), np.ones_like(h)])
    slope, _ = np.linalg.lstsq(A, np.log(g), rcond=None)[0]
    return float(slope)


# -- subcommand handlers -----------------------------------------------------


def _run_verify_identities(cfg: dict, threads: int) -> ExperimentReport:
    n = int(cfg.get("n", 3))
    size = int(cfg.get("size", 9))
    tuples = int(cfg.get("tuples", 20))
    seed = int(cfg.get("seed", 0))
    tol_id = float(cfg.get("identity_tol", 1e-12))
    tol_triv = float(cfg.get("trivial_tol", 1e-10))
    rep = ExperimentReport("verify-identities", cfg)
    t0 = time.perf_counter()

    grid = cyl_grid(n, size)
    rows = []
    worst = 0.0
    for k in range(tuples):
        rng = np.random.default_rng(seed + k)
        g = sample_metric(random_trig_metric(n, seed=seed + k), grid)
        c = ConformalFactor.from_source(
            grid, an.trig_sum(n, rng, terms=2, amplitude=0.3, offset=1.4), n
        )
        u = ScalarField.from_source(grid, an.trig_sum(n, rng, terms=2, amplitude=1.0))
        w = ScalarField.from_source(grid, an.trig_sum(n, rng, terms=2, amplitude=1.0))
        err = algebraic_identity_check(g, c, u, w)
        rows.append((k, err))
        worst = max(worst, err)
    rep.add_table("identity_errors", ("tuple", "max_error"), rows)
    rep.add_verdict("algebraic_identity_max", worst, tol_id)

    g = sample_metric(random_trig_metric(n, seed=seed), grid)
    c1 = ConformalFactor.one(grid, n)
    f = ScalarField.from_source(grid, an.trig_sum(n, np.random.default_rng(seed), terms=2, amplitude=1.0))
    rep.add_verdict("scaling_law_trivial_factor", scaling_law_residual(g, c1, f), tol_triv)
    rep.timings["total"] = time.perf_counter() - t0
    return rep


def _gap_pair(sys_a, sys_b, gamma: str, cut: float) -> float:
    B_a, _ = dn_mode_matrix(sys_a, gamma, cut)
    B_b, _ = dn_mode_matrix(sys_b, gamma, cut)
    return mode_gap(B_a, B_b)


def _run_dn_compare(cfg: dict, threads: int) -> ExperimentReport:
    gl = _gamma(cfg, "gamma_left")
    gr = _gamma(cfg, "gamma_right")
    if gl != gr:
        raise ConfigInvalid(
            f"the two DN maps must be restricted to the same boundary part, got {gl!r} vs {gr!r}"
        )
    n = int(cfg.get("n", 3))
    sizes = [int(s) for s in cfg.get("sizes", (9, 17, 33))]
    cut = float(cfg.get("cut", 2.0))
    order_min = float(cfg.get("order_min", 1.5))
    ident_tol = float(cfg.get("identity_tol", 1e-10))
    transform = cfg.get("transform")
    if not isinstance(transform, dict) or "kind" not in transform:
        raise ConfigInvalid("dn-compare needs a transform spec with a 'kind'")
    kind = transform["kind"]
    src = _metric_source(cfg.get("metric"), n)

    rep = ExperimentReport("dn-compare", cfg)
    t0 = time.perf_counter()
    gaps = []
    for size in sizes:
        grid = cyl_grid(n, size)
        g = sample_metric(src, grid)
        sys_g = assemble_stiffness(g)
        if kind == "conformal-2d":
            if n != 2:
                raise ConfigInvalid("conformal-2d requires n = 2")
            c = ConformalFactor.from_source(grid, _random_factor_source(transform.get("factor"), n), n)
            sys_t = assemble_stiffness(scale_metric_2d(g, c))
        elif kind == "conformal-link":
            if n < 3:
                raise ConfigInvalid("conformal-link requires n >= 3")
            c = _collar_flat_factor(grid, transform, n)
            # the factor is constant near both ends, so the one-sided fill
            # of the potential there is exact
            q = conformal_potential(g, c, one_sided=True)
            sys_t = assemble_stiffness(g, potential=q, potential_id="conformal")
            sys_g = assemble_stiffness(scale_metric(g, c))
        elif kind == "diffeo":
            phi = _diffeo(transform.get("diffeo", transform), n)
            sys_t = assemble_stiffness(sample_metric(pullback_metric(src, phi), grid))
        else:
            raise ConfigInvalid(f"unknown transform kind {kind!r}")
        gaps.append(_gap_pair(sys_g, sys_t, gl, cut))
    rep.add_table("gaps", ("size", "gap"), list(zip(sizes, gaps)))
    rep.scalars["gaps"] = gaps
    if kind == "conformal-2d":
        identity_like = transform.get("factor") in (None, "one")
    else:
        diffeo_spec = transform.get("diffeo", transform)
        identity_like = kind == "diffeo" and (
            diffeo_spec == "identity" or (isinstance(diffeo_spec, dict) and diffeo_spec.get("family") == "identity")
        )
    if identity_like:
        rep.add_verdict("gap_at_floor", max(gaps), ident_tol)
    else:
        rep.add_verdict("gap_order", _order_fit(sizes, gaps), order_min, ">=")
    rep.timings["total"] = time.perf_counter() - t0
    return rep


def _collar_flat_factor(grid: CylinderGrid, transform: dict, n: int) -> ConformalFactor:
    """c = 1 + amplitude * bump(t) * trig(angles): equals 1 with zero normal
    derivative on collars at both ends, so the potential-link comparison
    sees matching Dirichlet and Neumann traces."""
    amp = float(transform.get("amplitude", 0.3))
    lo = float(transform.get("collar", 0.15))
    prof = an.bump(lo, 1.0 - lo, n, 0)
    rng = np.random.default_rng(int(transform.get("seed", 0)))
    ang = an.trig_sum(n, rng, terms=2, amplitude=0.5, max_mode=1, offset=1.0)
    src = an.constant(1.0, n) + prof * ang * an.constant(amp, n)
    return ConformalFactor.from_source(grid, src, n)


def _dataset_from_config(cfg: dict):
    if "dataset" in cfg:
        path = cfg["dataset"]
        if not isinstance(path, str) or not os.path.exists(path):
            raise ConfigInvalid(f"dataset file {path!r} does not exist")
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return load_dataset(path), {"dataset": path}
    if "synth" in cfg:
        s = cfg["synth"]
        gspec = _require(s, "grid", dict)
        grid = CylinderGrid(
            3, int(_require(gspec, "num_t")), tuple(int(m) for m in _require(gspec, "num_ang"))
        )
        data, synth_rep = synth_approx_miller(
            grid,
            T=float(s.get("T", 1.0)),
            modes=tuple(tuple(int(x) for x in m) for m in s.get("modes", ((1, 0), (0, 1)))),
            amplitude=float(s.get("amplitude", 0.1)),
            ridge=float(s.get("ridge", 1e-6)),
            alpha=float(s.get("alpha", 0.5)),
            rho=float(s.get("rho", 1.0 / 6.0)),
        )
        return data, {"synth": synth_rep}
    raise ConfigInvalid("config needs either a 'dataset' path or a 'synth' block")


def _run_counterexample_study(cfg: dict, threads: int) -> ExperimentReport:
    data, origin = _dataset_from_config(cfg)
    eps = [float(e) for e in cfg.get("eps", (0.0, 0.025, 0.05, 0.1))]
    strides = tuple(int(s) for s in cfg.get("strides", (4, 2, 1)))
    gamma = _gamma(cfg)
    cut = float(cfg.get("cut", 2.0))
    zero_tol = float(cfg.get("zero_tol", 1e-10))
    r2_min = float(cfg.get("r2_min", 0.9))
    rep = ExperimentReport("counterexample-study", cfg)
    rep.scalars.update(origin)
    t0 = time.perf_counter()

    res = dn_gap_study(data, eps, strides=strides, gamma=gamma, cut=cut, threads=threads)
    rep.add_table(
        "gap_study",
        ("eps", "stride", "gap", "harmonic_residual", "weak_residual"),
        [(c.eps, c.stride, c.gap, c.harmonic_residual, c.weak_residual) for c in res.cells],
    )
    rep.scalars["fit"] = res.fit
    zero_gaps = [c.gap for c in res.cells if c.eps == 0.0]
    if zero_gaps:
        rep.add_verdict("zero_eps_gap", max(zero_gaps), zero_tol)
    if not res.fit.get("trivial"):
        rep.add_verdict("fit_beta_eps_r", res.fit["beta_eps_r"], 0.0, ">=")
        rep.add_verdict("fit_beta_eps2", res.fit["beta_eps2"], 0.0, ">=")
        rep.add_verdict("fit_r2", res.fit["r2"], r2_min, ">=")
        try:
            iso = nonisometry_check(data, float(cfg.get("nonisometry_eps", 0.05)))
            rep.scalars["nonisometry"] = iso
            rep.add_verdict(
                "nonisometry_p2_match", iso["rel_diff"], float(cfg.get("nonisometry_tol", 1e-10))
            )
            rep.add_verdict("nonisometry_p2_positive", iso["p2"], 0.0, ">=")
        except TrivialU:
            rep.scalars["nonisometry"] = "trivial u, no obstruction derivable"
    rep.timings["total"] = time.perf_counter() - t0
    return rep


def _run_validate_dataset(cfg: dict, threads: int) -> ExperimentReport:
    path = _require(cfg, "dataset", str)
    if not os.path.exists(path):
        raise ConfigInvalid(f"dataset file {path!r} does not exist")
    import warnings

    rep = ExperimentReport("validate-dataset", cfg)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = load_dataset(path)
    result = validate_miller_properties(data)
    rep.scalars["validation"] = result.as_dict()
    rep.add_table(
        "items",
        ("item", "status", "code"),
        [(i.name, i.status, i.code or "") for i in result.items],
    )
    rep.add_verdict("validation_failures", sum(i.status == "fail" for i in result.items), 0.0)
    rep.timings["total"] = time.perf_counter() - t0
    return rep


def _run_synth_dataset(cfg: dict, threads: int, out_dir) -> ExperimentReport:
    gspec = _require(cfg, "grid", dict)
    grid = CylinderGrid(
        3, int(_require(gspec, "num_t")), tuple(int(m) for m in _require(gspec, "num_ang"))
    )
    rep = ExperimentReport("synth-dataset", cfg)
    t0 = time.perf_counter()
    data, synth_rep = synth_approx_miller(
        grid,
        T=float(cfg.get("T", 1.0)),
        modes=tuple(tuple(int(x) for x in m) for m in cfg.get("modes", ((1, 0), (0, 1)))),
        amplitude=float(cfg.get("amplitude", 0.1)),
        ridge=float(cfg.get("ridge", 1e-6)),
        alpha=float(cfg.get("alpha", 0.5)),
        rho=float(cfg.get("rho", 1.0 / 6.0)),
    )
    out_path = os.path.join(out_dir, cfg.get("output", "dataset.json"))
    save_dataset(data, out_path)
    rep.scalars["synth"] = synth_rep
    rep.scalars["output"] = os.path.basename(out_path)
    rep.add_verdict("residual_not_worse_than_baseline",
                    synth_rep["achieved_l2"] - synth_rep["baseline_l2"], 0.0)
    rep.timings["total"] = time.perf_counter() - t0
    return rep


def _run_rigidity_check(cfg: dict, threads: int) -> ExperimentReport:
    n = int(cfg.get("n", 3))
    size = int(cfg.get("size", 9))
    seeds = [int(s) for s in cfg.get("seeds", range(5))]
    tol = float(cfg.get("tolerance", 1e-10))
    rep = ExperimentReport("rigidity-check", cfg)
    t0 = time.perf_counter()
    grid = cyl_grid(n, size)
    rows = []
    worst = 0.0
    for s in seeds:
        g = sample_metric(random_trig_metric(n, seed=s), grid)
        dev = global_rigidity_check(g)
        rows.append((s, dev))
        worst = max(worst, dev)
    rep.add_table("deviation_from_one", ("seed", "max_deviation"), rows)
    rep.add_verdict("rigidity_max_deviation", worst, tol)
    rep.timings["total"] = time.perf_counter() - t0
    return rep


_HANDLERS = {
    "verify-identities": _run_verify_identities,
    "dn-compare": _run_dn_compare,
    "counterexample-study": _run_counterexample_study,
    "validate-dataset": _run_validate_dataset,
    "synth-dataset": _run_synth_dataset,
    "rigidity-check": _run_rigidity_check,
}


def run(command: str, cfg: dict, out_dir, threads: int = 1) -> ExperimentReport:
    """Dispatch one subcommand on an already-parsed config."""
    if command not in _HANDLERS:
        raise ConfigInvalid(f"unknown command {command!r}")
    handler = _HANDLERS[command]
    if command == "synth-dataset":
        os.makedirs(out_dir, exist_ok=True)
        return handler(cfg, threads, out_dir)
    return handler(cfg, threads)


def _resolve_threads(arg) -> int:
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("CALDERON_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as e:
            raise ConfigInvalid(f"CALDERON_LAB_THREADS is not an integer: {env!r}") from e
    return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="calderon-lab",
        description="DN-map laboratory for cylinder metrics: identity checks, "
        "gauge comparisons, and coefficient-dataset studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _HANDLERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        cfg = _load_config(args.config)
        threads = _resolve_threads(args.threads)
        out_dir = args.out or cfg.get("out") or os.path.join("reports", args.command)
        report = run(args.command, cfg, out_dir, threads)
        emit_report(report, out_dir)
    except ConfigInvalid as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except CalderonLabError as e:
        print(f"computation failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    for v in report.verdicts:
        state = "pass" if v.passed else "FAIL"
        print(f"[{state}] {v.name}: {v.value:.6e} {v.comparison} {v.threshold:.6e}")
    print(f"report written to {out_dir}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
