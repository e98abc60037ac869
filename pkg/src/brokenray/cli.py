"""Command-line interface.

Every subcommand reads one JSON run config, writes its artifacts into the
output directory, and prints a machine-readable ``key=value`` summary to
stdout. Exit codes: 0 success, 2 configuration/validation failure, 3
numerical-invariant failure. All options can also be set through
``BROKENRAY_*`` environment variables.
"""

from __future__ import annotations

import functools
import os
import sys

import click
import numpy as np

from . import _core
from .errors import BrokenRayError
from .config import load_run_config

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _common(fn):
    @click.option("--config", "config_path", required=True, type=click.Path(exists=True),
                  help="Run config JSON.")
    @click.option("--seed", type=int, default=None, help="Override the config RNG seed.")
    @click.option("--threads", type=int, default=os.cpu_count() or 1,
                  show_default="all cores", help="Worker threads for operator kernels.")
    @click.option("--out", "out_dir", type=click.Path(), default=".",
                  help="Output directory.")
    @functools.wraps(fn)
    def wrapper(config_path, seed, threads, out_dir, **kw):
        try:
            cfg = load_run_config(config_path)
            if seed is not None:
                cfg.raw["seed"] = seed
            os.makedirs(out_dir, exist_ok=True)
            fn(cfg=cfg, threads=threads, out=out_dir, **kw)
        except BrokenRayError as exc:
            click.echo(f"error={type(exc).__name__} detail={exc}", err=True)
            sys.exit(EXIT_VALIDATION)
    return wrapper


def _emit(**kv):
    for k, v in kv.items():
        if isinstance(v, float):
            click.echo(f"{k}={v:.17g}")
        else:
            click.echo(f"{k}={v}")


@click.group(context_settings={"auto_envvar_prefix": "BROKENRAY"})
def main():
    """Attenuated broken-ray transform toolkit."""


@main.command()
@_common
def trace(cfg, threads, out):
    """Trace one broken ray and print its segment table as CSV."""
    from .geometry import BoundaryJet
    from .billiards import trace_broken_ray

    domain = cfg.domain()
    jet_cfg = cfg.raw.get("jet")
    if jet_cfg is None:
        raise BrokenRayError("config lacks a 'jet' entry")
    jet = BoundaryJet.make(domain, jet_cfg["x"], jet_cfg["theta"])
    ray = trace_broken_ray(domain, jet, cfg.n_max(), cfg.tolerances(domain))
    dim = domain.dim
    cols = ([f"start{i}" for i in range(dim)] + [f"dir{i}" for i in range(dim)]
            + ["length", "facet"])
    lines = [",".join(cols)]
    facets = list(ray.reflect_facets) + [ray.end_facet]
    for k in range(ray.n_segments):
        row = list(ray.seg_start[k]) + list(ray.seg_dir[k]) + [ray.seg_len[k]]
        lines.append(",".join(f"{v:.17g}" for v in row) + f",{facets[k]}")
    table = "\n".join(lines)
    click.echo(table)
    with open(os.path.join(out, "trace.csv"), "w") as fh:
        fh.write(table + "\n")
    _emit(status=ray.status.name, segments=ray.n_segments,
          reflections=ray.n_reflections, total_length=ray.total_length)


@main.command()
@_common
def forward(cfg, threads, out):
    """Forward transform of the configured phantom."""
    from .io import save_field, save_sinogram, save_sinogram_binary
    from .phantoms import render

    domain = cfg.domain()
    op = cfg.operator(domain, threads=threads)
    f = render(cfg.phantom_spec(), op.grid)
    sino = op.forward(f)
    noise = cfg.noise_level()
    if noise > 0:
        rng = np.random.default_rng(cfg.seed())
        scale = noise * float(np.max(np.abs(sino.values)))
        sino.values = sino.values + rng.normal(0.0, scale, sino.n_rays) * op.active
    save_sinogram(os.path.join(out, "sinogram.csv"), sino)
    save_sinogram_binary(os.path.join(out, "sinogram.bin"), sino)
    save_field(os.path.join(out, "phantom.field"), f)
    _emit(n_rays=sino.n_rays, n_active=int(op.active.sum()),
          data_norm=sino.norm(), backend=_core.BACKEND)


@main.command("adjoint-check")
@_common
def adjoint_check(cfg, threads, out):
    """Dot-product test of the forward/adjoint pair."""
    from .checks import check_adjoint_exactness

    op = cfg.operator(threads=threads)
    res = check_adjoint_exactness(op, n_pairs=20, seed=cfg.seed())
    _emit(rel_discrepancy=res.value, threshold=res.threshold, passed=res.passed)
    if not res.passed:
        sys.exit(EXIT_NUMERICAL)


@main.command()
@_common
def normal(cfg, threads, out):
    """Apply the normal operator; write total/ballistic/reflect fields."""
    from .io import save_field
    from .phantoms import render

    domain = cfg.domain()
    op = cfg.operator(domain, threads=threads)
    f = render(cfg.phantom_spec(), op.grid)
    bal, ref = op.normal_parts(f)
    total = op.normal(f)
    save_field(os.path.join(out, "normal_total.field"), total)
    save_field(os.path.join(out, "normal_ballistic.field"), bal)
    save_field(os.path.join(out, "normal_reflect.field"), ref)
    split = (bal + ref - total).l2_norm() / max(total.l2_norm(), 1e-300)
    _emit(split_residual=split, total_norm=total.l2_norm(),
          ballistic_norm=bal.l2_norm(), reflect_norm=ref.l2_norm())


@main.command()
@_common
def symbol(cfg, threads, out):
    """Leading ballistic symbol sampled on a covector grid, as CSV."""
    from .normal_ops import ballistic_symbol_batch
    from .visibility import default_covector_grid

    domain = cfg.domain()
    grid = cfg.grid(domain)
    scfg = cfg.raw.get("symbol", {})
    n_pts = int(scfg.get("n_points", 3))
    n_sub = int(scfg.get("n_subsphere", 32))
    lo, hi = cfg.support_box(domain)
    axes = [np.linspace(lo[a], hi[a], n_pts) for a in range(domain.dim)]
    pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    xis = default_covector_grid(domain.dim)
    if "n_xi" in scfg:
        xis = xis[:: max(1, len(xis) // int(scfg["n_xi"]))]
    rows = []
    for xi in xis:
        XI = np.broadcast_to(xi, pts.shape).copy()
        a0 = ballistic_symbol_batch(domain, cfg.sigma(grid), cfg.alpha(), pts, XI,
                                    n_sub=n_sub, n_max=cfg.n_max(),
                                    tol=cfg.tolerances(domain))
        rows.extend([list(p) + list(xi) + [v] for p, v in zip(pts, a0)])
    path = os.path.join(out, "symbol.csv")
    with open(path, "w") as fh:
        dim = domain.dim
        fh.write(",".join([f"x{i}" for i in range(dim)]
                          + [f"xi{i}" for i in range(dim)] + ["a0"]) + "\n")
        for r in rows:
            fh.write(",".join(f"{v:.17g}" for v in r) + "\n")
    vals = np.array([r[-1] for r in rows])
    _emit(n_samples=len(rows), positive_fraction=float((vals > 0).mean()),
          min_a0=float(vals.min()), max_a0=float(vals.max()))


@main.command()
@_common
def visibility(cfg, threads, out):
    """Visible-fraction field and a CSV of invisible covectors."""
    from .io import save_field
    from .visibility import visible_set_map, default_covector_grid, SearchSpec

    domain = cfg.domain()
    vcfg = cfg.raw.get("visibility", {})
    res = int(vcfg.get("resolution", 8))
    grid = __import__("brokenray.fields", fromlist=["grid_for_domain"]).grid_for_domain(domain, res)
    pts = grid.cell_centers()
    inside = domain.contains(pts, tol=-domain.boundary_tol)
    xis = default_covector_grid(domain.dim)
    if "n_xi" in vcfg:
        xis = xis[:: max(1, len(xis) // int(vcfg["n_xi"]))]
    vmap = visible_set_map(domain, cfg.alpha(), cfg.n_max(), pts[inside], xis,
                           SearchSpec(int(vcfg.get("n_subsphere", 32)),
                                      int(vcfg.get("refine_levels", 1))),
                           cfg.tolerances(domain))
    frac = np.zeros(len(pts))
    frac[inside] = vmap.visible_fraction()
    save_field(os.path.join(out, "visible_fraction.field"),
               grid.like(frac.reshape(grid.dims)))
    ip, id_ = vmap.invisible_pairs()
    with open(os.path.join(out, "invisible_covectors.csv"), "w") as fh:
        dim = domain.dim
        fh.write(",".join([f"x{i}" for i in range(dim)]
                          + [f"xi{i}" for i in range(dim)]) + "\n")
        for p, d in zip(ip, id_):
            row = list(vmap.points[p]) + list(vmap.xis[d])
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    _emit(points=len(vmap.points), covectors=len(vmap.xis),
          invisible_pairs=len(ip),
          fully_visible_fraction=float(vmap.fully_visible().mean()))


@main.command()
@click.option("--data", "data_path", type=click.Path(exists=True), default=None,
              help="Sinogram file (CSV or binary); simulated when omitted.")
@_common
def reconstruct(cfg, threads, out, data_path):
    """Iterative least-squares reconstruction from sinogram data."""
    from .io import load_sinogram, load_sinogram_binary, save_field
    from .phantoms import render
    from .reconstruction import solve
    from .transport import Sinogram

    domain = cfg.domain()
    op = cfg.operator(domain, threads=threads)
    truth = None
    if data_path is not None:
        loader = load_sinogram if data_path.endswith(".csv") else load_sinogram_binary
        raw = loader(data_path)
        op._check_sampling(raw)
        sino = Sinogram.from_sampling(op.sampling, raw.values)
    else:
        truth = render(cfg.phantom_spec(), op.grid)
        sino = op.forward(truth)
        noise = cfg.noise_level()
        if noise > 0:
            rng = np.random.default_rng(cfg.seed())
            scale = noise * float(np.max(np.abs(sino.values)))
            sino.values = sino.values + rng.normal(0.0, scale, sino.n_rays) * op.active
    scfg = cfg.solver(op.grid, domain)
    field, log = solve(op, sino, scfg)
    save_field(os.path.join(out, "reconstruction.field"), field)
    with open(os.path.join(out, "convergence.csv"), "w") as fh:
        fh.write("iteration,data_residual,normal_residual\n")
        for i, (r, s) in enumerate(zip(log.residuals, log.normal_residuals)):
            fh.write(f"{i + 1},{r:.17g},{s:.17g}\n")
    kv = {"status": log.status, "iterations": log.iterations,
          "final_residual": log.residuals[-1] if log.residuals else 0.0}
    if truth is not None:
        m = scfg.mask if scfg.mask is not None else np.ones(op.grid.dims, bool)
        num = np.linalg.norm((field - truth).values[m])
        den = max(np.linalg.norm(truth.values[m]), 1e-300)
        kv["rel_error_on_support"] = num / den
    _emit(**kv)


@main.command()
@_common
def stability(cfg, threads, out):
    """Lower stability constant over the configured support mask."""
    from .reconstruction import stability_probe

    domain = cfg.domain()
    op = cfg.operator(domain, threads=threads)
    lo, hi = cfg.support_box(domain)
    cc = op.grid.cell_centers().reshape(*op.grid.dims, op.grid.ndim)
    mask = np.all((cc >= lo) & (cc <= hi), axis=-1)
    rep = stability_probe(lambda a: op.normal(op.grid.like(a)).values,
                          op.grid, mask,
                          steps=int(cfg.raw.get("stability", {}).get("steps", 200)))
    with open(os.path.join(out, "stability.csv"), "w") as fh:
        fh.write("index,eigenvalue\n")
        for i, v in enumerate(rep.eigenvalues):
            fh.write(f"{i},{v:.17g}\n")
    _emit(c_lower=rep.c_lower, top=rep.top, dofs=rep.dims, lanczos_steps=rep.steps)


@main.command()
@_common
def perturb(cfg, threads, out):
    """Normal-operator growth under attenuation/cutoff perturbations."""
    from .reconstruction import perturbation_probe

    domain = cfg.domain()
    op = cfg.operator(domain, threads=threads)
    pcfg = cfg.raw.get("perturb", {})
    deltas = pcfg.get("deltas", [1e-3, 1e-2, 1e-1])
    lo, hi = cfg.support_box(domain)
    c = 0.5 * (lo + hi)
    w = 0.35 * float(np.max(hi - lo))
    cc = op.grid.cell_centers()
    bump = op.grid.like(np.exp(-0.5 * np.sum(((cc - c) / w) ** 2, axis=1)).reshape(op.grid.dims))
    tab = perturbation_probe(op, deltas, sigma_bump=bump,
                             n_probe=int(pcfg.get("n_probe", 4)), seed=cfg.seed())
    with open(os.path.join(out, "perturb.csv"), "w") as fh:
        fh.write("delta,ratio\n")
        for d, r in tab.rows():
            fh.write(f"{d:.17g},{r:.17g}\n")
    _emit(slope=tab.slope, n_deltas=len(deltas))


@main.command()
@_common
def invariants(cfg, threads, out):
    """Run the numerical property suite; exit 3 if any check fails."""
    from . import checks as C

    domain = cfg.domain()
    op = cfg.operator(domain, threads=threads)
    lo, hi = cfg.support_box(domain)
    icfg = cfg.raw.get("invariants", {})
    n_rays = int(icfg.get("n_rays", 500))
    n_mc = int(icfg.get("n_mc", 200_000))
    seed = cfg.seed()
    results = [
        C.check_unfold_collinearity(domain, n_rays, cfg.n_max(), seed),
        C.check_reversibility(domain, max(50, n_rays // 5), cfg.n_max(), seed),
        C.check_adjoint_exactness(op, 20, seed),
        C.check_phase_space_identity(domain, cfg.sampling(), n_mc // 2, seed),
        C.check_measure_invariance(domain, n_mc, seed),
        C.check_norm_bound(op, int(icfg.get("n_fields", 50)), seed),
        C.check_reflected_source_bound(domain, lo, hi, int(icfg.get("n_source", 4000)),
                                       cfg.n_max(), seed),
        C.check_normal_split_identity(op, 5, seed),
    ]
    failed = 0
    for r in results:
        click.echo(r.line() + f" [{r.seconds:.2f}s]")
        failed += 0 if r.passed else 1
    _emit(checks=len(results), failed=failed, backend=_core.BACKEND)
    if failed:
        sys.exit(EXIT_NUMERICAL)


if __name__ == "__main__":
    main()
