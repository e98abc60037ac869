"""Named numerical invariant checks.

Each check returns a CheckResult so the CLI ``invariants`` command and the
acceptance suite can run the same code at different scales. Checks are
deterministic given their seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .billiards import (
    RayStatus,
    TraceTolerances,
    billiard_map_batch,
    trace_broken_ray,
    trace_jets,
)
from .fields import ScalarGridField, grid_for_domain
from .geometry import BoundaryJet, ConvexDomain, FacetLabel
from .transport import BrokenRayOperator, SamplingSpec, make_boundary_sampling
from .unfolding import HyperplaneSeq, reflected_source, unfold_ray

__all__ = [
    "CheckResult",
    "sphere_area",
    "random_smooth_field",
    "check_unfold_collinearity",
    "check_adjoint_exactness",
    "check_phase_space_identity",
    "check_measure_invariance",
    "check_norm_bound",
    "check_reflected_source_bound",
    "check_normal_split_identity",
    "check_reversibility",
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0

    def line(self):
        mark = "PASS" if self.passed else "FAIL"
        return (f"{mark} {self.name}: value={self.value:.6g} "
                f"threshold={self.threshold:.6g} {self.detail}")


def sphere_area(dim):
    """Surface measure of the unit sphere in R^dim (2*pi, 4*pi, ...)."""
    from math import gamma, pi
    return 2 * pi ** (dim / 2) / gamma(dim / 2)


def _timed(fn):
    t0 = time.perf_counter()
    res = fn()
    res.seconds = time.perf_counter() - t0
    return res


def random_regular_rays(domain: ConvexDomain, count, n_max, rng,
                        tol: TraceTolerances = None, max_tries=60):
    """Broken rays from random measured-boundary jets, keeping regular ones."""
    tol = tol or TraceTolerances.for_domain(domain)
    mfacets = [k for k in range(domain.n_facets) if domain.labels[k] == FacetLabel.MEASURE]
    rays = []
    for _ in range(max_tries):
        need = count - len(rays)
        if need <= 0:
            break
        pts, fidx = domain.sample_boundary(rng, 2 * need + 16, facets=np.array(mfacets))
        ths = domain.sample_inward_cosine(rng, fidx)
        status, nseg, s0, sd, sl, hf = trace_jets(domain, pts, ths, n_max, tol)
        # start jets must sit in the measured set with the same guard margin
        # applied to terminal hits, so regularity is time-symmetric
        for r in np.nonzero(status == RayStatus.MEASURED)[0]:
            if len(rays) >= count:
                break
            in_set, dist = domain.measured_classification(pts[r][None, :], int(fidx[r]))
            if not (in_set[0] and dist[0] >= tol.mask_margin):
                continue
            k = int(nseg[r])
            from .billiards import BrokenRay
            rays.append(BrokenRay(
                seg_start=s0[r, :k].copy(), seg_dir=sd[r, :k].copy(),
                seg_len=sl[r, :k].copy(), reflect_facets=hf[r, :k - 1].copy(),
                status=RayStatus.MEASURED,
                start_jet=BoundaryJet(tuple(pts[r]), tuple(ths[r]), int(fidx[r])),
                end_facet=int(hf[r, k - 1])))
    return rays


def random_smooth_field(grid: ScalarGridField, rng, n_modes=6, support=None):
    """Random band-limited field; optionally windowed to a support box."""
    pts = grid.cell_centers()
    lo, hi = grid.box
    vals = np.zeros(len(pts))
    for _ in range(n_modes):
        k = rng.integers(1, 4, size=grid.ndim)
        phase = rng.uniform(0, 2 * np.pi, size=grid.ndim)
        amp = rng.standard_normal()
        term = np.ones(len(pts)) * amp
        for a in range(grid.ndim):
            term *= np.sin(2 * np.pi * k[a] * (pts[:, a] - lo[a]) / (hi[a] - lo[a]) + phase[a])
        vals += term
    if support is not None:
        slo, shi = np.asarray(support[0]), np.asarray(support[1])
        w = np.ones(len(pts))
        for a in range(grid.ndim):
            u = (pts[:, a] - slo[a]) / (shi[a] - slo[a])
            w *= np.clip(np.minimum(u, 1 - u) / 0.2, 0, 1) ** 2 * (3 - 2 * np.clip(np.minimum(u, 1 - u) / 0.2, 0, 1))
            w[(u < 0) | (u > 1)] = 0.0
        vals *= w
    return grid.like(vals.reshape(grid.dims))


# ---------------------------------------------------------------------------


def check_unfold_collinearity(domain, n_rays=1000, n_max=8, seed=0, tol=1e-9,
                              name="unfold_collinearity"):
    """Unfolded segment junctions land on one straight line."""
    def run():
        rng = np.random.default_rng(seed)
        rays = random_regular_rays(domain, n_rays, n_max, rng)
        worst = 0.0
        for ray in rays:
            u = unfold_ray(domain, ray, tol=np.inf)
            worst = max(worst, u.collinearity_defect)
        return CheckResult(name, worst < tol, worst, tol,
                           detail=f"rays={len(rays)}")
    return _timed(run)


def check_adjoint_exactness(op: BrokenRayOperator, n_pairs=20, seed=0, tol=1e-10,
                            name="adjoint_exactness"):
    """<Af, g>_data == <f, A^T g>_grid on random probe pairs."""
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_pairs):
            f = op.grid.like(rng.standard_normal(op.grid.dims))
            g = rng.standard_normal(op.plan.n_rays)
            af = op.forward_values(f)
            atg = op.adjoint_values(g)
            num = abs(np.sum(op.sampling.weight * af * g) - atg.inner(f))
            den = (np.sqrt(np.sum(op.sampling.weight * af ** 2))
                   * np.sqrt(np.sum(op.sampling.weight * g ** 2)) + 1e-300)
            worst = max(worst, num / den)
        return CheckResult(name, worst < tol, worst, tol, detail=f"pairs={n_pairs}")
    return _timed(run)


def _all_measure_clone(domain: ConvexDomain):
    return ConvexDomain(domain.normals, domain.offsets,
                        [FacetLabel.MEASURE] * domain.n_facets)


def check_phase_space_identity(domain, spec: SamplingSpec = None, n_mc=200_000,
                               seed=0, tol_rel=5e-3, name="phase_space_identity"):
    """Chord-length integral over inward boundary flux equals volume times
    sphere area; plus a Monte Carlo check with a nontrivial smooth integrand.
    """
    def run():
        full = _all_measure_clone(domain)
        samp = make_boundary_sampling(full, spec or SamplingSpec())
        from ._core import exit_times
        t, facet, ok = exit_times(full.normals, full.offsets, samp.x, samp.theta,
                                  full.boundary_tol)
        lhs = float(np.sum(samp.weight * t))
        rhs = domain.volume * sphere_area(domain.dim)
        rel = abs(lhs - rhs) / rhs

        # MC with h(x, theta) = exp(x . v) * (1 + (theta . u)^2)
        rng = np.random.default_rng(seed)
        v = np.linspace(0.3, 0.7, domain.dim)
        u = np.linspace(1.0, 0.5, domain.dim)
        u /= np.linalg.norm(u)

        pts, fidx = full.sample_boundary(rng, n_mc)
        ths = full.sample_inward_cosine(rng, fidx)
        tt, _, ok2 = exit_times(full.normals, full.offsets, pts, ths, full.boundary_tol)
        # chord integral of exp(x . v) along x + t*theta has closed form
        a = ths @ v
        ex = np.exp(pts @ v)
        with np.errstate(over="ignore"):
            chord = np.where(np.abs(a) > 1e-12, ex * (np.exp(a * tt) - 1.0) / np.where(np.abs(a) > 1e-12, a, 1.0), ex * tt)
        hval = chord * (1.0 + (ths @ u) ** 2)
        c = 2.0 if domain.dim == 2 else np.pi
        scale = c * full.boundary_area
        lhs_mc = scale * hval.mean()
        se_lhs = scale * hval.std(ddof=1) / np.sqrt(len(hval))

        xs = full.sample_interior(rng, n_mc // 2)
        from .directions import sphere_quadrature
        dirs = rng.standard_normal((n_mc // 2, domain.dim))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        hr = np.exp(xs @ v) * (1.0 + (dirs @ u) ** 2)
        rhs_mc = domain.volume * sphere_area(domain.dim) * hr.mean()
        se_rhs = domain.volume * sphere_area(domain.dim) * hr.std(ddof=1) / np.sqrt(len(hr))

        z = abs(lhs_mc - rhs_mc) / np.sqrt(se_lhs ** 2 + se_rhs ** 2)
        ok_all = (rel < tol_rel) and (z < 3.0)
        return CheckResult(name, ok_all, max(rel, z / (3.0 / tol_rel)), tol_rel,
                           detail=f"flat={lhs:.6g}/{rhs:.6g} rel={rel:.2e}; mc z={z:.2f}")
    return _timed(run)


def check_measure_invariance(domain, n_mc=1_000_000, seed=0, z_max=3.0,
                             name="measure_invariance"):
    """Paired Monte Carlo test that one bounce preserves the boundary flux measure."""
    def run():
        rng = np.random.default_rng(seed)
        full = _all_measure_clone(domain)
        pts, fidx = full.sample_boundary(rng, n_mc)
        ths = full.sample_inward_cosine(rng, fidx)
        x2, th2, valid = billiard_map_batch(full, pts, ths)
        pts, ths, x2, th2 = pts[valid], ths[valid], x2[valid], th2[valid]
        v = np.linspace(-0.4, 0.8, domain.dim)
        u = np.linspace(0.2, 1.0, domain.dim)
        u /= np.linalg.norm(u)
        worst = 0.0
        details = []
        for h in (lambda x, t: np.exp(x @ v) * (1 + (t @ u) ** 2),
                  lambda x, t: np.cos(2 * np.pi * x @ v) + (t @ u)):
            d = h(x2, th2) - h(pts, ths)
            z = abs(d.mean()) / (d.std(ddof=1) / np.sqrt(len(d)) + 1e-300)
            worst = max(worst, z)
            details.append(f"z={z:.2f}")
        return CheckResult(name, worst < z_max, worst, z_max,
                           detail=f"samples={len(pts)} " + " ".join(details))
    return _timed(run)


def check_norm_bound(op: BrokenRayOperator, n_fields=100, seed=0,
                     name="forward_norm_bound"):
    """||alpha I f||^2_data <= 2 (n_max+1) diam(domain) |S^{n-1}| ||f||^2."""
    def run():
        rng = np.random.default_rng(seed)
        bound_const = (2.0 * (op.n_max + 1) * op.domain.diameter
                       * sphere_area(op.domain.dim))
        worst = 0.0
        for _ in range(n_fields):
            f = random_smooth_field(op.grid, rng)
            af = op.forward_values(f)
            lhs = float(np.sum(op.sampling.weight * af ** 2))
            rhs = bound_const * f.l2_norm() ** 2
            worst = max(worst, lhs / rhs)
        return CheckResult(name, worst <= 1.0, worst, 1.0,
                           detail=f"fields={n_fields} max ratio to bound")
    return _timed(run)


def check_reflected_source_bound(domain, box_lo, box_hi, n_samples=10_000,
                                 n_max=8, seed=0, slack=1e-9,
                                 name="reflected_source_separation"):
    """Mirror images of on-ray points across later reflection planes stay at
    least dist(K, boundary) away from the support box K."""
    def run():
        rng = np.random.default_rng(seed)
        lo = np.asarray(box_lo, dtype=float)
        hi = np.asarray(box_hi, dtype=float)
        c = 0.5 * (lo + hi)
        halfw = 0.5 * (hi - lo)
        support = c @ domain.normals.T + np.abs(domain.normals) @ halfw
        dist_k = float(np.min(domain.offsets - support))
        rays = random_regular_rays(domain, max(64, n_samples // 32), n_max, rng)
        rays = [r for r in rays if r.n_reflections >= 1]
        worst = np.inf
        drawn = 0
        while drawn < n_samples and rays:
            ray = rays[drawn % len(rays)]
            seq = HyperplaneSeq.from_ray(domain, ray)
            N = len(seq)
            k = int(rng.integers(0, N))
            l = int(rng.integers(k + 1, N + 1))
            t = rng.uniform(0, ray.seg_len[k])
            x = ray.point_at(k, t)
            z = reflected_source(seq, k, l, x)
            d_box = float(np.linalg.norm(np.maximum(np.abs(z - c) - halfw, 0.0)))
            worst = min(worst, d_box)
            drawn += 1
        passed = worst >= dist_k - slack
        return CheckResult(name, passed, worst, dist_k - slack,
                           detail=f"samples={drawn} dist(K,bnd)={dist_k:.4g}")
    return _timed(run)


def check_normal_split_identity(op: BrokenRayOperator, n_fields=5, seed=0,
                                tol=1e-3, name="normal_split_identity"):
    """ballistic + reflect equals adjoint o forward."""
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_fields):
            f = random_smooth_field(op.grid, rng)
            total = op.normal(f)
            bal, ref = op.normal_parts(f)
            worst = max(worst, (bal + ref - total).l2_norm() / max(total.l2_norm(), 1e-300))
        return CheckResult(name, worst < tol, worst, tol, detail=f"fields={n_fields}")
    return _timed(run)


def check_reversibility(domain, n_rays=200, n_max=8, seed=0, tol=1e-9,
                        name="trace_reversibility"):
    """Tracing backward from the terminal jet reproduces the segments reversed."""
    def run():
        rng = np.random.default_rng(seed)
        rays = random_regular_rays(domain, n_rays, n_max, rng)
        worst = 0.0
        for ray in rays:
            jet = ray.end_jet(domain)
            back = trace_broken_ray(domain, jet, n_max)
            if back.status != RayStatus.MEASURED or back.n_segments != ray.n_segments:
                worst = np.inf
                break
            fwd_pts = [ray.seg_start[k] for k in range(ray.n_segments)] + [ray.end_point]
            bwd_pts = [back.seg_start[k] for k in range(back.n_segments)] + [back.end_point]
            for p, q in zip(fwd_pts, reversed(bwd_pts)):
                worst = max(worst, float(np.linalg.norm(p - q)))
        return CheckResult(name, worst < tol, worst, tol, detail=f"rays={len(rays)}")
    return _timed(run)
