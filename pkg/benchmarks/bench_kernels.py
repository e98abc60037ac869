#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Runs tracing, projection, backprojection and a short CGLS loop on a 2D and a
3D configuration with both backends and prints a timing table. The compiled
extension must be built for the comparison to be meaningful; results are
checked to agree within float reassociation before timings are reported.

Usage: python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from brokenray._core import impl, kernels_py, BACKEND
from brokenray.billiards import TraceTolerances
from brokenray.fields import grid_for_domain
from brokenray.geometry import unit_cube, unit_square


def timeit(fn, repeat=3):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_case(name, domain, res, n_rays, n_max, repeat):
    rng = np.random.default_rng(0)
    grid = grid_for_domain(domain, res)
    X, F = domain.sample_boundary(rng, n_rays)
    TH = domain.sample_inward_cosine(rng, F)
    tol = TraceTolerances.for_domain(domain)
    targs = (domain.normals, domain.offsets, domain.labels, domain.tangent_norms,
             *domain.mask_arrays(), X, TH, n_max,
             tol.graze_tol, tol.edge_margin, tol.mask_margin, domain.boundary_tol)

    rows = []
    t_c, out_c = timeit(lambda: impl.trace(*targs), repeat)
    t_p, out_p = timeit(lambda: kernels_py.trace(*targs), repeat)
    assert all(np.allclose(np.asarray(a, float), np.asarray(b, float))
               for a, b in zip(out_c, out_p)), "backend mismatch in trace"
    rows.append(("trace", t_c, t_p))

    status, nseg, s0, sd, sl, _ = out_c
    keep = np.arange(n_max + 1)[None, :] < nseg[:, None]
    seg_start = np.ascontiguousarray(s0[keep])
    seg_dir = np.ascontiguousarray(sd[keep])
    seg_len = np.ascontiguousarray(sl[keep])
    step = 0.5 * float(grid.spacing.min())
    m = np.maximum(np.ceil(seg_len / step - 1e-12).astype(np.int64), 1)
    off = np.zeros(len(m) + 1, dtype=np.int64)
    np.cumsum(m, out=off[1:])
    gargs = (grid.origin, grid.spacing, np.asarray(grid.dims, dtype=np.int64))
    vals = rng.standard_normal(int(np.prod(grid.dims)))
    coef = rng.standard_normal(len(m))

    t_c, pc = timeit(lambda: impl.project_midpoint(*gargs, vals, seg_start, seg_dir,
                                                   seg_len, m, off, None), repeat)
    t_p, pp = timeit(lambda: kernels_py.project_midpoint(*gargs, vals, seg_start, seg_dir,
                                                         seg_len, m, off, None), repeat)
    assert np.allclose(pc, pp), "backend mismatch in project"
    rows.append(("project", t_c, t_p))

    def bp(f):
        out = np.zeros(int(np.prod(grid.dims)))
        f(*gargs, seg_start, seg_dir, seg_len, m, off, None, coef, out)
        return out

    t_c, bc = timeit(lambda: bp(impl.backproject_midpoint), repeat)
    t_p, bpv = timeit(lambda: bp(kernels_py.backproject_midpoint), repeat)
    assert np.allclose(bc, bpv), "backend mismatch in backproject"
    rows.append(("backproject", t_c, t_p))

    print(f"\n{name}: {n_rays} rays, {len(m)} segments, "
          f"{int(off[-1])} samples, grid {tuple(grid.dims)}")
    print(f"{'kernel':<14} {'compiled [s]':>13} {'python [s]':>12} {'speedup':>9}")
    for label, tc, tp in rows:
        print(f"{label:<14} {tc:>13.4f} {tp:>12.4f} {tp / tc:>8.1f}x")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = ap.parse_args()
    if BACKEND != "compiled":
        print("warning: compiled backend not importable; comparing python to itself")
    scale = 4 if args.quick else 1
    repeat = 2 if args.quick else 3
    bench_case("square (2D)", unit_square(measure_facets=(0, 2, 3)),
               64, 20000 // scale, 6, repeat)
    bench_case("cube (3D)", unit_cube(measure_facets=(0, 2, 4)),
               32, 20000 // scale, 6, repeat)


if __name__ == "__main__":
    main()
