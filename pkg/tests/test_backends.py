"""Compiled extension and numpy fallback must agree to float reassociation."""

import numpy as np
import pytest

from brokenray._core import BACKEND, impl, kernels_py
from brokenray.billiards import TraceTolerances
from brokenray.fields import grid_for_domain
from brokenray.geometry import MaskConstraint, unit_cube, unit_square

needs_compiled = pytest.mark.skipif(BACKEND != "compiled",
                                    reason="compiled backend not built")


@pytest.fixture(scope="module")
def trace_args():
    masks = {0: [MaskConstraint.ball_outside((0, 1, 1), 0.3)]}
    dom = unit_cube(measure_facets=(0, 2, 4), masks=masks)
    rng = np.random.default_rng(3)
    X, F = dom.sample_boundary(rng, 400)
    TH = dom.sample_inward_cosine(rng, F)
    tol = TraceTolerances.for_domain(dom)
    return (dom.normals, dom.offsets, dom.labels, dom.tangent_norms,
            *dom.mask_arrays(), X, TH, 7,
            tol.graze_tol, tol.edge_margin, tol.mask_margin, dom.boundary_tol)


@pytest.fixture(scope="module")
def quad_args():
    rng = np.random.default_rng(5)
    dom = unit_square(measure_facets=(0,))
    grid = grid_for_domain(dom, 32)
    S = 300
    start = rng.uniform(0.1, 0.9, (S, 2))
    d = rng.standard_normal((S, 2))
    d /= np.linalg.norm(d, axis=1)[:, None]
    L = rng.uniform(0.02, 0.6, S)
    m = np.maximum(np.ceil(L / 0.008).astype(np.int64), 1)
    off = np.zeros(S + 1, dtype=np.int64)
    np.cumsum(m, out=off[1:])
    gargs = (grid.origin, grid.spacing, np.asarray(grid.dims, dtype=np.int64))
    vals = rng.standard_normal(int(np.prod(grid.dims)))
    sig = np.abs(rng.standard_normal(int(np.prod(grid.dims))))
    return gargs, vals, sig, start, d, L, m, off, rng


@needs_compiled
def test_trace_identical(trace_args):
    out_c = impl.trace(*trace_args)
    out_p = kernels_py.trace(*trace_args)
    for a, b in zip(out_c, out_p):
        assert np.array_equal(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


@needs_compiled
def test_exit_times_identical(trace_args):
    dom_part = trace_args[:2]
    X, TH = trace_args[7], trace_args[8]
    tol = trace_args[-1]
    t1, f1, ok1 = impl.exit_times(*dom_part, X, TH, tol)
    t2, f2, ok2 = kernels_py.exit_times(*dom_part, X, TH, tol)
    assert np.array_equal(t1, t2) and np.array_equal(f1, f2) and np.array_equal(ok1, ok2)


@needs_compiled
def test_interp_identical(quad_args):
    gargs, vals, _, start, d, L, *_ = quad_args
    rng = np.random.default_rng(9)
    pts = rng.uniform(-0.1, 1.1, (500, 2))
    for fn in ("interp_multilinear", "interp_nearest"):
        a = getattr(impl, fn)(*gargs, vals, pts)
        b = getattr(kernels_py, fn)(*gargs, vals, pts)
        assert np.allclose(a, b, rtol=0, atol=1e-14)


@needs_compiled
def test_midpoint_quadrature_equivalent(quad_args):
    gargs, vals, sig, start, d, L, m, off, rng = quad_args
    att, seg_sig = impl.attenuation_midpoint(*gargs, sig, start, d, L, m, off,
                                             np.zeros(len(L)))
    att2, seg_sig2 = kernels_py.attenuation_midpoint(*gargs, sig, start, d, L, m, off,
                                                     np.zeros(len(L)))
    assert np.allclose(att, att2, rtol=1e-13)
    assert np.allclose(seg_sig, seg_sig2, rtol=1e-12, atol=1e-15)
    p1 = impl.project_midpoint(*gargs, vals, start, d, L, m, off, att)
    p2 = kernels_py.project_midpoint(*gargs, vals, start, d, L, m, off, att)
    assert np.allclose(p1, p2, rtol=1e-12, atol=1e-14)
    coef = rng.standard_normal(len(L))
    o1 = np.zeros(len(vals))
    o2 = np.zeros(len(vals))
    impl.backproject_midpoint(*gargs, start, d, L, m, off, att, coef, o1)
    kernels_py.backproject_midpoint(*gargs, start, d, L, m, off, att, coef, o2)
    assert np.allclose(o1, o2, rtol=1e-12, atol=1e-13)


@needs_compiled
def test_siddon_equivalent(quad_args):
    gargs, vals, sig, start, d, L, m, off, rng = quad_args
    s1 = impl.seg_sigma_siddon(*gargs, sig, start, d, L)
    s2 = kernels_py.seg_sigma_siddon(*gargs, sig, start, d, L)
    assert np.allclose(s1, s2, rtol=1e-12, atol=1e-15)
    prefix = rng.uniform(0, 0.5, len(L))
    p1 = impl.project_siddon(*gargs, vals, start, d, L, sig, prefix)
    p2 = kernels_py.project_siddon(*gargs, vals, start, d, L, sig, prefix)
    assert np.allclose(p1, p2, rtol=1e-12, atol=1e-14)
    coef = rng.standard_normal(len(L))
    o1 = np.zeros(len(vals))
    o2 = np.zeros(len(vals))
    impl.backproject_siddon(*gargs, start, d, L, sig, prefix, coef, o1)
    kernels_py.backproject_siddon(*gargs, start, d, L, sig, prefix, coef, o2)
    assert np.allclose(o1, o2, rtol=1e-12, atol=1e-13)


@needs_compiled
def test_operator_end_to_end_equivalent(square3, monkeypatch, rng):
    """Full forward/adjoint through both backends on the same plan."""
    from brokenray import _core, transport

    grid = grid_for_domain(square3, 24)
    sig = grid.like(0.4 * np.ones(grid.dims))
    op = transport.BrokenRayOperator(square3, grid, sigma=sig,
                                     sampling=transport.SamplingSpec(16, 16), n_max=4)
    f = grid.like(rng.standard_normal(grid.dims))
    fwd_c = op.forward_values(f)
    adj_c = op.adjoint_values(fwd_c).values

    saved = {}
    names = ["trace", "project_midpoint", "backproject_midpoint",
             "attenuation_midpoint", "project_siddon", "backproject_siddon",
             "seg_sigma_siddon", "exit_times", "interp_multilinear", "interp_nearest"]
    for name in names:
        saved[name] = getattr(_core, name)
        monkeypatch.setattr(_core, name, getattr(kernels_py, name))
    try:
        op2 = transport.BrokenRayOperator(square3, grid, sigma=sig,
                                          sampling=transport.SamplingSpec(16, 16), n_max=4)
        fwd_p = op2.forward_values(f)
        adj_p = op2.adjoint_values(fwd_p).values
    finally:
        for name, fn in saved.items():
            monkeypatch.setattr(_core, name, fn)
    # cumsum (pairwise) vs sequential accumulation: reassociation only
    assert np.allclose(fwd_c, fwd_p, rtol=1e-11, atol=1e-12 * np.abs(fwd_c).max())
    assert np.allclose(adj_c, adj_p, rtol=1e-10, atol=1e-11 * np.abs(adj_c).max())


def test_threads_do_not_change_results(square3, rng):
    from brokenray.transport import BrokenRayOperator, SamplingSpec

    grid = grid_for_domain(square3, 32)
    f = grid.like(rng.standard_normal(grid.dims))
    outs = []
    for threads in (1, 4):
        op = BrokenRayOperator(square3, grid, sampling=SamplingSpec(32, 32),
                               n_max=5, threads=threads)
        op._CHUNK = 1024  # force several chunks
        v = op.forward_values(f)
        a = op.adjoint_values(v).values
        outs.append((v, a))
    assert np.array_equal(outs[0][0], outs[1][0])
    assert np.array_equal(outs[0][1], outs[1][1])
