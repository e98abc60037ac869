"""Adjoint and normal operators of the broken-ray transform.

Two adjoint routes are provided: the exact discrete transpose of the
forward operator (splat along the traced rays) and the angular-quadrature
form that backtracks each point/direction to its originating boundary jet
and interpolates the data there. The normal operator splits into a
same-segment (ballistic) part and a cross-segment (reflect) part; the
split from ``BrokenRayOperator.normal_parts`` is algebraically exact,
while ``normal_pointwise`` evaluates the same decomposition by per-point
angular quadrature as an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _core
from .billiards import TraceTolerances, trace_through_interior
from .directions import sphere_quadrature, subsphere_directions
from .errors import ConfigError, SamplingMismatchError
from .fields import ScalarGridField
from .transport import (
    BrokenRayOperator,
    Sinogram,
    evaluate_cutoff,
)

__all__ = [
    "LinearOperatorHandle",
    "adjoint_discrete",
    "adjoint_continuous",
    "normal_apply",
    "normal_parts",
    "normal_pointwise",
    "ballistic_symbol",
    "ballistic_symbol_batch",
]


@dataclass
class LinearOperatorHandle:
    """Matrix-free linear map contract with an optional adjoint."""

    apply: callable
    adjoint: callable = None
    dom_shape: tuple = None
    ran_shape: tuple = None

    def dot_test(self, rng, trials=5):
        """Max relative defect of <Ax, y> = <x, A^T y> on random probes."""
        worst = 0.0
        for _ in range(trials):
            x = rng.standard_normal(self.dom_shape)
            y = rng.standard_normal(self.ran_shape)
            ax = self.apply(x)
            aty = self.adjoint(y)
            num = abs(np.vdot(ax, y) - np.vdot(x, aty))
            den = np.linalg.norm(ax) * np.linalg.norm(y) + 1e-300
            worst = max(worst, num / den)
        return worst


def adjoint_discrete(op: BrokenRayOperator, g) -> ScalarGridField:
    """Exact transpose of the discretized forward operator applied to data g."""
    if isinstance(g, Sinogram):
        return op.adjoint(g)
    return op.adjoint_values(np.asarray(g, dtype=float))


def normal_apply(op: BrokenRayOperator, f: ScalarGridField) -> ScalarGridField:
    return op.normal(f)


def normal_parts(op: BrokenRayOperator, f: ScalarGridField):
    return op.normal_parts(f)


def _flatten_rows(raw, rows):
    """Flatten the segments of selected rows of a raw trace output."""
    status, nseg, s0, sd, sl, hf = raw
    ns = nseg[rows].astype(np.int64)
    off = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(ns, out=off[1:])
    keep = np.arange(s0.shape[1])[None, :] < ns[:, None]
    return (np.ascontiguousarray(s0[rows][keep]), np.ascontiguousarray(sd[rows][keep]),
            np.ascontiguousarray(sl[rows][keep]), off)


def _path_sigma(sigma, seg_start, seg_dir, seg_len, off, reverse=False, step=None):
    """Attenuation integral along each flattened path (sum over its segments)."""
    n_paths = len(off) - 1
    if sigma is None or len(seg_len) == 0:
        return np.zeros(n_paths)
    if isinstance(sigma, ScalarGridField):
        step = step or 0.5 * float(np.min(sigma.spacing))
        m = np.maximum(np.ceil(seg_len / step - 1e-12).astype(np.int64), 1)
        soff = np.zeros(len(m) + 1, dtype=np.int64)
        np.cumsum(m, out=soff[1:])
        gargs = (sigma.origin, sigma.spacing, np.asarray(sigma.dims, dtype=np.int64))
        seg_sig = _core.project_midpoint(*gargs, np.ascontiguousarray(sigma.values).ravel(),
                                         seg_start, seg_dir, seg_len, m, soff, None)
    else:
        step = step or 1e-2
        m = np.maximum(np.ceil(seg_len / step - 1e-12).astype(np.int64), 1)
        soff = np.zeros(len(m) + 1, dtype=np.int64)
        np.cumsum(m, out=soff[1:])
        pts, dt, seg_id = _core.kernels_py._sample_points(seg_start, seg_dir, seg_len, m, soff)
        d = seg_dir[seg_id]
        vals = np.asarray(sigma(pts, -d if reverse else d), dtype=float)
        seg_sig = np.bincount(seg_id, weights=vals * dt, minlength=len(m))
    path_id = np.repeat(np.arange(n_paths), np.diff(off))
    return np.bincount(path_id, weights=seg_sig, minlength=n_paths)


def _interior_jet_weights(domain, sigma, alpha, X, TH, n_max, tol):
    """Backtrace interior states to their boundary jets.

    Returns (valid, alpha at jet, attenuation factor jet->x, jets) for each
    (point, direction) row; invalid rows carry zeros.
    """
    it = trace_through_interior(domain, X, TH, n_max, tol)
    R = len(it.valid)
    alpha_v = np.zeros(R)
    w = np.zeros(R)
    rows = np.nonzero(it.valid)[0]
    if len(rows):
        alpha_v[rows] = evaluate_cutoff(alpha, it.jet_x[rows], it.jet_theta[rows])
        s0, sd, sl, off = _flatten_rows(it.back, rows)
        w[rows] = np.exp(-_path_sigma(sigma, s0, sd, sl, off, reverse=True))
    return it, alpha_v, w


def adjoint_continuous(domain, sigma, alpha, g: Sinogram, grid: ScalarGridField,
                       n_dir=64, n_max=8, tol: TraceTolerances = None,
                       chunk=8192) -> ScalarGridField:
    """Angular-quadrature adjoint: backtrack (x, theta) to its originating jet,
    pick up the data there, weight by the accumulated attenuation.

    Converges to the same field as the discrete transpose as the data
    sampling and the angular quadrature refine jointly.
    """
    if g.sampling is None:
        raise SamplingMismatchError("sinogram carries no sampling structure")
    pts = grid.cell_centers()
    inside = domain.contains(pts - 0.0, tol=-domain.boundary_tol)
    dirs, wq = sphere_quadrature(domain.dim, n_dir)
    out = np.zeros(len(pts))
    idx = np.nonzero(inside)[0]
    per = max(1, chunk // len(dirs))
    for i0 in range(0, len(idx), per):
        sel = idx[i0:i0 + per]
        X = np.repeat(pts[sel], len(dirs), axis=0)
        TH = np.tile(dirs, (len(sel), 1))
        it, alpha_v, w = _interior_jet_weights(domain, sigma, alpha, X, TH, n_max, tol)
        gv = np.zeros(len(X))
        rows = np.nonzero(it.valid)[0]
        if len(rows):
            gv[rows] = g.sampling.interpolate(g.values, it.jet_x[rows],
                                              it.jet_theta[rows], it.jet_facet[rows])
        contrib = (alpha_v * gv * w) * np.tile(wq, len(sel))
        out[sel] += contrib.reshape(len(sel), len(dirs)).sum(axis=1)
    return grid.like(out.reshape(grid.dims))


def normal_pointwise(domain, sigma, alpha, f: ScalarGridField, grid: ScalarGridField,
                     n_dir=64, n_max=8, tol: TraceTolerances = None,
                     chunk=8192):
    """Per-point angular-quadrature normal operator, split into
    (ballistic, reflect) by matching or crossing the segment containing x.

    Reference route for cross-checking the splat-based ``normal_parts``; the
    two agree to quadrature accuracy.
    """
    pts = grid.cell_centers()
    inside = domain.contains(pts, tol=-domain.boundary_tol)
    dirs, wq = sphere_quadrature(domain.dim, n_dir)
    bal = np.zeros(len(pts))
    ref = np.zeros(len(pts))
    fargs = (f.origin, f.spacing, np.asarray(f.dims, dtype=np.int64))
    fflat = np.ascontiguousarray(f.values).ravel()
    step = 0.5 * float(np.min(f.spacing))
    idx = np.nonzero(inside)[0]
    per = max(1, chunk // len(dirs))
    for i0 in range(0, len(idx), per):
        sel = idx[i0:i0 + per]
        X = np.repeat(pts[sel], len(dirs), axis=0)
        TH = np.tile(dirs, (len(sel), 1))
        it, alpha_v, w_at_x = _interior_jet_weights(domain, sigma, alpha, X, TH, n_max, tol)
        rows = np.nonzero(it.valid & (alpha_v > 0))[0]
        if not len(rows):
            continue
        # full-ray segments: backward part reversed, then forward part
        b0, bd, bl, boff = _flatten_rows(it.back, rows)
        f0, fd, fl, foff = _flatten_rows(it.fwd, rows)
        nb, nf = np.diff(boff), np.diff(foff)
        total = nb + nf
        off = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum(total, out=off[1:])
        S = int(off[-1])
        s_start = np.empty((S, domain.dim))
        s_dir = np.empty((S, domain.dim))
        s_len = np.empty(S)
        chord_idx = np.empty(len(rows), dtype=np.int64)
        for r in range(len(rows)):
            a = off[r]
            # backward segments reversed in order and orientation
            for j in range(nb[r]):
                src = boff[r] + nb[r] - 1 - j
                end = b0[src] + bl[src] * bd[src]
                s_start[a + j] = end
                s_dir[a + j] = -bd[src]
                s_len[a + j] = bl[src]
            for j in range(nf[r]):
                src = foff[r] + j
                s_start[a + nb[r] + j] = f0[src]
                s_dir[a + nb[r] + j] = fd[src]
                s_len[a + nb[r] + j] = fl[src]
            chord_idx[r] = a + nb[r] - 1  # segment arriving at x
        m = np.maximum(np.ceil(s_len / step - 1e-12).astype(np.int64), 1)
        soff = np.zeros(len(m) + 1, dtype=np.int64)
        np.cumsum(m, out=soff[1:])
        if sigma is None:
            att = None
            prefix = np.zeros(S)
        elif isinstance(sigma, ScalarGridField):
            sargs = (sigma.origin, sigma.spacing, np.asarray(sigma.dims, dtype=np.int64),
                     np.ascontiguousarray(sigma.values).ravel())
            _, seg_sig = _core.attenuation_midpoint(*sargs, s_start, s_dir, s_len,
                                                    m, soff, np.zeros(S))
            path_id = np.repeat(np.arange(len(rows)), total)
            cs = np.concatenate([[0.0], np.cumsum(seg_sig)[:-1]])
            first = np.zeros(S, dtype=bool)
            first[off[:-1]] = True
            prefix = cs - cs[first][path_id]
            att, _ = _core.attenuation_midpoint(*sargs, s_start, s_dir, s_len,
                                                m, soff, prefix)
        else:
            raise ConfigError("normal_pointwise supports grid or zero attenuation")
        seg_int = _core.project_midpoint(*fargs, fflat, s_start, s_dir, s_len,
                                         m, soff, att)
        path_id = np.repeat(np.arange(len(rows)), total)
        I_total = np.bincount(path_id, weights=seg_int, minlength=len(rows))
        # the chord through x is the reversed last backward segment plus the
        # first forward segment
        I_chord = seg_int[chord_idx] + seg_int[chord_idx + 1]
        fac = (alpha_v[rows] ** 2) * w_at_x[rows] * np.tile(wq, len(sel))[rows]
        pt_of_row = np.repeat(sel, len(dirs))[rows]
        np.add.at(bal, pt_of_row, fac * I_chord)
        np.add.at(ref, pt_of_row, fac * (I_total - I_chord))
    return grid.like(bal.reshape(grid.dims)), grid.like(ref.reshape(grid.dims))


def ballistic_symbol_batch(domain, sigma, alpha, X, XI, n_sub=32, n_max=8,
                           tol: TraceTolerances = None):
    """Leading symbol of the ballistic part at covectors (x, xi).

    Quadrature of ``|alpha|^2 |w|^2`` over ray directions orthogonal to xi
    (two opposite directions in 2D, a great circle in 3D), times 2*pi.
    Positive exactly where some regular ray in the cutoff support passes
    through x normally to xi.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    XI = np.atleast_2d(np.asarray(XI, dtype=float))
    out = np.zeros(len(X))
    for i in range(len(X)):
        dirs, wq = subsphere_directions(XI[i], n_sub)
        P = np.broadcast_to(X[i], dirs.shape).copy()
        it, alpha_v, w = _interior_jet_weights(domain, sigma, alpha, P, dirs, n_max, tol)
        out[i] = 2 * np.pi * float(np.sum(wq * (alpha_v ** 2) * (w ** 2) * it.valid))
    return out


def ballistic_symbol(domain, sigma, alpha, x, xi, n_sub=32, n_max=8,
                     tol: TraceTolerances = None) -> float:
    return float(ballistic_symbol_batch(domain, sigma, alpha,
                                        np.asarray(x)[None, :], np.asarray(xi)[None, :],
                                        n_sub, n_max, tol)[0])
