# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: ray tracing, segment quadrature, splatting.

Mirrors ``kernels_py`` with identical numerical semantics (same formulas and
per-segment accumulation order); only reduction reassociation may differ.
Dimensions 2 and 3 are compiled; other ranks delegate to the fallback.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, exp, fabs, floor, sqrt

cnp.import_array()

from . import kernels_py

STATUS_MEASURED = kernels_py.STATUS_MEASURED
STATUS_TRAPPED = kernels_py.STATUS_TRAPPED
STATUS_EDGE = kernels_py.STATUS_EDGE
STATUS_NEAR_MASK = kernels_py.STATUS_NEAR_MASK
STATUS_UNMEASURED = kernels_py.STATUS_UNMEASURED
STATUS_NO_EXIT = kernels_py.STATUS_NO_EXIT

cdef signed char ST_MEASURED = kernels_py.STATUS_MEASURED
cdef signed char ST_TRAPPED = kernels_py.STATUS_TRAPPED
cdef signed char ST_EDGE = kernels_py.STATUS_EDGE
cdef signed char ST_NEAR_MASK = kernels_py.STATUS_NEAR_MASK
cdef signed char ST_UNMEASURED = kernels_py.STATUS_UNMEASURED
cdef signed char ST_NO_EXIT = kernels_py.STATUS_NO_EXIT

DEF MAXDIM = 3
cdef double INF = float("inf")
cdef double PARALLEL_TOL = 1e-9


# ---------------------------------------------------------------------------
# tracing
# ---------------------------------------------------------------------------

cdef inline int _first_exit(const double[:, ::1] normals, const double[:] offsets,
                            double* x, double* th, int n, int F,
                            double boundary_tol, double* t_out) noexcept nogil:
    """Returns winning facet or -1 (outside / no crossing)."""
    cdef int f, a, best = -1
    cdef double den, num, t, tbest = INF
    cdef double worst_margin = INF
    for f in range(F):
        den = 0.0
        num = offsets[f]
        for a in range(n):
            den += th[a] * normals[f, a]
            num -= x[a] * normals[f, a]
        if num < worst_margin:
            worst_margin = num
        if den > 0.0:
            t = num / den
            if t >= -boundary_tol and t < tbest:
                tbest = t
                best = f
    if worst_margin < -boundary_tol or best < 0:
        return -1
    t_out[0] = tbest if tbest > 0.0 else 0.0
    return best


def exit_times(normals, offsets, X, TH, double boundary_tol):
    cdef double[:, ::1] N = np.ascontiguousarray(normals, dtype=np.float64)
    cdef double[:] O = np.ascontiguousarray(offsets, dtype=np.float64)
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    TH = np.ascontiguousarray(np.atleast_2d(TH), dtype=np.float64)
    cdef int n = X.shape[1]
    if n > MAXDIM:
        return kernels_py.exit_times(np.asarray(N), np.asarray(O), X, TH, boundary_tol)
    cdef double[:, ::1] Xv = X
    cdef double[:, ::1] Tv = TH
    cdef Py_ssize_t R = Xv.shape[0]
    cdef int F = N.shape[0]
    t_arr = np.zeros(R)
    f_arr = np.zeros(R, dtype=np.int32)
    ok_arr = np.zeros(R, dtype=bool)
    cdef double[:] t = t_arr
    cdef int[:] fc = f_arr
    cdef cnp.uint8_t[:] ok = ok_arr.view(np.uint8)
    cdef Py_ssize_t r
    cdef int best, a
    cdef double tb
    cdef double xx[MAXDIM]
    cdef double tt[MAXDIM]
    with nogil:
        for r in range(R):
            for a in range(n):
                xx[a] = Xv[r, a]
                tt[a] = Tv[r, a]
            best = _first_exit(N, O, xx, tt, n, F, boundary_tol, &tb)
            if best >= 0:
                t[r] = tb
                fc[r] = best
                ok[r] = 1
    return t_arr, f_arr, ok_arr


def trace(normals, offsets, labels, tangent_norms,
          mask_offs, mask_kinds, mask_params,
          X, TH, int n_max, double graze_tol, double edge_margin,
          double mask_margin, double boundary_tol):
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    TH = np.ascontiguousarray(np.atleast_2d(TH), dtype=np.float64)
    cdef int n = X.shape[1]
    if n > MAXDIM:
        return kernels_py.trace(normals, offsets, labels, tangent_norms,
                                mask_offs, mask_kinds, mask_params,
                                X, TH, n_max, graze_tol, edge_margin,
                                mask_margin, boundary_tol)
    cdef double[:, ::1] N = np.ascontiguousarray(normals, dtype=np.float64)
    cdef double[:] O = np.ascontiguousarray(offsets, dtype=np.float64)
    cdef signed char[:] L = np.ascontiguousarray(labels, dtype=np.int8)
    cdef double[:, ::1] TN = np.ascontiguousarray(tangent_norms, dtype=np.float64)
    cdef int[:] moffs = np.ascontiguousarray(mask_offs, dtype=np.int32)
    cdef signed char[:] mkind = np.ascontiguousarray(mask_kinds, dtype=np.int8)
    mp = np.ascontiguousarray(mask_params, dtype=np.float64)
    if mp.size == 0:
        mp = np.zeros((1, n + 1))
    cdef double[:, ::1] mpar = mp
    cdef double[:, ::1] Xv = X
    cdef double[:, ::1] Tv = TH

    cdef Py_ssize_t R = Xv.shape[0]
    cdef int F = N.shape[0]
    cdef int S = n_max + 1
    status_arr = np.full(R, -1, dtype=np.int8)
    nseg_arr = np.zeros(R, dtype=np.int32)
    s0_arr = np.zeros((R, S, n))
    sd_arr = np.zeros((R, S, n))
    sl_arr = np.zeros((R, S))
    hf_arr = np.full((R, S), -1, dtype=np.int32)
    cdef signed char[:] status = status_arr
    cdef int[:] nseg = nseg_arr
    cdef double[:, :, ::1] s0 = s0_arr
    cdef double[:, :, ::1] sd = sd_arr
    cdef double[:, ::1] sl = sl_arr
    cdef int[:, ::1] hf = hf_arr

    cdef Py_ssize_t r
    cdef int s, a, f, best, c, kind
    cdef double tb, cosang, d_rel, dd, m_g, margin, d_mask, dist, nrm
    cdef bint in_set
    cdef double xx[MAXDIM]
    cdef double tt[MAXDIM]
    cdef double hit[MAXDIM]
    with nogil:
        for r in range(R):
            for a in range(n):
                xx[a] = Xv[r, a]
                tt[a] = Tv[r, a]
            for s in range(S):
                best = _first_exit(N, O, xx, tt, n, F, boundary_tol, &tb)
                if best < 0:
                    status[r] = ST_NO_EXIT
                    nseg[r] = s
                    break
                for a in range(n):
                    s0[r, s, a] = xx[a]
                    sd[r, s, a] = tt[a]
                    hit[a] = xx[a] + tb * tt[a]
                sl[r, s] = tb
                hf[r, s] = best
                nseg[r] = s + 1

                cosang = 0.0
                for a in range(n):
                    cosang += tt[a] * N[best, a]
                # in-plane distance to the facet's relative boundary
                d_rel = INF
                for f in range(F):
                    if TN[best, f] > PARALLEL_TOL:
                        m_g = O[f]
                        for a in range(n):
                            m_g -= hit[a] * N[f, a]
                        dd = m_g / TN[best, f]
                        if dd < d_rel:
                            d_rel = dd
                if cosang < graze_tol or d_rel < edge_margin:
                    status[r] = ST_EDGE
                    break
                if L[best] == 1:
                    in_set = 1
                    d_mask = d_rel
                    for c in range(moffs[best], moffs[best + 1]):
                        kind = mkind[c]
                        if kind == 0:
                            margin = mpar[c, n]
                            for a in range(n):
                                margin -= hit[a] * mpar[c, a]
                        else:
                            nrm = 0.0
                            for a in range(n):
                                nrm += (hit[a] - mpar[c, a]) ** 2
                            nrm = sqrt(nrm)
                            margin = mpar[c, n] - nrm if kind == 1 else nrm - mpar[c, n]
                        if margin < 0.0:
                            in_set = 0
                        if fabs(margin) < d_mask:
                            d_mask = fabs(margin)
                    if d_mask < mask_margin:
                        status[r] = ST_NEAR_MASK
                    elif in_set:
                        status[r] = ST_MEASURED
                    else:
                        status[r] = ST_UNMEASURED
                    break
                if s == n_max:
                    status[r] = ST_TRAPPED
                    break
                # reflect and continue
                cosang = 0.0
                for a in range(n):
                    cosang += tt[a] * N[best, a]
                nrm = 0.0
                for a in range(n):
                    tt[a] = tt[a] - 2.0 * cosang * N[best, a]
                    nrm += tt[a] * tt[a]
                nrm = sqrt(nrm)
                for a in range(n):
                    tt[a] /= nrm
                    xx[a] = hit[a]
    return status_arr, nseg_arr, s0_arr, sd_arr, sl_arr, hf_arr


# ---------------------------------------------------------------------------
# interpolation helpers
# ---------------------------------------------------------------------------

cdef inline double _interp_ml(const double[:] values, const double* origin,
                              const double* spacing, const long* dims,
                              const long* strides, int n, double* p) noexcept nogil:
    cdef int a, corner, bit
    cdef double u, fr, w, out = 0.0
    cdef long i0
    cdef long base[MAXDIM]
    cdef double frac[MAXDIM]
    cdef double rel
    for a in range(n):
        rel = (p[a] - origin[a]) / spacing[a]
        if rel < 0.0 or rel > dims[a]:
            return 0.0
    for a in range(n):
        u = (p[a] - origin[a]) / spacing[a] - 0.5
        i0 = <long>floor(u)
        fr = u - i0
        if i0 < 0:
            i0 = 0
            fr = 0.0
        elif i0 > dims[a] - 2:
            i0 = dims[a] - 2
            fr = 1.0
        base[a] = i0
        frac[a] = fr
    for corner in range(1 << n):
        w = 1.0
        i0 = 0
        for a in range(n):
            bit = (corner >> a) & 1
            w *= frac[a] if bit else 1.0 - frac[a]
            i0 += (base[a] + bit) * strides[a]
        out += w * values[i0]
    return out


cdef inline void _splat_ml(double[:] out, const double* origin,
                           const double* spacing, const long* dims,
                           const long* strides, int n, double* p,
                           double c) noexcept nogil:
    cdef int a, corner, bit
    cdef double u, fr, w
    cdef long i0
    cdef long base[MAXDIM]
    cdef double frac[MAXDIM]
    cdef double rel
    for a in range(n):
        rel = (p[a] - origin[a]) / spacing[a]
        if rel < 0.0 or rel > dims[a]:
            return
    for a in range(n):
        u = (p[a] - origin[a]) / spacing[a] - 0.5
        i0 = <long>floor(u)
        fr = u - i0
        if i0 < 0:
            i0 = 0
            fr = 0.0
        elif i0 > dims[a] - 2:
            i0 = dims[a] - 2
            fr = 1.0
        base[a] = i0
        frac[a] = fr
    for corner in range(1 << n):
        w = c
        i0 = 0
        for a in range(n):
            bit = (corner >> a) & 1
            w *= frac[a] if bit else 1.0 - frac[a]
            i0 += (base[a] + bit) * strides[a]
        out[i0] += w


cdef inline double _interp_nn(const double[:] values, const double* origin,
                              const double* spacing, const long* dims,
                              const long* strides, int n, double* p) noexcept nogil:
    cdef int a
    cdef long i, flat = 0
    cdef double rel
    for a in range(n):
        rel = (p[a] - origin[a]) / spacing[a]
        if rel < 0.0 or rel > dims[a]:
            return 0.0
        i = <long>floor(rel)
        if i < 0:
            i = 0
        elif i > dims[a] - 1:
            i = dims[a] - 1
        flat += i * strides[a]
    return values[flat]


cdef class _Grid:
    cdef double origin[MAXDIM]
    cdef double spacing[MAXDIM]
    cdef long dims[MAXDIM]
    cdef long strides[MAXDIM]
    cdef int n


cdef _Grid _make_grid(origin, spacing, dims):
    cdef _Grid g = _Grid()
    o = np.ascontiguousarray(origin, dtype=np.float64)
    s = np.ascontiguousarray(spacing, dtype=np.float64)
    d = np.ascontiguousarray(dims, dtype=np.int64)
    g.n = len(d)
    cdef int a
    for a in range(g.n):
        g.origin[a] = o[a]
        g.spacing[a] = s[a]
        g.dims[a] = d[a]
    g.strides[g.n - 1] = 1
    for a in range(g.n - 2, -1, -1):
        g.strides[a] = g.strides[a + 1] * g.dims[a + 1]
    return g


def interp_multilinear(origin, spacing, dims, values, pts):
    pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
    if pts.shape[1] > MAXDIM:
        return kernels_py.interp_multilinear(origin, spacing, dims, values, pts)
    cdef _Grid g = _make_grid(origin, spacing, dims)
    cdef double[:] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef double[:, ::1] P = pts
    out_arr = np.zeros(P.shape[0])
    cdef double[:] out = out_arr
    cdef Py_ssize_t i
    cdef int a
    cdef double p[MAXDIM]
    with nogil:
        for i in range(P.shape[0]):
            for a in range(g.n):
                p[a] = P[i, a]
            out[i] = _interp_ml(v, g.origin, g.spacing, g.dims, g.strides, g.n, p)
    return out_arr


def interp_nearest(origin, spacing, dims, values, pts):
    pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
    if pts.shape[1] > MAXDIM:
        return kernels_py.interp_nearest(origin, spacing, dims, values, pts)
    cdef _Grid g = _make_grid(origin, spacing, dims)
    cdef double[:] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef double[:, ::1] P = pts
    out_arr = np.zeros(P.shape[0])
    cdef double[:] out = out_arr
    cdef Py_ssize_t i
    cdef int a
    cdef double p[MAXDIM]
    with nogil:
        for i in range(P.shape[0]):
            for a in range(g.n):
                p[a] = P[i, a]
            out[i] = _interp_nn(v, g.origin, g.spacing, g.dims, g.strides, g.n, p)
    return out_arr


# ---------------------------------------------------------------------------
# midpoint quadrature
# ---------------------------------------------------------------------------

def project_midpoint(origin, spacing, dims, values,
                     seg_start, seg_dir, seg_len, m, samp_off, att):
    cdef int n = np.atleast_2d(seg_start).shape[1]
    if n > MAXDIM:
        return kernels_py.project_midpoint(origin, spacing, dims, values,
                                           seg_start, seg_dir, seg_len, m, samp_off, att)
    cdef _Grid g = _make_grid(origin, spacing, dims)
    cdef double[:] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef double[:, ::1] S0 = np.ascontiguousarray(seg_start, dtype=np.float64)
    cdef double[:, ::1] SD = np.ascontiguousarray(seg_dir, dtype=np.float64)
    cdef double[:] SL = np.ascontiguousarray(seg_len, dtype=np.float64)
    cdef long[:] M = np.ascontiguousarray(m, dtype=np.int64)
    cdef long[:] OFF = np.ascontiguousarray(samp_off, dtype=np.int64)
    cdef bint has_att = att is not None
    cdef double[:] A = (np.ascontiguousarray(att, dtype=np.float64)
                        if has_att else np.zeros(1))
    out_arr = np.zeros(S0.shape[0])
    cdef double[:] out = out_arr
    cdef Py_ssize_t s, k
    cdef int a
    cdef double delta, t, acc, w, val
    cdef double p[MAXDIM]
    with nogil:
        for s in range(S0.shape[0]):
            delta = SL[s] / M[s]
            acc = 0.0
            for k in range(M[s]):
                t = (k + 0.5) * delta
                for a in range(g.n):
                    p[a] = S0[s, a] + t * SD[s, a]
                val = _interp_ml(v, g.origin, g.spacing, g.dims, g.strides, g.n, p)
                w = delta * A[OFF[s] + k] if has_att else delta
                acc += val * w
            out[s] = acc
    return out_arr


def backproject_midpoint(origin, spacing, dims,
                         seg_start, seg_dir, seg_len, m, samp_off, att,
                         coef, out_values):
    cdef int n = np.atleast_2d(seg_start).shape[1]
    if n > MAXDIM:
        return kernels_py.backproject_midpoint(origin, spacing, dims,
                                               seg_start, seg_dir, seg_len,
                                               m, samp_off, att, coef, out_values)
    cdef _Grid g = _make_grid(origin, spacing, dims)
    cdef double[:, ::1] S0 = np.ascontiguousarray(seg_start, dtype=np.float64)
    cdef double[:, ::1] SD = np.ascontiguousarray(seg_dir, dtype=np.float64)
    cdef double[:] SL = np.ascontiguousarray(seg_len, dtype=np.float64)
    cdef long[:] M = np.ascontiguousarray(m, dtype=np.int64)
    cdef long[:] OFF = np.ascontiguousarray(samp_off, dtype=np.int64)
    cdef double[:] C = np.ascontiguousarray(coef, dtype=np.float64)
    cdef bint has_att = att is not None
    cdef double[:] A = (np.ascontiguousarray(att, dtype=np.float64)
                        if has_att else np.zeros(1))
    cdef double[:] out = out_values
    cdef Py_ssize_t s, k
    cdef int a
    cdef double delta, t, c
    cdef double p[MAXDIM]
    with nogil:
        for s in range(S0.shape[0]):
            delta = SL[s] / M[s]
            for k in range(M[s]):
                t = (k + 0.5) * delta
                for a in range(g.n):
                    p[a] = S0[s, a] + t * SD[s, a]
                c = C[s] * delta
                if has_att:
                    c = c * A[OFF[s] + k]
                _splat_ml(out, g.origin, g.spacing, g.dims, g.strides, g.n, p, c)


def attenuation_midpoint(s_origin, s_spacing, s_dims, s_values,
                         seg_start, seg_dir, seg_len, m, samp_off, prefix):
    cdef int n = np.atleast_2d(seg_start).shape[1]
    if n > MAXDIM:
        return kernels_py.attenuation_midpoint(s_origin, s_spacing, s_dims, s_values,
                                               seg_start, seg_dir, seg_len, m,
                                               samp_off, prefix)
    cdef _Grid g = _make_grid(s_origin, s_spacing, s_dims)
    cdef double[:] v = np.ascontiguousarray(s_values, dtype=np.float64)
    cdef double[:, ::1] S0 = np.ascontiguousarray(seg_start, dtype=np.float64)
    cdef double[:, ::1] SD = np.ascontiguousarray(seg_dir, dtype=np.float64)
    cdef double[:] SL = np.ascontiguousarray(seg_len, dtype=np.float64)
    cdef long[:] M = np.ascontiguousarray(m, dtype=np.int64)
    cdef long[:] OFF = np.ascontiguousarray(samp_off, dtype=np.int64)
    cdef double[:] PRE = np.ascontiguousarray(prefix, dtype=np.float64)
    off_arr = np.asarray(samp_off)
    att_arr = np.zeros(int(off_arr[off_arr.shape[0] - 1]))
    sig_arr = np.zeros(S0.shape[0])
    cdef double[:] att = att_arr
    cdef double[:] sig = sig_arr
    cdef Py_ssize_t s, k
    cdef int a
    cdef double delta, t, sd_k, running
    cdef double p[MAXDIM]
    with nogil:
        for s in range(S0.shape[0]):
            delta = SL[s] / M[s]
            running = 0.0
            for k in range(M[s]):
                t = (k + 0.5) * delta
                for a in range(g.n):
                    p[a] = S0[s, a] + t * SD[s, a]
                sd_k = delta * _interp_ml(v, g.origin, g.spacing, g.dims,
                                          g.strides, g.n, p)
                att[OFF[s] + k] = exp(-(PRE[s] + running + 0.5 * sd_k))
                running += sd_k
            sig[s] = running
    return att_arr, sig_arr


# ---------------------------------------------------------------------------
# Siddon traversal (nearest mode)
# ---------------------------------------------------------------------------

cdef inline long _voxel_at(const double* origin, const double* spacing,
                           const long* dims, const long* strides, int n,
                           double* p) noexcept nogil:
    """Flat voxel index of a point, or -1 outside the grid box."""
    cdef int a
    cdef long i, flat = 0
    cdef double rel
    for a in range(n):
        rel = (p[a] - origin[a]) / spacing[a]
        if rel < 0.0 or rel > dims[a]:
            return -1
        i = <long>floor(rel)
        if i < 0:
            i = 0
        elif i > dims[a] - 1:
            i = dims[a] - 1
        flat += i * strides[a]
    return flat


cdef int _siddon_crossings(const double* origin, const double* spacing,
                           const long* dims, int n, double* p0, double* d,
                           double L, double* ts, int cap) noexcept nogil:
    """Sorted crossing parameters in [0, L] including endpoints; returns count."""
    cdef int a, cnt = 2, k, i, j
    cdef double t_lo, t_hi, step, t0, t1, t, key
    ts[0] = 0.0
    ts[1] = L
    for a in range(n):
        if d[a] == 0.0:
            continue
        t_lo = (origin[a] - p0[a]) / d[a]
        t_hi = (origin[a] + dims[a] * spacing[a] - p0[a]) / d[a]
        step = spacing[a] / fabs(d[a])
        if t_lo < t_hi:
            t0 = t_lo
            t1 = t_hi
        else:
            t0 = t_hi
            t1 = t_lo
        if t0 < 0.0:
            k = <int>ceil((0.0 - t0) / step - 1e-12)
        else:
            k = 0
        t = t0 + k * step
        while t <= (t1 if t1 < L else L) + 1e-15:
            if t > 0.0 and cnt < cap:
                ts[cnt] = t
                cnt += 1
            t += step
    # insertion sort (small counts)
    for i in range(1, cnt):
        key = ts[i]
        j = i - 1
        while j >= 0 and ts[j] > key:
            ts[j + 1] = ts[j]
            j -= 1
        ts[j + 1] = key
    return cnt


def _siddon_cap(dims):
    return int(2 + np.sum(np.asarray(dims) + 1) + 8)


def seg_sigma_siddon(origin, spacing, dims, s_values, seg_start, seg_dir, seg_len):
    cdef int n = np.atleast_2d(seg_start).shape[1]
    if n > MAXDIM:
        return kernels_py.seg_sigma_siddon(origin, spacing, dims, s_values,
                                           seg_start, seg_dir, seg_len)
    cdef _Grid g = _make_grid(origin, spacing, dims)
    cdef double[:] v = np.ascontiguousarray(s_values, dtype=np.float64)
    cdef double[:, ::1] S0 = np.ascontiguousarray(seg_start, dtype=np.float64)
    cdef double[:, ::1] SD = np.ascontiguousarray(seg_dir, dtype=np.float64)
    cdef double[:] SL = np.ascontiguousarray(seg_len, dtype=np.float64)
    out_arr = np.zeros(S0.shape[0])
    cdef double[:] out = out_arr
    cdef int cap = _siddon_cap(dims)
    ts_buf = np.zeros(cap)
    cdef double[:] ts = ts_buf
    cdef Py_ssize_t s
    cdef int cnt, i, a
    cdef long flat
    cdef double acc, ln
    cdef double p0[MAXDIM]
    cdef double dd[MAXDIM]
    cdef double mid[MAXDIM]
    with nogil:
        for s in range(S0.shape[0]):
            for a in range(g.n):
                p0[a] = S0[s, a]
                dd[a] = SD[s, a]
            cnt = _siddon_crossings(g.origin, g.spacing, g.dims, g.n,
                                    p0, dd, SL[s], &ts[0], cap)
            acc = 0.0
            for i in range(cnt - 1):
                ln = ts[i + 1] - ts[i]
                if ln <= 0.0:
                    continue
                for a in range(g.n):
                    mid[a] = p0[a] + 0.5 * (ts[i] + ts[i + 1]) * dd[a]
                flat = _voxel_at(g.origin, g.spacing, g.dims, g.strides, g.n, mid)
                if flat >= 0:
                    acc += ln * v[flat]
            out[s] = acc
    return out_arr


def project_siddon(origin, spacing, dims, values,
                   seg_start, seg_dir, seg_len, s_values, prefix):
    cdef int n = np.atleast_2d(seg_start).shape[1]
    if n > MAXDIM:
        return kernels_py.project_siddon(origin, spacing, dims, values,
                                         seg_start, seg_dir, seg_len, s_values, prefix)
    cdef _Grid g = _make_grid(origin, spacing, dims)
    cdef double[:] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef bint has_sig = s_values is not None
    cdef double[:] sv = (np.ascontiguousarray(s_values, dtype=np.float64)
                         if has_sig else np.zeros(1))
    cdef double[:] PRE = (np.ascontiguousarray(prefix, dtype=np.float64)
                          if prefix is not None else np.zeros(np.atleast_2d(seg_start).shape[0]))
    cdef double[:, ::1] S0 = np.ascontiguousarray(seg_start, dtype=np.float64)
    cdef double[:, ::1] SD = np.ascontiguousarray(seg_dir, dtype=np.float64)
    cdef double[:] SL = np.ascontiguousarray(seg_len, dtype=np.float64)
    out_arr = np.zeros(S0.shape[0])
    cdef double[:] out = out_arr
    cdef int cap = _siddon_cap(dims)
    ts_buf = np.zeros(cap)
    cdef double[:] ts = ts_buf
    cdef Py_ssize_t s
    cdef int cnt, i, a
    cdef long flat
    cdef double acc, ln, sd_k, running, att
    cdef double p0[MAXDIM]
    cdef double dd[MAXDIM]
    cdef double mid[MAXDIM]
    with nogil:
        for s in range(S0.shape[0]):
            for a in range(g.n):
                p0[a] = S0[s, a]
                dd[a] = SD[s, a]
            cnt = _siddon_crossings(g.origin, g.spacing, g.dims, g.n,
                                    p0, dd, SL[s], &ts[0], cap)
            acc = 0.0
            running = 0.0
            for i in range(cnt - 1):
                ln = ts[i + 1] - ts[i]
                if ln <= 0.0:
                    continue
                for a in range(g.n):
                    mid[a] = p0[a] + 0.5 * (ts[i] + ts[i + 1]) * dd[a]
                flat = _voxel_at(g.origin, g.spacing, g.dims, g.strides, g.n, mid)
                if flat < 0:
                    continue
                if has_sig:
                    sd_k = ln * sv[flat]
                    att = exp(-(PRE[s] + running + 0.5 * sd_k))
                    running += sd_k
                    acc += att * ln * v[flat]
                else:
                    acc += ln * v[flat]
            out[s] = acc
    return out_arr


def backproject_siddon(origin, spacing, dims,
                       seg_start, seg_dir, seg_len, s_values, prefix,
                       coef, out_values):
    cdef int n = np.atleast_2d(seg_start).shape[1]
    if n > MAXDIM:
        return kernels_py.backproject_siddon(origin, spacing, dims,
                                             seg_start, seg_dir, seg_len,
                                             s_values, prefix, coef, out_values)
    cdef _Grid g = _make_grid(origin, spacing, dims)
    cdef bint has_sig = s_values is not None
    cdef double[:] sv = (np.ascontiguousarray(s_values, dtype=np.float64)
                         if has_sig else np.zeros(1))
    cdef double[:] PRE = (np.ascontiguousarray(prefix, dtype=np.float64)
                          if prefix is not None else np.zeros(np.atleast_2d(seg_start).shape[0]))
    cdef double[:, ::1] S0 = np.ascontiguousarray(seg_start, dtype=np.float64)
    cdef double[:, ::1] SD = np.ascontiguousarray(seg_dir, dtype=np.float64)
    cdef double[:] SL = np.ascontiguousarray(seg_len, dtype=np.float64)
    cdef double[:] C = np.ascontiguousarray(coef, dtype=np.float64)
    cdef double[:] out = out_values
    cdef int cap = _siddon_cap(dims)
    ts_buf = np.zeros(cap)
    cdef double[:] ts = ts_buf
    cdef Py_ssize_t s
    cdef int cnt, i, a
    cdef long flat
    cdef double ln, sd_k, running, att
    cdef double p0[MAXDIM]
    cdef double dd[MAXDIM]
    cdef double mid[MAXDIM]
    with nogil:
        for s in range(S0.shape[0]):
            for a in range(g.n):
                p0[a] = S0[s, a]
                dd[a] = SD[s, a]
            cnt = _siddon_crossings(g.origin, g.spacing, g.dims, g.n,
                                    p0, dd, SL[s], &ts[0], cap)
            running = 0.0
            for i in range(cnt - 1):
                ln = ts[i + 1] - ts[i]
                if ln <= 0.0:
                    continue
                for a in range(g.n):
                    mid[a] = p0[a] + 0.5 * (ts[i] + ts[i + 1]) * dd[a]
                flat = _voxel_at(g.origin, g.spacing, g.dims, g.strides, g.n, mid)
                if flat < 0:
                    continue
                if has_sig:
                    sd_k = ln * sv[flat]
                    att = exp(-(PRE[s] + running + 0.5 * sd_k))
                    running += sd_k
                    out[flat] += C[s] * att * ln
                else:
                    out[flat] += C[s] * ln
    return None
