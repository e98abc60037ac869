"""Pure-numpy kernel implementations (fallback backend).

The compiled extension ``brokenray._core._kernels`` implements the same
functions with identical numerical semantics; results may differ only by
floating-point reassociation in reductions. Keep both in sync.

Conventions
-----------
* Grids are cell-centered: sample ``i`` sits at ``origin + (i + 0.5) * spacing``.
* Multilinear interpolation clamps to the outermost cell centers inside the
  grid box and is zero outside the box.
* Segment quadrature is composite midpoint with ``m`` samples per segment;
  Siddon traversal (nearest mode) uses exact per-voxel path lengths.
"""

from __future__ import annotations

import numpy as np

STATUS_MEASURED = 0     # ended on a measured facet region
STATUS_TRAPPED = 1      # reflection cap reached
STATUS_EDGE = 2         # facet-edge or grazing hit
STATUS_NEAR_MASK = 3    # within the guard band of the measured-region boundary
STATUS_UNMEASURED = 4   # landed on a MEASURE facet outside its measured region
STATUS_NO_EXIT = 5      # no forward boundary crossing (start outside)

_PARALLEL_TOL = 1e-9


# ---------------------------------------------------------------------------
# tracing
# ---------------------------------------------------------------------------

def exit_times(normals, offsets, X, TH, boundary_tol):
    """Batched first-exit computation.

    Returns (t, facet, ok): ok is False where the start point lies outside
    the domain or no forward crossing exists.
    """
    X = np.atleast_2d(X)
    TH = np.atleast_2d(TH)
    margins = offsets[None, :] - X @ normals.T
    inside = margins.min(axis=1) >= -boundary_tol
    den = TH @ normals.T
    with np.errstate(divide="ignore", invalid="ignore"):
        tt = np.where(den > 0, margins / den, np.inf)
    tt = np.where(tt >= -boundary_tol, tt, np.inf)
    facet = np.argmin(tt, axis=1).astype(np.int32)
    t = tt[np.arange(len(tt)), facet]
    ok = inside & np.isfinite(t)
    t = np.where(ok, np.maximum(t, 0.0), 0.0)
    return t, facet, ok


def _mask_margins(mask_offs, mask_kinds, mask_params, facet, pts):
    """Per-point (in_set, min |margin|) for the masks of one facet."""
    lo, hi = mask_offs[facet], mask_offs[facet + 1]
    if hi == lo:
        return np.ones(len(pts), dtype=bool), np.full(len(pts), np.inf)
    in_set = np.ones(len(pts), dtype=bool)
    dist = np.full(len(pts), np.inf)
    for c in range(lo, hi):
        kind = mask_kinds[c]
        p = mask_params[c]
        if kind == 0:
            margin = p[-1] - pts @ p[:-1]
        else:
            r = np.linalg.norm(pts - p[None, :-1], axis=1)
            margin = (p[-1] - r) if kind == 1 else (r - p[-1])
        in_set &= margin >= 0
        dist = np.minimum(dist, np.abs(margin))
    return in_set, dist


def trace(normals, offsets, labels, tangent_norms,
          mask_offs, mask_kinds, mask_params,
          X, TH, n_max, graze_tol, edge_margin, mask_margin, boundary_tol):
    """Trace broken rays from points X with unit directions TH.

    Rays reflect on REFLECT facets and terminate on MEASURE facets (inside or
    outside the measured region), at irregular hits (edge/grazing or near the
    measured-region boundary), or when the reflection cap ``n_max`` is hit.

    Returns
    -------
    status : (R,) int8, nseg : (R,) int32,
    seg_start, seg_dir : (R, n_max+1, n), seg_len : (R, n_max+1),
    hit_facet : (R, n_max+1) int32 — facet at each segment's far end.
    """
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    TH = np.ascontiguousarray(np.atleast_2d(TH), dtype=float)
    R, n = X.shape
    S = n_max + 1
    status = np.full(R, -1, dtype=np.int8)
    nseg = np.zeros(R, dtype=np.int32)
    seg_start = np.zeros((R, S, n))
    seg_dir = np.zeros((R, S, n))
    seg_len = np.zeros((R, S))
    hit_facet = np.full((R, S), -1, dtype=np.int32)

    cur_x = X.copy()
    cur_th = TH.copy()
    active = np.ones(R, dtype=bool)

    for s in range(S):
        idx = np.nonzero(active)[0]
        if len(idx) == 0:
            break
        t, facet, ok = exit_times(normals, offsets, cur_x[idx], cur_th[idx], boundary_tol)
        bad = idx[~ok]
        status[bad] = STATUS_NO_EXIT
        nseg[bad] = s
        active[bad] = False
        idx = idx[ok]
        if len(idx) == 0:
            break
        t, facet = t[ok], facet[ok]

        seg_start[idx, s] = cur_x[idx]
        seg_dir[idx, s] = cur_th[idx]
        seg_len[idx, s] = t
        hit_facet[idx, s] = facet
        nseg[idx] = s + 1

        hit = cur_x[idx] + t[:, None] * cur_th[idx]
        nu = normals[facet]
        cosang = np.einsum("ij,ij->i", cur_th[idx], nu)

        # in-plane distance to the facet's relative boundary
        m_all = offsets[None, :] - hit @ normals.T
        tn = tangent_norms[facet]
        with np.errstate(divide="ignore", invalid="ignore"):
            dd = np.where(tn > _PARALLEL_TOL, m_all / tn, np.inf)
        d_rel = dd.min(axis=1)

        irregular = (cosang < graze_tol) | (d_rel < edge_margin)
        status[idx[irregular]] = STATUS_EDGE
        active[idx[irregular]] = False

        live = ~irregular
        meas = live & (labels[facet] == 1)
        for k in np.unique(facet[meas]) if meas.any() else []:
            rows = np.nonzero(meas & (facet == k))[0]
            in_set, d_mask = _mask_margins(mask_offs, mask_kinds, mask_params, k, hit[rows])
            d_bnd = np.minimum(d_rel[rows], d_mask)
            st = np.where(d_bnd < mask_margin, STATUS_NEAR_MASK,
                          np.where(in_set, STATUS_MEASURED, STATUS_UNMEASURED))
            status[idx[rows]] = st.astype(np.int8)
            active[idx[rows]] = False

        refl = live & (labels[facet] == 0)
        rows = np.nonzero(refl)[0]
        if s == n_max:
            status[idx[rows]] = STATUS_TRAPPED
            active[idx[rows]] = False
        elif len(rows):
            g = idx[rows]
            th = cur_th[g] - 2.0 * cosang[rows, None] * nu[rows]
            th /= np.linalg.norm(th, axis=1)[:, None]
            cur_th[g] = th
            cur_x[g] = hit[rows]

    return status, nseg, seg_start, seg_dir, seg_len, hit_facet


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------

def _inside_box(origin, spacing, dims, pts):
    rel = (pts - origin[None, :]) / spacing[None, :]
    return ((rel >= 0.0) & (rel <= dims[None, :])).all(axis=1)


def _multilinear_cells(origin, spacing, dims, pts):
    """Base cell index and fractional offsets with clamped extension."""
    u = (pts - origin[None, :]) / spacing[None, :] - 0.5
    i0 = np.floor(u)
    frac = u - i0
    i0 = i0.astype(np.int64)
    low = i0 < 0
    i0[low] = 0
    frac[low] = 0.0
    high = i0 > dims[None, :] - 2
    i0[high] = np.broadcast_to(dims[None, :] - 2, i0.shape)[high]
    frac[high] = 1.0
    return i0, frac


def interp_multilinear(origin, spacing, dims, values, pts):
    pts = np.atleast_2d(pts)
    origin = np.asarray(origin, dtype=float)
    spacing = np.asarray(spacing, dtype=float)
    dims = np.asarray(dims, dtype=np.int64)
    inside = _inside_box(origin, spacing, dims, pts)
    i0, frac = _multilinear_cells(origin, spacing, dims, pts)
    strides = np.ones(len(dims), dtype=np.int64)
    for a in range(len(dims) - 2, -1, -1):
        strides[a] = strides[a + 1] * dims[a + 1]
    out = np.zeros(len(pts))
    n = len(dims)
    for corner in range(1 << n):
        w = np.ones(len(pts))
        idx = np.zeros(len(pts), dtype=np.int64)
        for a in range(n):
            bit = (corner >> a) & 1
            w *= frac[:, a] if bit else (1.0 - frac[:, a])
            idx += (i0[:, a] + bit) * strides[a]
        out += w * values[idx]
    out[~inside] = 0.0
    return out


def interp_nearest(origin, spacing, dims, values, pts):
    pts = np.atleast_2d(pts)
    origin = np.asarray(origin, dtype=float)
    spacing = np.asarray(spacing, dtype=float)
    dims = np.asarray(dims, dtype=np.int64)
    inside = _inside_box(origin, spacing, dims, pts)
    i = np.floor((pts - origin[None, :]) / spacing[None, :]).astype(np.int64)
    i = np.clip(i, 0, dims[None, :] - 1)
    strides = np.ones(len(dims), dtype=np.int64)
    for a in range(len(dims) - 2, -1, -1):
        strides[a] = strides[a + 1] * dims[a + 1]
    out = values[(i * strides[None, :]).sum(axis=1)]
    out = np.where(inside, out, 0.0)
    return out


# ---------------------------------------------------------------------------
# midpoint-rule segment quadrature (multilinear mode)
# ---------------------------------------------------------------------------

def _sample_points(seg_start, seg_dir, seg_len, m, samp_off):
    """Flat midpoint sample positions, per-sample step weights, segment ids."""
    total = int(samp_off[-1])
    seg_id = np.repeat(np.arange(len(m)), m)
    k = np.arange(total) - np.repeat(samp_off[:-1], m)
    delta = seg_len / m
    t = (k + 0.5) * delta[seg_id]
    pts = seg_start[seg_id] + t[:, None] * seg_dir[seg_id]
    return pts, delta[seg_id], seg_id


def project_midpoint(origin, spacing, dims, values,
                     seg_start, seg_dir, seg_len, m, samp_off, att):
    """Per-segment integrals of ``att * field`` by the composite midpoint rule."""
    pts, dt, seg_id = _sample_points(seg_start, seg_dir, seg_len, m, samp_off)
    v = interp_multilinear(origin, spacing, dims, values, pts)
    w = dt if att is None else dt * att
    return np.bincount(seg_id, weights=v * w, minlength=len(m))


def backproject_midpoint(origin, spacing, dims,
                         seg_start, seg_dir, seg_len, m, samp_off, att,
                         coef, out_values):
    """Exact transpose of project_midpoint: splat ``coef`` along segments."""
    pts, dt, seg_id = _sample_points(seg_start, seg_dir, seg_len, m, samp_off)
    origin = np.asarray(origin, dtype=float)
    spacing = np.asarray(spacing, dtype=float)
    dims = np.asarray(dims, dtype=np.int64)
    c = coef[seg_id] * dt
    if att is not None:
        c = c * att
    inside = _inside_box(origin, spacing, dims, pts)
    c = np.where(inside, c, 0.0)
    i0, frac = _multilinear_cells(origin, spacing, dims, pts)
    strides = np.ones(len(dims), dtype=np.int64)
    for a in range(len(dims) - 2, -1, -1):
        strides[a] = strides[a + 1] * dims[a + 1]
    n = len(dims)
    for corner in range(1 << n):
        w = c.copy()
        idx = np.zeros(len(pts), dtype=np.int64)
        for a in range(n):
            bit = (corner >> a) & 1
            w *= frac[:, a] if bit else (1.0 - frac[:, a])
            idx += (i0[:, a] + bit) * strides[a]
        out_values += np.bincount(idx, weights=w, minlength=out_values.shape[0])


def attenuation_midpoint(s_origin, s_spacing, s_dims, s_values,
                         seg_start, seg_dir, seg_len, m, samp_off, prefix):
    """Per-sample attenuation factors and per-segment attenuation integrals.

    ``prefix[s]`` is the accumulated attenuation integral over all earlier
    segments of the same ray. The within-segment running integral uses the
    midpoint-consistent rule ``delta * (sum_{i<k} sig_i + sig_k / 2)``.
    """
    pts, dt, seg_id = _sample_points(seg_start, seg_dir, seg_len, m, samp_off)
    sig = interp_multilinear(s_origin, s_spacing, s_dims, s_values, pts)
    sd = sig * dt
    cs = np.cumsum(sd)
    seg_cs0 = cs[samp_off[:-1]] - sd[samp_off[:-1]]
    running = cs - sd - seg_cs0[seg_id] + 0.5 * sd
    att = np.exp(-(prefix[seg_id] + running))
    seg_sig = np.bincount(seg_id, weights=sd, minlength=len(m))
    return att, seg_sig


# ---------------------------------------------------------------------------
# Siddon traversal (nearest mode)
# ---------------------------------------------------------------------------

def _siddon_intervals(origin, spacing, dims, p0, d, L):
    """Sorted voxel-crossing parameters along one segment, including 0 and L."""
    ts = [0.0, L]
    for a in range(len(dims)):
        if d[a] == 0.0:
            continue
        # planes at origin + i * spacing, i = 0..dims[a]
        t_lo = (origin[a] - p0[a]) / d[a]
        t_hi = (origin[a] + dims[a] * spacing[a] - p0[a]) / d[a]
        step = spacing[a] / abs(d[a])
        t0, t1 = min(t_lo, t_hi), max(t_lo, t_hi)
        k0 = int(np.ceil(max(t0, 0.0) / step - (t0 / step) - 1e-12))
        t = t0 + k0 * step
        while t <= min(t1, L) + 1e-15:
            if t > 0.0:
                ts.append(t)
            t += step
    ts = np.array(sorted(ts))
    return ts[(ts >= 0.0) & (ts <= L)]


def _siddon_segment(origin, spacing, dims, strides, p0, d, L):
    """(flat voxel index, length) pairs for one segment; index -1 if outside."""
    ts = _siddon_intervals(origin, spacing, dims, p0, d, L)
    lengths = np.diff(ts)
    mids = p0[None, :] + (0.5 * (ts[:-1] + ts[1:]))[:, None] * d[None, :]
    rel = (mids - origin[None, :]) / spacing[None, :]
    inside = ((rel >= 0.0) & (rel <= dims[None, :])).all(axis=1)
    iv = np.clip(np.floor(rel).astype(np.int64), 0, dims[None, :] - 1)
    flat = (iv * strides[None, :]).sum(axis=1)
    flat[~inside] = -1
    keep = lengths > 0
    return flat[keep], lengths[keep]


def _strides(dims):
    dims = np.asarray(dims, dtype=np.int64)
    strides = np.ones(len(dims), dtype=np.int64)
    for a in range(len(dims) - 2, -1, -1):
        strides[a] = strides[a + 1] * dims[a + 1]
    return strides


def seg_sigma_siddon(origin, spacing, dims, s_values, seg_start, seg_dir, seg_len):
    """Per-segment attenuation integrals with voxel-exact path lengths."""
    origin = np.asarray(origin, dtype=float)
    spacing = np.asarray(spacing, dtype=float)
    dims = np.asarray(dims, dtype=np.int64)
    strides = _strides(dims)
    out = np.zeros(len(seg_len))
    for s in range(len(seg_len)):
        flat, lengths = _siddon_segment(origin, spacing, dims, strides,
                                        seg_start[s], seg_dir[s], seg_len[s])
        ok = flat >= 0
        out[s] = np.sum(lengths[ok] * s_values[flat[ok]])
    return out


def project_siddon(origin, spacing, dims, values,
                   seg_start, seg_dir, seg_len, s_values, prefix):
    """Per-segment attenuated integrals in nearest mode (sigma on same grid).

    ``s_values`` may be None for no attenuation; otherwise it must live on the
    same grid as ``values`` and ``prefix`` gives the per-segment accumulated
    attenuation from earlier segments.
    """
    origin = np.asarray(origin, dtype=float)
    spacing = np.asarray(spacing, dtype=float)
    dims = np.asarray(dims, dtype=np.int64)
    strides = _strides(dims)
    out = np.zeros(len(seg_len))
    for s in range(len(seg_len)):
        flat, lengths = _siddon_segment(origin, spacing, dims, strides,
                                        seg_start[s], seg_dir[s], seg_len[s])
        ok = flat >= 0
        flat, lengths = flat[ok], lengths[ok]
        if s_values is None:
            out[s] = np.sum(lengths * values[flat])
        else:
            sd = lengths * s_values[flat]
            running = np.cumsum(sd) - 0.5 * sd
            att = np.exp(-(prefix[s] + running))
            out[s] = np.sum(att * lengths * values[flat])
    return out


def backproject_siddon(origin, spacing, dims,
                       seg_start, seg_dir, seg_len, s_values, prefix,
                       coef, out_values):
    """Exact transpose of project_siddon."""
    origin = np.asarray(origin, dtype=float)
    spacing = np.asarray(spacing, dtype=float)
    dims = np.asarray(dims, dtype=np.int64)
    strides = _strides(dims)
    for s in range(len(seg_len)):
        flat, lengths = _siddon_segment(origin, spacing, dims, strides,
                                        seg_start[s], seg_dir[s], seg_len[s])
        ok = flat >= 0
        flat, lengths = flat[ok], lengths[ok]
        if s_values is None:
            np.add.at(out_values, flat, coef[s] * lengths)
        else:
            sd = lengths * s_values[flat]
            running = np.cumsum(sd) - 0.5 * sd
            att = np.exp(-(prefix[s] + running))
            np.add.at(out_values, flat, coef[s] * att * lengths)
