"""Forward broken-ray transform: sampling, attenuation weights, operators.

The boundary data lives on per-facet grids over (facet position) x (inward
direction); each sample carries the flux-weighted quadrature weight
``|nu . theta| * d(position) * d(direction)``. A RayPlan traces every sampled
jet once; the operator reuses the traced geometry for all subsequent forward,
adjoint and normal-operator applications.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from math import comb

import numpy as np

from . import _core
from .billiards import BrokenRay, RayStatus, TraceTolerances, trace_jets
from .errors import (
    ConfigError,
    InterpOutOfRangeError,
    IrregularInSupportError,
    SamplingMismatchError,
    SequenceMismatchError,
)
from .fields import ScalarGridField
from .geometry import ConvexDomain, FacetLabel

__all__ = [
    "CutoffSpec",
    "SamplingSpec",
    "BoundarySampling",
    "make_boundary_sampling",
    "Sinogram",
    "RayPlan",
    "BrokenRayOperator",
    "forward",
    "line_integral",
    "attenuation_weight",
    "evaluate_cutoff",
    "smoothstep",
]

STEP_FACTOR = 0.5  # default quadrature step = STEP_FACTOR * min grid spacing


def smoothstep(t, order=3):
    """Polynomial smoothstep of the given smoothness order on [0, 1]."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    n = int(order)
    out = np.zeros_like(t)
    for k in range(n + 1):
        out += comb(n + k, k) * comb(2 * n + 1, n - k) * (-t) ** k
    return t ** (n + 1) * out


@dataclass(frozen=True)
class CutoffSpec:
    """Bump on boundary jets around a center jet.

    Value is 1 inside the (1 - transition)-shrunk support, 0 outside the
    spatial/angular radii, with a polynomial smoothstep shoulder in between
    (``mode='mollified'``) or a hard indicator (``mode='binary'``).
    """

    center_x: tuple
    center_theta: tuple
    radius_x: float
    radius_theta: float
    transition: float = 0.3
    mode: str = "mollified"
    order: int = 3

    def __post_init__(self):
        if not 0 <= self.transition < 1:
            raise ConfigError("transition fraction must be in [0, 1)")
        if self.radius_x <= 0 or self.radius_theta <= 0:
            raise ConfigError("cutoff radii must be positive")
        if self.mode not in ("binary", "mollified"):
            raise ConfigError(f"unknown cutoff mode {self.mode!r}")

    def _profile(self, u):
        if self.mode == "binary":
            return (u < 1.0).astype(float)
        if self.transition == 0:
            return (u <= 1.0).astype(float)
        return smoothstep((1.0 - u) / self.transition, self.order)

    def __call__(self, X, TH):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        TH = np.atleast_2d(np.asarray(TH, dtype=float))
        x0 = np.asarray(self.center_x, dtype=float)
        th0 = np.asarray(self.center_theta, dtype=float)
        th0 = th0 / np.linalg.norm(th0)
        du = np.linalg.norm(X - x0[None, :], axis=1) / self.radius_x
        ang = np.arccos(np.clip(TH @ th0, -1.0, 1.0)) / self.radius_theta
        return self._profile(du) * self._profile(ang)

    def to_dict(self):
        return {"center_x": list(self.center_x), "center_theta": list(self.center_theta),
                "radius_x": self.radius_x, "radius_theta": self.radius_theta,
                "transition": self.transition, "mode": self.mode, "order": self.order}

    @staticmethod
    def from_dict(d):
        return CutoffSpec(tuple(d["center_x"]), tuple(d["center_theta"]),
                          d["radius_x"], d["radius_theta"],
                          d.get("transition", 0.3), d.get("mode", "mollified"),
                          d.get("order", 3))


def evaluate_cutoff(alpha, X, TH):
    """Evaluate a cutoff at jets.

    Accepts None (identically 1), a CutoffSpec, a generic callable
    ``alpha(X, TH)``, or a list of either (summed).
    """
    X = np.atleast_2d(X)
    if alpha is None:
        return np.ones(len(X))
    if isinstance(alpha, CutoffSpec) or callable(alpha):
        return np.asarray(alpha(X, TH), dtype=float)
    out = np.zeros(len(X))
    for a in alpha:
        out += np.asarray(a(X, TH), dtype=float)
    return out


@dataclass(frozen=True)
class SamplingSpec:
    """Per-facet sampling resolution of the boundary data.

    ``n_pos`` grid points per tangent axis; ``n_dir`` is the number of
    direction samples: an angle count in 2D, a (polar, azimuth) pair in 3D
    (an int is split as (n, 4n) over the inward hemisphere).
    """

    n_pos: int = 48
    n_dir: object = 48
    facets: tuple = None

    def dir_shape(self, dim):
        if dim == 2:
            if not isinstance(self.n_dir, int):
                raise ConfigError("2D sampling takes an integer n_dir")
            return (self.n_dir,)
        if isinstance(self.n_dir, int):
            npol = max(2, int(round(np.sqrt(self.n_dir / 4.0))))
            return (npol, 4 * npol)
        return tuple(self.n_dir)

    def to_dict(self):
        d = {"n_pos": self.n_pos, "n_dir": list(self.n_dir) if not isinstance(self.n_dir, int) else self.n_dir}
        if self.facets is not None:
            d["facets"] = list(self.facets)
        return d

    @staticmethod
    def from_dict(d):
        nd = d.get("n_dir", 48)
        return SamplingSpec(d.get("n_pos", 48), tuple(nd) if isinstance(nd, list) else nd,
                            tuple(d["facets"]) if d.get("facets") is not None else None)


@dataclass
class _FacetGrid:
    facet: int
    anchor: np.ndarray
    tangent: np.ndarray
    pos_axes: list            # centers per tangent axis
    pos_cell: float           # position cell measure
    dir_axes: list            # direction parameter centers per axis
    dir_cell: float           # direction cell measure
    index: np.ndarray         # dense (pos..., dir...) -> flat sample row or -1


class BoundarySampling:
    """Sampled inward jets on the measured boundary with flux quadrature weights."""

    def __init__(self, domain, spec, grids, facet, x, theta, upos, dpar, weight):
        self.domain = domain
        self.spec = spec
        self.grids = grids
        self.facet = facet
        self.x = x
        self.theta = theta
        self.upos = upos
        self.dpar = dpar
        self.weight = weight

    @property
    def n_rays(self):
        return len(self.facet)

    def total_weight(self):
        return float(self.weight.sum())

    def grid_for(self, facet):
        for g in self.grids:
            if g.facet == facet:
                return g
        raise InterpOutOfRangeError(f"facet {facet} is not sampled")

    def direction_params(self, facet, theta):
        """Direction parameters of unit vectors at a facet (angle / (cos, azim))."""
        g = self.grid_for(facet)
        nu = self.domain.normals[facet]
        th = np.atleast_2d(theta)
        if self.domain.dim == 2:
            return np.arctan2(th @ g.tangent[0], -(th @ nu))[:, None]
        u = -(th @ nu)
        phi = np.mod(np.arctan2(th @ g.tangent[1], th @ g.tangent[0]), 2 * np.pi)
        return np.stack([u, phi], axis=1)

    def interpolate(self, values, pts, dirs, facets):
        """Multilinear interpolation of per-sample values at arbitrary jets.

        Unsampled grid nodes (outside the measured region) contribute zero;
        the azimuth axis wraps periodically in 3D.
        """
        values = np.asarray(values, dtype=float)
        pts = np.atleast_2d(pts)
        dirs = np.atleast_2d(dirs)
        facets = np.asarray(facets)
        out = np.zeros(len(pts))
        for f in np.unique(facets):
            g = self.grid_for(int(f))
            rows = np.nonzero(facets == f)[0]
            u = (pts[rows] - g.anchor[None, :]) @ g.tangent.T
            dp = self.direction_params(int(f), dirs[rows])
            coords = [u[:, a] for a in range(u.shape[1])] + [dp[:, a] for a in range(dp.shape[1])]
            axes = g.pos_axes + g.dir_axes
            periodic = [False] * len(g.pos_axes) + ([False, True] if self.domain.dim == 3 else [False])
            acc = np.zeros(len(rows))
            cell_idx, fracs = [], []
            for c, ax, per in zip(coords, axes, periodic):
                step = ax[1] - ax[0] if len(ax) > 1 else 1.0
                q = (c - ax[0]) / step
                i0 = np.floor(q).astype(np.int64)
                fr = q - i0
                if per:
                    i0 = np.mod(i0, len(ax))
                else:
                    low = i0 < 0
                    i0[low] = 0
                    fr[low] = 0.0
                    high = i0 > len(ax) - 2
                    i0[high] = max(len(ax) - 2, 0)
                    fr[high] = 1.0
                cell_idx.append(i0)
                fracs.append(fr)
            n_ax = len(axes)
            for corner in range(1 << n_ax):
                w = np.ones(len(rows))
                idx = []
                for a in range(n_ax):
                    bit = (corner >> a) & 1
                    w = w * (fracs[a] if bit else 1.0 - fracs[a])
                    ia = cell_idx[a] + bit
                    if periodic[a]:
                        ia = np.mod(ia, len(axes[a]))
                    idx.append(ia)
                flat = g.index[tuple(idx)]
                valid = flat >= 0
                acc += np.where(valid, w * values[np.maximum(flat, 0)], 0.0)
            out[rows] = acc
        return out


def make_boundary_sampling(domain: ConvexDomain, spec: SamplingSpec) -> BoundarySampling:
    """Build the per-facet jet grid over the measured boundary."""
    dim = domain.dim
    facets = spec.facets
    if facets is None:
        facets = [k for k in range(domain.n_facets) if domain.labels[k] == FacetLabel.MEASURE]
    facets = list(facets)
    if not facets:
        raise ConfigError("sampling needs at least one MEASURE facet")
    dshape = spec.dir_shape(dim)

    grids = []
    F, Xs, THs, Us, Ds, Ws = [], [], [], [], [], []
    row = 0
    for k in facets:
        if domain.labels[k] != FacetLabel.MEASURE:
            raise ConfigError(f"facet {k} is not a MEASURE facet")
        anchor, tangent = domain.facet_frame(k)
        nu = domain.normals[k]
        tv = domain.facet_vertex_coords(k)
        lo, hi = tv.min(axis=0), tv.max(axis=0)
        pos_axes = [lo[a] + (np.arange(spec.n_pos) + 0.5) * (hi[a] - lo[a]) / spec.n_pos
                    for a in range(dim - 1)]
        pos_cell = float(np.prod((hi - lo) / spec.n_pos))
        if dim == 2:
            nphi = dshape[0]
            phi = -0.5 * np.pi + (np.arange(nphi) + 0.5) * np.pi / nphi
            dir_axes = [phi]
            dir_cell = np.pi / nphi
        else:
            npol, nphi = dshape
            ucos = (np.arange(npol) + 0.5) / npol
            phi = (np.arange(nphi) + 0.5) * 2 * np.pi / nphi
            dir_axes = [ucos, phi]
            dir_cell = (1.0 / npol) * (2 * np.pi / nphi)

        pshape = tuple(len(a) for a in pos_axes)
        # measured-region test at position cell centers
        pu = np.stack([m.ravel() for m in np.meshgrid(*pos_axes, indexing="ij")], axis=1)
        pxyz = anchor[None, :] + pu @ tangent
        margins = domain.offsets[None, :] - pxyz @ domain.normals.T
        tn = domain.tangent_norms[k]
        usable = tn > 1e-9
        on_facet = (margins[:, usable] / tn[usable]).min(axis=1) >= 0
        in_set = on_facet.copy()
        for c in domain.masks.get(k, []):
            in_set &= c.margin(pxyz) >= 0

        index = np.full(pshape + dshape, -1, dtype=np.int64)
        dgrid = np.meshgrid(*dir_axes, indexing="ij")
        if dim == 2:
            cosd = np.cos(dgrid[0]).ravel()
            sind = np.sin(dgrid[0]).ravel()
            thetas = -np.outer(cosd, nu) + np.outer(sind, tangent[0])
            absnu = cosd
            dpars = dgrid[0].ravel()[:, None]
        else:
            u = dgrid[0].ravel()
            ph = dgrid[1].ravel()
            s = np.sqrt(1.0 - u ** 2)
            thetas = (-np.outer(u, nu) + np.outer(s * np.cos(ph), tangent[0])
                      + np.outer(s * np.sin(ph), tangent[1]))
            absnu = u
            dpars = np.stack([u, ph], axis=1)
        nd = len(thetas)

        keep_pos = np.nonzero(in_set)[0]
        for p in keep_pos:
            pidx = np.unravel_index(p, pshape)
            for d in range(nd):
                didx = np.unravel_index(d, dshape)
                index[pidx + didx] = row
                row += 1
            F.append(np.full(nd, k, dtype=np.int32))
            Xs.append(np.broadcast_to(pxyz[p], (nd, dim)).copy())
            THs.append(thetas)
            Us.append(np.broadcast_to(pu[p], (nd, dim - 1)).copy())
            Ds.append(dpars)
            Ws.append(absnu * pos_cell * dir_cell)
        grids.append(_FacetGrid(k, anchor, tangent, pos_axes, pos_cell,
                                dir_axes, dir_cell, index))

    if row == 0:
        raise ConfigError("sampling produced no jets (measured region empty?)")
    return BoundarySampling(
        domain, spec, grids,
        facet=np.concatenate(F), x=np.vstack(Xs), theta=np.vstack(THs),
        upos=np.vstack(Us), dpar=np.vstack(Ds), weight=np.concatenate(Ws))


@dataclass
class Sinogram:
    """Boundary measurements: one value per sampled jet plus its quadrature weight."""

    facet: np.ndarray
    x: np.ndarray
    theta: np.ndarray
    weight: np.ndarray
    values: np.ndarray
    sampling: BoundarySampling = None

    @property
    def n_rays(self):
        return len(self.values)

    @staticmethod
    def from_sampling(sampling: BoundarySampling, values):
        return Sinogram(sampling.facet, sampling.x, sampling.theta,
                        sampling.weight, np.asarray(values, dtype=float), sampling)

    def norm(self):
        """Data-space norm with the flux quadrature weights."""
        return float(np.sqrt(np.sum(self.weight * self.values ** 2)))

    def inner(self, other):
        return float(np.sum(self.weight * self.values * other.values))


class RayPlan:
    """Traced broken-ray geometry for every jet of a boundary sampling."""

    def __init__(self, domain: ConvexDomain, sampling: BoundarySampling,
                 n_max: int, tol: TraceTolerances = None):
        self.domain = domain
        self.sampling = sampling
        self.n_max = int(n_max)
        self.tol = tol or TraceTolerances.for_domain(domain)
        status, nseg, s0, sd, sl, hf = trace_jets(
            domain, sampling.x, sampling.theta, self.n_max, self.tol)
        self.status = status
        self.nseg = nseg.astype(np.int64)
        # a regular ray also starts away from the measured-region boundary,
        # mirroring the classification applied to its terminal hit
        start_ok = np.zeros(len(status), dtype=bool)
        for f in np.unique(sampling.facet):
            rows = np.nonzero(sampling.facet == f)[0]
            in_set, dist = domain.measured_classification(sampling.x[rows], int(f))
            start_ok[rows] = in_set & (dist >= self.tol.mask_margin)
        self.regular = (status == _core.STATUS_MEASURED) & start_ok

        R = len(status)
        self.ray_seg_off = np.zeros(R + 1, dtype=np.int64)
        np.cumsum(self.nseg, out=self.ray_seg_off[1:])
        S = int(self.ray_seg_off[-1])
        keep = np.arange(self.n_max + 1)[None, :] < self.nseg[:, None]
        self.seg_start = np.ascontiguousarray(s0[keep])
        self.seg_dir = np.ascontiguousarray(sd[keep])
        self.seg_len = np.ascontiguousarray(sl[keep])
        self.seg_hit = hf[keep]
        self.seg_ray = np.repeat(np.arange(R, dtype=np.int64), self.nseg)
        assert len(self.seg_len) == S

        # facet-sequence groups over regular rays
        self.group_of_ray = np.full(R, -1, dtype=np.int64)
        groups = {}
        for r in np.nonzero(self.regular)[0]:
            a, b = self.ray_seg_off[r], self.ray_seg_off[r + 1]
            key = tuple(self.seg_hit[a:b - 1].tolist())
            self.group_of_ray[r] = groups.setdefault(key, len(groups))
        self.n_groups = len(groups)

    @property
    def n_rays(self):
        return len(self.status)

    def end_jets(self, rows):
        """Terminal (point, inward direction, facet) for regular rays ``rows``."""
        last = self.ray_seg_off[rows + 1] - 1
        pt = self.seg_start[last] + self.seg_len[last, None] * self.seg_dir[last]
        return pt, -self.seg_dir[last], self.seg_hit[last]


def _sample_counts(seg_len, step):
    m = np.maximum(np.ceil(seg_len / step - 1e-12).astype(np.int64), 1)
    off = np.zeros(len(m) + 1, dtype=np.int64)
    np.cumsum(m, out=off[1:])
    return m, off


class BrokenRayOperator:
    """Discretized attenuated broken-ray transform bound to a grid.

    Linear map from grid fields to sinogram values; ``adjoint_values`` is the
    exact transpose with respect to the flux-weighted data inner product and
    the cell-volume grid inner product. ``normal_parts`` splits the normal
    operator into same-segment (ballistic) and cross-segment (reflect)
    contributions; their sum is exactly ``adjoint(forward(f))``.
    """

    def __init__(self, domain: ConvexDomain, grid: ScalarGridField,
                 sigma=None, alpha=None, sampling=None, n_max=8,
                 tol: TraceTolerances = None, step=None, plan: RayPlan = None,
                 threads: int = 1):
        self.domain = domain
        self.grid = grid
        self.sigma = sigma
        self.alpha = alpha
        self.n_max = int(n_max)
        self.threads = max(int(threads), 1)
        if plan is None:
            if sampling is None:
                sampling = SamplingSpec()
            if isinstance(sampling, SamplingSpec):
                sampling = make_boundary_sampling(domain, sampling)
            plan = RayPlan(domain, sampling, self.n_max, tol)
        self.plan = plan
        self.sampling = plan.sampling
        self.mode = grid.mode
        self.step = step or STEP_FACTOR * float(np.min(grid.spacing))

        samp = self.sampling
        self.alpha_values = evaluate_cutoff(alpha, samp.x, samp.theta)
        specs = None
        if isinstance(alpha, CutoffSpec):
            specs = [alpha]
        elif isinstance(alpha, (list, tuple)) and all(isinstance(a, CutoffSpec) for a in alpha):
            specs = list(alpha)
        if specs is not None:
            # structured cutoffs are validated: no irregular ray in the support,
            # one facet sequence per cutoff piece
            bad = (self.alpha_values > 0) & ~plan.regular
            if bad.any():
                r = int(np.nonzero(bad)[0][0])
                raise IrregularInSupportError(
                    f"{int(bad.sum())} rays in the cutoff support are irregular, "
                    f"e.g. jet {samp.x[r]} -> status {RayStatus(int(plan.status[r])).name}")
            for i, spec in enumerate(specs):
                sup = spec(samp.x, samp.theta) > 0
                gids = np.unique(plan.group_of_ray[sup])
                if len(gids) > 1:
                    raise SequenceMismatchError(
                        f"cutoff {i} support spans {len(gids)} facet sequences")
        self.active = plan.regular & (self.alpha_values > 0)

        # compact segment arrays for active rays
        act_rays = np.nonzero(self.active)[0]
        self._act_rays = act_rays
        seg_mask = self.active[self.plan.seg_ray]
        self.a_start = np.ascontiguousarray(self.plan.seg_start[seg_mask])
        self.a_dir = np.ascontiguousarray(self.plan.seg_dir[seg_mask])
        self.a_len = np.ascontiguousarray(self.plan.seg_len[seg_mask])
        ray_lookup = np.full(self.plan.n_rays, -1, dtype=np.int64)
        ray_lookup[act_rays] = np.arange(len(act_rays))
        self.a_ray = ray_lookup[self.plan.seg_ray[seg_mask]]
        self.m, self.samp_off = _sample_counts(self.a_len, self.step)
        self._grid_args = (self.grid.origin, self.grid.spacing,
                           np.asarray(self.grid.dims, dtype=np.int64))
        self._prepare_attenuation()

    # -- attenuation -----------------------------------------------------------

    def _prepare_attenuation(self):
        self.att = None
        self.prefix = np.zeros(len(self.a_len))
        self.seg_sigma = np.zeros(len(self.a_len))
        if self.sigma is None:
            return
        if self.mode == "nearest":
            if not isinstance(self.sigma, ScalarGridField):
                raise ConfigError("nearest mode needs attenuation on a grid")
            sig = self.sigma.interpolate(self.grid.cell_centers(), mode="nearest").ravel()
            self._sigma_flat = sig
            self.seg_sigma = _core.seg_sigma_siddon(*self._grid_args, sig,
                                                    self.a_start, self.a_dir, self.a_len)
            self.prefix = self._prefixes(self.seg_sigma)
            return
        if isinstance(self.sigma, ScalarGridField):
            sargs = (self.sigma.origin, self.sigma.spacing,
                     np.asarray(self.sigma.dims, dtype=np.int64),
                     np.ascontiguousarray(self.sigma.values).ravel())
            _, seg_sig = _core.attenuation_midpoint(
                *sargs, self.a_start, self.a_dir, self.a_len,
                self.m, self.samp_off, np.zeros(len(self.a_len)))
            self.prefix = self._prefixes(seg_sig)
            self.att, self.seg_sigma = _core.attenuation_midpoint(
                *sargs, self.a_start, self.a_dir, self.a_len,
                self.m, self.samp_off, self.prefix)
        else:
            # user hook sigma(points, directions); midpoint rule in numpy
            pts, dt, seg_id = _core.kernels_py._sample_points(
                self.a_start, self.a_dir, self.a_len, self.m, self.samp_off)
            sig = np.asarray(self.sigma(pts, self.a_dir[seg_id]), dtype=float)
            sd = sig * dt
            cs = np.cumsum(sd)
            cs0 = cs[self.samp_off[:-1]] - sd[self.samp_off[:-1]]
            running = cs - sd - cs0[seg_id] + 0.5 * sd
            seg_sig = np.bincount(seg_id, weights=sd, minlength=len(self.m))
            self.prefix = self._prefixes(seg_sig)
            self.att = np.exp(-(self.prefix[seg_id] + running))
            self.seg_sigma = seg_sig

    def _prefixes(self, seg_sig):
        """Accumulated attenuation of earlier segments within each ray."""
        if len(seg_sig) == 0:
            return np.zeros(0)
        cs = np.concatenate([[0.0], np.cumsum(seg_sig)[:-1]])
        first = np.zeros(len(seg_sig), dtype=bool)
        first[0] = True
        first[1:] = self.a_ray[1:] != self.a_ray[:-1]
        ray_ids = np.cumsum(first) - 1
        return cs - cs[first][ray_ids]

    # -- core applications -------------------------------------------------------

    _CHUNK = 16384  # segments per work unit; fixed so results do not depend on threads

    def _seg_chunks(self):
        n = len(self.a_len)
        return [(i, min(i + self._CHUNK, n)) for i in range(0, n, self._CHUNK)] or [(0, 0)]

    def _project_chunk(self, values_flat, i0, i1):
        if self.mode == "nearest":
            return _core.project_siddon(*self._grid_args, values_flat,
                                        self.a_start[i0:i1], self.a_dir[i0:i1],
                                        self.a_len[i0:i1],
                                        getattr(self, "_sigma_flat", None),
                                        self.prefix[i0:i1])
        s0, s1 = self.samp_off[i0], self.samp_off[i1]
        off = self.samp_off[i0:i1 + 1] - s0
        att = None if self.att is None else self.att[s0:s1]
        return _core.project_midpoint(*self._grid_args, values_flat,
                                      self.a_start[i0:i1], self.a_dir[i0:i1],
                                      self.a_len[i0:i1], self.m[i0:i1], off, att)

    def _backproject_chunk(self, coef, i0, i1, out):
        if self.mode == "nearest":
            _core.backproject_siddon(*self._grid_args,
                                     self.a_start[i0:i1], self.a_dir[i0:i1],
                                     self.a_len[i0:i1],
                                     getattr(self, "_sigma_flat", None),
                                     self.prefix[i0:i1], coef[i0:i1], out)
            return out
        s0, s1 = self.samp_off[i0], self.samp_off[i1]
        off = self.samp_off[i0:i1 + 1] - s0
        att = None if self.att is None else self.att[s0:s1]
        _core.backproject_midpoint(*self._grid_args,
                                   self.a_start[i0:i1], self.a_dir[i0:i1],
                                   self.a_len[i0:i1], self.m[i0:i1], off, att,
                                   coef[i0:i1], out)
        return out

    def _project_segments(self, values_flat):
        chunks = self._seg_chunks()
        if self.threads > 1 and len(chunks) > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(self.threads) as ex:
                parts = list(ex.map(lambda c: self._project_chunk(values_flat, *c), chunks))
        else:
            parts = [self._project_chunk(values_flat, *c) for c in chunks]
        return np.concatenate(parts) if len(parts) > 1 else parts[0]

    def _backproject_segments(self, coef):
        # per-chunk buffers reduced in chunk order: results are identical for
        # any thread count (chunking is fixed, only wall time changes)
        ncell = int(np.prod(self.grid.dims))
        chunks = self._seg_chunks()
        if self.threads > 1 and len(chunks) > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(self.threads) as ex:
                parts = list(ex.map(
                    lambda c: self._backproject_chunk(coef, *c, np.zeros(ncell)), chunks))
        else:
            parts = [self._backproject_chunk(coef, *c, np.zeros(ncell)) for c in chunks]
        out = parts[0]
        for p in parts[1:]:
            out += p
        return out

    def forward_values(self, f: ScalarGridField):
        """Sinogram values on all sampled jets (zero off the active set)."""
        self._check_grid(f)
        seg_vals = self._project_segments(np.ascontiguousarray(f.values).ravel())
        ray_sum = np.bincount(self.a_ray, weights=seg_vals, minlength=len(self._act_rays))
        out = np.zeros(self.plan.n_rays)
        out[self._act_rays] = self.alpha_values[self._act_rays] * ray_sum
        return out

    def forward(self, f: ScalarGridField) -> Sinogram:
        return Sinogram.from_sampling(self.sampling, self.forward_values(f))

    def adjoint_values(self, g) -> ScalarGridField:
        """Exact transpose of ``forward_values`` (splat along the traced rays)."""
        g = g.values if isinstance(g, Sinogram) else np.asarray(g, dtype=float)
        if g.shape != (self.plan.n_rays,):
            raise SamplingMismatchError(
                f"data has {g.shape} values, sampling has {self.plan.n_rays}")
        w = self.sampling.weight * self.alpha_values * g
        coef = w[self._act_rays][self.a_ray]
        out = self._backproject_segments(coef) / self.grid.cell_volume
        return self.grid.like(out.reshape(self.grid.dims))

    def adjoint(self, sino: Sinogram) -> ScalarGridField:
        self._check_sampling(sino)
        return self.adjoint_values(sino.values)

    def normal(self, f: ScalarGridField) -> ScalarGridField:
        return self.adjoint_values(self.forward_values(f))

    def normal_parts(self, f: ScalarGridField):
        """(ballistic, reflect) split of the normal operator.

        Ballistic pairs the integration and splat on the same segment of each
        ray; reflect collects the cross-segment pairs. The sum equals
        ``adjoint(forward(f))`` exactly (same quadrature on both routes).
        """
        self._check_grid(f)
        seg_vals = self._project_segments(np.ascontiguousarray(f.values).ravel())
        ray_sum = np.bincount(self.a_ray, weights=seg_vals, minlength=len(self._act_rays))
        wa = (self.sampling.weight * self.alpha_values ** 2)[self._act_rays]
        bal = self._backproject_segments(wa[self.a_ray] * seg_vals) / self.grid.cell_volume
        ref = self._backproject_segments(
            wa[self.a_ray] * (ray_sum[self.a_ray] - seg_vals)) / self.grid.cell_volume
        return (self.grid.like(bal.reshape(self.grid.dims)),
                self.grid.like(ref.reshape(self.grid.dims)))

    # -- solver-facing vector interface -------------------------------------------

    def data_weights(self):
        return self.sampling.weight.copy()

    def operator_norm_estimate(self, n_iter=30, seed=0):
        """Power iteration on A^T A in the weighted inner products."""
        rng = np.random.default_rng(seed)
        f = self.grid.like(rng.standard_normal(self.grid.dims))
        lam = 0.0
        for _ in range(n_iter):
            g = self.forward_values(f)
            h = self.adjoint_values(g)
            lam = np.sqrt(max(h.inner(h), 0.0)) / max(f.l2_norm(), 1e-300)
            nrm = h.l2_norm()
            if nrm == 0:
                return 0.0
            f = h * (1.0 / nrm)
        return float(np.sqrt(lam))

    def _check_grid(self, f: ScalarGridField):
        if (tuple(f.dims) != tuple(self.grid.dims)
                or not np.allclose(f.origin, self.grid.origin)
                or not np.allclose(f.spacing, self.grid.spacing)):
            raise SamplingMismatchError("field grid does not match operator grid")

    def _check_sampling(self, sino: Sinogram):
        if sino.n_rays != self.plan.n_rays:
            raise SamplingMismatchError(
                f"sinogram has {sino.n_rays} rays, operator expects {self.plan.n_rays}")
        if sino.sampling is not self.sampling:
            if (np.max(np.abs(sino.x - self.sampling.x)) > 1e-9
                    or np.max(np.abs(sino.theta - self.sampling.theta)) > 1e-9):
                raise SamplingMismatchError("sinogram jets differ from operator sampling")


def forward(domain, sigma, f, alpha=None, sampling=None, n_max=8,
            tol=None, step=None) -> Sinogram:
    """One-shot forward transform; builds a fresh operator."""
    op = BrokenRayOperator(domain, f, sigma=sigma, alpha=alpha,
                           sampling=sampling, n_max=n_max, tol=tol, step=step)
    return op.forward(f)


def line_integral(f: ScalarGridField, p, theta, t0, t1, step=None):
    """Integral of the field along ``p + t * theta`` for t in [t0, t1].

    Composite midpoint with the field's multilinear interpolant, or exact
    per-voxel traversal in nearest mode. The field is zero outside its box.
    """
    if t1 < t0:
        raise ConfigError("need t0 <= t1")
    if t1 == t0:
        return 0.0
    p = np.asarray(p, dtype=float)
    theta = np.asarray(theta, dtype=float)
    start = (p + t0 * theta)[None, :]
    dirs = theta[None, :]
    length = np.array([t1 - t0])
    gargs = (f.origin, f.spacing, np.asarray(f.dims, dtype=np.int64))
    flat = np.ascontiguousarray(f.values).ravel()
    if f.mode == "nearest":
        return float(_core.project_siddon(*gargs, flat, start, dirs, length,
                                          None, None)[0])
    step = step or STEP_FACTOR * float(np.min(f.spacing))
    m, off = _sample_counts(length, step)
    return float(_core.project_midpoint(*gargs, flat, start, dirs, length,
                                        m, off, None)[0])


def attenuation_weight(sigma, ray: BrokenRay, j, t, step=None):
    """Accumulated attenuation factor from the ray start to arc-length t on
    segment j: exp(-(full integrals of segments < j + partial integral on j))."""
    if not 0 <= j < ray.n_segments:
        raise ConfigError(f"segment index {j} out of range")
    if not -1e-12 <= t <= ray.seg_len[j] + 1e-12:
        raise ConfigError(f"t={t} outside segment length {ray.seg_len[j]}")
    if sigma is None:
        return 1.0
    total = 0.0
    for k in range(j):
        total += line_integral(sigma, ray.seg_start[k], ray.seg_dir[k],
                               0.0, float(ray.seg_len[k]), step)
    total += line_integral(sigma, ray.seg_start[j], ray.seg_dir[j], 0.0, float(t), step)
    return float(np.exp(-total))
