"""Convex polytopal domains with labeled boundary facets.

A domain is an intersection of half-spaces ``{x : x . normal < offset}``.
Each facet is labeled either MEASURE (rays may start/stop there) or REFLECT
(mirror). A MEASURE facet optionally carries mask constraints; the measured
set on that facet is the subset where every constraint holds, which lets the
measured region have curved boundary (ball constraints).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection

from .errors import ConfigError, GrazingRayError, NoExitError, NotOnFacetError

__all__ = [
    "FacetLabel",
    "MaskConstraint",
    "ConvexDomain",
    "BoundaryJet",
    "box_domain",
    "unit_square",
    "unit_cube",
    "regular_polygon",
]

_PARALLEL_TOL = 1e-9


class FacetLabel(IntEnum):
    REFLECT = 0
    MEASURE = 1


class MaskKind(IntEnum):
    HALFSPACE = 0     # measured where x . a <= b
    BALL_INSIDE = 1   # measured where |x - c| <= r
    BALL_OUTSIDE = 2  # measured where |x - c| >= r


@dataclass(frozen=True)
class MaskConstraint:
    """One constraint of a measured-region mask on a MEASURE facet.

    ``vec`` is the half-space direction ``a`` (normalized on construction)
    or the ball center ``c``; ``value`` is the offset ``b`` or radius ``r``.
    """

    kind: MaskKind
    vec: tuple
    value: float

    @staticmethod
    def halfspace(a, b):
        a = np.asarray(a, dtype=float)
        nrm = np.linalg.norm(a)
        if nrm == 0:
            raise ConfigError("mask half-space direction must be nonzero")
        return MaskConstraint(MaskKind.HALFSPACE, tuple(a / nrm), float(b) / nrm)

    @staticmethod
    def ball_inside(center, radius):
        if radius <= 0:
            raise ConfigError("mask ball radius must be positive")
        return MaskConstraint(MaskKind.BALL_INSIDE, tuple(map(float, center)), float(radius))

    @staticmethod
    def ball_outside(center, radius):
        if radius <= 0:
            raise ConfigError("mask ball radius must be positive")
        return MaskConstraint(MaskKind.BALL_OUTSIDE, tuple(map(float, center)), float(radius))

    def margin(self, x):
        """Signed distance into the measured side (>= 0 means constraint holds)."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(self.vec)
        if self.kind == MaskKind.HALFSPACE:
            return self.value - x @ v
        d = np.linalg.norm(x - v, axis=-1)
        if self.kind == MaskKind.BALL_INSIDE:
            return self.value - d
        return d - self.value

    def to_dict(self):
        names = {MaskKind.HALFSPACE: "halfspace", MaskKind.BALL_INSIDE: "ball_inside",
                 MaskKind.BALL_OUTSIDE: "ball_outside"}
        return {"kind": names[self.kind], "vec": list(self.vec), "value": self.value}

    @staticmethod
    def from_dict(d):
        kind = d["kind"]
        if kind == "halfspace":
            return MaskConstraint.halfspace(d["vec"], d["value"])
        if kind == "ball_inside":
            return MaskConstraint.ball_inside(d["vec"], d["value"])
        if kind == "ball_outside":
            return MaskConstraint.ball_outside(d["vec"], d["value"])
        raise ConfigError(f"unknown mask kind {kind!r}")


class ConvexDomain:
    """Bounded convex polytope with labeled facets and measured-region masks.

    Parameters
    ----------
    normals : (F, n) array
        Outward facet directions; normalized on construction.
    offsets : (F,) array
        Interior is ``x . normal < offset``.
    labels : sequence of FacetLabel (or "MEASURE"/"REFLECT" strings)
    masks : optional mapping facet index -> list of MaskConstraint
    boundary_tol : optional float
        Defaults to ``1e-9 * bounding-box diameter``.

    Derived geometry (vertices, facet frames, areas, volume) is computed once
    at construction; all query methods are pure.
    """

    def __init__(self, normals, offsets, labels, masks=None, boundary_tol=None):
        normals = np.atleast_2d(np.asarray(normals, dtype=float))
        offsets = np.asarray(offsets, dtype=float).ravel()
        if normals.shape[0] != offsets.shape[0]:
            raise ConfigError("normals/offsets length mismatch")
        self.dim = normals.shape[1]
        if self.dim < 2:
            raise ConfigError("domain dimension must be >= 2")
        norms = np.linalg.norm(normals, axis=1)
        if np.any(norms == 0):
            raise ConfigError("zero facet normal")
        self.normals = normals / norms[:, None]
        self.offsets = offsets / norms
        self.n_facets = len(self.offsets)

        labels = [FacetLabel[l] if isinstance(l, str) else FacetLabel(l) for l in labels]
        if len(labels) != self.n_facets:
            raise ConfigError("labels length mismatch")
        self.labels = np.array(labels, dtype=np.int8)

        self.masks = {int(k): list(v) for k, v in (masks or {}).items()}
        for k, cons in self.masks.items():
            if not 0 <= k < self.n_facets:
                raise ConfigError(f"mask facet index {k} out of range")
            if self.labels[k] != FacetLabel.MEASURE:
                raise ConfigError(f"mask on non-MEASURE facet {k}")
            if not all(isinstance(c, MaskConstraint) for c in cons):
                raise ConfigError("masks must be MaskConstraint instances")

        self._build_geometry()
        self.boundary_tol = (1e-9 * self.bbox_diameter) if boundary_tol is None else float(boundary_tol)
        if np.max(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0)) > 1e-12:
            raise ConfigError("facet normals failed to normalize to 1e-12")

    # -- construction helpers -------------------------------------------------

    def _build_geometry(self):
        # Chebyshev center: max r with n_f . x + r <= d_f
        n, f = self.dim, self.n_facets
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A = np.hstack([self.normals, np.ones((f, 1))])
        res = linprog(c, A_ub=A, b_ub=self.offsets,
                      bounds=[(None, None)] * n + [(0, None)], method="highs")
        if not res.success or res.x[-1] <= 0:
            raise ConfigError("domain has empty interior")
        self.interior_point = res.x[:n].copy()
        self.inradius = float(res.x[-1])

        try:
            hs = np.hstack([self.normals, -self.offsets[:, None]])
            inter = HalfspaceIntersection(hs, self.interior_point)
            verts = inter.intersections
        except Exception as exc:  # qhull raises on unbounded input
            raise ConfigError(f"domain is unbounded or degenerate: {exc}")
        if not np.all(np.isfinite(verts)):
            raise ConfigError("domain is unbounded (non-finite vertices)")
        # dedupe
        order = np.lexsort(verts.T)
        verts = verts[order]
        keep = np.ones(len(verts), dtype=bool)
        for i in range(1, len(verts)):
            if np.linalg.norm(verts[i] - verts[i - 1]) < 1e-12:
                keep[i] = False
        self.vertices = verts[keep]

        self.bbox = np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])
        self.bbox_diameter = float(np.linalg.norm(self.bbox[1] - self.bbox[0]))
        diffs = self.vertices[:, None, :] - self.vertices[None, :, :]
        self.diameter = float(np.sqrt((diffs ** 2).sum(-1)).max())
        self.volume = float(ConvexHull(self.vertices).volume)

        # ||(I - n_f n_f^T) n_g|| = sqrt(1 - (n_f . n_g)^2) for unit normals
        dots = self.normals @ self.normals.T
        self.tangent_norms = np.sqrt(np.clip(1.0 - dots ** 2, 0.0, None))

        tol = 1e-9 * max(self.bbox_diameter, 1.0)
        self._facet_frames = []
        self._facet_verts_t = []
        self.facet_areas = np.zeros(self.n_facets)
        for k in range(self.n_facets):
            on = np.abs(self.vertices @ self.normals[k] - self.offsets[k]) <= tol
            fverts = self.vertices[on]
            if len(fverts) < self.dim:
                raise ConfigError(f"half-space {k} is redundant (not a facet)")
            anchor = fverts.mean(axis=0)
            # orthonormal tangent basis from the SVD null space of the normal
            _, _, vt = np.linalg.svd(self.normals[k][None, :])
            tangent = vt[1:]
            t_coords = (fverts - anchor) @ tangent.T
            self._facet_frames.append((anchor, tangent))
            self._facet_verts_t.append(t_coords)
            if self.dim == 2:
                self.facet_areas[k] = t_coords[:, 0].max() - t_coords[:, 0].min()
            else:
                self.facet_areas[k] = float(ConvexHull(t_coords).volume)
        self.boundary_area = float(self.facet_areas.sum())

    # -- mask encoding for kernels --------------------------------------------

    def mask_arrays(self):
        """Flat (offsets, kinds, params) encoding of all facet masks."""
        counts = np.zeros(self.n_facets, dtype=np.int32)
        kinds, params = [], []
        for k in range(self.n_facets):
            for c in self.masks.get(k, []):
                counts[k] += 1
                kinds.append(int(c.kind))
                params.append(list(c.vec) + [c.value])
        offs = np.zeros(self.n_facets + 1, dtype=np.int32)
        np.cumsum(counts, out=offs[1:])
        kinds = np.asarray(kinds, dtype=np.int8)
        params = np.asarray(params, dtype=float).reshape(-1, self.dim + 1)
        return offs, kinds, params

    # -- queries ---------------------------------------------------------------

    def facet_frame(self, facet):
        """(anchor point, (n-1, n) orthonormal tangent rows) of a facet."""
        return self._facet_frames[facet]

    def facet_vertex_coords(self, facet):
        """Facet vertices expressed in its tangent frame, shape (V, n-1)."""
        return self._facet_verts_t[facet]

    def contains(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        m = x @ self.normals.T - self.offsets
        return np.asarray(m <= tol).all(axis=-1)

    def facet_of_point(self, x, tol=None):
        """Facet whose plane passes through boundary point ``x`` (closest plane)."""
        tol = self.boundary_tol if tol is None else tol
        r = np.abs(np.asarray(x, dtype=float) @ self.normals.T - self.offsets)
        k = int(np.argmin(r))
        if r[k] > tol:
            raise NotOnFacetError(f"point {x} is {r[k]:.3e} from the nearest facet plane")
        return k

    def exit_time(self, x, theta, graze_tol=1e-9):
        """First positive boundary crossing time and facet along ``x + t * theta``.

        Raises NoExitError if ``x`` lies outside the closed domain and
        GrazingRayError when the winning facet is hit near-tangentially.
        """
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        margins = self.offsets - x @ self.normals.T
        if margins.min() < -self.boundary_tol:
            raise NoExitError(f"start point {x} outside domain")
        den = theta @ self.normals.T
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = np.where(den > 0, margins / den, np.inf)
        tt = np.where(tt >= -self.boundary_tol, tt, np.inf)
        k = int(np.argmin(tt))
        t = tt[k]
        if not np.isfinite(t):
            raise NoExitError("no forward boundary crossing (unbounded direction)")
        if abs(den[k]) < graze_tol:
            raise GrazingRayError(f"exit at facet {k} grazing: |theta.nu|={abs(den[k]):.3e}")
        return max(float(t), 0.0), k

    def chord_interval(self, x, theta):
        """Line-domain intersection [t0, t1] by two-sided half-space clipping."""
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        den = theta @ self.normals.T
        num = self.offsets - x @ self.normals.T
        lo, hi = -np.inf, np.inf
        for d, m in zip(den, num):
            if d > 0:
                hi = min(hi, m / d)
            elif d < 0:
                lo = max(lo, m / d)
            elif m < 0:
                return 0.0, 0.0
        return lo, max(lo, hi)

    def _assert_on_facet(self, x, facet):
        x = np.asarray(x, dtype=float)
        r = abs(x @ self.normals[facet] - self.offsets[facet])
        if r > self.boundary_tol:
            raise NotOnFacetError(
                f"point is {r:.3e} off facet {facet} plane (tol {self.boundary_tol:.3e})")
        return x

    def in_measured_set(self, x, facet):
        """True iff the facet is MEASURE and all its mask constraints hold at x."""
        x = self._assert_on_facet(x, facet)
        if self.labels[facet] != FacetLabel.MEASURE:
            return False
        return all(c.margin(x) >= 0 for c in self.masks.get(facet, []))

    def facet_edge_distance(self, x, facet):
        """In-plane distance from x to the facet's relative boundary."""
        t = self.tangent_norms[facet]
        m = self.offsets - np.asarray(x, dtype=float) @ self.normals.T
        usable = t > _PARALLEL_TOL
        return float(np.min(m[usable] / t[usable]))

    def mask_boundary_distance(self, x, facet):
        """Distance to the nearest mask-constraint boundary (inf if no mask)."""
        cons = self.masks.get(facet, [])
        if not cons:
            return np.inf
        return float(min(abs(c.margin(x)) for c in cons))

    def facet_boundary_distance(self, x, facet):
        """Distance from x to the facet's relative boundary and, on MEASURE
        facets, to the measured-region boundary (minimum of the two)."""
        x = self._assert_on_facet(x, facet)
        d = self.facet_edge_distance(x, facet)
        if self.labels[facet] == FacetLabel.MEASURE:
            d = min(d, self.mask_boundary_distance(x, facet))
        return d

    def measured_classification(self, pts, facet):
        """Vectorized (in measured set, boundary distance) for points on one facet.

        The distance combines the facet's relative boundary with the mask
        boundary; on REFLECT facets ``in_set`` is all-False and the distance
        is the edge distance alone.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        m = self.offsets[None, :] - pts @ self.normals.T
        tn = self.tangent_norms[facet]
        usable = tn > _PARALLEL_TOL
        d = (m[:, usable] / tn[usable]).min(axis=1)
        if self.labels[facet] != FacetLabel.MEASURE:
            return np.zeros(len(pts), dtype=bool), d
        in_set = np.ones(len(pts), dtype=bool)
        for c in self.masks.get(facet, []):
            margin = c.margin(pts)
            in_set &= margin >= 0
            d = np.minimum(d, np.abs(margin))
        return in_set, d

    # -- sampling utilities ----------------------------------------------------

    def sample_interior(self, rng, count):
        """Uniform interior points by rejection from the bounding box."""
        out = np.empty((count, self.dim))
        got = 0
        lo, hi = self.bbox
        while got < count:
            cand = rng.uniform(lo, hi, size=(2 * (count - got) + 8, self.dim))
            ok = cand @ self.normals.T - self.offsets < 0
            cand = cand[ok.all(axis=1)]
            take = min(len(cand), count - got)
            out[got:got + take] = cand[:take]
            got += take
        return out

    def sample_boundary(self, rng, count, facets=None):
        """Area-weighted boundary points; returns (points, facet indices)."""
        facets = np.arange(self.n_facets) if facets is None else np.asarray(facets)
        areas = self.facet_areas[facets]
        pick = rng.choice(len(facets), size=count, p=areas / areas.sum())
        pts = np.empty((count, self.dim))
        fidx = facets[pick]
        for k in np.unique(fidx):
            rows = np.nonzero(fidx == k)[0]
            anchor, tangent = self._facet_frames[k]
            tv = self._facet_verts_t[k]
            lo, hi = tv.min(axis=0), tv.max(axis=0)
            need = len(rows)
            acc = []
            while need > 0:
                u = rng.uniform(lo, hi, size=(2 * need + 8, self.dim - 1))
                cand = anchor + u @ tangent
                m = self.offsets - cand @ self.normals.T
                t = self.tangent_norms[k]
                usable = t > _PARALLEL_TOL
                dmin = np.min(m[:, usable] / t[usable], axis=1)
                cand = cand[dmin >= 0]
                acc.append(cand[:need])
                need -= len(cand[:need])
            pts[rows] = np.vstack(acc)
        return pts, fidx

    def sample_inward_cosine(self, rng, facet_idx):
        """Cosine-weighted inward unit directions, one per facet index given.

        The density is |nu . theta| / c on the inward hemisphere with
        c = 2 (2D) or pi (3D), the natural importance sampler for the
        flux-weighted boundary measure.
        """
        facet_idx = np.asarray(facet_idx)
        count = len(facet_idx)
        out = np.empty((count, self.dim))
        for k in np.unique(facet_idx):
            rows = np.nonzero(facet_idx == k)[0]
            _, tangent = self._facet_frames[k]
            nu = self.normals[k]
            if self.dim == 2:
                s = rng.uniform(-1.0, 1.0, size=len(rows))
                c = np.sqrt(1.0 - s ** 2)
                out[rows] = -c[:, None] * nu + s[:, None] * tangent[0]
            else:
                u1 = rng.uniform(size=len(rows))
                u2 = rng.uniform(size=len(rows))
                cz = np.sqrt(u1)
                sz = np.sqrt(1.0 - u1)
                az = 2 * np.pi * u2
                out[rows] = (-cz[:, None] * nu
                             + (sz * np.cos(az))[:, None] * tangent[0]
                             + (sz * np.sin(az))[:, None] * tangent[1])
        return out

    # -- serialization ----------------------------------------------------------

    def to_dict(self):
        d = {
            "format": "brokenray-domain",
            "version": 1,
            "halfspaces": [
                {"normal": list(map(float, n)), "offset": float(o),
                 "label": FacetLabel(l).name}
                for n, o, l in zip(self.normals, self.offsets, self.labels)
            ],
        }
        for k, cons in self.masks.items():
            d["halfspaces"][k]["mask"] = [c.to_dict() for c in cons]
        return d

    @staticmethod
    def from_dict(d):
        if d.get("format") != "brokenray-domain":
            raise ConfigError("not a domain config")
        if d.get("version") != 1:
            raise ConfigError(f"unsupported domain config version {d.get('version')!r}")
        hs = d["halfspaces"]
        normals = [h["normal"] for h in hs]
        offsets = [h["offset"] for h in hs]
        labels = [h["label"] for h in hs]
        masks = {i: [MaskConstraint.from_dict(m) for m in h["mask"]]
                 for i, h in enumerate(hs) if h.get("mask")}
        return ConvexDomain(normals, offsets, labels, masks)


@dataclass(frozen=True)
class BoundaryJet:
    """Inward ray state on the boundary: point, unit direction, facet index."""

    x: tuple
    theta: tuple
    facet: int

    @staticmethod
    def make(domain, x, theta, facet=None):
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        theta = theta / np.linalg.norm(theta)
        facet = domain.facet_of_point(x) if facet is None else facet
        domain._assert_on_facet(x, facet)
        if domain.normals[facet] @ theta >= 0:
            raise ConfigError("jet direction is not inward")
        return BoundaryJet(tuple(x), tuple(theta), int(facet))

    @property
    def point(self):
        return np.asarray(self.x)

    @property
    def direction(self):
        return np.asarray(self.theta)


# -- stock domains ---------------------------------------------------------


def box_domain(lo, hi, measure_facets=(), masks=None):
    """Axis-aligned box; facet order: (-x0, +x0, -x1, +x1, ...)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = len(lo)
    normals, offsets = [], []
    for ax in range(n):
        e = np.zeros(n)
        e[ax] = -1.0
        normals.append(e.copy())
        offsets.append(-lo[ax])
        normals.append(-e)
        offsets.append(hi[ax])
    labels = [FacetLabel.MEASURE if i in set(measure_facets) else FacetLabel.REFLECT
              for i in range(2 * n)]
    return ConvexDomain(normals, offsets, labels, masks)


def unit_square(measure_facets=(0,), masks=None):
    """Unit square [0,1]^2. Facets: 0=left, 1=right, 2=bottom, 3=top."""
    return box_domain([0, 0], [1, 1], measure_facets, masks)


def unit_cube(measure_facets=(0, 2, 4), masks=None):
    """Unit cube [0,1]^3. Facets: 0=x0-,1=x0+,2=x1-,3=x1+,4=x2-,5=x2+."""
    return box_domain([0, 0, 0], [1, 1, 1], measure_facets, masks)


def regular_polygon(sides, radius=1.0, center=(0.0, 0.0), measure_facets=(), masks=None):
    """Regular polygon given by tangent half-spaces at ``sides`` angles."""
    center = np.asarray(center, dtype=float)
    ang = 2 * np.pi * np.arange(sides) / sides
    normals = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    apothem = radius * np.cos(np.pi / sides)
    offsets = apothem + normals @ center
    labels = [FacetLabel.MEASURE if i in set(measure_facets) else FacetLabel.REFLECT
              for i in range(sides)]
    return ConvexDomain(normals, offsets, labels, masks)
