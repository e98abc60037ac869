"""Visible covectors and measured-set geometry conditions.

A covector (x, xi) is visible when some regular broken ray with a bounded
reflection count passes through x orthogonally to xi while carrying positive
cutoff weight; a point is fully visible when every sampled covector at it is.
Where covectors are invisible, reconstruction cannot be stable, so these maps
predict the reliable region of an inversion.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .billiards import TraceTolerances, trace_through_interior
from .directions import fibonacci_sphere, subsphere_directions, uniform_circle
from .geometry import BoundaryJet, ConvexDomain, FacetLabel
from .transport import evaluate_cutoff

__all__ = [
    "SearchSpec",
    "VisibilityMap",
    "covector_visible",
    "covector_visible_batch",
    "visible_set_map",
    "default_covector_grid",
    "ConditionReport",
    "check_measured_boundary_condition",
]


@dataclass(frozen=True)
class SearchSpec:
    """Direction search resolution for visibility queries.

    ``n_subsphere`` base directions orthogonal to the covector (3D; 2D has
    exactly one normal line), plus ``refine_levels`` rounds of midpoint
    refinement between adjacent directions whose outcomes differ.
    """

    n_subsphere: int = 32
    refine_levels: int = 1


def default_covector_grid(dim):
    """Default covector directions: 64 on the circle, a 266-point sphere set."""
    return uniform_circle(64) if dim == 2 else fibonacci_sphere(266)


def _search_angles(spec: SearchSpec):
    return (np.arange(spec.n_subsphere) + 0.5) * 2 * np.pi / spec.n_subsphere


def covector_visible_batch(domain: ConvexDomain, alpha, n_max, X, XI,
                           search: SearchSpec = SearchSpec(),
                           tol: TraceTolerances = None):
    """Batched visibility with witness jets.

    Returns (visible (P,), witness_x, witness_theta, witness_facet); witness
    rows of invisible covectors are zero/-1.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    XI = np.atleast_2d(np.asarray(XI, dtype=float))
    P = len(X)
    visible = np.zeros(P, dtype=bool)
    wx = np.zeros((P, domain.dim))
    wth = np.zeros((P, domain.dim))
    wf = np.full(P, -1, dtype=np.int64)

    def try_dirs(i, dirs):
        pts = np.broadcast_to(X[i], dirs.shape).copy()
        it = trace_through_interior(domain, pts, dirs, n_max, tol)
        av = np.zeros(len(dirs))
        rows = np.nonzero(it.valid)[0]
        if len(rows):
            av[rows] = evaluate_cutoff(alpha, it.jet_x[rows], it.jet_theta[rows])
        good = it.valid & (av > 0)
        return good, it

    for i in range(P):
        n_base = 2 if domain.dim == 2 else search.n_subsphere
        dirs, _ = subsphere_directions(XI[i], n_base)
        good, it = try_dirs(i, dirs)
        if not good.any() and domain.dim == 3:
            # near-miss refinement: bisect the angular grid between misses
            from .directions import orthonormal_complement
            basis = orthonormal_complement(XI[i])
            ang = _search_angles(search)
            for _ in range(search.refine_levels):
                mid = 0.5 * (ang + np.roll(ang, -1))
                mid[-1] = 0.5 * (ang[-1] + ang[0] + 2 * np.pi)
                dirs = np.outer(np.cos(mid), basis[0]) + np.outer(np.sin(mid), basis[1])
                good, it = try_dirs(i, dirs)
                if good.any():
                    break
                ang = np.sort(np.concatenate([ang, np.mod(mid, 2 * np.pi)]))
        hits = np.nonzero(good)[0]
        if len(hits):
            k = int(hits[0])
            visible[i] = True
            wx[i] = it.jet_x[k]
            wth[i] = it.jet_theta[k]
            wf[i] = it.jet_facet[k]
    return visible, wx, wth, wf


def covector_visible(domain, alpha, n_max, x, xi, search: SearchSpec = SearchSpec(),
                     tol: TraceTolerances = None):
    """(visible, witness jet or None) for one covector."""
    v, wx, wth, wf = covector_visible_batch(domain, alpha, n_max,
                                            np.asarray(x)[None, :],
                                            np.asarray(xi)[None, :], search, tol)
    if not v[0]:
        return False, None
    return True, BoundaryJet(tuple(wx[0]), tuple(wth[0]), int(wf[0]))


@dataclass
class VisibilityMap:
    points: np.ndarray        # (P, n)
    xis: np.ndarray           # (D, n)
    visible: np.ndarray       # (P, D) bool
    witness_x: np.ndarray     # (P, D, n)
    witness_theta: np.ndarray
    witness_facet: np.ndarray
    n_max: int

    def visible_fraction(self):
        return self.visible.mean(axis=1)

    def fully_visible(self):
        return self.visible.all(axis=1)

    def invisible_pairs(self):
        """Indices (point, covector) of invisible pairs."""
        p, d = np.nonzero(~self.visible)
        return p, d


def visible_set_map(domain, alpha, n_max, points, xis=None,
                    search: SearchSpec = SearchSpec(),
                    tol: TraceTolerances = None) -> VisibilityMap:
    """Visibility of every (point, covector) pair on the product grid."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    xis = default_covector_grid(domain.dim) if xis is None else np.atleast_2d(xis)
    P, D = len(points), len(xis)
    vis = np.zeros((P, D), dtype=bool)
    wx = np.zeros((P, D, domain.dim))
    wth = np.zeros((P, D, domain.dim))
    wf = np.full((P, D), -1, dtype=np.int64)
    for d in range(D):
        XI = np.broadcast_to(xis[d], points.shape).copy()
        v, a, b, c = covector_visible_batch(domain, alpha, n_max, points, XI, search, tol)
        vis[:, d] = v
        wx[:, d] = a
        wth[:, d] = b
        wf[:, d] = c
    return VisibilityMap(points, xis, vis, wx, wth, wf, n_max)


@dataclass
class ConditionReport:
    """Outcome of the measured-boundary flatness check."""

    satisfied: bool
    n_checked: int
    violations: list = dc_field(default_factory=list)  # (point, xi, fraction)

    def __str__(self):
        state = "satisfied" if self.satisfied else f"{len(self.violations)} violations"
        return f"measured-boundary condition over {self.n_checked} covectors: {state}"


def _measured_edge_segments(domain: ConvexDomain):
    """Pieces of the measured-set boundary lying on polytope edges/vertices.

    An edge shared by a measured facet whose measured region reaches it is
    part of the boundary unless the facet on the other side is also measured
    there. Returns (segment starts, segment ends); vertices in 2D appear as
    zero-length segments.
    """
    segs = []
    tol = 1e-9 * max(domain.bbox_diameter, 1.0)

    def reaches(facet, pts):
        if domain.labels[facet] != FacetLabel.MEASURE:
            return np.zeros(len(pts), dtype=bool)
        ok = np.ones(len(pts), dtype=bool)
        for c in domain.masks.get(facet, []):
            ok &= c.margin(pts) >= -tol
        return ok

    for f in range(domain.n_facets):
        if domain.labels[f] != FacetLabel.MEASURE:
            continue
        on_f = np.abs(domain.vertices @ domain.normals[f] - domain.offsets[f]) <= tol
        for g in range(domain.n_facets):
            if g == f:
                continue
            on_g = np.abs(domain.vertices @ domain.normals[g] - domain.offsets[g]) <= tol
            shared = domain.vertices[on_f & on_g]
            if len(shared) == 0:
                continue
            if len(shared) == 1:
                a = b = shared[0]
            else:
                d = shared[-1] - shared[0]
                proj = shared @ d
                a = shared[int(np.argmin(proj))]
                b = shared[int(np.argmax(proj))]
            probes = np.array([a, 0.5 * (a + b), b])
            carry = reaches(f, probes) & ~reaches(g, probes)
            if carry.any():
                segs.append((a, b))
    if not segs:
        return np.zeros((0, domain.dim)), np.zeros((0, domain.dim))
    A = np.array([s[0] for s in segs])
    B = np.array([s[1] for s in segs])
    return A, B


def _dist_to_segments(Z, A, B):
    """Min distance from each row of Z to any of the segments [A_i, B_i]."""
    if len(A) == 0:
        return np.full(len(Z), np.inf)
    d = B - A
    den = np.maximum((d ** 2).sum(axis=1), 1e-300)
    out = np.full(len(Z), np.inf)
    for i in range(len(A)):
        t = np.clip((Z - A[i]) @ d[i] / den[i], 0.0, 1.0)
        p = A[i][None, :] + t[:, None] * d[i][None, :]
        out = np.minimum(out, np.linalg.norm(Z - p, axis=1))
    return out


def check_measured_boundary_condition(domain: ConvexDomain, points, xis=None,
                                      n_section=64, margin=None,
                                      contained_fraction=0.08) -> ConditionReport:
    """Detect hyperplane sections of the boundary that contain a piece of the
    measured-set boundary.

    For each (x, xi) the curve (plane through x orthogonal to xi) cut out of
    the boundary is sampled; the covector fails when a substantial fraction
    of the samples lies within ``margin`` of the measured-set boundary (mask
    surfaces and boundary-carrying polytope edges). Transversal crossings
    contribute isolated points and do not trigger; a straight or planar piece
    of the measured-set boundary is flagged exactly by the planes containing
    it. Curved mask boundaries lie in no section plane, so they never trigger.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    xis = default_covector_grid(domain.dim) if xis is None else np.atleast_2d(xis)
    margin = margin if margin is not None else 1e-6 * domain.diameter
    # in 2D the measured-set boundary is a finite point set and a section is
    # two points; demand essentially full containment there
    frac_tol = contained_fraction if domain.dim >= 3 else 0.99
    edge_a, edge_b = _measured_edge_segments(domain)
    constraints = [c for f in range(domain.n_facets)
                   for c in domain.masks.get(f, [])
                   if domain.labels[f] == FacetLabel.MEASURE]
    from . import _core
    violations = []
    for i in range(len(points)):
        for j in range(len(xis)):
            dirs, _ = subsphere_directions(xis[j], n_section)
            pts = np.broadcast_to(points[i], dirs.shape).copy()
            t, facet, ok = _core.exit_times(domain.normals, domain.offsets,
                                            pts, dirs, domain.boundary_tol)
            hits = (pts + t[:, None] * dirs)[ok]
            if len(hits) == 0:
                continue
            dist = _dist_to_segments(hits, edge_a, edge_b)
            for c in constraints:
                dist = np.minimum(dist, np.abs(c.margin(hits)))
            frac = float(np.mean(dist <= margin))
            if frac >= frac_tol:
                violations.append((points[i].copy(), xis[j].copy(), frac))
    return ConditionReport(satisfied=not violations,
                           n_checked=len(points) * len(xis),
                           violations=violations)
