"""Billiard map and broken-ray tracing with regularity classification.

A broken ray starts at an inward jet on the measured part of the boundary,
reflects by geometric optics on REFLECT facets, and terminates when it lands
on a measured facet region, comes too close to a facet edge or to the
measured-region boundary, or exhausts the reflection cap.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import _core
from .errors import EdgeHitError, GrazingRayError, NotRegularError
from .geometry import BoundaryJet, ConvexDomain

__all__ = [
    "RayStatus",
    "TraceTolerances",
    "BrokenRay",
    "reflect_direction",
    "billiard_map",
    "backward_billiard_map",
    "trace_broken_ray",
    "trace_jets",
    "trace_through_interior",
    "InteriorTrace",
    "reflection_count",
]


class RayStatus(IntEnum):
    """Termination status of a traced ray."""

    MEASURED = _core.STATUS_MEASURED
    TRAPPED = _core.STATUS_TRAPPED
    EDGE = _core.STATUS_EDGE
    NEAR_MASK = _core.STATUS_NEAR_MASK
    UNMEASURED = _core.STATUS_UNMEASURED
    NO_EXIT = _core.STATUS_NO_EXIT


@dataclass(frozen=True)
class TraceTolerances:
    """Guard margins for regularity classification.

    ``edge_margin`` rejects hits near facet relative boundaries (corners are
    not reflected), ``mask_margin`` rejects hits near the measured-region
    boundary, ``graze_tol`` rejects near-tangential incidence.
    """

    edge_margin: float
    mask_margin: float
    graze_tol: float = 1e-9

    @staticmethod
    def for_domain(domain: ConvexDomain, scale: float = 1e-3, graze_tol: float = 1e-9):
        d = scale * domain.diameter
        return TraceTolerances(edge_margin=d, mask_margin=d, graze_tol=graze_tol)


@dataclass
class BrokenRay:
    """Traced piecewise-linear ray.

    ``seg_start[k] + t * seg_dir[k]`` for ``t in [0, seg_len[k]]`` is segment
    ``k``; consecutive segments join continuously and each junction obeys the
    mirror law on the facet recorded in ``reflect_facets``.
    """

    seg_start: np.ndarray   # (S, n)
    seg_dir: np.ndarray     # (S, n)
    seg_len: np.ndarray     # (S,)
    reflect_facets: np.ndarray  # (S-1,) int
    status: RayStatus
    start_jet: BoundaryJet
    end_facet: int

    @property
    def n_segments(self):
        return len(self.seg_len)

    @property
    def n_reflections(self):
        return len(self.reflect_facets)

    @property
    def total_length(self):
        return float(self.seg_len.sum())

    @property
    def end_point(self):
        return self.seg_start[-1] + self.seg_len[-1] * self.seg_dir[-1]

    def segments(self):
        """List of (start, direction, length) triples."""
        return [(self.seg_start[k].copy(), self.seg_dir[k].copy(), float(self.seg_len[k]))
                for k in range(self.n_segments)]

    def point_at(self, j, t):
        return self.seg_start[j] + t * self.seg_dir[j]

    def end_jet(self, domain):
        """Terminal inward jet (end point, reversed arrival direction)."""
        if self.status != RayStatus.MEASURED:
            raise NotRegularError(f"ray status is {self.status.name}")
        return BoundaryJet.make(domain, self.end_point, -self.seg_dir[-1], self.end_facet)


def reflect_direction(theta, nu, graze_tol=1e-9):
    """Mirror ``theta`` across the plane orthogonal to ``nu``.

    Preserves the tangential component and flips the normal one.
    """
    theta = np.asarray(theta, dtype=float)
    nu = np.asarray(nu, dtype=float)
    d = theta @ nu
    if abs(d) < graze_tol:
        raise GrazingRayError(f"|theta.nu|={abs(d):.3e} below grazing tolerance")
    out = theta - 2.0 * d * nu
    return out / np.linalg.norm(out)


def billiard_map(domain: ConvexDomain, jet: BoundaryJet, tol: TraceTolerances = None):
    """One bounce of the pure billiard map (labels ignored).

    Maps an inward jet to the next inward jet after one specular reflection.
    """
    tol = tol or TraceTolerances.for_domain(domain)
    t, facet = domain.exit_time(jet.point, jet.direction, graze_tol=tol.graze_tol)
    hit = jet.point + t * jet.direction
    if domain.facet_edge_distance(hit, facet) < tol.edge_margin:
        raise EdgeHitError(f"hit at {hit} within edge margin of facet {facet}")
    theta = reflect_direction(jet.direction, domain.normals[facet], tol.graze_tol)
    return BoundaryJet(tuple(hit), tuple(theta), facet)


def backward_billiard_map(domain: ConvexDomain, jet: BoundaryJet, tol: TraceTolerances = None):
    """Inverse billiard map: the inward jet whose bounce produces ``jet``."""
    tol = tol or TraceTolerances.for_domain(domain)
    theta_prev = reflect_direction(jet.direction, domain.normals[jet.facet], tol.graze_tol)
    t, facet = domain.exit_time(jet.point, -theta_prev, graze_tol=tol.graze_tol)
    x_prev = jet.point - t * theta_prev
    if domain.facet_edge_distance(x_prev, facet) < tol.edge_margin:
        raise EdgeHitError("backward hit within edge margin")
    return BoundaryJet(tuple(x_prev), tuple(theta_prev), facet)


def billiard_map_batch(domain: ConvexDomain, X, TH, graze_tol=1e-9):
    """Vectorized pure billiard map on inward jets (labels ignored).

    Returns (X', TH', valid); rows with no exit or grazing incidence are
    flagged invalid (a measure-zero set for interior dynamics).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    TH = np.atleast_2d(np.asarray(TH, dtype=float))
    t, facet, ok = _core.exit_times(domain.normals, domain.offsets, X, TH,
                                    domain.boundary_tol)
    hit = X + t[:, None] * TH
    nu = domain.normals[facet]
    c = np.einsum("ij,ij->i", TH, nu)
    valid = ok & (np.abs(c) >= graze_tol)
    out = TH - 2.0 * c[:, None] * nu
    out /= np.linalg.norm(out, axis=1)[:, None]
    return hit, out, valid


def _domain_arrays(domain: ConvexDomain):
    offs, kinds, params = domain.mask_arrays()
    return (domain.normals, domain.offsets, domain.labels, domain.tangent_norms,
            offs, kinds, params)


def trace_jets(domain: ConvexDomain, X, TH, n_max, tol: TraceTolerances = None):
    """Batched raw trace; see ``_core.trace`` for the output layout."""
    tol = tol or TraceTolerances.for_domain(domain)
    return _core.trace(*_domain_arrays(domain),
                       np.atleast_2d(np.asarray(X, dtype=float)),
                       np.atleast_2d(np.asarray(TH, dtype=float)),
                       int(n_max), tol.graze_tol, tol.edge_margin,
                       tol.mask_margin, domain.boundary_tol)


def trace_broken_ray(domain: ConvexDomain, jet: BoundaryJet, n_max=64,
                     tol: TraceTolerances = None) -> BrokenRay:
    """Trace a single broken ray from an inward boundary jet."""
    status, nseg, s0, sd, sl, hf = trace_jets(
        domain, jet.point[None, :], jet.direction[None, :], n_max, tol)
    k = int(nseg[0])
    return BrokenRay(
        seg_start=s0[0, :k].copy(),
        seg_dir=sd[0, :k].copy(),
        seg_len=sl[0, :k].copy(),
        reflect_facets=hf[0, :max(k - 1, 0)].copy(),
        status=RayStatus(int(status[0])),
        start_jet=jet,
        end_facet=int(hf[0, k - 1]) if k else -1,
    )


def reflection_count(ray: BrokenRay) -> int:
    """Number of internal reflections of a ray that ended on the measured set."""
    if ray.status != RayStatus.MEASURED:
        raise NotRegularError(f"ray status is {ray.status.name}, not MEASURED")
    return ray.n_reflections


@dataclass
class InteriorTrace:
    """Full broken ray through an interior point, split at that point.

    The ray runs jet -> ... -> x (backward part, reversed) -> ... -> end
    (forward part). ``j_at_x`` counts reflections between the start jet and
    the segment containing x.
    """

    valid: np.ndarray           # (R,) bool
    jet_x: np.ndarray           # (R, n) start-jet base points
    jet_theta: np.ndarray       # (R, n) start-jet directions
    jet_facet: np.ndarray       # (R,) int
    j_at_x: np.ndarray          # (R,) int
    n_total: np.ndarray         # (R,) int, total reflections of the full ray
    back: tuple                 # raw trace outputs for (x, -theta)
    fwd: tuple                  # raw trace outputs for (x, theta)


def trace_through_interior(domain: ConvexDomain, X, TH, n_max,
                           tol: TraceTolerances = None) -> InteriorTrace:
    """Trace the full broken rays through interior points X with directions TH.

    A row is valid when both half-traces terminate on the measured set and
    the combined reflection count stays within ``n_max``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    TH = np.atleast_2d(np.asarray(TH, dtype=float))
    fwd = trace_jets(domain, X, TH, n_max, tol)
    back = trace_jets(domain, X, -TH, n_max, tol)
    st_f, ns_f = fwd[0], fwd[1]
    st_b, ns_b = back[0], back[1]
    n_refl = (ns_f - 1) + (ns_b - 1)
    valid = ((st_f == _core.STATUS_MEASURED) & (st_b == _core.STATUS_MEASURED)
             & (n_refl <= n_max))

    R = len(valid)
    rows = np.arange(R)
    last = np.maximum(ns_b - 1, 0)
    b_start, b_dir, b_len, b_hit = back[2], back[3], back[4], back[5]
    end_pt = b_start[rows, last] + b_len[rows, last, None] * b_dir[rows, last]
    jet_theta = -b_dir[rows, last]
    jet_facet = b_hit[rows, last]
    return InteriorTrace(
        valid=valid,
        jet_x=end_pt,
        jet_theta=jet_theta,
        jet_facet=jet_facet,
        j_at_x=np.maximum(ns_b - 1, 0),
        n_total=n_refl,
        back=back,
        fwd=fwd,
    )
