"""Mirror reflections across facet hyperplanes and path unfolding.

Composing the mirrors of a ray's reflection sequence straightens the broken
ray into a single line; the same maps transport points and covectors between
the folded and unfolded pictures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .billiards import BrokenRay, RayStatus
from .errors import NoncollinearUnfoldError, NotRegularError

__all__ = [
    "HyperplaneSeq",
    "AffineMap",
    "reflect_point",
    "reflect_vector",
    "unfold_maps",
    "unfold_ray",
    "UnfoldedRay",
    "unfold_covector",
    "reflected_source",
]


def reflect_point(a, xi, x):
    """Mirror point(s) x across the hyperplane through ``a`` with unit normal ``xi``."""
    a = np.asarray(a, dtype=float)
    xi = np.asarray(xi, dtype=float)
    x = np.asarray(x, dtype=float)
    return x + 2.0 * np.multiply.outer((a - x) @ xi, xi)


def reflect_vector(xi, v):
    """Mirror vector(s) v across the plane through the origin orthogonal to ``xi``."""
    xi = np.asarray(xi, dtype=float)
    v = np.asarray(v, dtype=float)
    return v - 2.0 * np.multiply.outer(v @ xi, xi)


@dataclass(frozen=True)
class AffineMap:
    """Orthogonal-plus-offset map ``x -> x @ Q.T + b``."""

    Q: np.ndarray
    b: np.ndarray

    @staticmethod
    def identity(n):
        return AffineMap(np.eye(n), np.zeros(n))

    @staticmethod
    def mirror(a, xi):
        xi = np.asarray(xi, dtype=float)
        a = np.asarray(a, dtype=float)
        Q = np.eye(len(xi)) - 2.0 * np.outer(xi, xi)
        return AffineMap(Q, 2.0 * (a @ xi) * xi)

    def apply(self, x):
        return np.asarray(x, dtype=float) @ self.Q.T + self.b

    def apply_vector(self, v):
        return np.asarray(v, dtype=float) @ self.Q.T

    def then(self, other: "AffineMap"):
        """Composition ``other o self`` (self applied first)."""
        return AffineMap(other.Q @ self.Q, other.Q @ self.b + other.b)

    def inverse(self):
        return AffineMap(self.Q.T, -self.Q.T @ self.b)


@dataclass(frozen=True)
class HyperplaneSeq:
    """Ordered reflection hyperplanes (anchor point, unit normal) of a ray."""

    anchors: np.ndarray  # (N, n)
    normals: np.ndarray  # (N, n)

    def __len__(self):
        return len(self.anchors)

    @staticmethod
    def from_ray(domain, ray: BrokenRay):
        if ray.n_reflections == 0:
            n = ray.seg_start.shape[1]
            return HyperplaneSeq(np.zeros((0, n)), np.zeros((0, n)))
        anchors = ray.seg_start[1:]
        normals = domain.normals[ray.reflect_facets]
        return HyperplaneSeq(anchors.copy(), normals.copy())


def unfold_maps(seq: HyperplaneSeq):
    """Maps C_j carrying segment j onto the unfolded line, C_0 = identity.

    C_j applies the mirrors of reflections j, j-1, ..., 1 in that order, the
    inverse of the reflection process; each C_j is its own bookkeeping unit
    and ``C_j.inverse()`` pulls unfolded points back to the folded picture.
    """
    n = seq.anchors.shape[1]
    maps = [AffineMap.identity(n)]
    for j in range(len(seq)):
        mirror = AffineMap.mirror(seq.anchors[j], seq.normals[j])
        maps.append(mirror.then(maps[j]))
    return maps


@dataclass
class UnfoldedRay:
    start: np.ndarray
    direction: np.ndarray
    length: float
    seg_maps: list
    collinearity_defect: float

    @property
    def end_point(self):
        return self.start + self.length * self.direction


def unfold_ray(domain, ray: BrokenRay, tol=1e-9) -> UnfoldedRay:
    """Straighten a broken ray by composing mirrors across its reflection planes.

    Raises NoncollinearUnfoldError when the images of the segment junctions
    miss the unfolded line by more than ``tol`` (a geometry bug, not a data
    condition).
    """
    if ray.status not in (RayStatus.MEASURED, RayStatus.TRAPPED):
        raise NotRegularError(f"cannot unfold ray with status {ray.status.name}")
    seq = HyperplaneSeq.from_ray(domain, ray)
    maps = unfold_maps(seq)
    start = ray.seg_start[0].copy()
    direction = ray.seg_dir[0].copy()
    defect = 0.0
    for j in range(ray.n_segments):
        m = maps[j]
        p = m.apply(ray.seg_start[j])
        q = m.apply(ray.seg_start[j] + ray.seg_len[j] * ray.seg_dir[j])
        for z in (p, q):
            r = z - start
            off = r - (r @ direction) * direction
            defect = max(defect, float(np.linalg.norm(off)))
        defect = max(defect, float(np.linalg.norm(m.apply_vector(ray.seg_dir[j]) - direction)))
    if defect > tol:
        raise NoncollinearUnfoldError(f"unfold defect {defect:.3e} exceeds {tol:.1e}")
    return UnfoldedRay(start=start, direction=direction,
                       length=ray.total_length, seg_maps=maps,
                       collinearity_defect=defect)


def unfold_covector(seq: HyperplaneSeq, j, z, xi):
    """Transport a point/covector pair through the first j mirrors.

    Involution: applying the same call to the result returns the input.
    """
    if not 0 <= j <= len(seq):
        raise ValueError(f"j={j} out of range for {len(seq)} reflection planes")
    z = np.asarray(z, dtype=float).copy()
    xi = np.asarray(xi, dtype=float).copy()
    for k in range(j - 1, -1, -1):
        z = reflect_point(seq.anchors[k], seq.normals[k], z)
        xi = reflect_vector(seq.normals[k], xi)
    return z, xi


def reflected_source(seq: HyperplaneSeq, k, l, x):
    """Image of ``x`` under the mirrors of reflections k+1, ..., l (in order).

    For x on segment k of the generating ray and l > k, the image lies
    outside the domain, on the extension of segment l's line.
    """
    if not 0 <= k < l <= len(seq):
        raise ValueError(f"need 0 <= k < l <= {len(seq)}, got k={k}, l={l}")
    x = np.asarray(x, dtype=float).copy()
    for m in range(k, l):
        x = reflect_point(seq.anchors[m], seq.normals[m], x)
    return x
