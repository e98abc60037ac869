"""Deterministic direction sets and quadratures on the unit sphere/circle."""

from __future__ import annotations

import numpy as np

__all__ = [
    "uniform_circle",
    "fibonacci_sphere",
    "sphere_quadrature",
    "orthonormal_complement",
    "subsphere_directions",
]


def uniform_circle(n, offset=0.5):
    ang = (np.arange(n) + offset) * 2 * np.pi / n
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def fibonacci_sphere(n):
    """Near-uniform deterministic point set on the 2-sphere."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.clip(1.0 - z ** 2, 0.0, None))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    az = golden * i
    return np.stack([r * np.cos(az), r * np.sin(az), z], axis=1)


def sphere_quadrature(dim, n):
    """(directions, weights) integrating over the full unit sphere."""
    if dim == 2:
        d = uniform_circle(n)
        return d, np.full(n, 2 * np.pi / n)
    d = fibonacci_sphere(n)
    return d, np.full(n, 4 * np.pi / n)


def orthonormal_complement(xi):
    """Rows span the hyperplane orthogonal to the unit vector xi."""
    xi = np.asarray(xi, dtype=float)
    _, _, vt = np.linalg.svd(xi[None, :])
    return vt[1:]


def subsphere_directions(xi, n):
    """Quadrature over unit directions orthogonal to xi.

    2D: the two opposite tangent directions with unit (counting) weights.
    3D: n equispaced directions on the orthogonal great circle, weight 2*pi/n.
    """
    xi = np.asarray(xi, dtype=float)
    basis = orthonormal_complement(xi)
    if len(xi) == 2:
        t = basis[0]
        return np.stack([t, -t]), np.ones(2)
    ang = (np.arange(n) + 0.5) * 2 * np.pi / n
    dirs = np.outer(np.cos(ang), basis[0]) + np.outer(np.sin(ang), basis[1])
    return dirs, np.full(n, 2 * np.pi / n)
