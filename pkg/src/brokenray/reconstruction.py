"""Matrix-free iterative inversion and empirical stability probes."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import ConfigError, SolverDivergedError
from .fields import ScalarGridField
from .transport import BrokenRayOperator, Sinogram

__all__ = [
    "SolverConfig",
    "ConvergenceLog",
    "solve",
    "h1_norm",
    "grad_components",
    "StabilityReport",
    "stability_probe",
    "PerturbationTable",
    "perturbation_probe",
    "loglog_slope",
]


@dataclass
class SolverConfig:
    method: str = "CGLS"          # or "LANDWEBER"
    max_iters: int = 200
    rel_tol: float = 1e-8         # on the normal-equation residual
    landweber_step: float = None  # default 0.9 / ||A||^2 by power iteration
    mask: np.ndarray = None       # optional support mask over the grid

    def __post_init__(self):
        if self.method not in ("CGLS", "LANDWEBER"):
            raise ConfigError(f"unknown solver method {self.method!r}")
        if self.mask is not None and not np.any(self.mask):
            raise ConfigError("support mask is empty")


@dataclass
class ConvergenceLog:
    residuals: list = dc_field(default_factory=list)         # data-space ||Af - g||
    normal_residuals: list = dc_field(default_factory=list)  # ||A^T (Af - g)||
    status: str = "RUNNING"
    iterations: int = 0


def _masked(values, mask):
    if mask is None:
        return values
    out = values.copy()
    out[~mask] = 0.0
    return out


def solve(op: BrokenRayOperator, data, cfg: SolverConfig = None):
    """Least-squares inversion of the forward operator in the flux-weighted
    data norm, restricted to the support mask when given.

    Returns (field, ConvergenceLog). Raises SolverDivergedError when the data
    residual climbs past 10x its running floor (an adjoint-mismatch detector);
    hitting the iteration cap is recorded in the log, not raised.
    """
    cfg = cfg or SolverConfig()
    g = data.values if isinstance(data, Sinogram) else np.asarray(data, dtype=float)
    mask = cfg.mask
    if mask is not None and mask.shape != tuple(op.grid.dims):
        raise ConfigError("mask shape does not match the grid")
    log = ConvergenceLog()

    def A(fv):
        return op.forward_values(op.grid.like(fv))

    def At(rv):
        return _masked(op.adjoint_values(rv).values, mask)

    w = op.sampling.weight
    f = np.zeros(op.grid.dims)
    r = g - A(f)
    vol = op.grid.cell_volume

    def dnorm(v):
        return float(np.sqrt(np.sum(w * v ** 2)))

    def gnorm(u):
        return float(np.sqrt(vol * np.sum(u ** 2)))

    if cfg.method == "LANDWEBER":
        nrm2 = op.operator_norm_estimate() ** 2
        step = cfg.landweber_step
        if step is None:
            step = 0.9 / max(nrm2, 1e-300)
        if not 0 < step < 2.0 / max(nrm2, 1e-300):
            raise ConfigError(f"Landweber step {step} outside (0, 2/||A||^2)")
        s = At(r)
        s0 = gnorm(s)
        floor = dnorm(r)
        for it in range(cfg.max_iters):
            f = f + step * s
            r = g - A(f)
            s = At(r)
            res = dnorm(r)
            log.residuals.append(res)
            log.normal_residuals.append(gnorm(s))
            floor = min(floor, res)
            if res > 10.0 * floor and res > 0:
                log.status = "DIVERGED"
                raise SolverDivergedError(f"residual {res:.3e} vs floor {floor:.3e}")
            if log.normal_residuals[-1] <= cfg.rel_tol * max(s0, 1e-300):
                log.status = "CONVERGED"
                log.iterations = it + 1
                return op.grid.like(f), log
        log.status = "MAX_ITERS"
        log.iterations = cfg.max_iters
        return op.grid.like(f), log

    # CGLS on min ||Af - g||_w
    s = At(r)
    p = s.copy()
    gamma = vol * np.sum(s * s)
    s0 = np.sqrt(gamma)
    floor = dnorm(r)
    for it in range(cfg.max_iters):
        q = A(p)
        qq = np.sum(w * q ** 2)
        if qq == 0:
            log.status = "CONVERGED"
            log.iterations = it
            break
        a = gamma / qq
        f = f + a * p
        r = r - a * q
        s = At(r)
        gamma_new = vol * np.sum(s * s)
        res = dnorm(r)
        log.residuals.append(res)
        log.normal_residuals.append(np.sqrt(gamma_new))
        floor = min(floor, res)
        if res > 10.0 * floor and res > max(1e-300, 1e-12 * dnorm(g)):
            log.status = "DIVERGED"
            raise SolverDivergedError(f"residual {res:.3e} vs floor {floor:.3e}")
        if np.sqrt(gamma_new) <= cfg.rel_tol * max(s0, 1e-300):
            log.status = "CONVERGED"
            log.iterations = it + 1
            return op.grid.like(f), log
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    if log.status == "RUNNING":
        log.status = "MAX_ITERS"
        log.iterations = cfg.max_iters
    return op.grid.like(f), log


# ---------------------------------------------------------------------------
# discrete H1 machinery
# ---------------------------------------------------------------------------

def grad_components(values, spacing):
    """Central-difference gradient components (one-sided at edges)."""
    if values.ndim == 1:
        return [np.gradient(values, spacing[0])]
    return list(np.gradient(values, *spacing))


def h1_norm(f: ScalarGridField) -> float:
    """sqrt(||f||^2 + ||grad f||^2) with grid-volume weighting."""
    total = float(np.sum(f.values ** 2))
    for d in grad_components(f.values, f.spacing):
        total += float(np.sum(d ** 2))
    return float(np.sqrt(f.cell_volume * total))


def _grad_axis(u, h, axis):
    out = np.zeros_like(u)
    sl = [slice(None)] * u.ndim

    def at(i):
        s = sl.copy()
        s[axis] = i
        return tuple(s)

    out[at(slice(1, -1))] = (u[at(slice(2, None))] - u[at(slice(0, -2))]) / (2 * h)
    out[at(0)] = (u[at(1)] - u[at(0)]) / h
    out[at(-1)] = (u[at(-1)] - u[at(-2)]) / h
    return out


def _grad_axis_T(v, h, axis):
    """Transpose of _grad_axis in the plain dot product."""
    out = np.zeros_like(v)
    sl = [slice(None)] * v.ndim

    def at(i):
        s = sl.copy()
        s[axis] = i
        return tuple(s)

    out[at(slice(2, None))] += v[at(slice(1, -1))] / (2 * h)
    out[at(slice(0, -2))] -= v[at(slice(1, -1))] / (2 * h)
    out[at(0)] -= v[at(0)] / h
    out[at(1)] += v[at(0)] / h
    out[at(-1)] += v[at(-1)] / h
    out[at(-2)] -= v[at(-1)] / h
    return out


def _h1_weight(u, spacing):
    """(I + sum_a D_a^T D_a) u: the quadratic form of the discrete H1 norm."""
    out = u.copy()
    for a in range(u.ndim):
        out += _grad_axis_T(_grad_axis(u, spacing[a], a), spacing[a], a)
    return out


@dataclass
class StabilityReport:
    c_lower: float
    eigenvalues: np.ndarray
    top: float
    dims: int
    steps: int


def _lanczos_extremes(matvec, ndof, steps, rng):
    """Ritz values of a fixed-step Lanczos run with full reorthogonalization.

    The smallest Ritz value is a decreasing upper bound on the smallest
    eigenvalue; a fixed step count makes probes comparable across configs.
    """
    steps = min(steps, ndof)
    V = np.zeros((steps + 1, ndof))
    a = np.zeros(steps)
    b = np.zeros(steps)
    v = rng.standard_normal(ndof)
    v /= np.linalg.norm(v)
    V[0] = v
    beta = 0.0
    m = steps
    for j in range(steps):
        w = matvec(V[j])
        if j > 0:
            w -= beta * V[j - 1]
        a[j] = V[j] @ w
        w -= a[j] * V[j]
        # full reorthogonalization keeps Ritz values trustworthy
        w -= V[:j + 1].T @ (V[:j + 1] @ w)
        beta = np.linalg.norm(w)
        b[j] = beta
        if beta < 1e-14:
            m = j + 1
            break
        V[j + 1] = w / beta
    vals = eigh_tridiagonal(a[:m], b[:m - 1], eigvals_only=True)
    return np.sort(vals), m


def stability_probe(normal_fn, grid: ScalarGridField, mask=None, steps=200,
                    method="auto", dense_cap=1200, seed=0) -> StabilityReport:
    """Smallest ratio ||N f||_H1 / ||f||_L2 over fields supported on the mask.

    ``normal_fn`` maps a grid-shaped array to a grid-shaped array and must be
    self-adjoint PSD (e.g. adjoint o forward). The ratio's square is the
    smallest eigenvalue of P N (I + D^T D) N P. Small problems are solved
    exactly from the assembled matrix; larger ones use a fixed-length Lanczos
    run whose smallest Ritz value is a decreasing upper bound.
    """
    dims = tuple(grid.dims)
    mask = np.ones(dims, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    idx = np.nonzero(mask.ravel())[0]
    ndof = len(idx)
    spacing = grid.spacing

    def H(x):
        full = np.zeros(int(np.prod(dims)))
        full[idx] = x
        u = normal_fn(full.reshape(dims))
        u = _h1_weight(u, spacing)
        u = normal_fn(u)
        return u.ravel()[idx]

    if method == "dense" or (method == "auto" and ndof <= dense_cap):
        Hm = np.zeros((ndof, ndof))
        e = np.zeros(ndof)
        for j in range(ndof):
            e[:] = 0.0
            e[j] = 1.0
            Hm[:, j] = H(e)
        vals = np.linalg.eigvalsh(0.5 * (Hm + Hm.T))
        m = ndof
    else:
        rng = np.random.default_rng(seed)
        vals, m = _lanczos_extremes(H, ndof, steps, rng)
    return StabilityReport(c_lower=float(np.sqrt(max(vals[0], 0.0))),
                           eigenvalues=vals[:8],
                           top=float(np.sqrt(max(vals[-1], 0.0))),
                           dims=ndof, steps=m)


def subspace_stability(normal_fn, grid: ScalarGridField, trial_grid: ScalarGridField,
                       trial_mask=None) -> StabilityReport:
    """Smallest ratio ||N (E x)||_H1 / ||E x||_L2 over a fixed trial space.

    Trial fields live on ``trial_grid`` (restricted to ``trial_mask``) and are
    prolongated onto the operator grid by the grid interpolant E. Keeping the
    trial space fixed makes the estimate comparable across grid resolutions:
    the native infimum keeps dropping as finer grids admit oscillations the
    discrete quadrature cannot see, which is an artifact, not the operator's
    continuum behavior.
    """
    tdims = tuple(trial_grid.dims)
    mask = np.ones(tdims, dtype=bool) if trial_mask is None else np.asarray(trial_mask, bool)
    idx = np.nonzero(mask.ravel())[0]
    nd = len(idx)
    centers = grid.cell_centers()
    ncell = len(centers)
    E = np.zeros((ncell, nd))
    basis = np.zeros(int(np.prod(tdims)))
    for j in range(nd):
        basis[:] = 0.0
        basis[idx[j]] = 1.0
        E[:, j] = trial_grid.like(basis.reshape(tdims)).interpolate(centers)
    vol = grid.cell_volume
    Y = np.zeros_like(E)
    Z = np.zeros_like(E)
    for j in range(nd):
        y = normal_fn(E[:, j].reshape(grid.dims))
        Y[:, j] = y.ravel()
        Z[:, j] = _h1_weight(y, grid.spacing).ravel()
    A = vol * (Y.T @ Z)
    M = vol * (E.T @ E)
    from scipy.linalg import eigh
    vals = eigh(0.5 * (A + A.T), 0.5 * (M + M.T), eigvals_only=True)
    vals = np.sort(vals)
    return StabilityReport(c_lower=float(np.sqrt(max(vals[0], 0.0))),
                           eigenvalues=vals[:8],
                           top=float(np.sqrt(max(vals[-1], 0.0))),
                           dims=nd, steps=nd)


@dataclass
class PerturbationTable:
    deltas: np.ndarray
    ratios: np.ndarray   # sup_f ||(N' - N) f||_H1 / ||f||_L2
    slope: float

    def rows(self):
        return list(zip(self.deltas, self.ratios))


def loglog_slope(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    good = (x > 0) & (y > 0)
    if good.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[good]), np.log(y[good]), 1)[0])


def perturbation_probe(op: BrokenRayOperator, deltas, sigma_bump=None,
                       alpha_bump=None, probes=None, n_probe=5, seed=0) -> PerturbationTable:
    """Growth of the normal operator under attenuation/cutoff perturbations.

    For each delta, builds the operator with ``sigma + delta * sigma_bump``
    and the cutoff scaled by ``(1 + delta * alpha_bump)`` and measures
    sup over probe fields of ||(N' - N) f||_H1 / ||f||_L2. The traced ray
    plan is shared, so only weights change.
    """
    rng = np.random.default_rng(seed)
    grid = op.grid
    if probes is None:
        probes = []
        for _ in range(n_probe):
            c = grid.cell_centers()
            lo, hi = grid.box
            center = lo + (0.2 + 0.6 * rng.random(grid.ndim)) * (hi - lo)
            width = 0.08 * float(np.max(hi - lo)) * (1 + rng.random())
            v = np.exp(-0.5 * np.sum(((c - center) / width) ** 2, axis=1))
            probes.append(grid.like(v.reshape(grid.dims)))
    base_alpha = op.alpha_values
    samp = op.sampling
    ratios = []
    for d in deltas:
        sigma_p = op.sigma
        if sigma_bump is not None:
            add = d * sigma_bump.values
            sigma_p = sigma_bump.like(add if op.sigma is None else op.sigma.values + add)
        alpha_p = None
        if alpha_bump is not None:
            scale = 1.0 + d * np.asarray(alpha_bump(samp.x, samp.theta), dtype=float)
            vals = base_alpha * scale
            alpha_p = _FrozenAlpha(samp, vals)
        elif op.alpha is not None:
            alpha_p = op.alpha
        opp = BrokenRayOperator(op.domain, grid, sigma=sigma_p, alpha=alpha_p,
                                n_max=op.n_max, plan=op.plan, step=op.step)
        worst = 0.0
        for f in probes:
            diff = opp.normal(f) - op.normal(f)
            worst = max(worst, h1_norm(diff) / max(f.l2_norm(), 1e-300))
        ratios.append(worst)
    deltas = np.asarray(list(deltas), dtype=float)
    ratios = np.asarray(ratios)
    return PerturbationTable(deltas, ratios, loglog_slope(deltas, ratios))


class _FrozenAlpha:
    """Cutoff evaluated as fixed per-sample weights of one sampling."""

    def __init__(self, sampling, values):
        self.sampling = sampling
        self.values = np.asarray(values, dtype=float)

    def __call__(self, X, TH):
        if len(X) == len(self.values):
            return self.values
        raise ConfigError("frozen cutoff evaluated off its sampling")
