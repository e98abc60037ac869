"""Run configuration: one JSON document driving the CLI subcommands."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .billiards import TraceTolerances
from .errors import ConfigError
from .fields import ScalarGridField, grid_for_domain
from .geometry import ConvexDomain, MaskConstraint, box_domain, regular_polygon
from .phantoms import PhantomSpec, render
from .transport import BrokenRayOperator, CutoffSpec, SamplingSpec

__all__ = ["RunConfig", "load_run_config"]


def _stock_domain(d):
    kind = d["stock"]
    measure = tuple(d.get("measure_facets", ()))
    masks = {int(k): [MaskConstraint.from_dict(c) for c in v]
             for k, v in d.get("masks", {}).items()}
    if kind == "square":
        return box_domain([0, 0], [1, 1], measure, masks)
    if kind == "cube":
        return box_domain([0, 0, 0], [1, 1, 1], measure, masks)
    if kind == "box":
        return box_domain(d["lo"], d["hi"], measure, masks)
    if kind == "polygon":
        return regular_polygon(d["sides"], d.get("radius", 1.0),
                               d.get("center", (0.0, 0.0)), measure, masks)
    raise ConfigError(f"unknown stock domain {kind!r}")


@dataclass
class RunConfig:
    """Parsed run configuration with builders for the heavyweight objects."""

    raw: dict
    base_dir: str = "."

    # -- builders ---------------------------------------------------------

    def domain(self) -> ConvexDomain:
        d = self.raw.get("domain")
        if d is None:
            raise ConfigError("config lacks a 'domain' entry")
        if isinstance(d, str):
            from .io import load_domain
            return load_domain(os.path.join(self.base_dir, d))
        if "stock" in d:
            return _stock_domain(d)
        return ConvexDomain.from_dict(d)

    def grid(self, domain) -> ScalarGridField:
        g = self.raw.get("grid", {})
        return grid_for_domain(domain, int(g.get("resolution", 64)),
                               mode=g.get("mode", "multilinear"))

    def sampling(self) -> SamplingSpec:
        return SamplingSpec.from_dict(self.raw.get("sampling", {}))

    def n_max(self) -> int:
        return int(self.raw.get("n_max", 6))

    def tolerances(self, domain) -> TraceTolerances:
        t = self.raw.get("thresholds", {})
        base = TraceTolerances.for_domain(domain)
        return TraceTolerances(
            edge_margin=float(t.get("edge_margin", base.edge_margin)),
            mask_margin=float(t.get("mask_margin", base.mask_margin)),
            graze_tol=float(t.get("graze_tol", base.graze_tol)))

    def sigma(self, grid):
        s = self.raw.get("sigma")
        if s is None:
            return None
        if isinstance(s, dict) and "constant" in s:
            c = float(s["constant"])
            if c == 0.0:
                return None
            return grid.like(np.full(grid.dims, c))
        if isinstance(s, dict) and "phantom" in s:
            return render(PhantomSpec.from_dict(s["phantom"]), grid)
        if isinstance(s, str):
            from .io import load_field
            return load_field(os.path.join(self.base_dir, s))
        raise ConfigError("sigma must be null, {'constant': c}, {'phantom': ...} or a field path")

    def alpha(self):
        a = self.raw.get("alpha")
        if a is None:
            return None
        if isinstance(a, list):
            return [CutoffSpec.from_dict(x) for x in a]
        return CutoffSpec.from_dict(a)

    def phantom_spec(self) -> PhantomSpec:
        p = self.raw.get("phantom")
        if p is None:
            raise ConfigError("config lacks a 'phantom' entry")
        return PhantomSpec.from_dict(p)

    def support_box(self, domain):
        s = self.raw.get("support")
        if s is not None:
            return np.asarray(s["lo"], dtype=float), np.asarray(s["hi"], dtype=float)
        p = self.raw.get("phantom", {})
        if "support_lo" in p:
            return (np.asarray(p["support_lo"], dtype=float),
                    np.asarray(p["support_hi"], dtype=float))
        lo, hi = domain.bbox
        quarter = 0.25 * (hi - lo)
        return lo + quarter, hi - quarter

    def solver(self, grid, domain):
        from .reconstruction import SolverConfig
        s = self.raw.get("solver", {})
        mask = None
        if s.get("mask", "support") == "support":
            lo, hi = self.support_box(domain)
            cc = grid.cell_centers().reshape(*grid.dims, grid.ndim)
            mask = np.all((cc >= lo) & (cc <= hi), axis=-1)
        return SolverConfig(method=s.get("method", "CGLS"),
                            max_iters=int(s.get("max_iters", 200)),
                            rel_tol=float(s.get("rel_tol", 1e-9)),
                            landweber_step=s.get("landweber_step"),
                            mask=mask)

    def noise_level(self) -> float:
        return float(self.raw.get("noise", {}).get("level", 0.0))

    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    def operator(self, domain=None, grid=None, threads=1) -> BrokenRayOperator:
        domain = domain or self.domain()
        grid = grid if grid is not None else self.grid(domain)
        return BrokenRayOperator(
            domain, grid,
            sigma=self.sigma(grid),
            alpha=self.alpha(),
            sampling=self.sampling(),
            n_max=self.n_max(),
            tol=self.tolerances(domain),
            threads=threads)


def load_run_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"run config is not valid JSON: {exc}")
    return RunConfig(raw, base_dir=os.path.dirname(os.path.abspath(path)))
