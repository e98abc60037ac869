"""Attenuated broken-ray transform on convex polytopal domains.

Rays start on the measured part of the boundary, reflect specularly on the
remaining flat facets, and terminate when they return to the measured set.
The package provides exact tracing and path unfolding, the attenuated
forward transform with its exact discrete adjoint, the normal operator and
its same-segment/cross-segment decomposition, visibility analysis of
covectors, and matrix-free iterative reconstruction.

Hot kernels run through a compiled extension when available; a pure-numpy
fallback with identical semantics is selected automatically otherwise (see
``brokenray._core.BACKEND``).
"""

from ._core import BACKEND
from .billiards import (
    BrokenRay,
    RayStatus,
    TraceTolerances,
    billiard_map,
    reflect_direction,
    reflection_count,
    trace_broken_ray,
)
from .fields import ScalarGridField, grid_for_domain
from .geometry import (
    BoundaryJet,
    ConvexDomain,
    FacetLabel,
    MaskConstraint,
    box_domain,
    regular_polygon,
    unit_cube,
    unit_square,
)
from .normal_ops import (
    adjoint_continuous,
    adjoint_discrete,
    ballistic_symbol,
    normal_apply,
    normal_parts,
)
from .phantoms import PhantomSpec, Primitive, render
from .reconstruction import (
    SolverConfig,
    h1_norm,
    perturbation_probe,
    solve,
    stability_probe,
)
from .transport import (
    BrokenRayOperator,
    CutoffSpec,
    SamplingSpec,
    Sinogram,
    attenuation_weight,
    forward,
    line_integral,
)
from .unfolding import (
    HyperplaneSeq,
    reflect_point,
    reflect_vector,
    reflected_source,
    unfold_covector,
    unfold_ray,
)
from .visibility import (
    SearchSpec,
    check_measured_boundary_condition,
    covector_visible,
    visible_set_map,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "__version__",
    "BoundaryJet", "ConvexDomain", "FacetLabel", "MaskConstraint",
    "box_domain", "regular_polygon", "unit_cube", "unit_square",
    "BrokenRay", "RayStatus", "TraceTolerances",
    "billiard_map", "reflect_direction", "reflection_count", "trace_broken_ray",
    "HyperplaneSeq", "reflect_point", "reflect_vector", "reflected_source",
    "unfold_covector", "unfold_ray",
    "ScalarGridField", "grid_for_domain",
    "PhantomSpec", "Primitive", "render",
    "BrokenRayOperator", "CutoffSpec", "SamplingSpec", "Sinogram",
    "attenuation_weight", "forward", "line_integral",
    "adjoint_continuous", "adjoint_discrete", "ballistic_symbol",
    "normal_apply", "normal_parts",
    "SearchSpec", "check_measured_boundary_condition", "covector_visible",
    "visible_set_map",
    "SolverConfig", "h1_norm", "perturbation_probe", "solve", "stability_probe",
]
