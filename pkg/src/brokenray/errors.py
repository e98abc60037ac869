"""Exception hierarchy for the brokenray package."""


class BrokenRayError(Exception):
    """Base class for all package errors."""


class ConfigError(BrokenRayError):
    """Invalid domain/run configuration."""


class NoExitError(BrokenRayError):
    """Ray start point lies outside the domain (no forward boundary crossing)."""


class GrazingRayError(BrokenRayError):
    """Ray meets the boundary at near-tangential incidence."""


class EdgeHitError(BrokenRayError):
    """Boundary hit lands within the guard margin of a facet edge."""


class NotOnFacetError(BrokenRayError):
    """Point does not satisfy the facet equation within the boundary tolerance."""


class NotRegularError(BrokenRayError):
    """Operation requires a ray that terminated on the measured set."""


class NoncollinearUnfoldError(BrokenRayError):
    """Unfolded segment junctions fail to land on a single line (geometry bug)."""


class IrregularInSupportError(BrokenRayError):
    """A cutoff's support contains an irregular ray (configuration error)."""


class SequenceMismatchError(BrokenRayError):
    """Rays inside one cutoff group reflect off different facet sequences."""


class SamplingMismatchError(BrokenRayError):
    """Sinogram data does not match the operator's boundary sampling."""


class InterpOutOfRangeError(BrokenRayError):
    """Backtraced jet falls outside the sampled region of the data."""


class SupportViolationError(BrokenRayError):
    """Rendered phantom has mass outside its declared support box."""


class FormatVersionError(BrokenRayError):
    """File carries an unsupported format version tag."""


class CorruptHeaderError(BrokenRayError):
    """File header cannot be parsed or payload is truncated."""


class SolverDivergedError(BrokenRayError):
    """Iterative solver residual increased far beyond its running floor."""
