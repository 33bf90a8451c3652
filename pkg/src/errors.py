"""
Error types for the VA-MoE forecasting system
Every error carries a short reason token so the CLI can report it on one line
"""


class VaMoeError(Exception):
    """Base class for all domain errors"""

    reason = "error"
    exit_code = 1


class ShapeError(VaMoeError):
    """Operand shapes are incompatible"""

    reason = "shape_mismatch"


class DomainError(VaMoeError):
    """Operation undefined for the given values (log of non-positive, division by zero)"""

    reason = "domain_error"


class IndexOutOfRangeError(VaMoeError):
    """Index or selection width outside the valid range"""

    reason = "index_out_of_range"


class NonFiniteError(VaMoeError):
    """NaN or Inf produced or observed"""

    reason = "non_finite"
    exit_code = 4


class UnknownGroupError(VaMoeError, KeyError):
    """Variable group not present in the catalog"""

    reason = "unknown_group"


class UnknownChannelError(VaMoeError, KeyError):
    """Channel name not present in the catalog"""

    reason = "unknown_channel"


class CatalogMismatchError(VaMoeError):
    """Data, model or checkpoint disagree about the variable catalog"""

    reason = "catalog_mismatch"


class ExpansionError(VaMoeError):
    """Incremental expansion requested in an invalid state"""

    reason = "expansion_error"


class PhaseError(VaMoeError):
    """Operation requested in the wrong training phase"""

    reason = "phase_error"


class FreezePlanError(VaMoeError):
    """Freeze plan and model parameters disagree"""

    reason = "freeze_plan"


class PreservationViolationError(VaMoeError):
    """A frozen parameter changed during training"""

    reason = "preservation_violation"
    exit_code = 3


class ConfigError(VaMoeError):
    """Invalid run configuration"""

    reason = "config_error"
    exit_code = 2


class CflViolationError(VaMoeError):
    """Synthetic dynamics time step too large for the velocity/diffusion settings"""

    reason = "cfl_violation"


class GradcheckFailure(VaMoeError):
    """Analytic gradient disagrees with finite differences"""

    reason = "gradcheck_failure"
    exit_code = 5


class FileFormatError(VaMoeError):
    """Base class for on-disk format problems"""

    reason = "file_format"


class BadMagicError(FileFormatError):
    reason = "bad_magic"


class VersionMismatchError(FileFormatError):
    reason = "version_mismatch"


class TruncatedFileError(FileFormatError):
    reason = "truncated_file"


class ManifestMismatchError(FileFormatError):
    reason = "manifest_mismatch"
