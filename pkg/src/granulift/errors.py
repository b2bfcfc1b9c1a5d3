"""Exception hierarchy shared across the pipeline.

Input/config problems map to CLI exit code 2, pipeline-state problems to
exit code 3 (see ``granulift.cli``).
"""


class GranuliftError(Exception):
    """Base class for all pipeline errors."""


class InputError(GranuliftError):
    """Malformed inputs or configuration (CLI exit code 2)."""


class PipelineStateError(GranuliftError):
    """Valid inputs arranged in an unusable state (CLI exit code 3)."""


# --- scene-io ---------------------------------------------------------------

class MissingFile(InputError):
    pass


class SchemaViolation(InputError):
    """A document field is missing, mistyped, or out of range.

    The message always names the offending field.
    """


class InvariantViolation(InputError):
    pass


class EmptyMask(InputError):
    pass


class CorruptRLE(InputError):
    pass


class IoFailure(GranuliftError):
    pass


# --- mask / geometry operations ---------------------------------------------

class DimensionMismatch(InputError):
    pass


class InvalidDepth(InputError):
    pass


class MissingTrackId(InputError):
    pass


class EmptyLabels(InputError):
    pass


class LengthMismatch(InputError):
    pass


# --- tracker ------------------------------------------------------------------

class NonEmptyState(PipelineStateError):
    pass


class MissingKeyframeDetections(PipelineStateError):
    pass


class PropagatorFailure(PipelineStateError):
    pass


# --- evaluation ---------------------------------------------------------------

class EmptyUniverse(InputError):
    pass


class NoGroundTruth(InputError):
    pass


class MissingGT(InputError):
    pass


# --- synthetic scenes ----------------------------------------------------------

class SpecInvalid(InputError):
    pass
