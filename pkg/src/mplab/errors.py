"""Exception hierarchy.

Every error carries a short machine-readable ``code`` and the process exit
status the command-line front end should use when it escapes a command.
"""


class MplabError(Exception):
    """Base class for all library errors."""

    code = "error"
    exit_status = 2


class ValidationError(MplabError):
    code = "validation_error"
    exit_status = 2


class ConvergenceError(MplabError):
    code = "convergence_error"
    exit_status = 3


class ScaleError(MplabError):
    code = "scale_error"
    exit_status = 4


class InvalidShape(ValidationError):
    code = "invalid_shape"


class NotHermitian(ValidationError):
    code = "not_hermitian"


class NotPositive(ValidationError):
    code = "not_positive"


class NotAState(ValidationError):
    code = "not_a_state"


class TooSmall(ValidationError):
    code = "too_small"


class OutOfRange(ValidationError):
    code = "out_of_range"


class BranchMismatch(ValidationError):
    code = "branch_mismatch"


class LayoutError(ValidationError):
    code = "layout_error"


class InvalidPartition(ValidationError):
    code = "invalid_partition"


class NotSelfDual(ValidationError):
    code = "not_self_dual"


class CannotReorganize(ValidationError):
    code = "cannot_reorganize"


class RadiusTooLarge(ValidationError):
    code = "radius_too_large"


class InsufficientData(ValidationError):
    code = "insufficient_data"


class ConfigError(ValidationError):
    code = "config_error"


class NoConvergence(ConvergenceError):
    code = "no_convergence"


class DegenerateFixedPoint(ConvergenceError):
    code = "degenerate_fixed_point"


class ScaleTooLarge(ScaleError):
    code = "scale_too_large"
