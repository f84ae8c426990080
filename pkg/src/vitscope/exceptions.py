"""Exception hierarchy; the CLI maps these onto exit codes."""


class VitscopeError(Exception):
    pass


class ShapeError(VitscopeError, ValueError):
    """Operand extents are incompatible."""


class ArchiveFormatError(VitscopeError, ValueError):
    """A tensor archive, image or mask file is malformed."""


class ManifestError(VitscopeError, ValueError):
    """Model weights do not match the expected name/shape manifest."""


class InvariantError(VitscopeError, RuntimeError):
    """An internal numerical invariant was violated."""


class NotStochasticError(VitscopeError, ValueError):
    """An attention matrix is not row-stochastic."""


class InfeasibleInstanceError(VitscopeError, ValueError):
    """Requested clustered dynamics cannot be realized with stochastic rows."""
