"""Exception types shared across the package.

Every raisable condition promised by an operation contract gets its own
class so callers (and the CLI exit-code mapping) can discriminate without
string matching.
"""


class AkquantError(Exception):
    """Base class for all package-specific errors."""


class ParseError(AkquantError):
    """Raised on lexical or syntactic failure; carries the 0-based offset."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownSymbolError(AkquantError):
    """An identifier does not name a chart coordinate or known function."""


class DomainError(AkquantError):
    """A function is not analytic at the base point (log of non-positive
    value, fractional power of non-positive value, division by a jet whose
    constant term vanishes, sign of zero)."""


class SingularJetError(AkquantError):
    """Inversion of a jet whose value at the base point is (numerically)
    zero."""


class ChartMismatchError(AkquantError):
    """Operands live on different charts."""


class DegenerateHessianError(AkquantError):
    """det of the fiber Hessian at the base point is below tolerance; the
    regularity assumption of the whole construction fails."""


class ClosureViolationError(AkquantError):
    """The almost-symplectic form fails d(theta) = 0 beyond tolerance."""


class CapOverflowError(AkquantError):
    """A Weyl-algebra operation needed more capacity (v-power or symmetric
    degree) than the configured caps allow.  The message names the cap that
    would have to be raised."""


class ConvergenceError(AkquantError):
    """A fixed-point iteration failed to stabilize within its iteration
    budget."""


class InvariantViolationError(AkquantError):
    """A machine-checked identity came out above tolerance."""


class InputError(AkquantError):
    """Malformed configuration or request in the CLI layer."""
