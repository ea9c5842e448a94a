"""Exception taxonomy shared across the package."""


class SymchainError(Exception):
    """Base class for all package errors."""


class SubstitutionCycleError(SymchainError):
    """A derivative binding references the bound derivative or a derivative of it."""


class DegenerateError(SymchainError):
    """Operation requires a polynomial containing at least one unknown derivative."""


class InconsistentSystemError(SymchainError):
    """Reduction produced a nonzero base-field remainder (the system forces 1 = 0)."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class RankError(SymchainError):
    """Rank does not satisfy a structural precondition (e.g. bridge slot not highest)."""


class ISVanishesError(SymchainError):
    """The initial/separant product of a chain normalizes to zero."""


class NonzeroRemainderError(SymchainError):
    """A reduction that must terminate with remainder zero did not."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class InclusionViolationError(SymchainError):
    """A corpus candidate violated the zero-set inclusion direction."""


class BindingError(SymchainError):
    """Candidate bindings do not cover the unknowns of the target system."""


class UnsupportedBranchError(SymchainError):
    """Requested a nonclassical branch other than the regular one."""


class SolvedFormError(SymchainError):
    """An equation is not in solved form u_beta = rhs."""


class ProblemSyntaxError(SymchainError):
    """Parse error with location and expectation info."""

    def __init__(self, message, line=None, column=None, expected=None):
        loc = ""
        if line is not None:
            loc = f" at line {line}" + (f", column {column}" if column is not None else "")
        exp = f" (expected {expected})" if expected else ""
        super().__init__(message + loc + exp)
        self.line = line
        self.column = column
        self.expected = expected
