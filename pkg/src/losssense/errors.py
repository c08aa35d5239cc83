"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class CutoffError(ValidationError):
    """Fock cutoff too small for the requested state.

    ``required`` carries the smallest cutoff that would have worked, when known.
    """

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class NumericalError(RuntimeError):
    """A computation finished but its result failed a numerical sanity check."""
