"""Exception and warning types shared across the package."""


class SloshError(Exception):
    """Base class for all errors raised by sloshlab."""

    code = "error"


class InvalidArgument(SloshError, ValueError):
    code = "invalid-argument"


class InvalidSupport(SloshError, ValueError):
    code = "invalid-support"


class AmplitudeTooLarge(SloshError, ValueError):
    code = "amplitude-too-large"


class MeshFolded(SloshError):
    code = "mesh-folded"


class UnsupportedOperation(SloshError, TypeError):
    code = "unsupported-operation"


class SingularSystem(SloshError, ArithmeticError):
    code = "singular-system"


class TrackingFailure(SloshError):
    code = "tracking-failure"

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class NoCandidateFound(SloshError):
    code = "no-candidate-found"

    def __init__(self, message, best_score=0.0, trace=None):
        super().__init__(message)
        self.best_score = best_score
        self.trace = trace


class InvalidCase(SloshError, ValueError):
    code = "invalid-case"


class UndefinedForSimple(SloshError, ValueError):
    code = "undefined-for-simple"


class TruncatedSpectrumWarning(UserWarning):
    pass


class IllConditionedClusterWarning(UserWarning):
    pass
