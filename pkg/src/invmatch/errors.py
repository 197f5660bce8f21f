"""Exception hierarchy shared by all modules."""


class ImpError(Exception):
    """Base class for every error raised by invmatch."""


class GenerationFailed(ImpError):
    pass


class NonFiniteInput(ImpError, ValueError):
    pass


class InsufficientSamples(ImpError, ValueError):
    def __init__(self, env, n, needed):
        self.env = env
        self.n = n
        self.needed = needed
        super().__init__(f"environment {env!r} has {n} rows, needs at least {needed}")


class SingularCovariance(ImpError, ValueError):
    pass


class EmptyInput(ImpError, ValueError):
    pass


class NoEnvironmentVariation(ImpError, ValueError):
    pass


class EmptySelection(ImpError):
    pass


class LengthMismatch(ImpError, ValueError):
    pass


class TooManyCandidates(ImpError, ValueError):
    pass


class SchemaError(ImpError, ValueError):
    """A file did not match the expected schema."""


class InvalidSpec(ImpError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        codes = ", ".join(v.code for v in self.violations)
        super().__init__(f"invalid SCM specification: {codes}")


class ExperimentAborted(ImpError):
    pass


class UnknownPreset(ImpError, KeyError):
    pass
