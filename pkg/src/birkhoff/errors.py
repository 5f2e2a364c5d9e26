"""Exception hierarchy.

Every error raised by the library derives from :class:`BirkhoffError`. The CLI
maps the three families below onto its exit codes.
"""


class BirkhoffError(Exception):
    """Base class for all library errors."""


class ConfigInvalid(BirkhoffError):
    """Configuration failed validation; ``fields`` maps field name to message."""

    def __init__(self, fields):
        self.fields = dict(fields)
        msg = "; ".join(f"{k}: {v}" for k, v in sorted(self.fields.items()))
        super().__init__(msg or "invalid configuration")


class NumericalFailure(BirkhoffError):
    """A solver or validity check failed."""


class NonConvergence(BirkhoffError):
    """An iteration hit its cap. ``partial`` carries whatever was computed."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class PerturbationTooLarge(NumericalFailure):
    pass


class ProjectionDiverged(NumericalFailure):
    pass


class StepSizeUnderflow(NumericalFailure):
    pass


class ShootingDiverged(NumericalFailure):
    pass


class PreconditionViolated(NumericalFailure):
    pass


class LipschitzExceeded(NumericalFailure):
    pass


class SegmentTooLong(NumericalFailure):
    pass


class GridMismatch(NumericalFailure):
    pass


class EndpointNotZero(NumericalFailure):
    pass


class DegenerateFit(NumericalFailure):
    pass


class DegreeAmbiguous(NumericalFailure):
    pass


class SamplingExhausted(NumericalFailure):
    pass


class MissingTrace(NumericalFailure):
    pass


class MaxIterExceeded(NonConvergence):
    pass
