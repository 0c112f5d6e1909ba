"""Exception hierarchy shared across the package."""


class SynthopError(Exception):
    """Base class for all errors raised by synthop."""


class DataFormatError(SynthopError):
    """A data file is malformed. Carries the offending row and field when known."""

    def __init__(self, message, *, path=None, row=None, field=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if row is not None:
            loc.append(f"row {row}")
        if field is not None:
            loc.append(f"field {field!r}")
        prefix = ", ".join(loc) + ": " if loc else ""
        super().__init__(prefix + message)
        self.path = path
        self.row = row
        self.field = field


class MalformedRow(DataFormatError):
    pass


class GridNotUniform(DataFormatError):
    pass


class EvenSampleCount(DataFormatError):
    pass


class DimensionMismatch(DataFormatError):
    pass


class NoiseUnavailable(SynthopError):
    """An operation needs the noise record but the trajectory carries none."""


class IllConditionedGamma(SynthopError):
    """The polynomial moment matrix Gamma(tau) is numerically singular."""


class SplineGridTooCoarse(SynthopError):
    pass


class SplineLevelTooSmall(SynthopError):
    pass


class NotSurjective(SynthopError):
    """The data operator H is not surjective, so the system is not identifiable."""


class PreconditionFailed(SynthopError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class Infeasible(SynthopError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SolverError(SynthopError):
    pass


class SimulationBlowUp(SynthopError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class LowAcceptanceRate(SynthopError):
    pass
