"""Exception hierarchy shared by every pipeline stage."""


class SpiderpError(Exception):
    """Base class; the CLI maps any subclass to exit code 1."""


class MissingFile(SpiderpError):
    pass


class LengthMismatch(SpiderpError):
    pass


class BadSamplingRate(SpiderpError):
    pass


class ManifestError(SpiderpError):
    pass


class NoPeaksFound(SpiderpError):
    pass


class TooFewPeaks(SpiderpError):
    pass


class DeadChannel(SpiderpError):
    pass


class RecordTooShort(SpiderpError):
    pass


class TooFewSubjects(SpiderpError):
    pass


class DegenerateLabels(SpiderpError):
    pass


class NonFiniteLoss(SpiderpError):
    pass


class NonFiniteFeature(SpiderpError):
    pass


class NonFiniteInput(SpiderpError):
    pass


class NonBinaryInput(SpiderpError):
    pass


class ZeroVarianceFeature(SpiderpError):
    pass


class TooFewSamples(SpiderpError):
    pass


class OutOfRange(SpiderpError):
    pass


class ModelFormatError(SpiderpError):
    pass


class InvalidAnnotation(SpiderpError):
    pass
