"""Exception types raised by the correspondence and pretraining pipeline."""


class CohereError(Exception):
    """Base class for all pipeline errors."""


class BadPose(CohereError):
    """Rotation is not orthonormal, determinant is off, or a quaternion is not unit."""


class FrameUnderfilled(CohereError):
    """A frame was assembled from fewer than two sweeps."""


class EmptyInput(CohereError):
    """An operation received an empty point set where points are required."""


class OutOfBounds(CohereError):
    """A query point lies outside the sampleable interior of a BEV grid."""


class BadIndex(CohereError):
    """A depth-bin index is outside the valid 1..D range."""


class NoSamples(CohereError):
    """A sample plan holds no points for the requested instance."""


class NoHistory(CohereError):
    """A memory bank holds no stored features for the requested track."""


class NotNormalized(CohereError):
    """A feature expected to be unit length deviates by more than the tolerance."""


class BadTemperature(CohereError):
    """A softmax temperature is zero, negative, or not finite."""


class NormalizationDegenerate(CohereError):
    """A vector with (near-)zero norm cannot be unit-normalized."""


class InvalidScene(CohereError):
    """A synthetic scene description is inconsistent (e.g. overlapping boxes)."""


class SkippedFrame(CohereError):
    """A pretraining step found no valid instances and made no update."""


class ParseError(CohereError):
    """A binary or JSON input file is malformed; message names file and offset."""
