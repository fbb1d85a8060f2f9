"""Exception hierarchy shared by every facedose module."""


class FacedoseError(Exception):
    """Base class for all domain errors."""


class DegenerateConfiguration(FacedoseError):
    """Point configuration carries no usable geometry (coincident anchors, zero IPD)."""


class ShapeMismatch(FacedoseError):
    """Array shapes or point counts disagree with the declared contract."""


class InvalidMeasurement(FacedoseError):
    """A measurement violates its domain (e.g. non-positive length in a ratio)."""


class InvalidData(FacedoseError):
    """Non-finite or otherwise unusable numeric input."""


class InsufficientData(FacedoseError):
    """Fewer samples than the operation can work with."""


class NotCalibrated(FacedoseError):
    """A training case is missing its calibrated intensity vector."""


class CalibrationDiverged(FacedoseError):
    """The analysis-by-synthesis objective became non-finite."""


class FormatError(FacedoseError):
    """Serialized artifact is corrupt or carries an unsupported version."""


class IngestError(FacedoseError):
    """A patient record file failed validation.

    Carries a human-readable location (file / patient / session / field) so
    rejects can be traced back to the offending entry.
    """

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{message}" + (f" [at {location}]" if location else ""))
