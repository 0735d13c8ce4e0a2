"""Exception hierarchy shared by all rlab modules."""


class RlabError(Exception):
    """Base class for all rlab errors."""


class ShapeError(RlabError, ValueError):
    """Two tensors (or a tensor and an expected shape) disagree."""


class GeometryError(RlabError, ValueError):
    """Patch grid does not fit the image, or a patch index is invalid."""


class FormatError(RlabError, ValueError):
    """A file or payload violates its declared format."""


class NoDistortionError(RlabError, RuntimeError):
    """Revert requested on a patch with an empty distortion stack."""


class CalibrationError(RlabError, RuntimeError):
    """Filter calibration could not be performed."""


class ConfigError(RlabError, ValueError):
    """Run configuration is missing, malformed, or inconsistent."""


class TargetError(RlabError, RuntimeError):
    """Base class for failures at the black-box classifier boundary."""


class TransportError(TargetError):
    """The remote classifier could not be reached."""


class ProtocolError(TargetError):
    """The remote classifier answered, but the response violates the protocol."""
