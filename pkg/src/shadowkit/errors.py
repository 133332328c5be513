"""Exception types shared across the toolkit."""


class ShadowkitError(Exception):
    """Base class for all toolkit errors."""


class BehindCamera(ShadowkitError):
    """Point has non-positive depth and cannot be projected."""


class MalformedXml(ShadowkitError):
    pass


class CyclicKinematics(ShadowkitError):
    pass


class MissingMeshFile(ShadowkitError):
    pass


class UnsupportedJointType(ShadowkitError):
    pass


class TruncatedFile(ShadowkitError):
    pass


class BadFaceIndex(ShadowkitError):
    pass


class JointOutOfRange(ShadowkitError):
    pass


class DimensionMismatch(ShadowkitError):
    pass


class MissingFile(ShadowkitError):
    pass


class SchemaError(ShadowkitError):
    pass


class ImageDecodeError(ShadowkitError):
    pass


class DegenerateSample(ShadowkitError):
    """Two-proportion test called with an empty sample."""


class ExpertFailed(ShadowkitError):
    """Scripted expert could not complete the task on this scene."""


class BoundaryError(ShadowkitError):
    """Bad buffer shape or size at a bindings boundary."""
