"""Exception hierarchy.

Every error raised for bad user input derives from :class:`InputError`; the
command line maps those to exit code 2.  :class:`InvariantViolation` marks
internal consistency failures (exit code 3).
"""


class MeshlinkError(Exception):
    pass


class InputError(MeshlinkError):
    """Malformed or inconsistent input data."""


class InvariantViolation(MeshlinkError):
    pass


class DegenerateTriangle(InputError):
    pass


class DegeneratePolygon(InputError):
    pass


class EmptyInput(InputError):
    pass


class EmptyCloud(EmptyInput):
    pass


class NoValidFaces(InputError):
    pass


class BehindCamera(InputError):
    pass


class OutOfBounds(InputError):
    pass


class InvalidFloor(InputError):
    pass


class MissingAssociation(InputError):
    pass


class UnknownAttribute(InputError):
    pass


class NoGroundTruth(InputError):
    pass


class AllEmpty(InputError):
    pass


class InvalidSpec(InputError):
    pass


# file formats
class MalformedHeader(InputError):
    pass


class CountMismatch(InputError):
    pass


class NonTriangleFace(InputError):
    pass


class DanglingIndex(InputError):
    pass


class ManifestMismatch(InputError):
    pass


class NonOrthonormalRotation(InputError):
    pass


class BadFieldCount(InputError):
    pass


class BadMagic(InputError):
    pass


class UnsortedRecords(InputError):
    pass


class IndexOutOfRange(InputError):
    pass


class UnknownKey(InputError):
    pass


class UnparsableValue(InputError):
    pass
