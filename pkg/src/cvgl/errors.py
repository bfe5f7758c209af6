"""Exception hierarchy.

Every failure the library raises derives from :class:`CvglError`. The two
intermediate classes map onto CLI exit codes: :class:`InputError` (2) for
malformed or inconsistent input, :class:`GeometryError` (3) for degenerate
geometry discovered while running the pipeline.
"""


class CvglError(Exception):
    exit_code = 1


class InputError(CvglError):
    exit_code = 2


class GeometryError(CvglError):
    exit_code = 3


# geometry
class DegenerateCloud(GeometryError):
    pass


class NoConsensus(GeometryError):
    pass


class DegenerateYaw(GeometryError):
    pass


class ZeroExtent(GeometryError):
    pass


class DegenerateExtent(GeometryError):
    pass


class VerticalOpticalAxis(GeometryError):
    pass


# tensors / candidates
class DimensionMismatch(InputError):
    pass


class EmptyTokens(InputError):
    pass


class EmptyGallery(InputError):
    pass


class EmptyCandidateSet(InputError):
    pass


class NoCandidate(InputError):
    pass


# geodesy / metrics
class OutOfUtmDomain(InputError):
    pass


class ZoneMismatch(InputError):
    pass


class EmptyResults(InputError):
    pass


class NoRelevant(InputError):
    pass


class InvalidConfig(InputError):
    pass


# file formats
class BadMagic(InputError):
    pass


class TruncatedFile(InputError):
    pass


class VersionMismatch(InputError):
    pass


class MissingFile(InputError):
    def __init__(self, path, what="file"):
        self.path = str(path)
        super().__init__(f"{what} not found: {self.path}")


class MalformedRow(InputError):
    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"line {line}: {reason}")


class DuplicateTileId(InputError):
    pass
