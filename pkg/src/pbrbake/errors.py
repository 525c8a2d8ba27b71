"""Exception hierarchy shared across the pipeline."""


class PbrBakeError(Exception):
    """Base class for all pipeline errors."""


class ParseError(PbrBakeError):
    """Malformed input file."""


class MissingUVs(PbrBakeError):
    """Mesh has no texture coordinates."""


class DegenerateMesh(PbrBakeError):
    """Mesh has no triangles or a zero-extent bounding box."""


class InvalidParam(PbrBakeError):
    """Parameter outside its valid range."""


class InvalidVector(PbrBakeError):
    """Vector input expected to be unit length is not."""


class Unreachable(PbrBakeError):
    """External endpoint could not be reached."""


class MalformedResponse(PbrBakeError):
    """External endpoint returned a payload that fails validation."""


class Timeout(PbrBakeError):
    """External request timed out."""


class DimensionMismatch(PbrBakeError):
    """Array shapes inconsistent between inputs."""


class MismatchedResolutions(DimensionMismatch):
    """Images expected to share a resolution do not."""


class AllHole(PbrBakeError):
    """Inpainting mask covers the entire image."""


class NoVisibleViews(PbrBakeError):
    """A texel has no visible observation in any view."""


class NonfiniteInput(PbrBakeError):
    """NaN or infinity in numeric input."""


class TransportError(PbrBakeError):
    """HTTP transport failure talking to the scoring service."""


class AllRunsFailed(PbrBakeError):
    """No scoring run produced a parseable score."""


class EmptyIntersection(PbrBakeError):
    """Coverage masks being compared do not overlap."""
