"""Exception types shared across the pipeline."""

from __future__ import annotations


class OvsegError(Exception):
    """Base class for all pipeline errors."""


class MissingFile(OvsegError):
    """A file referenced by a manifest or config does not exist."""


class MalformedManifest(OvsegError):
    """Manifest schema violation; the message names the offending field."""


class InvalidPose(OvsegError):
    """Camera pose is not a rigid transform (rotation not orthonormal or det != +1)."""


class DimensionMismatch(OvsegError):
    """Image/depth/intrinsics dimensions disagree."""


class VersionMismatch(OvsegError):
    """Cache file was written by an incompatible format version."""


class EmptyCloud(OvsegError):
    """Operation requires a non-empty point cloud."""


class NoValidNormals(OvsegError):
    """All normals in the cloud are flagged invalid."""


class NoViews(OvsegError):
    """Operation requires at least one camera view."""


class NoVisiblePoints(OvsegError):
    """Prompt sampling requires at least one visible point."""


class EmptyMask(OvsegError):
    """Segmentation mask has fewer pixels than the configured minimum."""


class DimMismatch(OvsegError):
    """Feature vectors have different dimensions."""


class EmptyPrompt(OvsegError):
    """Query prompt is empty or whitespace-only."""


class IoFailure(OvsegError):
    """Filesystem write failed."""


class MissingStage(OvsegError):
    """A pipeline command requires an upstream stage that is not cached."""


class ProviderUnavailable(OvsegError):
    """Feature provider transport failure (connection refused, 5xx, timeout)."""

    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after
