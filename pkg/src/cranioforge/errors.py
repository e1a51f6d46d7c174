"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`CranioforgeError`, so callers (and the CLI) can separate bad input
from programming bugs.
"""


class CranioforgeError(Exception):
    pass


# volume io
class VolumeIOError(CranioforgeError):
    pass


class UnsupportedTransferSyntax(VolumeIOError):
    pass


class InconsistentGeometry(VolumeIOError):
    pass


class MissingRequiredTag(VolumeIOError):
    pass


class NonUniformSliceSpacing(VolumeIOError):
    pass


class MalformedDicom(VolumeIOError):
    pass


class SidecarMismatch(VolumeIOError):
    pass


class TruncatedData(VolumeIOError):
    pass


# segmentation
class SegmentationError(CranioforgeError):
    pass


class InvalidRange(SegmentationError):
    pass


class EmptyMask(SegmentationError):
    pass


class DegeneratePolygon(SegmentationError):
    pass


class SliceOutOfRange(SegmentationError):
    pass


class InvalidEditOp(SegmentationError):
    pass


class EditScriptError(SegmentationError):
    """An op inside a script failed; ``index`` is its position."""

    def __init__(self, index, cause):
        super().__init__(f"edit op #{index} failed: {cause}")
        self.index = index
        self.cause = cause


class NegativeSigma(CranioforgeError):
    pass


# mesh
class MeshError(CranioforgeError):
    pass


class NonManifoldBoundary(MeshError):
    pass


class MalformedSTL(MeshError):
    pass


class NonFiniteCoordinate(MeshError):
    pass


class MalformedOBJ(MeshError):
    pass


class InvalidLoop(MeshError):
    pass


class NotBoundaryEdge(MeshError):
    pass


class SharedVertex(MeshError):
    pass


class NothingRemoved(MeshError):
    pass


class NonManifoldInput(MeshError):
    pass


class InvalidLambda(MeshError):
    pass


class NonUnitNormal(MeshError):
    pass


class CapRequiresWatertight(MeshError):
    pass


class CapFailed(MeshError):
    pass


class NotWatertight(MeshError):
    pass


class ConfigError(CranioforgeError):
    pass
