"""Exception types raised across the toolkit."""


class RoomEchoError(Exception):
    """Base class for all toolkit errors."""


class InvalidGeometryError(RoomEchoError):
    """Room geometry is degenerate, non-watertight, or below minimum size."""


class InvalidViewpointError(RoomEchoError):
    """Panorama viewpoint lies outside the room or on a surface."""


class PlacementInfeasibleError(RoomEchoError):
    """Rejection sampling exhausted its attempt budget."""


class InvalidPlacementError(RoomEchoError):
    """Source/receiver pair violates the minimum distance rules."""


class InfiniteReverberationError(RoomEchoError):
    """All surface absorptions are zero; Sabine time diverges."""


class EmptySignalError(RoomEchoError):
    """Waveform is all zeros where a nonzero signal is required."""


class MetricUndefinedError(RoomEchoError):
    """Energy decay never reaches the level the metric needs."""


class DegenerateShiftError(RoomEchoError):
    """Time shift magnitude meets or exceeds the waveform length."""


class ShapeError(RoomEchoError):
    """Array input has the wrong shape or length."""


class SplitInfeasibleError(RoomEchoError):
    """Dataset cannot be partitioned under the requested split mode."""


class ConfigurationError(RoomEchoError):
    """Inconsistent or unsatisfiable run configuration."""
