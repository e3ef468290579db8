"""Exception hierarchy shared by every cisslab module."""


class CissLabError(Exception):
    """Base class for all lab errors."""


class ConfigurationError(CissLabError, ValueError):
    """Invalid counts, geometry, stage dimensions or scenario configuration."""


class ShapeError(CissLabError, ValueError):
    """Raster, feature or score arrays whose shapes do not line up."""


class ClassRangeError(CissLabError, IndexError):
    """Task index outside 1..T."""


class PreconditionError(CissLabError, RuntimeError):
    """An operation was called in a state where it is not defined."""


class InvalidLabelError(CissLabError, ValueError):
    """A label id outside the head set or evaluation space."""

    def __init__(self, pixel, class_id, allowed, role: str = "label"):
        self.pixel = tuple(int(p) for p in pixel)
        self.class_id = int(class_id)
        self.allowed = sorted(int(c) for c in allowed)
        self.role = role
        super().__init__(f"Invalid {role} id {self.class_id} at pixel {self.pixel}; allowed ids {self.allowed}")


class CheckpointError(CissLabError):
    """Checkpoint could not be written or read."""


class CheckpointCorruptError(CheckpointError):
    """Checkpoint bytes are truncated or fail their digest."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an unsupported format version."""


class ScenarioStepError(CissLabError):
    """Failure inside a scenario step; carries the step index."""

    def __init__(self, step, cause):
        self.step = step
        self.cause = cause
        super().__init__(f"Scenario failed at step {step}: {type(cause).__name__}: {cause}")
