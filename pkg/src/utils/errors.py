"""Exception hierarchy shared by the engine, the models and the pipeline."""


class SnowHazardError(Exception):
    """Base class for every error raised by this project."""


class DimensionError(SnowHazardError, ValueError):
    """Shapes disagree. `axis` names the offending axis when known."""

    def __init__(self, message: str, axis: str | int | None = None):
        super().__init__(message if axis is None else f"{message} (axis: {axis})")
        self.axis = axis


class LabelError(SnowHazardError, ValueError):
    """A class label is outside 0..C-1 and is not the ignore index."""

    def __init__(self, message: str, coordinate: tuple[int, ...] | None = None):
        super().__init__(message if coordinate is None else f"{message} at pixel {coordinate}")
        self.coordinate = coordinate


class ContractError(SnowHazardError, ValueError):
    """A caller broke an operation precondition (e.g. backward on a non-scalar)."""


class ConfigError(SnowHazardError, ValueError):
    """Invalid configuration values."""


class InputError(SnowHazardError, ValueError):
    """Invalid runtime input (empty dataset, wrong image size, ...)."""


class DataIOError(SnowHazardError, OSError):
    """A file could not be read or written."""

    def __init__(self, message: str, path=None):
        super().__init__(message if path is None else f"{message}: {path}")
        self.path = path


class MaskValidationError(SnowHazardError, ValueError):
    """A mask holds values outside the legal class range."""


class FormatError(SnowHazardError, ValueError):
    """A checkpoint file has a bad magic, version or layout."""


class GenerationError(SnowHazardError, ValueError):
    """A synthetic scene cannot be generated with the requested parameters."""


class UndefinedMetricError(SnowHazardError, ValueError):
    """A metric was requested from an empty confusion matrix."""


class NoRoadDetected(SnowHazardError):
    """The road mask is empty, so the hazard ratio has no denominator."""

    def __init__(self, image_id: str | None = None):
        super().__init__(f"No road pixels detected in image '{image_id}'" if image_id else "No road pixels detected")
        self.image_id = image_id


class ReportParseError(SnowHazardError, ValueError):
    """A hazard report CSV is malformed."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
