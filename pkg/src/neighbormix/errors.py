"""Exception taxonomy shared across the engine.

Validation problems (bad files, inconsistent inputs, out-of-range settings)
raise :class:`ValidationError`; failures inside a computation that received
structurally valid inputs raise :class:`ComputeError`.  The CLI maps the two
to exit codes 1 and 2.
"""


class NeighborMixError(Exception):
    """Base class for all engine errors."""


class ValidationError(NeighborMixError):
    """Invalid file contents, inconsistent inputs, or out-of-range settings."""


class FormatError(ValidationError):
    """A binary or text artifact does not conform to its declared format."""


class ComputeError(NeighborMixError):
    """A computation could not be carried out on otherwise valid inputs."""
