"""Exception hierarchy shared by every camgate module."""


class CamGateError(Exception):
    """Base class for all errors raised by camgate."""


class ConfigurationError(CamGateError):
    """A manifest, dataset, weights file, or run configuration is invalid.

    The CLI maps this to exit code 2 and aborts before any sample is
    processed.
    """


class InputError(CamGateError):
    """A runtime input (image, tensor, class index, heatmap) violates a
    documented precondition."""


class UsageError(CamGateError):
    """The library API was invoked in an unsupported order, e.g. a backward
    pass without a cached forward pass."""
