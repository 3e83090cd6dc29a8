"""Exception types shared across the codec."""


class OctpccError(Exception):
    """Base class for all octpcc errors."""


class InvalidInput(OctpccError):
    """An argument violates a documented precondition."""


class ParseError(OctpccError):
    """A file (PLY, checkpoint, bitstream) could not be parsed."""


class NumericalError(OctpccError):
    """A non-finite value appeared in a numeric computation."""


class ConfigError(OctpccError):
    """Model configuration is inconsistent with the requested operation."""


class ModelMismatch(OctpccError):
    """The decoder's model does not match the digest in the bitstream."""


class CorruptStream(OctpccError):
    """The bitstream payload is truncated or internally inconsistent."""


class InsufficientClasses(OctpccError):
    """Fewer than two occupancy classes present; statistics undefined."""
