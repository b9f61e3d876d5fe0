"""Typed exception hierarchy.

Every error raised on purpose by this package derives from KpccError, so
callers can catch one base class at the CLI boundary. The subclasses mark
which contract was violated; nothing here carries extra state beyond the
message.
"""


class KpccError(Exception):
    """Base class for all errors raised by kpcc."""


class FormatError(KpccError):
    """A file or byte stream does not follow its declared layout."""


class DomainError(KpccError):
    """Input values fall outside the documented coordinate/value domain."""


class ParameterError(KpccError):
    """An argument or configuration value is unusable."""


class MappingError(KpccError):
    """Symbol/token conversion hit a value outside the codebook."""


class IntegrityError(KpccError):
    """Decoded or stored data is internally inconsistent."""


class ModelError(KpccError):
    """A probability model was misused or its weights are unusable."""


class TransportError(KpccError):
    """The external model subprocess failed to follow the wire protocol."""
