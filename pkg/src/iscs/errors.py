"""Exception types shared across the package."""


class Error(Exception):
    """Base class for every error this package raises deliberately."""


class TensorFileError(Error):
    """Malformed or internally inconsistent tensor container."""


class ImageFormatError(Error):
    """Unreadable or unsupported PGM/PPM data."""


class ModelError(Error):
    """A codec model file or object violates its contract."""


class IntegrityError(Error):
    """Stored data fails a hash or checksum validation."""


class ConfigError(Error):
    """Invalid run configuration."""
