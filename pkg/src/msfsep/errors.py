"""Error taxonomy shared across the package.

Validation problems (bad shapes, bad configs, bad usage) are kept distinct
from runtime failures so the CLI can map them to exit codes.
"""


class MsfsepError(Exception):
    """Base class for package errors."""


class ConfigError(MsfsepError):
    """Invalid configuration value (unknown scheme, bad factor, B < 1, ...)."""


class DimensionError(MsfsepError):
    """Shape mismatch; message names the offending axis or edge."""


class UsageError(MsfsepError):
    """API misuse (zero reference signal, gradient of non-recorded tensor, ...)."""


class WavFormatError(MsfsepError):
    """Malformed WAV file. Carries the byte offset of the failure."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
