"""Error taxonomy shared across the package.

Three categories map to CLI exit codes: configuration (bad shapes, bad
config files), numeric (non-finite values mid-run), and I/O (unreadable or
unwritable artifact files).
"""


class FedhpdError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FedhpdError):
    """Invalid dimensions, incompatible kinds, or malformed configuration."""


class NumericError(FedhpdError):
    """A NaN/Inf or other numeric failure was detected; the run must abort."""


class ArtifactIOError(FedhpdError):
    """Reading or writing a snapshot, state-set, or metrics file failed."""
