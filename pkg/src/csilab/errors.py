"""Exception hierarchy shared across the package.

CLI exit codes: ConfigError -> 2, PartialRunError -> 3, DivergenceError -> 4.
"""


class CsilabError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CsilabError):
    """Tensor shape mismatch; message names the offending layer."""


class NonFiniteLossError(CsilabError):
    """A loss evaluated to NaN/inf. Carries the offending value."""

    def __init__(self, message: str, value: float):
        super().__init__(f"{message} (value={value!r})")
        self.value = value


class DecodeError(CsilabError):
    """Corrupt or truncated binary payload."""


class UnsupportedVersionError(DecodeError):
    """File format version not handled by this build."""


class MissingSidecarError(CsilabError):
    """Dataset sidecar (.meta) absent; distinguishes 'no stats' from corrupt data."""


class DegenerateDataError(CsilabError):
    """Data unusable as-is: constant dataset (max == min) or zero-norm sample."""


class ConfigError(CsilabError):
    """Invalid experiment configuration (CLI exit code 2)."""


class PartialRunError(CsilabError):
    """Output directory holds an unfinished run (CLI exit code 3); rerun with force."""


class DivergenceError(CsilabError):
    """Training loss exceeded the divergence guard (CLI exit code 4)."""
