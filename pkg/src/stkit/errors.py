"""Error taxonomy shared by all modules.

Exit-code mapping used by the CLI: DataError/ConfigError -> 1, UsageError
(including DimensionError) -> 2.
"""


class StkitError(Exception):
    """Base class for all toolkit errors."""


class DataError(StkitError):
    """Malformed or unusable input data (files, manifests, corpora)."""


class ConfigError(StkitError):
    """Invalid or inconsistent configuration (shapes, languages, vocab)."""


class UsageError(StkitError):
    """API or CLI misuse (bad arguments, wrong call sequence)."""


class DimensionError(UsageError):
    """Tensor shape mismatch; message names both shapes."""
