"""Exception hierarchy shared across the package.

Exit-code mapping for the CLI: usage errors -> 1, DataError -> 2,
ProviderError -> 3.
"""


class SchemaforgeError(Exception):
    """Base class for all package errors."""


class DataError(SchemaforgeError):
    """Malformed, inconsistent, or missing data (corpora, manifests, configs)."""


class ProviderError(SchemaforgeError):
    """A scorer provider is unavailable, misconfigured, or failed."""


class UsageError(SchemaforgeError):
    """Bad command-line invocation."""
