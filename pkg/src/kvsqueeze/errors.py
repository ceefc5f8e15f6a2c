"""Exception types shared across the package.

CLI exit-code mapping: format errors exit 3, constraint errors exit 4;
everything else is a usage error (2) or a bug.
"""

from __future__ import annotations


class KvSqueezeError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(KvSqueezeError):
    """Malformed or incomplete JSON config document."""


class TraceFormatError(KvSqueezeError):
    """Corrupt, truncated, or wrong-magic trace file."""


class DegenerateTraceError(KvSqueezeError):
    """A trace entry that cannot be profiled (zero-norm or non-finite vector)."""


class UnsupportedModelError(KvSqueezeError):
    """Model shape outside what an operation supports (e.g. fewer than 3 layers)."""


class AllocationError(KvSqueezeError):
    """Budget reallocation is impossible for the given layer groups."""


class BudgetFloorError(KvSqueezeError):
    """A per-layer budget fell below the eviction policy's minimum."""


class ByteOverflowError(KvSqueezeError):
    """Byte arithmetic exceeded the 64-bit unsigned range."""
