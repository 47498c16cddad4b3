"""Exception hierarchy shared across the package.

Everything raised on bad data derives from FewcacheError so callers (CLI,
service) can map it to a single "data error" outcome.
"""


class FewcacheError(Exception):
    """Base class for all data-level failures."""


class DimensionMismatchError(FewcacheError):
    """Operand shapes are inconsistent (embedding dim or class count)."""


class NormalizationError(FewcacheError):
    """A row flagged as unit-norm deviates beyond the tolerance."""


class LabelRangeError(FewcacheError):
    """A class index is outside [0, num_classes)."""


class EmptyCacheError(FewcacheError):
    """A retrieval was attempted against a cache with no rows."""


class FormatError(FewcacheError):
    """A binary file is structurally invalid (magic, version, payload size)."""


class ManifestError(FewcacheError):
    """A dataset manifest is inconsistent or references missing files."""
