"""Exception hierarchy shared by all xmap modules.

The split matters to the CLI, which maps error classes onto its exit-code
contract: usage problems exit 1, ``DataError``/``FormatError`` exit 2, and
everything else (including ``ProtocolError``) exits 3.
"""

from __future__ import annotations


class XmapError(Exception):
    """Base class for all errors raised by this package."""


class DataError(XmapError):
    """Invalid data: invariant violations, mismatched counts or dims."""


class NonFiniteError(DataError):
    """A vector payload contains NaN or Inf."""


class FormatError(XmapError):
    """A binary or text artifact on disk is structurally invalid."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(FormatError):
    """File declares a format version this build does not understand."""


class TruncatedPayloadError(FormatError):
    """File ends before the payload its header promises."""


class CorruptRecordError(FormatError):
    """Structurally broken content: trailing bytes, bad enum codes, shape lies."""


class ProtocolError(XmapError):
    """The external embedding service misbehaved (transport or contract)."""
