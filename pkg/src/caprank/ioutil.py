"""Small shared helpers for canonical serialization and checksums."""

import hashlib
import json
import struct


def canonical_json(obj) -> str:
    """Serialize to the canonical single-line JSON used by all text formats.

    Sorted keys and fixed separators make the encoding a pure function of
    the value, which keeps exported artifacts byte-stable.
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file_hex(path, chunk_size: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        while True:
            chunk = f.read(chunk_size)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()


def digest_u64(hasher) -> int:
    """Fold a sha256 hasher into the little-endian u64 used as file checksum."""
    return struct.unpack("<Q", hasher.digest()[:8])[0]


_FORBIDDEN_ID_CHARS = {"\t", "\n", "\r", "\x1f"}


def check_identifier(value: str, what: str) -> str:
    """Validate an id used in line- and tab-delimited formats."""
    from .errors import InvalidField

    if not isinstance(value, str) or not value:
        raise InvalidField(f"{what} must be a non-empty string")
    if any(c in _FORBIDDEN_ID_CHARS for c in value):
        raise InvalidField(f"{what} {value!r} contains a reserved delimiter character")
    return value
