"""Binary artifact files for inference outputs that do not fit a JSON envelope.

Label lists, vectors, and contours travel inline in the response envelope;
masks, images, and raw arrays are written to an ``.mhaf`` file served under
the gateway's ``/artifacts/`` route instead.

``.mhaf`` layout (all multi-byte integers little-endian):

    offset  size             field
    0       4                magic ``MHAF``
    4       2                format version (currently 1)
    6       2                entry count
    8       ...              entries, back to back

    entry:
    +0      2                name length N
    +2      N                name, UTF-8
    +2+N    1                dtype tag (1=u8, 2=i32, 3=f32, 4=f64)
    +3+N    1                rank R
    +4+N    4*R              shape, u32 per axis
    ...     2                attribute count A
    ...     A pairs          key/value, each u16 length + UTF-8 bytes
    ...     prod(shape)*w    element buffer, row-major, little-endian
                             (w = dtype width in bytes)

Writers publish atomically (temp file + rename) into a digest-keyed store
directory, so concurrent readers never observe a partial file and equal
outcomes map to equal URLs.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from dataclasses import dataclass, field

from .arrays import DTYPE_TO_NUMPY, DataArray

MAGIC = b"MHAF"
FORMAT_VERSION = 1
FILE_EXTENSION = ".mhaf"
ARTIFACT_ROUTE = "/artifacts"

DTYPE_TAGS = {"u8": 1, "i32": 2, "f32": 3, "f64": 4}
TAG_DTYPES = {v: k for k, v in DTYPE_TAGS.items()}
DTYPE_WIDTHS = {name: DTYPE_TO_NUMPY[name].itemsize for name in DTYPE_TO_NUMPY}

# Output types whose payloads are JSON-representable inside the envelope.
ENVELOPE_TYPES = frozenset({"label_list", "vector", "contour"})
ARTIFACT_TYPES = frozenset({"mask_image", "image", "custom"})


class StoreError(Exception):
    """The store directory cannot be written."""


class FormatError(Exception):
    """Structurally invalid artifact bytes; carries the failing byte offset."""

    def __init__(self, message: str, offset: int, entry: str | None = None):
        self.offset = offset
        self.entry = entry
        where = f" (entry {entry!r})" if entry else ""
        super().__init__(f"{message} at offset {offset}{where}")


@dataclass(frozen=True)
class ArtifactEntry:
    name: str
    array: DataArray
    attributes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ArtifactRef:
    url: str
    file_digest: str

    @property
    def filename(self) -> str:
        return f"{self.file_digest}{FILE_EXTENSION}"


def is_envelope_representable(outcome) -> bool:
    """True when the outcome's payload travels inline in the JSON envelope."""
    return outcome.output_type in ENVELOPE_TYPES


def encode_entries(entries: list[ArtifactEntry]) -> bytes:
    """Serialize entries to artifact bytes. Entry names must be unique."""
    names = [e.name for e in entries]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate entry names: {names}")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HH", FORMAT_VERSION, len(entries))
    for entry in entries:
        name = entry.name.encode("utf-8")
        out += struct.pack("<H", len(name)) + name
        out += struct.pack("<BB", DTYPE_TAGS[entry.array.dtype], entry.array.rank)
        for axis in entry.array.shape:
            out += struct.pack("<I", axis)
        out += struct.pack("<H", len(entry.attributes))
        for key, value in entry.attributes.items():
            for text in (str(key), str(value)):
                blob = text.encode("utf-8")
                out += struct.pack("<H", len(blob)) + blob
        out += entry.array.tobytes_le()
    return bytes(out)


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, count: int, what: str, entry: str | None = None) -> bytes:
        if self.offset + count > len(self.payload):
            raise FormatError(f"truncated {what}", self.offset, entry)
        chunk = self.payload[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def u8(self, what: str, entry=None) -> int:
        return self.take(1, what, entry)[0]

    def u16(self, what: str, entry=None) -> int:
        return struct.unpack("<H", self.take(2, what, entry))[0]

    def u32(self, what: str, entry=None) -> int:
        return struct.unpack("<I", self.take(4, what, entry))[0]

    def text(self, what: str, entry=None) -> str:
        length = self.u16(f"{what} length", entry)
        return self.take(length, what, entry).decode("utf-8")


def decode_entries(payload: bytes) -> list[ArtifactEntry]:
    """Parse artifact bytes back into entries, bit-exactly."""
    reader = _Reader(payload)
    if reader.take(4, "magic") != MAGIC:
        raise FormatError(f"bad magic, expected {MAGIC!r}", 0)
    version = reader.u16("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    entry_count = reader.u16("entry count")
    entries = []
    for _ in range(entry_count):
        name = reader.text("entry name")
        tag = reader.u8("dtype tag", name)
        if tag not in TAG_DTYPES:
            raise FormatError(f"unknown dtype tag {tag}", reader.offset - 1, name)
        dtype = TAG_DTYPES[tag]
        rank = reader.u8("rank", name)
        if rank < 1:
            raise FormatError("rank must be >= 1", reader.offset - 1, name)
        shape = tuple(reader.u32("shape axis", name) for _ in range(rank))
        attributes = {}
        for _ in range(reader.u16("attribute count", name)):
            key = reader.text("attribute key", name)
            attributes[key] = reader.text("attribute value", name)
        count = 1
        for axis in shape:
            count *= axis
        blob = reader.take(count * DTYPE_WIDTHS[dtype], "data buffer", name)
        entries.append(ArtifactEntry(name, DataArray.from_bytes_le(blob, dtype, shape), attributes))
    return entries


def _payload_entries(outcome) -> list[ArtifactEntry]:
    if is_envelope_representable(outcome):
        raise ValueError(f"{outcome.output_type} outputs belong in the envelope, not an artifact")
    payload = outcome.payload
    if not isinstance(payload, DataArray):
        raise ValueError(f"artifact payload must be a DataArray, got {type(payload).__name__}")
    attributes = {"output_type": outcome.output_type, "model_id": outcome.model_id}
    return [ArtifactEntry("output", payload, attributes)]


def file_digest(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def write_artifact(outcome, store_dir) -> ArtifactRef:
    """Write a non-envelope outcome into the digest-keyed store directory.

    The file holds one entry named ``output`` carrying the payload array with
    ``output_type`` and ``model_id`` attributes. Returns a reference whose URL
    resolves under the gateway's artifact route.
    """
    payload = encode_entries(_payload_entries(outcome))
    return write_bytes(payload, store_dir)


def write_bytes(payload: bytes, store_dir) -> ArtifactRef:
    """Publish pre-encoded artifact bytes atomically; returns the digest ref."""
    digest = file_digest(payload)
    ref = ArtifactRef(url=f"{ARTIFACT_ROUTE}/{digest}{FILE_EXTENSION}", file_digest=digest)
    store_dir = os.fspath(store_dir)
    final_path = os.path.join(store_dir, ref.filename)
    if os.path.exists(final_path):
        return ref
    try:
        os.makedirs(store_dir, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=store_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp_path, final_path)
        finally:
            if os.path.exists(tmp_path):
                os.unlink(tmp_path)
    except OSError as exc:
        raise StoreError(f"cannot write artifact under {store_dir}: {exc}") from exc
    return ref


def read_artifact(path) -> list[ArtifactEntry]:
    """Read an artifact file back into its entries."""
    with open(path, "rb") as fh:
        return decode_entries(fh.read())
