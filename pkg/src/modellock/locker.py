"""Whole-model lock/unlock and the on-disk container formats.

Locking walks the model's parameters in canonical order (layer order, weight
before bias, row-major elements), serializes each scalar as little-endian
IEEE-754 binary32, and transforms the bytes with the S-Box keystream: scalar
i consumes keystream bytes 4i..4i+3. Unlocking inverts that bytewise, so the
round trip is bit-exact for every float pattern including NaN payloads —
parameter bytes never pass through float arithmetic here.

Unlocking never judges the key: any 16-byte key "succeeds" and a wrong key
simply yields garbage parameters (frequently non-finite). That is the locking
scheme's behavior, not an error path.

File container (all integers little-endian):

    magic            4 bytes, ``DLK1`` (locked) or ``DLM1`` (plaintext)
    format_version   u16 (currently 1)
    arch_len         u32, then arch_len bytes of UTF-8 architecture text
                     (canonical grammar from :mod:`modellock.nn`)
    tensor_count     u32
    per tensor:      name_len u32, name bytes (UTF-8), rank u32,
                     rank x u32 dims, blob offset u64, blob length u64
                     (offsets are relative to the start of the blob section)
    blobs            concatenated tensor bytes in canonical order
    digest           32-byte SHA-256 over everything before it

``DLK1`` blobs hold S-Box-locked bytes; ``DLM1`` blobs hold raw binary32
values. The digest detects corruption only — it does not authenticate the
key, and a locked file deliberately cannot reveal whether a key is correct.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass

import numpy as np

from .cipher import check_key, expand_keystream, lock_bytes, unlock_bytes
from .nn import Architecture, Model, WeightTensor, format_architecture, parse_architecture

MAGIC_LOCKED = b"DLK1"
MAGIC_PLAIN = b"DLM1"
FORMAT_VERSION = 1
DIGEST_LEN = 32


class FormatError(ValueError):
    """Base class for container-format violations."""


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class DigestMismatchError(FormatError):
    pass


@dataclass
class LockedModel:
    arch: Architecture
    tensor_names: list[str]
    tensor_shapes: list[tuple[int, ...]]
    blobs: list[bytes]
    format_version: int
    digest: bytes

    def __post_init__(self):
        for shape, blob in zip(self.tensor_shapes, self.blobs):
            expected = 4 * int(np.prod(shape)) if shape else 4
            if len(blob) != expected:
                raise FormatError(
                    f"blob length {len(blob)} does not match shape {shape}"
                )

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for shape in self.tensor_shapes)

    def verify_digest(self) -> None:
        body = _serialize_body(MAGIC_LOCKED, self.format_version, self.arch,
                               self.tensor_names, self.tensor_shapes, self.blobs)
        if hashlib.sha256(body).digest() != self.digest:
            raise DigestMismatchError("locked model failed its integrity check")


@dataclass
class UnlockedView:
    """Parameters reconstructed with a caller-supplied key.

    Transient by contract: scoped to the query that created it, never
    written to persistent storage (write_model refuses it).
    """

    arch: Architecture
    params: list[WeightTensor]

    @property
    def param_count(self) -> int:
        return sum(t.size for t in self.params)


def _float_bytes(tensor: WeightTensor) -> bytes:
    values = np.ascontiguousarray(tensor.values, dtype="<f4")
    return values.tobytes()


def lock_model(model: Model, key: bytes) -> LockedModel:
    """Lock every parameter of ``model`` under ``key`` (keystream offsets run
    across tensor boundaries, matching the canonical concatenated order)."""
    key = check_key(key)
    model.validate()
    keystream = expand_keystream(key, 4 * model.param_count)
    blobs = []
    offset = 0
    for tensor in model.params:
        plain = _float_bytes(tensor)
        blobs.append(lock_bytes(plain, keystream[offset : offset + len(plain)]))
        offset += len(plain)
    names = [t.name for t in model.params]
    shapes = [tuple(t.values.shape) for t in model.params]
    body = _serialize_body(MAGIC_LOCKED, FORMAT_VERSION, model.arch, names, shapes, blobs)
    return LockedModel(
        arch=model.arch,
        tensor_names=names,
        tensor_shapes=shapes,
        blobs=blobs,
        format_version=FORMAT_VERSION,
        digest=hashlib.sha256(body).digest(),
    )


def unlock_model(locked: LockedModel, key: bytes) -> UnlockedView:
    """Decrypt ``locked`` with ``key``; succeeds for any 16-byte key.

    Verifies the integrity digest first. A wrong key is not detectable here
    by design — it produces garbage (often non-finite) parameters.
    """
    key = check_key(key)
    locked.verify_digest()
    keystream = expand_keystream(key, 4 * locked.param_count)
    params = []
    offset = 0
    for name, shape, blob in zip(locked.tensor_names, locked.tensor_shapes, locked.blobs):
        plain = unlock_bytes(blob, keystream[offset : offset + len(blob)])
        offset += len(blob)
        values = np.frombuffer(plain, dtype="<f4").reshape(shape).copy()
        params.append(WeightTensor(name, values))
    return UnlockedView(arch=locked.arch, params=params)


def raw_locked_params(locked: LockedModel) -> list[WeightTensor]:
    """Interpret the locked blobs directly as float32 tensors (no unlock).

    Exposed for the fine-tuning attack's alternate initialization mode."""
    params = []
    for name, shape, blob in zip(locked.tensor_names, locked.tensor_shapes, locked.blobs):
        values = np.frombuffer(blob, dtype="<f4").reshape(shape).copy()
        params.append(WeightTensor(name, values))
    return params


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _serialize_body(magic: bytes, version: int, arch: Architecture,
                    names: list[str], shapes: list[tuple[int, ...]],
                    blobs: list[bytes]) -> bytes:
    out = io.BytesIO()
    out.write(magic)
    out.write(struct.pack("<H", version))
    arch_text = format_architecture(arch).encode("utf-8")
    out.write(struct.pack("<I", len(arch_text)))
    out.write(arch_text)
    out.write(struct.pack("<I", len(names)))
    offset = 0
    for name, shape, blob in zip(names, shapes, blobs):
        name_bytes = name.encode("utf-8")
        out.write(struct.pack("<I", len(name_bytes)))
        out.write(name_bytes)
        out.write(struct.pack("<I", len(shape)))
        for dim in shape:
            out.write(struct.pack("<I", dim))
        out.write(struct.pack("<QQ", offset, len(blob)))
        offset += len(blob)
    for blob in blobs:
        out.write(blob)
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"file ends at byte {len(self.data)}, needed {self.pos + n}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def _parse_container(data: bytes, expected_magic: bytes):
    r = _Reader(data)
    magic = r.take(4)
    if magic != expected_magic:
        raise BadMagicError(
            f"bad magic {magic!r}, expected {expected_magic!r}"
        )
    version = r.u16()
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version} is not supported")
    arch_text = r.take(r.u32()).decode("utf-8")
    count = r.u32()
    names, shapes, spans = [], [], []
    for _ in range(count):
        names.append(r.take(r.u32()).decode("utf-8"))
        rank = r.u32()
        shapes.append(tuple(r.u32() for _ in range(rank)))
        offset = r.u64()
        length = r.u64()
        spans.append((offset, length))
    blob_start = r.pos
    expected = 0
    for (offset, length), shape in zip(spans, shapes):
        if offset != expected:
            raise FormatError(f"blob offset {offset} is not contiguous (expected {expected})")
        if length != 4 * int(np.prod(shape) if shape else 1):
            raise FormatError(f"blob length {length} does not match shape {shape}")
        expected += length
    blob_section = r.take(expected)
    digest = r.take(DIGEST_LEN)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after digest")
    if hashlib.sha256(data[:blob_start + expected]).digest() != digest:
        raise DigestMismatchError("integrity digest does not match file contents")
    arch = parse_architecture(arch_text)
    blobs = [blob_section[o : o + l] for o, l in spans]
    return arch, names, shapes, blobs, version, digest


def _read_source(source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if hasattr(source, "read"):
        return source.read()
    with open(source, "rb") as fh:
        return fh.read()


def _write_sink(sink, payload: bytes) -> None:
    if hasattr(sink, "write"):
        sink.write(payload)
        return
    with open(sink, "wb") as fh:
        fh.write(payload)


def write_locked(locked: LockedModel, sink) -> None:
    """Write a ``DLK1`` container; byte-identical for identical inputs."""
    body = _serialize_body(MAGIC_LOCKED, locked.format_version, locked.arch,
                           locked.tensor_names, locked.tensor_shapes, locked.blobs)
    if hashlib.sha256(body).digest() != locked.digest:
        raise DigestMismatchError("in-memory locked model failed its integrity check")
    _write_sink(sink, body + locked.digest)


def read_locked(source) -> LockedModel:
    """Parse and integrity-check a ``DLK1`` container."""
    data = _read_source(source)
    arch, names, shapes, blobs, version, digest = _parse_container(data, MAGIC_LOCKED)
    return LockedModel(arch, names, shapes, blobs, version, digest)


def write_model(model: Model, sink) -> None:
    """Write a plaintext ``DLM1`` checkpoint (offline workflow only)."""
    if isinstance(model, UnlockedView):
        raise TypeError("unlocked views are transient and must not be persisted")
    model.validate()
    names = [t.name for t in model.params]
    shapes = [tuple(t.values.shape) for t in model.params]
    blobs = [_float_bytes(t) for t in model.params]
    body = _serialize_body(MAGIC_PLAIN, FORMAT_VERSION, model.arch, names, shapes, blobs)
    _write_sink(sink, body + hashlib.sha256(body).digest())


def read_model(source) -> Model:
    """Parse a plaintext ``DLM1`` checkpoint back into a Model."""
    data = _read_source(source)
    arch, names, shapes, blobs, _, _ = _parse_container(data, MAGIC_PLAIN)
    params = []
    for name, shape, blob in zip(names, shapes, blobs):
        values = np.frombuffer(blob, dtype="<f4").reshape(shape).copy()
        params.append(WeightTensor(name, values))
    return Model(arch, params)
