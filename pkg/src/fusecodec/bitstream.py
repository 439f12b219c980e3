"""The two-layer bitstream container (".sicm" files).

Normative byte layout, all integers big-endian:

    magic      4 bytes  b"SICM"
    version    1 byte   (currently 1)
    flags      1 byte   bit0 = enhancement sections present
                        bit1 = enhancement sections carry a DC residual
    width      2 bytes  original image width in pixels
    height     2 bytes  original image height in pixels
    n          1 byte   base group count
    m          1 byte   enhancement group count (0 when absent)
    lambda_id  1 byte   index into the published lambda table (255 = custom)
    model_hash 8 bytes  hash of the base checkpoint (config + weights)

followed by sections, each a 4-byte big-endian length plus payload, in
order: z, y, then (only when bit0 or bit1 is set) za, ya.  The base
sections alone always suffice to decode the machine-layer image.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

MAGIC = b"SICM"
VERSION = 1

FLAG_ENHANCEMENT = 0x01
FLAG_DC_RESIDUAL = 0x02

_HEADER = struct.Struct(">4sBBHHBBB8s")
HEADER_SIZE = _HEADER.size  # 21
SECTION_PREFIX_SIZE = 4

MAX_DIMENSION = 0xFFFF


class BitstreamError(ValueError):
    """Malformed container: bad magic/version, truncation, length mismatch."""


class LayerMissingError(BitstreamError):
    """A decode was requested for a layer the stream does not carry."""


@dataclass
class ScalableBitstream:
    width: int
    height: int
    n: int
    m: int
    lambda_id: int
    model_hash: bytes
    z_stream: bytes
    y_stream: bytes
    za_stream: bytes | None = None
    ya_stream: bytes | None = None
    flags: int = 0
    version: int = VERSION

    def __post_init__(self):
        if len(self.model_hash) != 8:
            raise BitstreamError("model_hash must be exactly 8 bytes")
        if not (0 < self.width <= MAX_DIMENSION and 0 < self.height <= MAX_DIMENSION):
            raise BitstreamError(f"image dimensions out of range: {self.width}x{self.height}")
        if self.has_enhancement != (self.za_stream is not None and self.ya_stream is not None):
            raise BitstreamError("enhancement flag inconsistent with sections")

    @property
    def has_enhancement(self) -> bool:
        return bool(self.flags & (FLAG_ENHANCEMENT | FLAG_DC_RESIDUAL))

    @property
    def is_dc(self) -> bool:
        return bool(self.flags & FLAG_DC_RESIDUAL)

    @property
    def base_bytes(self) -> int:
        """Container bytes needed for machine decode: header + z + y sections."""
        return (HEADER_SIZE
                + SECTION_PREFIX_SIZE + len(self.z_stream)
                + SECTION_PREFIX_SIZE + len(self.y_stream))

    @property
    def enh_bytes(self) -> int:
        if not self.has_enhancement:
            return 0
        return (SECTION_PREFIX_SIZE + len(self.za_stream)
                + SECTION_PREFIX_SIZE + len(self.ya_stream))

    @property
    def total_bytes(self) -> int:
        return self.base_bytes + self.enh_bytes

    def serialize(self) -> bytes:
        out = bytearray(_HEADER.pack(
            MAGIC, self.version, self.flags, self.width, self.height,
            self.n, self.m, self.lambda_id, self.model_hash,
        ))
        sections = [self.z_stream, self.y_stream]
        if self.has_enhancement:
            sections += [self.za_stream, self.ya_stream]
        for payload in sections:
            out += len(payload).to_bytes(4, "big")
            out += payload
        return bytes(out)

    @classmethod
    def parse(cls, data: bytes) -> "ScalableBitstream":
        if len(data) < HEADER_SIZE:
            raise BitstreamError(f"truncated header: {len(data)} bytes")
        magic, version, flags, width, height, n, m, lam_id, model_hash = \
            _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise BitstreamError(f"bad magic {magic!r}")
        if version != VERSION:
            raise BitstreamError(f"unsupported version {version}")
        pos = HEADER_SIZE
        count = 4 if flags & (FLAG_ENHANCEMENT | FLAG_DC_RESIDUAL) else 2
        sections = []
        for _ in range(count):
            if pos + SECTION_PREFIX_SIZE > len(data):
                raise BitstreamError("truncated section length")
            length = int.from_bytes(data[pos:pos + SECTION_PREFIX_SIZE], "big")
            pos += SECTION_PREFIX_SIZE
            if pos + length > len(data):
                raise BitstreamError(
                    f"section declares {length} bytes but only {len(data) - pos} remain"
                )
            sections.append(data[pos:pos + length])
            pos += length
        if pos != len(data):
            raise BitstreamError(f"{len(data) - pos} trailing bytes after last section")
        za, ya = (sections[2], sections[3]) if count == 4 else (None, None)
        return cls(width=width, height=height, n=n, m=m, lambda_id=lam_id,
                   model_hash=model_hash, z_stream=sections[0], y_stream=sections[1],
                   za_stream=za, ya_stream=ya, flags=flags, version=version)

    def strip_enhancement(self) -> "ScalableBitstream":
        """Base-only copy of this stream (machine decode stays identical)."""
        return ScalableBitstream(
            width=self.width, height=self.height, n=self.n, m=0,
            lambda_id=self.lambda_id, model_hash=self.model_hash,
            z_stream=self.z_stream, y_stream=self.y_stream,
            flags=self.flags & ~(FLAG_ENHANCEMENT | FLAG_DC_RESIDUAL),
            version=self.version,
        )
