"""PBIR1 raw image files and 16-bit PGM export.

Layout: the 6-byte magic ``b"PBIR1\\n"``, a little-endian uint32 header
length, a UTF-8 JSON header with sorted keys, then float32 little-endian
samples in row-major order (y outer, x inner).  A stack of ``nz`` planes is
stored plane after plane.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PBIR1\n"
DTYPE_TAG = "float32-le"
UNITS = ("HU", "mm-1", "sinogram", "HU2mm2")


class FormatError(ValueError):
    pass


class HashMismatch(FormatError):
    pass


@dataclass
class ImageFileHeader:
    nx: int
    ny: int
    dx: float = 1.0
    dy: float = 1.0
    unit: str = "HU"
    nz: int = 1
    dtype: str = DTYPE_TAG
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.unit not in UNITS:
            raise FormatError(f"unknown unit tag {self.unit!r}")
        if self.dtype != DTYPE_TAG:
            raise FormatError(f"unsupported dtype tag {self.dtype!r}")
        if min(self.nx, self.ny, self.nz) < 1:
            raise FormatError("dimensions must be positive")

    def to_json(self) -> bytes:
        d = {"dtype": self.dtype, "nx": self.nx, "ny": self.ny, "nz": self.nz,
             "dx": self.dx, "dy": self.dy, "unit": self.unit, "meta": self.meta}
        return json.dumps(d, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_json(cls, raw: bytes) -> "ImageFileHeader":
        try:
            d = json.loads(raw.decode())
            return cls(int(d["nx"]), int(d["ny"]), float(d["dx"]), float(d["dy"]), d["unit"],
                       int(d.get("nz", 1)), d["dtype"], d.get("meta", {}))
        except (KeyError, TypeError, ValueError, UnicodeDecodeError) as e:
            raise FormatError(f"bad header: {e}") from e

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.ny, self.nx) if self.nz == 1 else (self.nz, self.ny, self.nx)


def encode(data, header: ImageFileHeader) -> bytes:
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.shape != header.shape:
        raise FormatError(f"array shape {arr.shape} does not match header {header.shape}")
    hdr = header.to_json()
    return MAGIC + struct.pack("<I", len(hdr)) + hdr + arr.tobytes()


def decode(buf: bytes) -> tuple[np.ndarray, ImageFileHeader]:
    if not buf.startswith(MAGIC):
        raise FormatError("not a PBIR1 file (bad magic)")
    off = len(MAGIC)
    if len(buf) < off + 4:
        raise FormatError("truncated header length")
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    header = ImageFileHeader.from_json(buf[off:off + n])
    off += n
    expected = int(np.prod(header.shape)) * 4
    if len(buf) - off != expected:
        raise FormatError(f"payload is {len(buf) - off} bytes, expected {expected}")
    arr = np.frombuffer(buf, dtype="<f4", offset=off).reshape(header.shape)
    return arr.astype(np.float64), header


def check_writable(path, force: bool = False):
    path = Path(path)
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists (use --force to overwrite)")


def write_bytes(path, data: bytes, force: bool = False):
    path = Path(path)
    check_writable(path, force)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_image(path, data, header: ImageFileHeader, force: bool = False):
    write_bytes(path, encode(data, header), force)


def read_image(path, expected_hash: str | None = None) -> tuple[np.ndarray, ImageFileHeader]:
    """Read a PBIR1 file; with ``expected_hash`` the recorded config hash must match."""
    arr, header = decode(Path(path).read_bytes())
    if expected_hash is not None and header.meta.get("config_hash") != expected_hash:
        raise HashMismatch(f"{path}: config hash {header.meta.get('config_hash')!r} "
                           f"does not match {expected_hash!r}")
    return arr, header


def to_pgm(image_hu, window: float = 400.0, level: float = 40.0) -> bytes:
    """16-bit binary PGM of ``image_hu`` mapped linearly over ``level -/+ window/2``."""
    if window <= 0:
        raise ValueError("window must be positive")
    img = np.asarray(image_hu, dtype=np.float64)
    lo = level - window / 2.0
    scaled = np.clip((img - lo) / window, 0.0, 1.0) * 65535.0
    ny, nx = img.shape
    return f"P5\n{nx} {ny}\n65535\n".encode() + np.rint(scaled).astype(">u2").tobytes()
