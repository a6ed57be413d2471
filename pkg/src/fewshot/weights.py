"""Named-tensor collections and the SSMW on-disk weight format.

SSMW layout (little-endian): magic "SSMW", version u32 (=1), tensor count
u32, then per tensor: name length u16, UTF-8 name, role u8, dtype u8
(0=f32, 1=f64), ndim u8, each extent u32, raw element bytes in row-major
order. The file ends with a CRC32 u32 over all preceding bytes.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    NonFinitePayloadError,
    TruncatedWeightsError,
    UnknownVersionError,
    WeightsFormatError,
)
from .tensor import Tensor

MAGIC = b"SSMW"
FORMAT_VERSION = 1

ROLE_NONE = 0
ROLE_BACKBONE = 1
ROLE_SIAMESE_HEAD = 2
ROLE_FCE_G = 3
ROLE_FCE_F = 4

ROLE_NAMES = {
    ROLE_NONE: "none",
    ROLE_BACKBONE: "backbone",
    ROLE_SIAMESE_HEAD: "siamese_head",
    ROLE_FCE_G: "fce_g",
    ROLE_FCE_F: "fce_f",
}

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}

_TRAINED_SENTINEL = "meta.trained"


class MissingWeightError(WeightsFormatError):
    """A required named entry is absent."""


class NetworkWeights:
    """Ordered collection of uniquely named, role-tagged tensors."""

    def __init__(self):
        self.entries = []  # list of (name, role, Tensor)
        self._index = {}
        self.format_version = FORMAT_VERSION

    def __len__(self):
        return len(self.entries)

    def __contains__(self, name):
        return name in self._index

    def add(self, name: str, role: int, t: Tensor):
        if name in self._index:
            raise WeightsFormatError(f"duplicate weight name {name!r}")
        if role not in ROLE_NAMES:
            raise WeightsFormatError(f"unknown role code {role}")
        if not np.isfinite(t.data).all():
            raise NonFinitePayloadError(f"weight {name!r} contains non-finite values")
        self.entries.append((name, role, t))
        self._index[name] = len(self.entries) - 1

    def get(self, name: str) -> Tensor:
        i = self._index.get(name)
        if i is None:
            raise MissingWeightError(f"missing weight entry {name!r}")
        return self.entries[i][2]

    def role_of(self, name: str) -> int:
        i = self._index.get(name)
        if i is None:
            raise MissingWeightError(f"missing weight entry {name!r}")
        return self.entries[i][1]

    def names(self):
        return [name for name, _, _ in self.entries]

    def with_role(self, role: int):
        return [(name, t) for name, r, t in self.entries if r == role]

    def tensors(self, roles=None):
        if roles is None:
            return [t for name, _, t in self.entries if name != _TRAINED_SENTINEL]
        roles = set(roles)
        return [t for _, r, t in self.entries if r in roles]

    def trainable(self, exclude_roles=()):
        """Tensors with requires_grad set, minus the excluded roles."""
        skip = set(exclude_roles)
        return [
            t for name, r, t in self.entries
            if t.requires_grad and r not in skip and name != _TRAINED_SENTINEL
        ]

    def zero_grads(self):
        for _, _, t in self.entries:
            if t.requires_grad:
                t.zero_grad()

    # -- trained flag (stored as a sentinel entry so it survives the wire) --

    @property
    def trained(self) -> bool:
        if _TRAINED_SENTINEL not in self._index:
            return False
        return bool(self.get(_TRAINED_SENTINEL).data.reshape(-1)[0] != 0)

    def mark_trained(self):
        if _TRAINED_SENTINEL in self._index:
            self.get(_TRAINED_SENTINEL).data[...] = 1.0
        else:
            self.add(_TRAINED_SENTINEL, ROLE_NONE, Tensor(np.ones(1, dtype=np.float32)))

    def copy(self) -> "NetworkWeights":
        out = NetworkWeights()
        for name, role, t in self.entries:
            nt = Tensor(t.data.copy(), requires_grad=t.requires_grad)
            out.add(name, role, nt)
        return out

    def bitwise_equal(self, other: "NetworkWeights") -> bool:
        if self.names() != other.names():
            return False
        for name, role, t in self.entries:
            o = other.get(name)
            if other.role_of(name) != role or t.data.dtype != o.data.dtype:
                return False
            if t.data.shape != o.data.shape or t.data.tobytes() != o.data.tobytes():
                return False
        return True


# -- serialization -----------------------------------------------------------

def to_bytes(w: NetworkWeights) -> bytes:
    chunks = [MAGIC, struct.pack("<II", w.format_version, len(w.entries))]
    for name, role, t in w.entries:
        if not np.isfinite(t.data).all():
            raise NonFinitePayloadError(f"weight {name!r} contains non-finite values")
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(t.data)
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BBB", role, _DTYPE_CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        if arr.dtype.byteorder not in ("<", "=", "|"):
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        chunks.append(arr.tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def from_bytes(blob: bytes, requires_grad: bool = True) -> NetworkWeights:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError("bad magic: not an SSMW weight file")
    pos = 4

    def take(n, what):
        nonlocal pos
        if pos + n > len(blob) - 4:  # reserve the trailing CRC
            raise TruncatedWeightsError(f"truncated file while reading {what}")
        out = blob[pos:pos + n]
        pos += n
        return out

    if len(blob) < 12 + 4:
        raise TruncatedWeightsError("truncated file: header incomplete")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != FORMAT_VERSION:
        raise UnknownVersionError(f"unknown format version {version}")

    w = NetworkWeights()
    for i in range(count):
        (name_len,) = struct.unpack("<H", take(2, f"tensor {i} name length"))
        try:
            name = take(name_len, f"tensor {i} name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise WeightsFormatError(f"tensor {i} name is not valid UTF-8") from e
        role, dtype_code, ndim = struct.unpack("<BBB", take(3, f"tensor {name!r} descriptor"))
        if role not in ROLE_NAMES:
            raise WeightsFormatError(f"tensor {name!r} has unknown role code {role}")
        if dtype_code not in _CODE_DTYPES:
            raise WeightsFormatError(f"tensor {name!r} has unknown dtype code {dtype_code}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, f"tensor {name!r} shape"))
        dtype = _CODE_DTYPES[dtype_code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        payload = take(nbytes, f"tensor {name!r} payload")
        arr = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        if not np.isfinite(arr).all():
            raise NonFinitePayloadError(f"tensor {name!r} contains non-finite values")
        if name in w:
            raise WeightsFormatError(f"duplicate weight name {name!r}")
        w.add(name, role, Tensor(arr, requires_grad=requires_grad))

    if pos != len(blob) - 4:
        raise WeightsFormatError(f"{len(blob) - 4 - pos} unexpected trailing bytes before checksum")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    actual = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual:
        raise ChecksumError(f"checksum mismatch: stored {stored_crc:08x}, computed {actual:08x}")
    w.format_version = version
    return w


def save_weights(w: NetworkWeights, path):
    with open(path, "wb") as f:
        f.write(to_bytes(w))


def load_weights(path, requires_grad: bool = True) -> NetworkWeights:
    with open(path, "rb") as f:
        blob = f.read()
    return from_bytes(blob, requires_grad=requires_grad)
