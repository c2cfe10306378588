"""Single-file checkpoint archives of named dense tensors.

File layout::

    b"MRG1" | u64 little-endian header length H | H bytes UTF-8 JSON | payload

The JSON header is ``{"metadata": {...}, "tensors": [{"name", "dtype",
"shape", "offset"}, ...]}`` with tensors in lexicographic name order and
offsets contiguous from 0. Payload is little-endian, row-major.

In memory every tensor is float32. f16 and bf16 payloads are upcast on read.
"""

from __future__ import annotations

import json
import math
import struct
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MRG1"

_ITEMSIZE = {"f32": 4, "f16": 2, "bf16": 2}


class ArchiveError(ValueError):
    """Raised for malformed, truncated, or otherwise invalid archives."""


@dataclass(frozen=True)
class Tensor:
    name: str
    data: np.ndarray
    dtype: str = "f32"

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr is self.data and arr.flags.writeable:
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "dtype", "f32")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    def equals(self, other: Tensor) -> bool:
        """Bitwise equality of name, shape and payload."""
        return (
            self.name == other.name
            and self.shape == other.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass(frozen=True)
class TensorArchive(Mapping):
    """Immutable name -> Tensor mapping plus string metadata.

    Iteration is lexicographic by tensor name regardless of insertion order.
    """

    tensors: Mapping[str, Tensor]
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        tensors = {}
        for key in sorted(self.tensors):
            t = self.tensors[key]
            if not isinstance(t, Tensor):
                t = Tensor(key, t)
            if t.name != key:
                raise ArchiveError(f"tensor keyed {key!r} is named {t.name!r}")
            tensors[key] = t
        meta = {str(k): str(v) for k, v in sorted(self.metadata.items())}
        object.__setattr__(self, "tensors", tensors)
        object.__setattr__(self, "metadata", meta)

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], metadata=None) -> TensorArchive:
        return cls({k: Tensor(k, v) for k, v in arrays.items()}, metadata or {})

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def with_metadata(self, **updates: str) -> TensorArchive:
        meta = dict(self.metadata)
        meta.update({k: str(v) for k, v in updates.items()})
        return TensorArchive(self.tensors, meta)

    def equals(self, other: TensorArchive) -> bool:
        """Bitwise equality of every tensor and of the metadata."""
        if list(self) != list(other) or self.metadata != other.metadata:
            return False
        return all(self[k].equals(other[k]) for k in self)


def _f32_to_bf16_bits(arr: np.ndarray) -> np.ndarray:
    # round-to-nearest-even on the upper 16 bits
    bits = arr.astype("<f4").view("<u4").astype(np.uint64)
    rounding = ((bits >> 16) & 1) + 0x7FFF
    return ((bits + rounding) >> 16).astype("<u2")


def _encode(arr: np.ndarray, dtype: str) -> bytes:
    if dtype == "f32":
        return arr.astype("<f4").tobytes()
    if dtype == "f16":
        return arr.astype("<f2").tobytes()
    if dtype == "bf16":
        return _f32_to_bf16_bits(arr).tobytes()
    raise ArchiveError(f"unsupported dtype {dtype!r}")


def _decode(buf: bytes, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
    if dtype == "f32":
        arr = np.frombuffer(buf, dtype="<f4").astype(np.float32)
    elif dtype == "f16":
        arr = np.frombuffer(buf, dtype="<f2").astype(np.float32)
    else:
        bits = np.frombuffer(buf, dtype="<u2").astype(np.uint32) << 16
        arr = bits.view(np.float32)
    return arr.reshape(shape)


def save_archive(archive: TensorArchive, path, dtype: str = "f32") -> None:
    """Write ``archive`` to ``path``. Output bytes depend only on the archive.

    ``dtype`` selects the on-disk element type; anything other than f32 is
    lossy and exists mainly to produce half-precision fixtures.
    """
    if dtype not in _ITEMSIZE:
        raise ArchiveError(f"unsupported dtype {dtype!r}")
    entries = []
    chunks = []
    offset = 0
    for name in sorted(archive):
        t = archive[name]
        payload = _encode(t.data, dtype)
        entries.append(
            {"name": name, "dtype": dtype, "shape": list(t.shape), "offset": offset}
        )
        chunks.append(payload)
        offset += len(payload)
    header = json.dumps(
        {"metadata": dict(sorted(archive.metadata.items())), "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    ).encode("utf-8")
    Path(path).write_bytes(MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks))


def _parse_header(raw: bytes) -> dict:
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"malformed header: {exc}") from exc
    if not isinstance(header, dict) or not isinstance(header.get("tensors"), list):
        raise ArchiveError("malformed header: expected object with a 'tensors' list")
    meta = header.get("metadata", {})
    if not isinstance(meta, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in meta.items()
    ):
        raise ArchiveError("malformed header: metadata must map strings to strings")
    return header


def load_archive(path) -> TensorArchive:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise ArchiveError(f"{path}: bad magic, not an MRG1 archive")
    (hlen,) = struct.unpack("<Q", raw[4:12])
    if 12 + hlen > len(raw):
        raise ArchiveError(f"{path}: header length {hlen} exceeds file size")
    header = _parse_header(raw[12 : 12 + hlen])
    payload = memoryview(raw)[12 + hlen :]

    tensors: dict[str, Tensor] = {}
    expected_offset = 0
    for entry in header["tensors"]:
        try:
            name = entry["name"]
            dtype = entry["dtype"]
            shape = tuple(entry["shape"])
            offset = entry["offset"]
        except (KeyError, TypeError) as exc:
            raise ArchiveError(f"malformed tensor entry {entry!r}") from exc
        if not isinstance(name, str):
            raise ArchiveError(f"malformed tensor name {name!r}")
        if dtype not in _ITEMSIZE:
            raise ArchiveError(f"tensor {name!r}: unsupported dtype {dtype!r}")
        if not shape or not all(isinstance(d, int) and d > 0 for d in shape):
            raise ArchiveError(f"tensor {name!r}: invalid shape {list(shape)}")
        if name in tensors:
            raise ArchiveError(f"duplicate tensor name {name!r}")
        if offset != expected_offset:
            raise ArchiveError(
                f"tensor {name!r}: offset {offset} is not contiguous (expected {expected_offset})"
            )
        nbytes = math.prod(shape) * _ITEMSIZE[dtype]
        if offset + nbytes > len(payload):
            raise ArchiveError(
                f"tensor {name!r}: truncated payload, need {nbytes} bytes at offset "
                f"{offset}, file has {len(payload) - offset}"
            )
        arr = _decode(payload[offset : offset + nbytes].tobytes(), dtype, shape)
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise ArchiveError(f"tensor {name!r}: non-finite element at flat index {int(bad[0])}")
        tensors[name] = Tensor(name, arr)
        expected_offset += nbytes
    if expected_offset != len(payload):
        raise ArchiveError(
            f"{path}: payload has {len(payload) - expected_offset} trailing bytes"
        )
    return TensorArchive(tensors, header.get("metadata", {}))
