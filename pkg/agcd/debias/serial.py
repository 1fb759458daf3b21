"""AGT1 tensor records and the checkpoint archive.

A tensor record is the magic ``AGT1``, one byte dtype code (0 f32, 1 f64),
one byte number of axes, a little-endian u32 per axis and the raw
little-endian values in row-major order.

A checkpoint archive is a little-endian u32 entry count, then per entry a
u16 name length, the UTF-8 name and a tensor record, and finally a
key=value metadata block running to the end of the file.
"""
import os
import struct
from io import BytesIO
from logging import getLogger
from typing import BinaryIO, Dict, Mapping, Optional, Tuple

import numpy as np

from .const import LOGGER_NAME, TENSOR_MAGIC, DType
from .errors import DataError, TensorFormatError

log = getLogger(LOGGER_NAME)

_LITTLE_ENDIAN = {DType.F32: "<f4", DType.F64: "<f8"}
_MAX_NDIM = 8


def _read_exact(stream: BinaryIO, size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise TensorFormatError(
            f"Truncated {what}: expected {size} bytes, got {len(data)}")
    return data


def write_tensor(stream: BinaryIO, array: np.ndarray):
    """Write one AGT1 record"""
    dtype = DType.of(array)
    if array.ndim > _MAX_NDIM:
        raise TensorFormatError(f"{array.ndim} axes are too many")
    stream.write(TENSOR_MAGIC)
    stream.write(struct.pack("<BB", dtype.value, array.ndim))
    stream.write(struct.pack(f"<{array.ndim}I", *array.shape))
    stream.write(np.ascontiguousarray(array,
                                      dtype=_LITTLE_ENDIAN[dtype]).tobytes())


def read_tensor(stream: BinaryIO) -> np.ndarray:
    """Read one AGT1 record, the result uses the native byte order"""
    magic = _read_exact(stream, len(TENSOR_MAGIC), "magic")
    if magic != TENSOR_MAGIC:
        raise TensorFormatError(f"Bad magic bytes {magic!r}")
    code, ndim = struct.unpack("<BB", _read_exact(stream, 2, "header"))
    try:
        dtype = DType(code)
    except ValueError:
        raise TensorFormatError(f"Unknown dtype code {code}") from None
    if ndim > _MAX_NDIM:
        raise TensorFormatError(f"{ndim} axes are too many")
    shape = struct.unpack(f"<{ndim}I",
                          _read_exact(stream, 4 * ndim, "extents"))
    count = int(np.prod(shape, dtype=np.int64))
    item = np.dtype(_LITTLE_ENDIAN[dtype])
    payload = _read_exact(stream, count * item.itemsize, "payload")
    return np.frombuffer(payload, dtype=item).astype(dtype.numpy).reshape(
        shape)


def encode_tensor(array: np.ndarray) -> bytes:
    """One AGT1 record as bytes

    >>> encode_tensor(np.zeros((), dtype=np.float32))
    b'AGT1\\x00\\x00\\x00\\x00\\x00\\x00'
    """
    buffer = BytesIO()
    write_tensor(buffer, array)
    return buffer.getvalue()


def decode_tensor(data: bytes) -> np.ndarray:
    """Parse bytes holding exactly one AGT1 record"""
    buffer = BytesIO(data)
    array = read_tensor(buffer)
    if buffer.read(1):
        raise TensorFormatError("Trailing bytes after the tensor record")
    return array


def save_tensor(path: str, array: np.ndarray):
    """Write a single tensor file"""
    with open(path, "wb") as stream:
        write_tensor(stream, array)


def load_tensor(path: str) -> np.ndarray:
    """Read a single tensor file, errors name the file"""
    try:
        with open(path, "rb") as stream:
            return decode_tensor(stream.read())
    except TensorFormatError as err:
        raise TensorFormatError(str(err), path=path) from None
    except OSError as err:
        raise DataError(err.strerror or str(err), path=path) from None


def format_metadata(metadata: Mapping[str, object]) -> str:
    """key=value lines in the given order

    >>> format_metadata({"step": 3, "dtype": "f64"})
    'step=3\\ndtype=f64\\n'
    """
    lines = []
    for key, value in metadata.items():
        text = str(value)
        if "=" in key or "\n" in key or "\n" in text:
            raise DataError(f"Metadata entry {key!r} can not be stored")
        lines.append(f"{key}={text}\n")
    return "".join(lines)


def parse_metadata(text: str) -> Dict[str, str]:
    """Inverse of `format_metadata`, empty lines are skipped"""
    result: Dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"Metadata line without '=': {line!r}")
        result[key.strip()] = value.strip()
    return result


def save_archive(path: str,
                 tensors: Mapping[str, np.ndarray],
                 metadata: Optional[Mapping[str, object]] = None):
    """Write named tensors and metadata. The file is replaced atomically."""
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as stream:
        stream.write(struct.pack("<I", len(tensors)))
        for name, array in tensors.items():
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise DataError(f"Tensor name {name[:32]}... is too long")
            stream.write(struct.pack("<H", len(raw)))
            stream.write(raw)
            write_tensor(stream, array)
        stream.write(format_metadata(metadata or {}).encode("utf-8"))
    os.replace(tmp_path, path)
    log.debug("Saved %d tensors to %s", len(tensors), path)


def load_archive(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    """Read named tensors and metadata written by `save_archive`"""
    try:
        with open(path, "rb") as stream:
            (count, ) = struct.unpack("<I",
                                      _read_exact(stream, 4, "entry count"))
            tensors: Dict[str, np.ndarray] = {}
            for _ in range(count):
                (length, ) = struct.unpack(
                    "<H", _read_exact(stream, 2, "name length"))
                name = _read_exact(stream, length, "name").decode("utf-8")
                if name in tensors:
                    raise TensorFormatError(f"Duplicate entry {name}")
                tensors[name] = read_tensor(stream)
            metadata = parse_metadata(stream.read().decode("utf-8"))
    except TensorFormatError as err:
        raise TensorFormatError(str(err), path=path) from None
    except UnicodeDecodeError as err:
        raise DataError(f"Undecodable text: {err}", path=path) from None
    except OSError as err:
        raise DataError(err.strerror or str(err), path=path) from None
    except DataError as err:
        if err.path is None:
            raise DataError(str(err), path=path) from None
        raise
    return tensors, metadata
