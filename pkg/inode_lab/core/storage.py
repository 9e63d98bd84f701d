"""
Binary container shared by dataset files and checkpoints.

Layout:
- 8-byte magic ``INODELAB``
- uint32 little-endian header length
- UTF-8 JSON header (must contain ``kind``, ``version`` and ``arrays``)
- raw little-endian float64 payload for every array in ``header["arrays"]``, in order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

import numpy as np

from inode_lab.core.exceptions import FormatError, MissingArtifactError

MAGIC = b"INODELAB"
_LEN = struct.Struct("<I")
_DTYPE = np.dtype("<f8")


def write_container(
    path: Path | str,
    kind: str,
    version: int,
    header: Mapping[str, Any],
    arrays: Mapping[str, np.ndarray],
) -> Path:
    """Write ``arrays`` with a JSON header. Array order follows the mapping order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    full_header: Dict[str, Any] = dict(header)
    full_header["kind"] = kind
    full_header["version"] = version
    full_header["arrays"] = [
        {"name": name, "shape": list(np.shape(arr))} for name, arr in arrays.items()
    ]
    raw_header = json.dumps(full_header, sort_keys=True).encode("utf-8")

    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(raw_header)))
        fh.write(raw_header)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes(order="C"))
    return path


def read_container(
    path: Path | str,
    kind: str,
    version: int,
) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Read a container, validating magic, kind, version and payload length."""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"{kind} file not found: {path}")

    blob = path.read_bytes()
    if len(blob) < len(MAGIC) + _LEN.size or blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not an inode-lab container", expected=MAGIC.decode(), found=blob[:8])

    offset = len(MAGIC)
    (header_len,) = _LEN.unpack_from(blob, offset)
    offset += _LEN.size
    if offset + header_len > len(blob):
        raise FormatError(f"{path}: truncated header", expected=header_len, found=len(blob) - offset)
    try:
        header = json.loads(blob[offset: offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc.__class__.__name__})") from exc
    offset += header_len

    if header.get("kind") != kind:
        raise FormatError(f"{path}: wrong container kind", expected=kind, found=header.get("kind"))
    if header.get("version") != version:
        raise FormatError(f"{path}: unsupported version", expected=version, found=header.get("version"))

    arrays: Dict[str, np.ndarray] = {}
    for entry in header.get("arrays", []):
        shape = tuple(int(s) for s in entry["shape"])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if offset + n_bytes > len(blob):
            raise FormatError(
                f"{path}: truncated payload for '{entry['name']}'",
                expected=n_bytes,
                found=len(blob) - offset,
            )
        arrays[entry["name"]] = (
            np.frombuffer(blob, dtype=_DTYPE, count=n_bytes // _DTYPE.itemsize, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset += n_bytes

    if offset != len(blob):
        raise FormatError(f"{path}: trailing bytes after payload", expected=offset, found=len(blob))
    return header, arrays
