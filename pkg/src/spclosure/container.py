"""Self-describing binary container for arrays plus metadata.

Layout (little endian)::

    b"SPNC1"  u32 version  u32 n_entries
    n_entries x [ u32 name_len, name (utf-8), u32 ndim, ndim x u64 shape, float64 payload ]
    u32 meta_len, meta (utf-8 JSON, sorted keys)

Writes go to a temporary file that is renamed into place.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"SPNC1"
VERSION = 1


class ContainerError(ValueError):
    pass


def write_container(path, arrays: dict, meta: dict | None = None) -> None:
    names = list(arrays)
    if len(set(names)) != len(names):
        raise ContainerError("entry names must be unique")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(names))]
    for name in names:
        a = np.array(arrays[name], dtype="<f8", order="C")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
        chunks.append(a.tobytes())
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(blob)) + blob)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".spnc-")
    try:
        with os.fdopen(fd, "wb") as fh:
            for c in chunks:
                fh.write(c)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        return _parse(buf, path)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: truncated or corrupt container ({exc})") from None


def _parse(buf, path):
    if buf[:5] != MAGIC:
        raise ContainerError(f"{path}: not an SPNC1 container")
    pos = 5
    version, n = struct.unpack_from("<II", buf, pos)
    pos += 8
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    arrays = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + ln].decode("utf-8")
        pos += ln
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        count = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * count > len(buf):
            raise struct.error("payload runs past the end of the file")
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    (ln,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    meta = json.loads(buf[pos:pos + ln].decode("utf-8"))
    return arrays, meta
