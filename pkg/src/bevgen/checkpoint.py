"""Binary checkpoint container.

Layout (all integers little-endian):

    magic   4 bytes  b"BVGC"
    version u32      currently 1
    config  u32 length + UTF-8 text (verbatim config echo)
    nblocks u32
    then per block:
        name   u16 length + UTF-8
        ndim   u8
        dims   ndim x i64
        data   prod(dims) x f64 little-endian

Files are written atomically (temp file in the same directory, then
rename), so a crashed run never leaves a truncated checkpoint behind.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"BVGC"
VERSION = 1


def save_checkpoint(path, config_text, blocks):
    """Write named float64 arrays plus a config echo to ``path``."""
    path = os.fspath(path)
    dirn = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=dirn)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            raw_cfg = config_text.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_cfg)))
            fh.write(raw_cfg)
            fh.write(struct.pack("<I", len(blocks)))
            for name, arr in blocks.items():
                # note: asarray keeps 0-d shapes where ascontiguousarray would not
                arr = np.asarray(arr, dtype="<f8", order="C")
                raw_name = name.encode("utf-8")
                fh.write(struct.pack("<H", len(raw_name)))
                fh.write(raw_name)
                fh.write(struct.pack("<B", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
                fh.write(arr.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Read a checkpoint; returns (config_text, dict name -> float64 array)."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", fh.read(4))
        config_text = fh.read(cfg_len).decode("utf-8")
        (nblocks,) = struct.unpack("<I", fh.read(4))
        blocks = {}
        for _ in range(nblocks):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{ndim}q", fh.read(8 * ndim)) if ndim else ()
            count = int(np.prod(dims)) if ndim else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            blocks[name] = data.reshape(dims).astype(np.float64)
        return config_text, blocks
