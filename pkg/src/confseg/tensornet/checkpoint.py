"""Binary checkpoint container for named parameters and optimizer state.

Layout (little-endian):

    magic "CKPT" | version u8 = 1 | n_params u32
    per parameter: name_len u16 | name utf-8 | ndim u8 | dims u32 each |
                   values float32
    opt_flag u8 | if 1: step u64, then per parameter (same order) the Adam
                  first and second moment arrays as float32
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from confseg.dataio import BadMagicError, TruncatedError, VersionError

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1


def save_checkpoint(path: Union[str, Path], named_params: dict, opt_state: dict | None = None) -> None:
    names = list(named_params)
    chunks = [CKPT_MAGIC, struct.pack("<BI", CKPT_VERSION, len(names))]
    for name in names:
        value = named_params[name]
        value = getattr(value, "data", value)  # accept Tensor or ndarray
        arr = np.ascontiguousarray(value, dtype=np.float32)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    if opt_state is None:
        chunks.append(struct.pack("<B", 0))
    else:
        chunks.append(struct.pack("<BQ", 1, int(opt_state["step"])))
        for m, v in zip(opt_state["m"], opt_state["v"]):
            chunks.append(np.ascontiguousarray(m, dtype=np.float32).tobytes())
            chunks.append(np.ascontiguousarray(v, dtype=np.float32).tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedError("checkpoint ends prematurely")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Union[str, Path]) -> tuple[dict, dict | None]:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != CKPT_MAGIC:
        raise BadMagicError("not a checkpoint file")
    (version, count) = r.unpack("<BI")
    if version != CKPT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).copy()
        params[name] = arr
    (flag,) = r.unpack("<B")
    opt_state = None
    if flag:
        (step,) = r.unpack("<Q")
        ms, vs = [], []
        for name in params:
            size = params[name].size
            shape = params[name].shape
            ms.append(np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).copy())
            vs.append(np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).copy())
        opt_state = {"step": step, "m": ms, "v": vs}
    return params, opt_state
