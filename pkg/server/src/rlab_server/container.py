"""Reader for the named-array weight container.

Wire-compatible with the attack engine's format: per array, a uint32-LE
length-prefixed UTF-8 name tagged ``name#<ndim>``, then an "RLT1" blob
(magic, uint32-LE C H W, float32-LE payload).  Only reading is needed here.
"""

import struct

import numpy as np

MAGIC = b"RLT1"


class ContainerError(ValueError):
    pass


def _read_blob(fh) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    header = fh.read(12)
    if len(header) != 12:
        raise ContainerError("truncated blob header")
    c, h, w = struct.unpack("<III", header)
    payload = fh.read(4 * c * h * w)
    if len(payload) != 4 * c * h * w:
        raise ContainerError("truncated blob payload")
    return np.frombuffer(payload, dtype="<f4").reshape(c, h, w)


def load_arrays(path) -> dict:
    arrays = {}
    with open(path, "rb") as fh:
        while True:
            raw_len = fh.read(4)
            if not raw_len:
                break
            if len(raw_len) != 4:
                raise ContainerError("truncated name header")
            (name_len,) = struct.unpack("<I", raw_len)
            tagged = fh.read(name_len).decode("utf-8")
            name, _, ndim_text = tagged.rpartition("#")
            if not name or not ndim_text.isdigit():
                raise ContainerError(f"malformed array name {tagged!r}")
            ndim = int(ndim_text)
            padded = _read_blob(fh)
            arrays[name] = padded.reshape(padded.shape[3 - ndim :] if ndim else ())
    return arrays
