"""Named-array container built on the raw tensor blob.

Layout: for each array, a uint32-LE name length, the UTF-8 name bytes, then
one "RLT1" blob.  Arrays of fewer than 3 dimensions are stored left-padded
with singleton axes; the original rank travels in the name suffix ``#<ndim>``
so loading restores the exact shape.  Values are arbitrary float32 (model
weights are not confined to [0, 1]).
"""

import struct

import numpy as np

from .exceptions import FormatError
from .image import read_blob, write_blob


def save_arrays(path, arrays: dict) -> None:
    """Write named float arrays, preserving insertion order."""
    with open(path, "wb") as fh:
        for name, array in arrays.items():
            arr = np.asarray(array, dtype=np.float32)
            if arr.ndim > 3:
                raise FormatError(f"array {name!r} has ndim={arr.ndim} > 3")
            tagged = f"{name}#{arr.ndim}".encode("utf-8")
            fh.write(struct.pack("<I", len(tagged)))
            fh.write(tagged)
            padded = arr.reshape((1,) * (3 - arr.ndim) + arr.shape)
            write_blob(fh, padded)


def load_arrays(path) -> dict:
    """Read a named-array container into ``{name: float32 array}``."""
    arrays = {}
    with open(path, "rb") as fh:
        while True:
            raw_len = fh.read(4)
            if not raw_len:
                break
            if len(raw_len) != 4:
                raise FormatError("truncated name header")
            (name_len,) = struct.unpack("<I", raw_len)
            tagged = fh.read(name_len)
            if len(tagged) != name_len:
                raise FormatError("truncated name")
            name, _, ndim_text = tagged.decode("utf-8").rpartition("#")
            if not name or not ndim_text.isdigit():
                raise FormatError(f"malformed array name {tagged!r}")
            ndim = int(ndim_text)
            padded = read_blob(fh)
            arrays[name] = padded.reshape(padded.shape[3 - ndim :] if ndim else ())
    return arrays
