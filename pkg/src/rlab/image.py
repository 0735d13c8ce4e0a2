"""Image tensors, patch geometry, distance metrics, and file I/O.

An image is a ``float32`` numpy array of shape ``(C, H, W)`` with every value
in ``[0, 1]``.  Channel-major layout is fixed globally so the raw file format
and HTTP payloads agree byte-for-byte on flattening order.
"""

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .exceptions import FormatError, GeometryError, ShapeError

RAW_MAGIC = b"RLT1"


# ---------------------------------------------------------------------------
# image construction / validation
# ---------------------------------------------------------------------------

def as_image(values, shape=None) -> np.ndarray:
    """Validate and return a float32 (C, H, W) image in [0, 1].

    ``values`` may be any array-like; ``shape`` is required when it is flat.
    Raises ShapeError for bad dimensions and FormatError for out-of-range
    or non-finite values.
    """
    arr = np.asarray(values, dtype=np.float32)
    if shape is not None:
        if arr.size != int(np.prod(shape)):
            raise ShapeError(f"{arr.size} values cannot fill shape {tuple(shape)}")
        arr = arr.reshape(shape)
    if arr.ndim != 3:
        raise ShapeError(f"expected (C, H, W) image, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise FormatError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise FormatError(
            f"image values outside [0, 1]: min={arr.min()}, max={arr.max()}"
        )
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean norm of the elementwise difference over all channels/pixels."""
    check_same_shape(a, b)
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.sqrt(np.sum(diff * diff)))


def linf_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Maximum absolute elementwise difference."""
    check_same_shape(a, b)
    if a.size == 0:
        return 0.0
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.max(np.abs(diff)))


# ---------------------------------------------------------------------------
# perturbations
# ---------------------------------------------------------------------------

def perturbation(original: np.ndarray, adversarial: np.ndarray) -> np.ndarray:
    """Signed per-element difference (adversarial minus original), float64."""
    check_same_shape(original, adversarial)
    return adversarial.astype(np.float64) - original.astype(np.float64)


def apply_perturbation(original: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """original + delta, clamped to [0, 1].

    The float64 delta keeps the round trip bit-exact for every value the
    engine produces; the only escape is a sub-normal float32 target against
    an O(1) original, where any fixed-precision delta is off by <= 2^-53."""
    check_same_shape(original, delta)
    summed = np.clip(original.astype(np.float64) + np.asarray(delta, dtype=np.float64), 0.0, 1.0)
    return summed.astype(np.float32)


# ---------------------------------------------------------------------------
# patch geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PatchGrid:
    """Square n-by-n patch tiling of an image.

    Patch index ``i`` maps row-major to the pixel rectangle returned by
    :meth:`rect`.  Construction requires image dimensions divisible by ``n``;
    partial patches are rejected rather than padded.
    """

    n: int
    rows: int
    cols: int

    @property
    def patch_count(self) -> int:
        return self.rows * self.cols

    def rect(self, index: int):
        """(r0, r1, c0, c1) pixel bounds of patch ``index`` (half-open)."""
        if not 0 <= index < self.patch_count:
            raise GeometryError(f"patch index {index} out of range [0, {self.patch_count})")
        r, c = divmod(index, self.cols)
        return r * self.n, (r + 1) * self.n, c * self.n, (c + 1) * self.n

    def coords(self, index: int):
        """(row, col) grid coordinates of patch ``index``."""
        if not 0 <= index < self.patch_count:
            raise GeometryError(f"patch index {index} out of range [0, {self.patch_count})")
        return divmod(index, self.cols)


def make_patch_grid(image: np.ndarray, n: int) -> PatchGrid:
    """Tile ``image`` into n-by-n patches. Dimensions must divide exactly."""
    if n < 1:
        raise GeometryError(f"patch size must be >= 1, got {n}")
    _, height, width = image.shape
    if height % n != 0 or width % n != 0:
        raise GeometryError(
            f"image {height}x{width} not divisible by patch size {n}"
        )
    return PatchGrid(n=n, rows=height // n, cols=width // n)


def patch_view(image: np.ndarray, grid: PatchGrid, index: int) -> np.ndarray:
    """Writable view of the (C, n, n) pixel block of one patch."""
    r0, r1, c0, c1 = grid.rect(index)
    return image[:, r0:r1, c0:c1]


# ---------------------------------------------------------------------------
# raw tensor format: magic "RLT1", uint32-LE C H W, float32-LE payload
# ---------------------------------------------------------------------------

def write_blob(fh, array: np.ndarray) -> None:
    """Write one RLT1 blob (no value-range restriction) to an open file."""
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if arr.ndim != 3:
        raise ShapeError(f"blob arrays are 3-d, got ndim={arr.ndim}")
    fh.write(RAW_MAGIC)
    fh.write(struct.pack("<III", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def read_blob(fh) -> np.ndarray:
    """Read one RLT1 blob from an open file. Values are not range-checked."""
    magic = fh.read(4)
    if magic != RAW_MAGIC:
        raise FormatError(f"bad magic bytes {magic!r}, expected {RAW_MAGIC!r}")
    header = fh.read(12)
    if len(header) != 12:
        raise FormatError("truncated header")
    c, h, w = struct.unpack("<III", header)
    payload = fh.read(4 * c * h * w)
    if len(payload) != 4 * c * h * w:
        raise FormatError(
            f"truncated payload: expected {c * h * w} floats, "
            f"got {len(payload) // 4}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(c, h, w).astype(np.float32)


def write_raw(path, image: np.ndarray) -> None:
    """Write an image to the raw tensor format (bit-exact round trip)."""
    image = as_image(image)
    with open(path, "wb") as fh:
        write_blob(fh, image)


def read_raw(path) -> np.ndarray:
    """Read an image from the raw tensor format, validating the [0,1] range."""
    with open(path, "rb") as fh:
        arr = read_blob(fh)
    return as_image(arr)


# ---------------------------------------------------------------------------
# PNG (8-bit, quantized with round-half-up)
# ---------------------------------------------------------------------------

def write_png(path, image: np.ndarray) -> None:
    """Write a 1- or 3-channel image as 8-bit grayscale/RGB PNG."""
    image = as_image(image)
    channels = image.shape[0]
    if channels not in (1, 3):
        raise FormatError(f"PNG supports 1 or 3 channels, got {channels}")
    # round half up: 0.5 -> byte 128
    quantized = np.floor(image.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)
    if channels == 1:
        Image.fromarray(quantized[0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(np.transpose(quantized, (1, 2, 0)), mode="RGB").save(
            path, format="PNG"
        )


def read_png(path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB PNG into a (C, H, W) float image."""
    try:
        pil = Image.open(path)
        pil.load()
    except Exception as exc:
        raise FormatError(f"cannot decode PNG {path}: {exc}") from exc
    if pil.mode == "L":
        arr = np.asarray(pil, dtype=np.float32)[None, :, :]
    elif pil.mode == "RGB":
        arr = np.transpose(np.asarray(pil, dtype=np.float32), (2, 0, 1))
    else:
        raise FormatError(f"unsupported PNG mode {pil.mode!r} (need L or RGB)")
    return as_image(arr / 255.0)
