"""Hyperspectral cube container, binary file round-trip, patches, augmentation.

The on-disk cube format is little-endian: magic ``HSC1``, version u32 (= 1),
height u32, width u32, bands u32, dtype u8 (0 = float32), 8 reserved zero
bytes, then the payload as band-sequential float32 (band outermost, then
row-major within each band). Header length is fixed at 29 bytes.
"""

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import CorruptionError, FormatError, ValidationError

_MAGIC = b"HSC1"
_VERSION = 1
_DTYPE_F32 = 0
_HEADER = struct.Struct("<4sIIIIB8s")  # 29 bytes, no padding


@dataclass
class HsiCube:
    """A hyperspectral image: float array of shape (height, width, bands)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValidationError(f"cube data must be 3-d (h, w, bands), got shape {arr.shape}")
        if any(s < 1 for s in arr.shape):
            raise ValidationError(f"cube dimensions must be positive, got shape {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class Patch:
    """A spatial window of a cube: data shape (h, w, bands), origin (row, col)."""

    origin: tuple[int, int]
    data: np.ndarray

    @property
    def size(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]


@dataclass
class AugmentOp:
    """A dihedral symmetry: optional flips, then `rotation` quarter turns.

    Flips are applied first (horizontal = left/right, vertical = up/down),
    then the patch is rotated counter-clockwise `rotation` times. Bands are
    untouched. The 8 distinct ops (rotation x flip_h) form the full dihedral
    group of the square.
    """

    rotation: int = 0
    flip_h: bool = False
    flip_v: bool = False

    def __post_init__(self):
        if self.rotation not in (0, 1, 2, 3):
            raise ValidationError(f"rotation must be in {{0,1,2,3}}, got {self.rotation}")


def dihedral_ops() -> list[AugmentOp]:
    """The 8 symmetries of the square as rotation x horizontal-flip."""
    return [AugmentOp(rotation=k, flip_h=f) for f in (False, True) for k in range(4)]


def apply_augment(patch: Patch, op: AugmentOp) -> Patch:
    a = patch.data
    if op.flip_h:
        a = a[:, ::-1, :]
    if op.flip_v:
        a = a[::-1, :, :]
    if op.rotation:
        a = np.rot90(a, op.rotation, axes=(0, 1))
    return Patch(origin=patch.origin, data=np.ascontiguousarray(a))


def save_cube(cube: HsiCube, path: str) -> None:
    """Write a cube to `path` atomically (temp file + rename)."""
    h, w, b = cube.shape
    header = _HEADER.pack(_MAGIC, _VERSION, h, w, b, _DTYPE_F32, b"\x00" * 8)
    payload = np.ascontiguousarray(np.transpose(cube.data.astype(np.float32, copy=False), (2, 0, 1)))
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".hsc-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(header)
            f.write(payload.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_cube(path: str) -> HsiCube:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise CorruptionError(f"{path}: file shorter than the 29-byte header")
    magic, version, h, w, b, dtype, reserved = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != _DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    if min(h, w, b) < 1:
        raise ValidationError(f"{path}: zero dimension in header (h={h}, w={w}, b={b})")
    expected = b * h * w * 4
    payload = raw[_HEADER.size:]
    if len(payload) < expected:
        raise CorruptionError(
            f"{path}: payload truncated, expected {expected} bytes, found {len(payload)}"
        )
    if len(payload) > expected:
        raise CorruptionError(
            f"{path}: {len(payload) - expected} trailing bytes after payload"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(b, h, w)
    return HsiCube(np.ascontiguousarray(np.transpose(arr, (1, 2, 0))))


def normalize(cube: HsiCube) -> HsiCube:
    """Affine rescale to [0, 1] over the whole cube; constant cubes map to 0."""
    data = cube.data
    lo = float(data.min())
    hi = float(data.max())
    if hi == lo:
        return HsiCube(np.zeros_like(data))
    return HsiCube((data - lo) / np.asarray(hi - lo, dtype=data.dtype))


def _starts(total: int, size: int, stride: int) -> list[int]:
    # Anchor the last window to the far border so every voxel is covered.
    s = list(range(0, total - size + 1, stride))
    if s[-1] != total - size:
        s.append(total - size)
    return s


def extract_patches(cube: HsiCube, height: int, width: int, stride: int) -> list[Patch]:
    """All stride-spaced windows, with the final row/column anchored to the border."""
    if height < 1 or width < 1 or stride < 1:
        raise ValidationError(
            f"patch size and stride must be positive, got {height}x{width} stride {stride}"
        )
    if height > cube.height or width > cube.width:
        raise ValidationError(
            f"patch {height}x{width} exceeds cube extent {cube.height}x{cube.width}"
        )
    patches = []
    for r in _starts(cube.height, height, stride):
        for c in _starts(cube.width, width, stride):
            patches.append(Patch(origin=(r, c), data=cube.data[r:r + height, c:c + width, :].copy()))
    return patches
