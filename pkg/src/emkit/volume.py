"""Dense voxel volumes, z-slices, statistics, and file IO.

Voxels are stored as numpy arrays shaped ``(nz, ny, nx)`` in C order, so the
flat index of ``(x, y, z)`` is ``(z - z0)*ny*nx + (y - y0)*nx + (x - x0)``:
x fastest, z slowest.  That is also the byte order of ``.raw`` payloads and of
cutout responses.

Two on-disk forms are supported:

* PGM stacks: one binary ``P5`` file per z-slice, ``slice_NNNN.pgm``.
* raw + sidecar: ``name.raw`` holds the flat array verbatim and ``name.json``
  holds ``{x0, x1, y0, y1, z0, z1, dtype, order}``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from emkit.errors import (
    FormatError,
    InvalidExtentError,
    MissingFileError,
    OutOfRangeError,
)
from emkit.fsutil import atomic_write

VOXEL_ORDER = "zyx-row-major-x-fastest"

# sidecar dtype tag -> little-endian numpy dtype
RAW_DTYPES = {
    "u8": np.dtype("u1"),
    "f64": np.dtype("<f8"),
    "i64": np.dtype("<i8"),
}

_U64_LIMIT = 1 << 64


@dataclass(frozen=True)
class Extent3D:
    """Half-open voxel box ``[x0, x1) x [y0, y1) x [z0, z1)``."""

    x0: int
    x1: int
    y0: int
    y1: int
    z0: int
    z1: int

    def __post_init__(self):
        for name in ("x0", "x1", "y0", "y1", "z0", "z1"):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, (int, np.integer)):
                raise InvalidExtentError(f"{name} must be an integer, got {val!r}")
            object.__setattr__(self, name, int(val))
            if val < 0:
                raise InvalidExtentError(f"{name} must be >= 0, got {val}")
        if not (self.x0 < self.x1 and self.y0 < self.y1 and self.z0 < self.z1):
            raise InvalidExtentError(f"empty extent {self.as_tuple()}")
        if self.volume_count >= _U64_LIMIT:
            raise InvalidExtentError(f"extent {self.as_tuple()} overflows 64-bit voxel count")

    @classmethod
    def from_shape(cls, nx, ny, nz, origin=(0, 0, 0)):
        ox, oy, oz = origin
        return cls(ox, ox + nx, oy, oy + ny, oz, oz + nz)

    def as_tuple(self):
        return (self.x0, self.x1, self.y0, self.y1, self.z0, self.z1)

    @property
    def nx(self):
        return self.x1 - self.x0

    @property
    def ny(self):
        return self.y1 - self.y0

    @property
    def nz(self):
        return self.z1 - self.z0

    @property
    def shape(self):
        """Array shape ``(nz, ny, nx)``."""
        return (self.nz, self.ny, self.nx)

    @property
    def volume_count(self):
        return self.nx * self.ny * self.nz

    def contains(self, x, y, z):
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1 and self.z0 <= z < self.z1

    def flat_index(self, x, y, z):
        if not self.contains(x, y, z):
            raise OutOfRangeError(f"voxel ({x}, {y}, {z}) outside {self.as_tuple()}")
        return ((z - self.z0) * self.ny + (y - self.y0)) * self.nx + (x - self.x0)

    def with_z(self, z0, z1):
        return Extent3D(self.x0, self.x1, self.y0, self.y1, z0, z1)


def _freeze(arr):
    arr.setflags(write=False)
    return arr


class _GridBase:
    """Shared accessors for scalar grids over an extent."""

    dtype: np.dtype
    extent: Extent3D
    data: np.ndarray

    def _init_data(self, extent, data):
        if not isinstance(extent, Extent3D):
            raise TypeError("extent must be an Extent3D")
        arr = np.asarray(data)
        if arr.size != extent.volume_count:
            raise FormatError(
                f"{arr.size} samples for extent {extent.as_tuple()} "
                f"({extent.volume_count} voxels)"
            )
        arr = np.array(arr, dtype=self.dtype, copy=True).reshape(extent.shape)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def voxels(self):
        """Flat read-only view in x-fastest order."""
        return self.data.reshape(-1)

    def __len__(self):
        return self.extent.volume_count

    def at(self, x, y, z):
        e = self.extent
        if not e.contains(x, y, z):
            raise OutOfRangeError(f"voxel ({x}, {y}, {z}) outside {e.as_tuple()}")
        return self.data[z - e.z0, y - e.y0, x - e.x0].item()

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.extent == other.extent and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"{type(self).__name__}(extent={self.extent.as_tuple()})"


class Volume3D(_GridBase):
    """8-bit voxel grid.  Immutable: the backing array is read-only."""

    dtype = np.dtype("u1")
    __hash__ = None

    def __init__(self, extent, voxels):
        arr = np.asarray(voxels)
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise FormatError("8-bit volume samples must lie in [0, 255]")
        self._init_data(extent, arr)


class FloatVolume3D(_GridBase):
    """64-bit float grid (e.g. gradient magnitudes).  All values finite."""

    dtype = np.dtype("f8")
    __hash__ = None

    def __init__(self, extent, values):
        self._init_data(extent, values)
        if not np.all(np.isfinite(self.data)):
            raise FormatError("float volume contains non-finite values")


@dataclass(frozen=True, eq=False)
class SliceImage:
    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.size != self.width * self.height:
            raise FormatError(f"{self.pixels.size} pixels for {self.width}x{self.height} image")

    def as_array(self):
        return self.pixels.reshape(self.height, self.width)

    def __eq__(self, other):
        if not isinstance(other, SliceImage):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and np.array_equal(
            self.pixels, other.pixels
        )


@dataclass(frozen=True)
class VolumeStats:
    mean: float
    stddev: float
    min: float
    max: float

    def as_dict(self):
        return {"mean": self.mean, "stddev": self.stddev, "min": self.min, "max": self.max}


def make_constant(extent, value):
    if not 0 <= int(value) <= 255:
        raise FormatError(f"sample value {value} outside [0, 255]")
    return Volume3D(extent, np.full(extent.volume_count, value, dtype=np.uint8))


def extract_slice(v, z):
    e = v.extent
    if not e.z0 <= z < e.z1:
        raise OutOfRangeError(f"z={z} outside [{e.z0}, {e.z1})")
    plane = v.data[z - e.z0]
    return SliceImage(e.nx, e.ny, _freeze(plane.reshape(-1).copy()))


def stats(v):
    """Population mean / standard deviation (divisor N) and exact min/max."""
    arr = v.data
    lo = arr.min().item()
    hi = arr.max().item()
    if lo == hi:
        return VolumeStats(float(lo), 0.0, float(lo), float(hi))
    if arr.dtype.kind in "iu":
        # exact integer sums; N * 255**2 comfortably fits int64 at desk scale
        wide = arr.astype(np.int64)
        n = wide.size
        s1 = int(wide.sum())
        s2 = int((wide * wide).sum())
        mean = s1 / n
        var = max(s2 * n - s1 * s1, 0) / (n * n)
        std = math.sqrt(var)
    else:
        mean = float(arr.mean())
        std = float(np.sqrt(np.mean((arr - mean) ** 2)))
    mean = min(max(mean, float(lo)), float(hi))
    return VolumeStats(mean, std, float(lo), float(hi))


# ---------------------------------------------------------------- PGM stacks


def slice_filename(z):
    return f"slice_{z:04d}.pgm"


def encode_pgm(image):
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + np.asarray(image.pixels, dtype=np.uint8).tobytes()


_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_pgm(blob, path=None):
    """Parse a binary P5 image with maxval 255."""
    pos = 0
    fields = []
    for _ in range(4):
        m = _PGM_TOKEN.match(blob, pos)
        if m is None:
            raise FormatError("truncated PGM header", path)
        fields.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = fields
    if magic != b"P5":
        raise FormatError(f"bad magic {magic!r}, expected P5", path)
    try:
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError("non-numeric PGM header field", path) from None
    if maxval != 255:
        raise FormatError(f"maxval {maxval} unsupported (need 255)", path)
    # exactly one whitespace byte separates the header from the payload
    if pos >= len(blob) or not blob[pos : pos + 1].isspace():
        raise FormatError("missing separator after PGM header", path)
    payload = blob[pos + 1 :]
    if len(payload) != width * height:
        raise FormatError(f"payload is {len(payload)} bytes, expected {width * height}", path)
    return SliceImage(width, height, _freeze(np.frombuffer(payload, dtype=np.uint8).copy()))


def write_pgm(image, path):
    try:
        with atomic_write(path) as fh:
            fh.write(encode_pgm(image))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}", str(path)) from exc


def read_pgm(path):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise MissingFileError(f"missing {path}") from None
    return decode_pgm(blob, path)


def write_pgm_stack(v, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for z in range(v.extent.z0, v.extent.z1):
        path = directory / slice_filename(z)
        write_pgm(extract_slice(v, z), path)
        paths.append(path)
    return paths


def read_pgm_stack(directory, extent):
    directory = Path(directory)
    out = np.empty(extent.shape, dtype=np.uint8)
    for i, z in enumerate(range(extent.z0, extent.z1)):
        path = directory / slice_filename(z)
        img = read_pgm(path)
        if (img.width, img.height) != (extent.nx, extent.ny):
            raise FormatError(
                f"slice is {img.width}x{img.height}, extent needs {extent.nx}x{extent.ny}", path
            )
        out[i] = img.as_array()
    return Volume3D(extent, out)


# ------------------------------------------------------------ raw + sidecar


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def write_raw_array(path, extent, dtype_tag, array, **extra):
    """Write ``array`` verbatim plus its JSON sidecar.  Used by every raw writer."""
    path = Path(path)
    dt = RAW_DTYPES[dtype_tag]
    payload = np.ascontiguousarray(array, dtype=dt).tobytes()
    meta = dict(zip(("x0", "x1", "y0", "y1", "z0", "z1"), extent.as_tuple()))
    meta.update(dtype=dtype_tag, order=VOXEL_ORDER, **extra)
    with atomic_write(path) as fh:
        fh.write(payload)
    with atomic_write(sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_raw_array(path):
    """Return ``(extent, meta, flat_array)`` after validating the sidecar."""
    path = Path(path)
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
    except FileNotFoundError:
        raise MissingFileError(f"missing sidecar {side}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"sidecar is not JSON: {exc}", side) from None
    if not isinstance(meta, dict):
        raise FormatError("sidecar must be a JSON object", side)
    try:
        extent = Extent3D(*(meta[k] for k in ("x0", "x1", "y0", "y1", "z0", "z1")))
    except KeyError as exc:
        raise FormatError(f"sidecar lacks {exc.args[0]}", side) from None
    except InvalidExtentError as exc:
        raise FormatError(str(exc), side) from None
    tag = meta.get("dtype")
    if tag not in RAW_DTYPES:
        raise FormatError(f"unsupported dtype {tag!r}", side)
    if meta.get("order", VOXEL_ORDER) != VOXEL_ORDER:
        raise FormatError(f"unsupported voxel order {meta.get('order')!r}", side)
    components = meta.get("components", 1)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise MissingFileError(f"missing payload {path}") from None
    dt = RAW_DTYPES[tag]
    expected = extent.volume_count * components * dt.itemsize
    if len(blob) != expected:
        raise FormatError(
            f"payload is {len(blob)} bytes, sidecar implies {expected}", path
        )
    return extent, meta, np.frombuffer(blob, dtype=dt).copy()


def write_raw(v, path):
    tag = "u8" if isinstance(v, Volume3D) else "f64"
    write_raw_array(path, v.extent, tag, v.voxels)


def read_raw(path):
    """Load a ``u8`` volume or ``f64`` float volume written by :func:`write_raw`."""
    extent, meta, flat = read_raw_array(path)
    tag = meta["dtype"]
    if meta.get("components", 1) != 1:
        raise FormatError(f"expected a scalar volume, got {meta['components']} components", path)
    if tag == "u8":
        return Volume3D(extent, flat)
    if tag == "f64":
        return FloatVolume3D(extent, flat)
    raise FormatError(f"dtype {tag!r} is not a scalar volume", path)
