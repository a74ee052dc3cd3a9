"""3D Sobel gradients, L_p magnitudes, and mean/sigma binarization.

The X kernel is used exactly as published, plane by plane (``dz = -1, 0, 1``)::

    K(-1) = K(1) = [[-1, 0, 1],     K(0) = [[-3, 0, 3],
                    [-3, 0, 3],             [-6, 0, 6],
                    [-1, 0, 1]]             [-3, 0, 3]]

Its planes are not a separable smoothing product (the centre row of ``K(0)``
is 6, not 9); we keep it verbatim.  The Y and Z kernels swap the
differentiation axis with the target axis, so a unit ramp gives 44 on every
axis.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from emkit.errors import FormatError, InvalidParameterError
from emkit.volume import (
    Extent3D,
    FloatVolume3D,
    Volume3D,
    read_raw_array,
    stats,
    write_raw_array,
)


class Axis(enum.Enum):
    X = "x"
    Y = "y"
    Z = "z"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidParameterError(f"unknown axis {value!r}") from None


class Polarity(enum.Enum):
    ABOVE = "above"
    BELOW = "below"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidParameterError(f"unknown polarity {value!r}") from None


# smoothing weight for the two non-differentiated offsets; symmetric in its arguments
_SMOOTH = np.array([[1, 3, 1], [3, 6, 3], [1, 3, 1]], dtype=np.int64)
_DIFF = np.array([-1, 0, 1], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class SobelKernel3D:
    """Weights indexed ``weights[dz + 1, dy + 1, dx + 1]``."""

    axis: Axis
    weights: np.ndarray

    def plane(self, dz):
        """The 3x3 ``[dy][dx]`` plane at offset ``dz``."""
        return self.weights[dz + 1]

    def __getitem__(self, offsets):
        dz, dy, dx = offsets
        return int(self.weights[dz + 1, dy + 1, dx + 1])


def sobel_kernel(axis):
    axis = Axis.parse(axis)
    d = _DIFF
    s = _SMOOTH
    if axis is Axis.X:
        # w[dz, dy, dx] = S[dz, dy] * dx
        w = s[:, :, None] * d[None, None, :]
    elif axis is Axis.Y:
        # swap dx <-> dy: w[dz, dy, dx] = S[dz, dx] * dy
        w = s[:, None, :] * d[None, :, None]
    else:
        # swap dx <-> dz: w[dz, dy, dx] = S[dx, dy] * dz
        w = s.T[None, :, :] * d[:, None, None]
    w = np.ascontiguousarray(w, dtype=np.int64)
    w.setflags(write=False)
    return SobelKernel3D(axis, w)


def _correlate_slab(padded, weights, z_lo, z_hi, ny, nx):
    out = np.zeros((z_hi - z_lo, ny, nx), dtype=np.int64)
    for a in range(3):
        for b in range(3):
            for c in range(3):
                w = weights[a, b, c]
                if w:
                    out += w * padded[z_lo + a : z_hi + a, b : b + ny, c : c + nx]
    return out


def correlate(arr, kernel, workers=1):
    """Clamp-to-edge correlation of an integer ``(nz, ny, nx)`` array.

    ``out[z, y, x] = sum k[dz, dy, dx] * arr[z + dz, y + dy, x + dx]`` with
    out-of-range coordinates clamped to the nearest edge voxel.  Work is split
    into z-slabs across ``workers`` threads; integer arithmetic makes the
    result independent of the split.
    """
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.size == 0:
        raise InvalidParameterError("need a non-empty 3D array")
    if arr.dtype.kind not in "iub":
        raise InvalidParameterError(f"integer samples required, got {arr.dtype}")
    weights = kernel.weights if isinstance(kernel, SobelKernel3D) else np.asarray(kernel)
    nz, ny, nx = arr.shape
    padded = np.pad(arr.astype(np.int64), 1, mode="edge")
    workers = max(1, min(int(workers), nz))
    if workers == 1:
        return _correlate_slab(padded, weights, 0, nz, ny, nx)
    bounds = np.linspace(0, nz, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(
            lambda lo_hi: _correlate_slab(padded, weights, lo_hi[0], lo_hi[1], ny, nx),
            zip(bounds[:-1], bounds[1:]),
        )
        return np.concatenate(list(parts), axis=0)


def convolve3d(v, k, workers=1):
    """Flat int64 response of volume ``v`` to kernel ``k``, in voxel order."""
    return correlate(v.data, k, workers=workers).reshape(-1)


@dataclass(frozen=True, eq=False)
class GradientField:
    extent: Extent3D
    gx: np.ndarray
    gy: np.ndarray
    gz: np.ndarray

    def __post_init__(self):
        n = self.extent.volume_count
        for name in ("gx", "gy", "gz"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1)
            if arr.size != n:
                raise FormatError(f"{name} has {arr.size} entries, extent has {n} voxels")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def components(self):
        return np.stack([self.gx, self.gy, self.gz])

    def __eq__(self, other):
        if not isinstance(other, GradientField):
            return NotImplemented
        return self.extent == other.extent and all(
            np.array_equal(a, b) for a, b in zip(self.components(), other.components())
        )


def gradient(v, workers=1):
    gx, gy, gz = (convolve3d(v, sobel_kernel(a), workers=workers) for a in Axis)
    return GradientField(v.extent, gx, gy, gz)


def save_gradient(g, path):
    """Raw ``i64`` payload holding gx, then gy, then gz, each in voxel order."""
    write_raw_array(path, g.extent, "i64", g.components().reshape(-1), components=3)


def load_gradient(path):
    extent, meta, flat = read_raw_array(path)
    if meta["dtype"] != "i64" or meta.get("components") != 3:
        raise FormatError("not a gradient file (need dtype i64, 3 components)", path)
    gx, gy, gz = flat.reshape(3, -1)
    return GradientField(extent, gx, gy, gz)


def check_norm_order(p):
    try:
        p = float(p)
    except (TypeError, ValueError):
        raise InvalidParameterError(f"norm order must be numeric, got {p!r}") from None
    if math.isnan(p) or p < 1:
        raise InvalidParameterError(f"norm order p must be >= 1 or inf, got {p}")
    return p


def lp_norm(components, p):
    """Per-column L_p norm of a ``(3, N)`` array of integer components.

    Values are scaled by the per-voxel max before exponentiation so large p
    cannot overflow.
    """
    p = check_norm_order(p)
    a = np.abs(np.asarray(components, dtype=np.float64))
    peak = a.max(axis=0)
    if math.isinf(p):
        return peak
    if p == 1:
        return a.sum(axis=0)
    if p == 2:
        return np.sqrt((a * a).sum(axis=0))
    out = np.zeros_like(peak)
    nz = peak > 0
    ratio = a[:, nz] / peak[nz]
    out[nz] = peak[nz] * np.power(np.power(ratio, p).sum(axis=0), 1.0 / p)
    return out


def magnitude_lp(g, p=2):
    return FloatVolume3D(g.extent, lp_norm(g.components(), p))


@dataclass(frozen=True, eq=False)
class BinaryVolume:
    extent: Extent3D
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool).reshape(-1)
        if bits.size != self.extent.volume_count:
            raise FormatError(
                f"{bits.size} flags for extent with {self.extent.volume_count} voxels"
            )
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def foreground_count(self):
        return int(self.bits.sum())

    def as_array(self):
        return self.bits.reshape(self.extent.shape)

    def to_volume(self, on=1):
        """0/``on`` 8-bit volume, the on-disk form of a binary mask."""
        return Volume3D(self.extent, self.bits.astype(np.uint8) * np.uint8(on))

    @classmethod
    def from_volume(cls, v):
        return cls(v.extent, v.voxels != 0)

    def __eq__(self, other):
        if not isinstance(other, BinaryVolume):
            return NotImplemented
        return self.extent == other.extent and np.array_equal(self.bits, other.bits)


def threshold(m, k):
    s = stats(m)
    return s.mean + float(k) * s.stddev


def binarize(m, k=1.0, polarity=Polarity.ABOVE):
    """Foreground where ``m > mean + k*sigma`` (or ``<`` for ``below``); ties are background."""
    if not math.isfinite(float(k)):
        raise InvalidParameterError(f"threshold multiplier must be finite, got {k}")
    polarity = Polarity.parse(polarity)
    t = threshold(m, k)
    vals = m.voxels
    bits = vals > t if polarity is Polarity.ABOVE else vals < t
    return BinaryVolume(m.extent, bits)
