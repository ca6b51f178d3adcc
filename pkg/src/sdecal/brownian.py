"""Reproducible Brownian increments from a counter-based generator.

Every cell ``(mu, nu, j)`` of the increment tensor is a pure function of
``(seed, mu, nu, j)``: the four integers are pushed through a SplitMix64
style mixer, the resulting word becomes an open-interval uniform and the
uniform is mapped to a standard normal through the inverse normal CDF.
Nothing depends on fill order, block size or thread count.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from . import _backend
from ._backend import njit, prange
from .errors import ValidationError

MAGIC = b"SDEINCR1"
_HEADER = struct.Struct("<8sQQQd")

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_K_NU = np.uint64(0xD1B54A32D192ED03)
_K_J = np.uint64(0x8CB92BA72F3D8DD7)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)

# Rows of realizations processed per block on the numpy path.
_BLOCK = 4096


def derive_seed(seed: int, *tags) -> int:
    """Derive a child 64-bit seed from ``seed`` and any printable tags."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for tag in tags:
        h.update(b"\x1f")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest(), "little")


def _mix_np(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _words_numpy(seed: int, M: int, N: int, m: int) -> np.ndarray:
    out = np.empty((M, N, m), dtype=np.uint64)
    s = np.uint64(seed)
    nu = (np.arange(N, dtype=np.uint64) + _ONE)[None, :, None]
    j = (np.arange(m, dtype=np.uint64) + _ONE)[None, None, :]
    for start in range(0, M, _BLOCK):
        stop = min(start + _BLOCK, M)
        mu = (np.arange(start, stop, dtype=np.uint64) + _ONE)[:, None, None]
        z = _mix_np(s + _GOLDEN * mu)
        z = _mix_np(z ^ (nu * _K_NU))
        out[start:stop] = _mix_np(z ^ (j * _K_J))
    return out


@njit(cache=True, inline="always")
def _mix_nb(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, parallel=True)
def _words_numba(seed, M, N, m):
    out = np.empty((M, N, m), dtype=np.uint64)
    g = np.uint64(0x9E3779B97F4A7C15)
    knu = np.uint64(0xD1B54A32D192ED03)
    kj = np.uint64(0x8CB92BA72F3D8DD7)
    for mu in prange(M):
        zmu = _mix_nb(seed + g * np.uint64(mu + 1))
        for nu in range(N):
            znu = _mix_nb(zmu ^ (np.uint64(nu + 1) * knu))
            for j in range(m):
                out[mu, nu, j] = _mix_nb(znu ^ (np.uint64(j + 1) * kj))
    return out


def counter_words(seed: int, M: int, N: int, m: int, backend: str | None = None) -> np.ndarray:
    """Raw 64-bit words for every cell; identical on both backends."""
    if backend is None:
        backend = "numba" if _backend.use_numba() else "numpy"
    if backend == "numba":
        return _words_numba(np.uint64(seed), M, N, m)
    return _words_numpy(seed, M, N, m)


def standard_normals(seed: int, M: int, N: int, m: int, backend: str | None = None) -> np.ndarray:
    """Standard normal draws of shape ``(M, N, m)`` keyed per cell."""
    w = counter_words(seed, M, N, m, backend)
    u = ((w >> _S11).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True, eq=False)
class IncrementTensor:
    """Brownian increments ``data[mu, nu, j]`` with variance ``dt``."""

    data: np.ndarray
    dt: float
    seed: int = 0

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValidationError(f"increment tensor must be 3-d, got shape {self.data.shape}")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        self.data.flags.writeable = False

    @property
    def M(self) -> int:
        return self.data.shape[0]

    @property
    def N(self) -> int:
        return self.data.shape[1]

    @property
    def m(self) -> int:
        return self.data.shape[2]

    def coarsen(self, factor: int) -> "IncrementTensor":
        """Sum groups of ``factor`` consecutive steps (same Brownian path, coarser grid)."""
        if factor < 1 or self.N % factor:
            raise ValidationError(f"cannot coarsen N={self.N} by factor {factor}")
        coarse = self.data.reshape(self.M, self.N // factor, factor, self.m).sum(axis=2)
        return IncrementTensor(coarse, self.dt * factor, self.seed)

    def subset(self, rows: slice) -> "IncrementTensor":
        return IncrementTensor(np.ascontiguousarray(self.data[rows]), self.dt, self.seed)


def sample_increments(seed: int, M: int, N: int, m: int, dt: float) -> IncrementTensor:
    for name, val in (("M", M), ("N", N), ("m", m)):
        if int(val) != val or val < 1:
            raise ValidationError(f"{name} must be a positive integer, got {val!r}")
    if not (np.isfinite(dt) and dt > 0):
        raise ValidationError(f"dt must be a positive finite number, got {dt!r}")
    if not 0 <= int(seed) < 2**64:
        raise ValidationError(f"seed must fit in 64 unsigned bits, got {seed!r}")
    z = standard_normals(int(seed), int(M), int(N), int(m))
    z *= np.sqrt(dt)
    return IncrementTensor(z, float(dt), int(seed))


def save_increments(path, inc: IncrementTensor) -> None:
    """Binary dump: 40-byte little-endian header, then float64 data in C order."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, inc.M, inc.N, inc.m, inc.dt))
        fh.write(np.ascontiguousarray(inc.data, dtype="<f8").tobytes())


def load_increments(path, seed: int = 0) -> IncrementTensor:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValidationError(f"{path}: truncated header")
    magic, M, N, m, dt = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * M * N * m:
        raise ValidationError(f"{path}: expected {M * N * m} values, found {len(body) // 8}")
    data = np.frombuffer(body, dtype="<f8").reshape(M, N, m).astype(np.float64)
    return IncrementTensor(data, dt, seed)
