"""Log-Gabor phase codes and masked, shift-compensated Hamming distance."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

CODE_MAGIC = b"IC01"


@dataclass(frozen=True)
class GaborBank:
    """1-D log-Gabor filters applied along the angular axis of band-averaged rows."""

    wavelengths: tuple[float, ...] = (18.0,)
    sigma_on_f: float = 0.5
    bands: int = 8

    def __post_init__(self):
        if not self.wavelengths:
            raise ValueError("filter bank is empty")
        if not 0 < self.sigma_on_f < 1:
            raise ValueError("sigma_on_f must lie in (0, 1)")

    def response(self, n: int, wavelength: float) -> np.ndarray:
        """Frequency response over ``np.fft.fftfreq(n)``; zero for f <= 0 (analytic)."""
        f = np.fft.fftfreq(n)
        out = np.zeros(n)
        pos = f > 0
        out[pos] = np.exp(-np.log(f[pos] * wavelength) ** 2 / (2 * np.log(self.sigma_on_f) ** 2))
        return out

    def support(self, wavelength: float) -> int:
        """Half-width in columns over which an invalid pixel spoils a sample."""
        return int(np.ceil(wavelength / 2))


@dataclass
class IrisCode:
    bits: np.ndarray  # bool, (bands, angular, 2 * n_filters)
    mask: np.ndarray  # bool, same shape

    def __post_init__(self):
        if self.bits.shape != self.mask.shape:
            raise ValueError(f"bits {self.bits.shape} and mask {self.mask.shape} differ")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.bits.shape

    def shifted(self, s: int) -> "IrisCode":
        return IrisCode(np.roll(self.bits, s, axis=1), np.roll(self.mask, s, axis=1))

    def __eq__(self, other):
        return (isinstance(other, IrisCode) and np.array_equal(self.bits, other.bits)
                and np.array_equal(self.mask, other.mask))


def band_average(strip: np.ndarray, mask: np.ndarray, bands: int) -> tuple[np.ndarray, np.ndarray]:
    """Average groups of rows over valid pixels; a band column is valid when
    at least half of its pixels are."""
    h, w = strip.shape
    if h % bands:
        raise ValueError(f"{h} rows do not split into {bands} bands")
    s = strip.reshape(bands, h // bands, w).astype(np.float64)
    m = mask.reshape(bands, h // bands, w)
    cnt = m.sum(axis=1)
    avg = np.where(cnt > 0, (s * m).sum(axis=1) / np.maximum(cnt, 1), 0.0)
    return avg, cnt * 2 >= h // bands


def encode(strip: np.ndarray, mask: np.ndarray | None = None,
           filters: GaborBank | None = None) -> IrisCode:
    filters = filters or GaborBank()
    strip = np.asarray(strip)
    if mask is None:
        mask = np.ones(strip.shape, bool)
    w = strip.shape[1]
    if max(filters.wavelengths) >= w or 2 * filters.support(max(filters.wavelengths)) + 1 > w:
        raise ValueError("filter wider than the angular extent")
    rows, valid = band_average(strip, mask, filters.bands)
    # fill invalid samples with the row mean so they do not bias the filter
    fill = np.array([r[v].mean() if v.any() else 0.0 for r, v in zip(rows, valid)])
    rows = np.where(valid, rows, fill[:, None])
    spec = np.fft.fft(rows, axis=1)
    bits, masks = [], []
    for lam in filters.wavelengths:
        z = np.fft.ifft(spec * filters.response(w, lam)[None, :], axis=1)
        r = filters.support(lam)
        # a sample is valid when no invalid column lies within its support
        bad = ~valid
        spoiled = np.zeros_like(bad)
        for d in range(-r, r + 1):
            spoiled |= np.roll(bad, d, axis=1)
        ok = ~spoiled
        bits += [z.real > 0, z.imag > 0]
        masks += [ok, ok]
    return IrisCode(np.stack(bits, axis=-1), np.stack(masks, axis=-1))


def _check_pair(a: IrisCode, b: IrisCode) -> None:
    if a.shape != b.shape:
        raise ValueError(f"code shapes differ: {a.shape} vs {b.shape}")


def hamming_per_shift(a: IrisCode, b: IrisCode, max_shift: int) -> dict[int, float]:
    _check_pair(a, b)
    out = {}
    for s in range(-max_shift, max_shift + 1):
        bs = b.shifted(s)
        joint = a.mask & bs.mask
        n = int(joint.sum())
        if n:
            out[s] = int(((a.bits ^ bs.bits) & joint).sum()) / n
    return out


def hamming(a: IrisCode, b: IrisCode, max_shift: int = 8) -> float:
    """Minimum masked normalized Hamming distance over angular shifts of ``b``."""
    per = hamming_per_shift(a, b, max_shift)
    if not per:
        raise ValueError("joint mask is empty at every shift")
    return min(per.values())


def hamming_matrix(probes: Sequence[IrisCode], gallery: Sequence[IrisCode],
                   max_shift: int = 8) -> np.ndarray:
    """All-pairs ``hamming`` via count matrices; equal to the pairwise loop."""
    if not probes or not gallery:
        raise ValueError("empty probe or gallery list")
    for c in list(probes) + list(gallery):
        _check_pair(probes[0], c)

    def stack(codes, s=0):
        bits = np.stack([np.roll(c.bits, s, axis=1).ravel() for c in codes]).astype(np.float64)
        mask = np.stack([np.roll(c.mask, s, axis=1).ravel() for c in codes]).astype(np.float64)
        return bits * mask, mask

    pa, pm = stack(probes)
    best = np.full((len(probes), len(gallery)), np.inf)
    for s in range(-max_shift, max_shift + 1):
        ga, gm = stack(gallery, s)
        n = pm @ gm.T
        # |a xor b| on the joint mask = a + b - 2ab, with a, b already masked
        d = pa @ gm.T + pm @ ga.T - 2 * (pa @ ga.T)
        with np.errstate(invalid="ignore", divide="ignore"):
            hd = np.where(n > 0, np.rint(d) / np.maximum(n, 1), np.inf)
        best = np.minimum(best, hd)
    if np.isinf(best).any():
        raise ValueError("joint mask is empty at every shift for some pair")
    return best


def match_gallery(probe: np.ndarray, gallery: Sequence[tuple[object, IrisCode]],
                  filters: GaborBank | None = None, max_shift: int = 8,
                  probe_mask: np.ndarray | None = None) -> list[tuple[object, float]]:
    """Encode ``probe`` once and score it against every (id, code) in ``gallery``."""
    if not gallery:
        raise ValueError("gallery is empty")
    code = encode(probe, probe_mask, filters)
    return [(gid, hamming(code, g, max_shift)) for gid, g in gallery]


# --- file format ---------------------------------------------------------------
# "IC01", u32 ndim, ndim x u32 dims, then the bit plane and the mask plane, each
# packed into little-endian u64 words: element k of the C-order flattened array
# is bit (k % 64) of word (k // 64).  The last word is zero padded.

def _pack(a: np.ndarray) -> bytes:
    flat = a.ravel().astype(np.uint8)
    pad = (-flat.size) % 64
    flat = np.concatenate([flat, np.zeros(pad, np.uint8)])
    return np.packbits(flat, bitorder="little").tobytes()


def _unpack(buf: bytes, shape: tuple[int, ...]) -> np.ndarray:
    n = int(np.prod(shape))
    bits = np.unpackbits(np.frombuffer(buf, np.uint8), bitorder="little")[:n]
    return bits.astype(bool).reshape(shape)


def save_code(path, code: IrisCode) -> None:
    dims = code.shape
    head = CODE_MAGIC + struct.pack("<I", len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
    Path(path).write_bytes(head + _pack(code.bits) + _pack(code.mask))


def load_code(path) -> IrisCode:
    raw = Path(path).read_bytes()
    if raw[:4] != CODE_MAGIC:
        raise ValueError(f"{path}: not an IC01 code file")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    off = 8 + 4 * ndim
    n = int(np.prod(dims))
    nbytes = 8 * ((n + 63) // 64)
    if len(raw) != off + 2 * nbytes:
        raise ValueError(f"{path}: truncated code file")
    return IrisCode(_unpack(raw[off:off + nbytes], dims), _unpack(raw[off + nbytes:], dims))
