"""Rubber-sheet unwrapping of annotated eye images and strip enhancement."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float


@dataclass(frozen=True)
class Eyelid:
    side: str  # "upper" masks samples above the polyline, "lower" below
    points: tuple[tuple[float, float], ...]

    def occludes(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        px = np.array([p[0] for p in self.points], float)
        py = np.array([p[1] for p in self.points], float)
        order = np.argsort(px)
        px, py = px[order], py[order]
        inside = (x >= px[0]) & (x <= px[-1])
        yl = np.interp(x, px, py)
        hit = y < yl if self.side == "upper" else y > yl
        return inside & hit


@dataclass(frozen=True)
class IrisAnnotation:
    pupil: Circle
    limbus: Circle
    eyelids: tuple[Eyelid, ...] = ()

    def validate(self) -> None:
        p, l = self.pupil, self.limbus
        if p.r <= 0 or l.r <= 0:
            raise ValueError("circle radii must be positive")
        if p.r >= l.r:
            raise ValueError(f"pupil radius {p.r} must be below limbus radius {l.r}")
        if np.hypot(p.cx - l.cx, p.cy - l.cy) >= l.r:
            raise ValueError("pupil centre lies outside the limbus circle")
        for e in self.eyelids:
            if e.side not in ("upper", "lower") or len(e.points) < 2:
                raise ValueError("eyelid needs side upper/lower and at least two points")

    @classmethod
    def from_dict(cls, d: dict) -> "IrisAnnotation":
        lids = tuple(Eyelid(e["side"], tuple(tuple(map(float, p)) for p in e["points"]))
                     for e in d.get("eyelids", []))
        ann = cls(Circle(**d["pupil"]), Circle(**d["limbus"]), lids)
        ann.validate()
        return ann

    @classmethod
    def load(cls, path) -> "IrisAnnotation":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class NormalizedIris:
    strip: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mask is None:
            self.mask = np.ones(self.strip.shape, bool)
        if self.mask.shape != self.strip.shape:
            raise ValueError("strip and mask shapes differ")


def sample_points(ann: IrisAnnotation, radial: int, angular: int) -> tuple[np.ndarray, np.ndarray]:
    """(x, y) sample coordinates, each (radial, angular)."""
    theta = 2 * np.pi * np.arange(angular) / angular
    c, s = np.cos(theta), np.sin(theta)
    p, l = ann.pupil, ann.limbus
    px, py = p.cx + p.r * c, p.cy + p.r * s
    lx, ly = l.cx + l.r * c, l.cy + l.r * s
    t = (np.arange(radial) / (radial - 1))[:, None]
    return px + t * (lx - px), py + t * (ly - py)


def bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear samples and an inside-the-image flag."""
    h, w = img.shape
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xc, yc = np.clip(x, 0, w - 1), np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(int), w - 2) if w > 1 else np.zeros_like(xc, int)
    y0 = np.minimum(np.floor(yc).astype(int), h - 2) if h > 1 else np.zeros_like(yc, int)
    fx, fy = xc - x0, yc - y0
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    v = (img[y0, x0] * (1 - fx) * (1 - fy) + img[y0, x1] * fx * (1 - fy)
         + img[y1, x0] * (1 - fx) * fy + img[y1, x1] * fx * fy)
    return v, inside


def rubber_sheet(eye: np.ndarray, ann: IrisAnnotation, radial: int = 64,
                 angular: int = 512) -> NormalizedIris:
    """Unwrap the iris annulus; row 0 is the pupil boundary, column j is angle 2*pi*j/angular."""
    ann.validate()
    if radial < 2 or angular < 2:
        raise ValueError("radial and angular sample counts must be at least 2")
    h, w = eye.shape
    l = ann.limbus
    if l.cx + l.r < 0 or l.cx - l.r > w - 1 or l.cy + l.r < 0 or l.cy - l.r > h - 1:
        raise ValueError("iris circles lie entirely outside the image")
    x, y = sample_points(ann, radial, angular)
    strip, inside = bilinear(eye.astype(np.float64), x, y)
    valid = inside.copy()
    for lid in ann.eyelids:
        valid &= ~lid.occludes(x, y)
    if not valid.any():
        raise ValueError("no valid samples: circles exceed image bounds")
    return NormalizedIris(np.where(inside, strip, 0.0).astype(np.float32), valid)


def _block_background(strip: np.ndarray, mask: np.ndarray, block: int) -> np.ndarray:
    h, w = strip.shape
    nby, nbx = -(-h // block), -(-w // block)
    means = np.empty((nby, nbx))
    global_mean = strip[mask].mean()
    centers_y = np.empty(nby)
    centers_x = np.empty(nbx)
    for a in range(nby):
        r0, r1 = a * block, min(h, (a + 1) * block)
        centers_y[a] = (r0 + r1 - 1) / 2
        for b in range(nbx):
            c0, c1 = b * block, min(w, (b + 1) * block)
            centers_x[b] = (c0 + c1 - 1) / 2
            m = mask[r0:r1, c0:c1]
            means[a, b] = strip[r0:r1, c0:c1][m].mean() if m.any() else global_mean
    if nby == 1 and nbx == 1:
        return np.full(strip.shape, means[0, 0])
    # bilinear between block centres, linear extrapolation beyond them
    ys = centers_y if nby > 1 else np.array([centers_y[0] - 1, centers_y[0] + 1])
    xs = centers_x if nbx > 1 else np.array([centers_x[0] - 1, centers_x[0] + 1])
    grid = means
    if nby == 1:
        grid = np.repeat(grid, 2, axis=0)
    if nbx == 1:
        grid = np.repeat(grid, 2, axis=1)
    interp = RegularGridInterpolator((ys, xs), grid, method="linear", bounds_error=False,
                                     fill_value=None)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return interp(np.stack([yy.ravel(), xx.ravel()], axis=1)).reshape(h, w)


def enhance(iris: NormalizedIris, block: int = 32) -> NormalizedIris:
    """Subtract a bilinear block-mean background, then min-max rescale the
    valid pixels to [0, 1]. A flat result maps to 0.5."""
    mask = iris.mask
    if not mask.any():
        raise ValueError("mask has no valid pixels")
    strip = iris.strip.astype(np.float64)
    flat = strip - _block_background(strip, mask, block)
    lo, hi = flat[mask].min(), flat[mask].max()
    if hi - lo <= 1e-12:
        out = np.full(strip.shape, 0.5)
    else:
        out = np.clip((flat - lo) / (hi - lo), 0.0, 1.0)
    return NormalizedIris(out.astype(np.float32), mask.copy())
