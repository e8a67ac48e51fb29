"""Synthetic bi-spectral iris strips, LR degradation and the dataset manifest.

Each identity owns a handful of oriented band-pass noise fields plus a set of
radial furrows.  Both spectra render the same fields, but weight the bands
differently (VIS favours coarse structure, NIR fine structure), apply
different radial contrast profiles and tone curves, and add their own noise.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .imageio import read_image, read_mask, write_image, write_mask

HR_SHAPE = (64, 512)
LR_SHAPE = (32, 256)
SHAPES = {"HR": HR_SHAPE, "LR": LR_SHAPE}
SPECTRA = ("VIS", "NIR")
_SPECTRUM_CODE = {"VIS": 0, "NIR": 1}


class ManifestError(ValueError):
    pass


def resolution_of(shape: Sequence[int]) -> str:
    for name, s in SHAPES.items():
        if tuple(shape) == s:
            return name
    raise ManifestError(f"image shape {tuple(shape)} not in allowed set {list(SHAPES.values())}")


@dataclass(frozen=True)
class SpectralModel:
    """Knobs of the synthetic imaging model. Defaults are the calibrated ones."""

    min_bands: int = 3
    max_bands: int = 5
    wavelength_range: tuple[float, float] = (8.0, 40.0)
    orientation_range: float = 50.0  # degrees either side of purely angular variation
    relative_bandwidth: float = 0.25
    furrow_weight: float = 0.5
    # band weight per spectrum: (wavelength / 16) ** tilt, times a polarity
    # cos(pi * orientation / period) for NIR (period 0 disables it)
    vis_tilt: float = 0.8
    nir_tilt: float = -0.8
    nir_polarity_period: float = 70.0
    quality_range: tuple[float, float] = (0.7, 1.6)  # per-instance noise multiplier
    warp_amplitude: float = 2.0  # std of the smooth per-instance displacement, px
    warp_scale: tuple[float, float] = (16.0, 48.0)  # smoothing of the displacement field
    vis_noise: float = 1.0
    nir_noise: float = 1.0
    noise_blur: float = 0.7
    nir_blur: float = 0.7
    max_shift: int = 4  # per instance, so any two instances differ by at most 8
    gain_jitter: float = 0.1
    offset_jitter: float = 0.04
    occlusion_depth: tuple[float, float] = (0.0, 0.3)  # fraction of rows at the band peak
    eyelid_level: float = 0.22

    def weight(self, spectrum: str, wavelength: float, orientation: float) -> float:
        if spectrum == "VIS":
            return float((wavelength / 16.0) ** self.vis_tilt)
        w = (wavelength / 16.0) ** self.nir_tilt
        if self.nir_polarity_period:
            w *= np.cos(np.pi * np.rad2deg(orientation) / self.nir_polarity_period)
        return float(w)


def tone_curve(spectrum: str, field: np.ndarray) -> np.ndarray:
    """Monotone map from a unit-variance field to intensity."""
    if spectrum == "VIS":
        return 0.5 + 0.14 * field
    return 0.46 + 0.24 * np.tanh(0.75 * field + 0.25)


def radial_profile(spectrum: str, rows: int) -> np.ndarray:
    t = (np.arange(rows) + 0.5) / rows
    if spectrum == "VIS":
        return 1.15 - 0.5 * t
    return 0.75 + 0.45 * np.sin(np.pi * t)


@dataclass(frozen=True)
class Band:
    wavelength: float
    orientation: float  # radians
    amplitude: float
    bandwidth: float  # std of the spectral bump, relative to the centre frequency


@dataclass(frozen=True)
class Furrow:
    column: float
    width: float
    depth: float
    extent: float  # fraction of rows covered, starting at the pupil side


@dataclass(frozen=True)
class IrisIdentity:
    id: int
    texture_seed: int
    bands: tuple[Band, ...]
    furrows: tuple[Furrow, ...]

    @classmethod
    def draw(cls, class_id: int, texture_seed: int, model: SpectralModel) -> "IrisIdentity":
        rng = np.random.default_rng(texture_seed)
        k = int(rng.integers(model.min_bands, model.max_bands + 1))
        lo, hi = np.log(model.wavelength_range[0]), np.log(model.wavelength_range[1])
        bands = tuple(
            Band(float(np.exp(rng.uniform(lo, hi))),
                 float(np.deg2rad(rng.uniform(-model.orientation_range, model.orientation_range))),
                 float(rng.uniform(0.6, 1.0)), model.relative_bandwidth)
            for _ in range(k)
        )
        n_furrows = int(rng.integers(4, 11))
        furrows = tuple(
            Furrow(float(rng.uniform(0, HR_SHAPE[1])), float(rng.uniform(1.5, 4.0)),
                   float(rng.uniform(0.5, 1.5)), float(rng.uniform(0.3, 1.0)))
            for _ in range(n_furrows)
        )
        return cls(class_id, int(texture_seed), bands, furrows)

    def band_fields(self) -> np.ndarray:
        """Unit-variance band-pass fields, shape (K, 64, 512); a pure function of the seed."""
        rng = np.random.default_rng([self.texture_seed, 1])
        h, w = HR_SHAPE
        hp = 2 * h  # pad radially so fields do not wrap top-to-bottom
        fy = np.fft.fftfreq(hp)[:, None]
        fx = np.fft.fftfreq(w)[None, :]
        out = np.empty((len(self.bands), h, w))
        for i, b in enumerate(self.bands):
            f0 = 1.0 / b.wavelength
            cx, cy = f0 * np.cos(b.orientation), f0 * np.sin(b.orientation)
            b_sigma = f0 * b.bandwidth
            resp = (np.exp(-((fx - cx) ** 2 + (fy - cy) ** 2) / (2 * b_sigma ** 2))
                    + np.exp(-((fx + cx) ** 2 + (fy + cy) ** 2) / (2 * b_sigma ** 2)))
            noise = rng.standard_normal((hp, w))
            f = np.fft.ifft2(np.fft.fft2(noise) * resp).real[:h]
            out[i] = f / f.std()
        return out

    def furrow_field(self) -> np.ndarray:
        h, w = HR_SHAPE
        rows = (np.arange(h) + 0.5) / h
        cols = np.arange(w)
        out = np.zeros(HR_SHAPE)
        for fu in self.furrows:
            d = (cols - fu.column + w / 2) % w - w / 2
            across = np.exp(-0.5 * (d / fu.width) ** 2)
            along = 1.0 / (1.0 + np.exp((rows - fu.extent) / 0.05))
            out -= fu.depth * along[:, None] * across[None, :]
        return out - out.mean()


@dataclass
class SpectralSample:
    class_id: int
    spectrum: str
    instance: int
    image: np.ndarray
    mask: np.ndarray

    @property
    def resolution(self) -> str:
        return resolution_of(self.image.shape)


def _band_limited_noise(rng: np.random.Generator, sigma: float) -> np.ndarray:
    n = ndimage.gaussian_filter(rng.standard_normal(HR_SHAPE), sigma, mode=("nearest", "wrap"))
    return n / n.std()


def _warp_field(rng: np.random.Generator, model: SpectralModel) -> np.ndarray | None:
    if model.warp_amplitude <= 0:
        return None
    h, w = HR_SHAPE
    out = []
    for _ in range(2):
        d = ndimage.gaussian_filter(rng.standard_normal(HR_SHAPE), model.warp_scale,
                                    mode=("nearest", "wrap"))
        out.append(model.warp_amplitude * d / d.std())
    rr, cc = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    return np.stack([np.clip(rr + out[0], 0, h - 1), cc + out[1]])


def _occlusion(rng: np.random.Generator, model: SpectralModel) -> np.ndarray:
    """Valid-pixel mask with an eyelid band entering from the top edge."""
    h, w = HR_SHAPE
    depth = rng.uniform(*model.occlusion_depth) * h
    phase = rng.uniform(0, w)
    cols = np.arange(w)
    profile = depth * np.maximum(0.0, np.cos(2 * np.pi * (cols - phase) / w)) ** 2
    rows = np.arange(h)[:, None]
    return rows >= profile[None, :]


def render_instance(identity: IrisIdentity, instance: int, seed: int,
                    model: SpectralModel, fields: np.ndarray | None = None) -> list[SpectralSample]:
    """Render the co-registered VIS and NIR strips of one (identity, instance)."""
    if fields is None:
        fields = identity.band_fields()
    furrows = identity.furrow_field()
    inst_rng = np.random.default_rng([seed, 2, identity.id, instance])
    shift = int(inst_rng.integers(-model.max_shift, model.max_shift + 1))
    quality = float(np.exp(inst_rng.uniform(*np.log(model.quality_range))))
    valid = _occlusion(inst_rng, model)
    coords = _warp_field(inst_rng, model)
    samples = []
    seeds = {s: (seed, 3, identity.id, instance, _SPECTRUM_CODE[s]) for s in SPECTRA}
    if len(set(seeds.values())) != len(SPECTRA):
        raise ValueError("noise seed collision across spectra")
    for spectrum in SPECTRA:
        rng = np.random.default_rng(list(seeds[spectrum]))
        w = np.array([b.amplitude * model.weight(spectrum, b.wavelength, b.orientation) for b in identity.bands])
        tex = np.tensordot(w, fields, axes=1)
        tex = tex / tex.std() + model.furrow_weight * furrows
        tex = tex / tex.std() * radial_profile(spectrum, HR_SHAPE[0])[:, None]
        if coords is not None:
            tex = ndimage.map_coordinates(tex, coords, order=3, mode="grid-wrap")
        tex = np.roll(tex, shift, axis=1)
        sigma = quality * (model.vis_noise if spectrum == "VIS" else model.nir_noise)
        tex = tex + sigma * _band_limited_noise(rng, model.noise_blur)
        if spectrum == "NIR" and model.nir_blur > 0:
            tex = ndimage.gaussian_filter(tex, model.nir_blur, mode=("nearest", "wrap"))
        img = tone_curve(spectrum, tex)
        gain = 1 + rng.uniform(-model.gain_jitter, model.gain_jitter)
        offset = rng.uniform(-model.offset_jitter, model.offset_jitter)
        img = 0.5 + gain * (img - 0.5) + offset
        lid = model.eyelid_level + 0.02 * rng.standard_normal(HR_SHAPE)
        img = np.where(valid, img, lid)
        samples.append(SpectralSample(identity.id, spectrum, instance,
                                      np.clip(img, 0, 1).astype(np.float32), valid.copy()))
    return samples


def identity_seeds(n_classes: int, seed: int) -> list[int]:
    seeds = [int(np.random.SeedSequence([seed, 1, c]).generate_state(1, np.uint64)[0])
             for c in range(n_classes)]
    if len(set(seeds)) != len(seeds):
        raise ValueError("texture seed collision between identities")
    return seeds


def generate_samples(n_classes: int, instances_per_class: int, seed: int,
                     model: SpectralModel | None = None) -> list[SpectralSample]:
    """All HR samples, ordered by class, instance, spectrum."""
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if instances_per_class < 2:
        raise ValueError(f"need at least 2 instances per class, got {instances_per_class}")
    model = model or SpectralModel()
    out = []
    for c, ts in enumerate(identity_seeds(n_classes, seed)):
        ident = IrisIdentity.draw(c, ts, model)
        fields = ident.band_fields()
        for i in range(instances_per_class):
            out.extend(render_instance(ident, i, seed, model, fields))
    return out


# --- LR degradation ----------------------------------------------------------

CATMULL_ROM_HALF = np.array([-0.0625, 0.5625, 0.5625, -0.0625])


def cubic_weight(x: float, a: float = -0.5) -> float:
    x = abs(x)
    if x < 1:
        return (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1
    if x < 2:
        return a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a
    return 0.0


def bicubic_half(img: np.ndarray) -> np.ndarray:
    """2x Catmull-Rom decimation; rows clamp at the edges, columns wrap."""
    h, w = img.shape
    k = CATMULL_ROM_HALF
    rows = np.clip(np.arange(h // 2)[:, None] * 2 + np.arange(-1, 3)[None, :], 0, h - 1)
    tmp = np.einsum("ikw,k->iw", img[rows], k)
    cols = (np.arange(w // 2)[:, None] * 2 + np.arange(-1, 3)[None, :]) % w
    return np.einsum("hjk,k->hj", tmp[:, cols], k)


def degrade_image(img: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    if tuple(img.shape) != HR_SHAPE:
        if tuple(img.shape) == LR_SHAPE:
            raise ValueError("input is already low resolution")
        raise ValueError(f"expected a {HR_SHAPE} strip, got {img.shape}")
    blurred = ndimage.gaussian_filter(img.astype(np.float64), sigma, mode=("nearest", "wrap"),
                                      truncate=4.0) if sigma > 0 else img.astype(np.float64)
    return bicubic_half(blurred)


def downsample_mask(mask: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    return mask.reshape(h // 2, 2, w // 2, 2).all(axis=(1, 3))


def degrade_to_lr(sample: SpectralSample, sigma: float = 1.0) -> SpectralSample:
    """Gaussian blur then bicubic 2x downsample; the mask keeps all-valid 2x2 blocks."""
    img = np.clip(degrade_image(sample.image, sigma), 0, 1).astype(np.float32)
    return SpectralSample(sample.class_id, sample.spectrum, sample.instance, img,
                          downsample_mask(sample.mask))


# --- manifest ----------------------------------------------------------------

@dataclass
class Record:
    path: str
    class_id: int
    spectrum: str
    instance: int
    resolution: str
    split: str
    mask: str | None = None

    def key(self) -> tuple:
        return (self.class_id, self.spectrum, self.instance, self.resolution)


@dataclass
class DatasetManifest:
    records: list[Record]
    root: Path = field(default_factory=Path)
    protocol: str = "instance"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        seen = set()
        for r in self.records:
            if r.path in seen:
                raise ManifestError(f"file listed twice: {r.path}")
            seen.add(r.path)
            if r.spectrum not in SPECTRA:
                raise ManifestError(f"{r.path}: unknown spectrum {r.spectrum!r}")
            if r.resolution not in SHAPES:
                raise ManifestError(f"{r.path}: unknown resolution {r.resolution!r}")
            if r.split not in ("train", "test"):
                raise ManifestError(f"{r.path}: unknown split {r.split!r}")
        train = {(r.class_id, r.instance) for r in self.records if r.split == "train"}
        test = {(r.class_id, r.instance) for r in self.records if r.split == "test"}
        if train & test:
            raise ManifestError(f"class/instance pairs in both splits: {sorted(train & test)[:4]}")
        if self.protocol == "class":
            shared = {c for c, _ in train} & {c for c, _ in test}
            if shared:
                raise ManifestError(f"classes in both splits under class protocol: {sorted(shared)}")

    def select(self, split: str | None = None, spectrum: str | None = None,
               resolution: str | None = None) -> list[Record]:
        return [r for r in self.records
                if (split is None or r.split == split)
                and (spectrum is None or r.spectrum == spectrum)
                and (resolution is None or r.resolution == resolution)]

    def classes(self, split: str | None = None) -> list[int]:
        return sorted({r.class_id for r in self.select(split)})

    def load(self, rec: Record) -> tuple[np.ndarray, np.ndarray]:
        """Image and validity mask of a record (cached)."""
        if rec.path not in self._cache:
            img = read_image(self.root / rec.path)
            if resolution_of(img.shape) != rec.resolution:
                raise ManifestError(f"{rec.path}: shape {img.shape} does not match {rec.resolution}")
            if rec.mask:
                mask = read_mask(self.root / rec.mask)
                if mask.shape != img.shape:
                    raise ManifestError(f"{rec.mask}: mask shape {mask.shape} != image {img.shape}")
            else:
                mask = np.ones(img.shape, bool)
            self._cache[rec.path] = (img, mask)
        return self._cache[rec.path]

    def pairs(self, split: str, src: tuple[str, str], dst: tuple[str, str]) -> list[tuple[Record, Record]]:
        """Co-registered (source, target) record pairs sharing class and instance."""
        index = {(r.class_id, r.instance): r for r in self.select(split, dst[0], dst[1])}
        out = []
        for r in self.select(split, src[0], src[1]):
            t = index.get((r.class_id, r.instance))
            if t is not None:
                out.append((r, t))
        return out

    def write(self, path) -> None:
        path = Path(path)
        lines = []
        for r in self.records:
            d = asdict(r)
            if d["mask"] is None:
                del d["mask"]
            lines.append(json.dumps(d, sort_keys=True))
        path.write_text("\n".join(lines) + "\n")


def load_manifest(path, protocol: str | None = None) -> DatasetManifest:
    path = Path(path)
    records = []
    allowed = {f for f in Record.__dataclass_fields__}
    meta_protocol = "instance"
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{n}: malformed JSON ({exc.msg})") from exc
        if "protocol" in d and len(d) == 1:
            meta_protocol = d["protocol"]
            continue
        extra = set(d) - allowed
        if extra:
            raise ManifestError(f"{path}:{n}: unknown keys {sorted(extra)}")
        try:
            records.append(Record(**d))
        except TypeError as exc:
            raise ManifestError(f"{path}:{n}: {exc}") from exc
    return DatasetManifest(records, path.parent, protocol or meta_protocol)


def split_of(class_id: int, instance: int, protocol: str, train_instances: int,
             train_classes: int) -> str:
    if protocol == "instance":
        return "train" if instance < train_instances else "test"
    if protocol == "class":
        return "train" if class_id < train_classes else "test"
    raise ValueError(f"unknown split protocol {protocol!r}")


def generate_dataset(n_classes: int, instances_per_class: int, seed: int,
                     spectral_model: SpectralModel | None = None, out_dir=None,
                     train_instances: int | None = None, with_lr: bool = False,
                     lr_sigma: float = 1.0, protocol: str = "instance",
                     train_classes: int | None = None) -> DatasetManifest:
    """Write PNG strips (and masks) under ``out_dir`` and return their manifest.

    By default the first half of each class's instances are training data and
    the rest are test data; ``protocol="class"`` splits by class instead.
    """
    if out_dir is None:
        raise ValueError("out_dir is required")
    if n_classes < 1:
        raise ValueError("zero classes requested")
    out = Path(out_dir)
    k = instances_per_class // 2 if train_instances is None else train_instances
    kc = n_classes // 2 if train_classes is None else train_classes
    records = []
    for s in generate_samples(n_classes, instances_per_class, seed, spectral_model):
        variants = [s] + ([degrade_to_lr(s, lr_sigma)] if with_lr else [])
        for v in variants:
            res = v.resolution
            sub = f"{v.spectrum}_{res}"
            os.makedirs(out / sub, exist_ok=True)
            stem = f"{sub}/c{v.class_id:04d}_i{v.instance:02d}"
            write_image(out / f"{stem}.png", v.image)
            mask_rel = None
            if not v.mask.all():
                mask_rel = f"{stem}_mask.png"
                write_mask(out / mask_rel, v.mask)
            records.append(Record(f"{stem}.png", v.class_id, v.spectrum, v.instance, res,
                                  split_of(v.class_id, v.instance, protocol, k, kc), mask_rel))
    manifest = DatasetManifest(records, out, protocol)
    manifest.write(out / "manifest.jsonl")
    if protocol != "instance":
        with open(out / "manifest.jsonl", "a") as f:
            f.write(json.dumps({"protocol": protocol}) + "\n")
    return manifest


def pearson(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    if mask is not None:
        a, b = a[mask], b[mask]
    a = a - a.mean()
    b = b - b.mean()
    return float((a * b).sum() / np.sqrt((a * a).sum() * (b * b).sum()))


def correlation_gap(samples: Iterable[SpectralSample]) -> tuple[float, float]:
    """Mean VIS/NIR correlation over co-registered genuine pairs and impostor pairs."""
    by_key = {(s.class_id, s.instance, s.spectrum): s for s in samples}
    classes = sorted({k[0] for k in by_key})
    instances = sorted({k[1] for k in by_key})
    gen, imp = [], []
    for c in classes:
        for i in instances:
            v = by_key[(c, i, "VIS")]
            for c2 in classes:
                n = by_key[(c2, i, "NIR")]
                r = pearson(v.image, n.image, v.mask & n.mask)
                (gen if c2 == c else imp).append(r)
    return float(np.mean(gen)), float(np.mean(imp))
