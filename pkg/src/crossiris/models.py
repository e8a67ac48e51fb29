"""Generators and discriminators built on the in-house autodiff engine."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import Tensor, concat, nn
from .autodiff import functional as F

LEAK = 0.35


def width(base: int, wm: float) -> int:
    return max(1, int(round(base * wm)))


def _check_wm(wm: float) -> None:
    if not 0 < wm <= 1:
        raise ValueError(f"width_multiplier must lie in (0, 1], got {wm}")


@dataclass
class GeneratorConfig:
    kind: str = "translate"  # translate | translate_sr | unet
    width_multiplier: float = 0.25
    blocks: int = 4
    head_kernel: int = 9
    depth: int = 4
    dropout: float | None = None  # None: 0.5 for unet, 0 for translate kinds
    in_channels: int = 1
    init: str = "normal"  # normal: N(0, 0.02^2); fan_in: N(0, gain/fan_in), for unnormalized stacks

    def __post_init__(self):
        if self.init not in ("normal", "fan_in"):
            raise ValueError(f"unknown init {self.init!r}")

    @property
    def scale(self) -> int:
        return 2 if self.kind == "translate_sr" else 1

    def dropout_p(self) -> float:
        if self.dropout is not None:
            return self.dropout
        return 0.5 if self.kind == "unet" else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return _strict(cls, d)


@dataclass
class DiscriminatorConfig:
    kind: str = "global"  # global | patch
    width_multiplier: float = 0.25
    input_hw: tuple[int, int] = (64, 512)
    in_channels: int = 2
    cond_scale: int = 1  # nearest upsampling applied to the condition image

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_hw"] = list(self.input_hw)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        d = dict(d)
        if "input_hw" in d:
            d["input_hw"] = tuple(d["input_hw"])
        return _strict(cls, d)


def _strict(cls, d: dict):
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(extra)}")
    return cls(**d)


class ResidualBlock(nn.Module):
    def __init__(self, f: int, rng: np.random.Generator):
        self.conv1 = nn.Conv2d(f, f, 3, rng=rng)
        self.bn1 = nn.BatchNorm2d(f, rng=rng)
        self.act = nn.PReLU(f)
        self.conv2 = nn.Conv2d(f, f, 3, rng=rng)
        self.bn2 = nn.BatchNorm2d(f, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        h = self.act(self.bn1(self.conv1(x)))
        return x + self.bn2(self.conv2(h))


class TranslateGenerator(nn.Module):
    """Residual translation network; the ``translate_sr`` kind adds a
    sub-pixel upsampling stage that doubles height and width."""

    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        _check_wm(cfg.width_multiplier)
        if cfg.blocks < 1:
            raise ValueError("need at least one residual block")
        self.cfg = cfg
        f = width(64, cfg.width_multiplier)
        k = cfg.head_kernel
        self.head = nn.Conv2d(cfg.in_channels, f, k, rng=rng)
        self.head_act = nn.PReLU(f)
        self.blocks = nn.ModuleList([ResidualBlock(f, rng) for _ in range(cfg.blocks)])
        self.body = nn.Conv2d(f, f, 3, rng=rng)
        self.body_bn = nn.BatchNorm2d(f, rng=rng)
        if cfg.kind == "translate_sr":
            self.up = nn.Conv2d(f, 4 * f, 3, rng=rng)
            self.up_act = nn.PReLU(f)
        self.drop = nn.Dropout(cfg.dropout_p(), rng)
        self.tail = nn.Conv2d(f, 1, k, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        h = self.head_act(self.head(x))
        r = h
        for b in self.blocks:
            r = b(r)
        r = self.body_bn(self.body(r)) + h
        if self.cfg.kind == "translate_sr":
            r = self.up_act(F.pixel_shuffle(self.up(r), 2))
        return self.tail(self.drop(r))


def fan_in_std(fan_in: int, gain: float = 2.0) -> float:
    return float(np.sqrt(gain / fan_in))


class ConvBlock(nn.Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, fan_in: bool = False):
        s1 = fan_in_std(cin * 9) if fan_in else None
        s2 = fan_in_std(cout * 9) if fan_in else None
        self.conv1 = nn.Conv2d(cin, cout, 3, rng=rng, std=s1)
        self.conv2 = nn.Conv2d(cout, cout, 3, rng=rng, std=s2)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.conv2(F.relu(self.conv1(x))))


class UNetGenerator(nn.Module):
    """Encoder-decoder with skip concatenation; ``embed`` pools the bottleneck."""

    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        _check_wm(cfg.width_multiplier)
        if cfg.depth < 2:
            raise ValueError("unet depth must be at least 2")
        self.cfg = cfg
        chans = [width(64, cfg.width_multiplier) * 2 ** i for i in range(cfg.depth + 1)]
        self.channels = chans
        fi = cfg.init == "fan_in"
        self.enc = nn.ModuleList()
        cin = cfg.in_channels
        for i in range(cfg.depth):
            self.enc.append(ConvBlock(cin, chans[i], rng, fi))
            cin = chans[i]
        self.bottleneck = ConvBlock(chans[-2], chans[-1], rng, fi)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for i in reversed(range(cfg.depth)):
            # a 2x2 stride-2 transposed conv feeds each output from one input pixel
            std = fan_in_std(chans[i + 1], 1.0) if fi else None
            self.up.append(nn.ConvTranspose2d(chans[i + 1], chans[i], 2, 2, rng=rng, std=std))
            self.dec.append(ConvBlock(2 * chans[i], chans[i], rng, fi))
        p = cfg.dropout_p()
        self.drops = nn.ModuleList([nn.Dropout(p, rng) for _ in range(min(2, cfg.depth))])
        self.out = nn.Conv2d(chans[0], 1, 1, rng=rng, std=fan_in_std(chans[0], 1.0) if fi else None)

    @property
    def embedding_length(self) -> int:
        return self.channels[-1]

    def _check(self, x: Tensor) -> None:
        k = 2 ** self.cfg.depth
        if x.shape[2] % k or x.shape[3] % k:
            raise ValueError(f"spatial dims {x.shape[2:]} not divisible by {k}")

    def _encode(self, x: Tensor) -> tuple[list[Tensor], Tensor]:
        self._check(x)
        skips = []
        h = x
        for block in self.enc:
            h = block(h)
            skips.append(h)
            h = F.max_pool2d(h, 2, 2)
        return skips, self.bottleneck(h)

    def forward_with_embedding(self, x: Tensor) -> tuple[Tensor, Tensor]:
        skips, b = self._encode(x)
        h = b
        for i, (up, dec) in enumerate(zip(self.up, self.dec)):
            h = dec(concat([up(h), skips[-1 - i]], axis=1))
            if i < len(self.drops):
                h = self.drops[i](h)
        return self.out(h), F.global_avg_pool(b)

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_with_embedding(x)[0]

    def embed(self, x: Tensor, tile: tuple[int, int] | None = None) -> Tensor:
        """Pooled bottleneck; with ``tile`` the input is cut into non-overlapping
        tiles and their pooled vectors are averaged per sample."""
        if tile is None:
            return F.global_avg_pool(self._encode(x)[1])
        n, c, h, w = x.shape
        th, tw = tile
        if h % th or w % tw:
            raise ValueError(f"input {h}x{w} is not a whole number of {th}x{tw} tiles")
        gh, gw = h // th, w // tw
        tiles = x.reshape(n, c, gh, th, gw, tw).transpose(0, 2, 4, 1, 3, 5)
        z = F.global_avg_pool(self._encode(tiles.reshape(n * gh * gw, c, th, tw))[1])
        return z.reshape(n, gh * gw, -1).mean(axis=1)


def embed(net: nn.Module, x: Tensor, tile: tuple[int, int] | None = None) -> Tensor:
    if not isinstance(net, UNetGenerator):
        raise TypeError("embed() needs a unet generator")
    return net.embed(x, tile)


class GlobalDiscriminator(nn.Module):
    """Eight 3x3 convs with alternating strides, then two dense layers."""

    CHANNELS = (64, 64, 128, 128, 256, 256, 512, 512)

    def __init__(self, cfg: DiscriminatorConfig, rng: np.random.Generator):
        _check_wm(cfg.width_multiplier)
        self.cfg = cfg
        h, w = cfg.input_hw
        if h < 16 or w < 16 or h % 16 or w % 16:
            raise ValueError(f"input {h}x{w} too small or not divisible for the stride chain")
        self.convs = nn.ModuleList()
        self.bns = nn.ModuleList()
        cin = cfg.in_channels
        for i, c in enumerate(self.CHANNELS):
            c = width(c, cfg.width_multiplier)
            self.convs.append(nn.Conv2d(cin, c, 3, stride=1 + i % 2, padding=1, rng=rng))
            if i > 0:
                self.bns.append(nn.BatchNorm2d(c, rng=rng))
            cin = c
        feat = cin * (h // 16) * (w // 16)
        self.fc1 = nn.Linear(feat, width(1024, cfg.width_multiplier), rng=rng)
        self.fc2 = nn.Linear(width(1024, cfg.width_multiplier), 1, rng=rng)

    def forward(self, cond: Tensor, y: Tensor) -> Tensor:
        x = _pair_input(self.cfg, cond, y)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i > 0:
                x = self.bns[i - 1](x)
            x = F.leaky_relu(x, LEAK)
        x = F.leaky_relu(self.fc1(x), LEAK)
        return F.sigmoid(self.fc2(x))


class PatchDiscriminator(nn.Module):
    """Four 4x4 stride-2 convs and a 1x1 conv: one probability per patch."""

    CHANNELS = (64, 128, 256, 512)

    def __init__(self, cfg: DiscriminatorConfig, rng: np.random.Generator):
        _check_wm(cfg.width_multiplier)
        self.cfg = cfg
        h, w = cfg.input_hw
        if h < 16 or w < 16 or h % 16 or w % 16:
            raise ValueError(f"input {h}x{w} too small or not divisible for the stride chain")
        self.convs = nn.ModuleList()
        self.bns = nn.ModuleList()
        cin = cfg.in_channels
        for i, c in enumerate(self.CHANNELS):
            c = width(c, cfg.width_multiplier)
            self.convs.append(nn.Conv2d(cin, c, 4, stride=2, padding=1, rng=rng))
            if i > 0:
                self.bns.append(nn.BatchNorm2d(c, rng=rng))
            cin = c
        self.head = nn.Conv2d(cin, 1, 1, rng=rng)

    def forward(self, cond: Tensor, y: Tensor) -> Tensor:
        x = _pair_input(self.cfg, cond, y)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i > 0:
                x = self.bns[i - 1](x)
            x = F.leaky_relu(x, LEAK)
        return F.sigmoid(self.head(x))


def _pair_input(cfg: DiscriminatorConfig, cond: Tensor | None, y: Tensor) -> Tensor:
    if tuple(y.shape[2:]) != tuple(cfg.input_hw):
        raise ValueError(f"discriminator built for {cfg.input_hw}, got {y.shape[2:]}")
    if cfg.in_channels == 1:
        return y
    c = cond.data if cfg.cond_scale == 1 else F.upsample_nearest(cond.data, cfg.cond_scale)
    return concat([Tensor(c), y], axis=1)


class FeatureNet(nn.Module):
    """Fixed random conv features for the perceptual loss; never trained."""

    CHANNELS = (16, 32, 64)

    def __init__(self, seed: int = 1234):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.convs = nn.ModuleList()
        cin = 1
        for c in self.CHANNELS:
            self.convs.append(nn.Conv2d(cin, c, 3, stride=2, padding=1, rng=rng,
                                        std=float(np.sqrt(2.0 / (cin * 9)))))
            cin = c
        self.requires_grad_(False)

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = F.relu(conv(x))
        return x


def build_generator(cfg: GeneratorConfig, seed: int | np.random.Generator = 0) -> nn.Module:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if cfg.kind in ("translate", "translate_sr"):
        net = TranslateGenerator(cfg, rng)
    elif cfg.kind == "unet":
        net = UNetGenerator(cfg, rng)
    else:
        raise ValueError(f"unknown generator kind {cfg.kind!r}")
    return net.name_parameters("gen.")


def build_translate_generator(cfg: GeneratorConfig, seed=0) -> TranslateGenerator:
    if cfg.kind not in ("translate", "translate_sr"):
        raise ValueError(f"not a translate kind: {cfg.kind!r}")
    return build_generator(cfg, seed)


def build_unet_generator(cfg: GeneratorConfig, seed=0) -> UNetGenerator:
    if cfg.kind != "unet":
        raise ValueError(f"not a unet config: {cfg.kind!r}")
    return build_generator(cfg, seed)


def build_discriminator(cfg: DiscriminatorConfig, seed: int | np.random.Generator = 0) -> nn.Module:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if cfg.kind == "global":
        net = GlobalDiscriminator(cfg, rng)
    elif cfg.kind == "patch":
        net = PatchDiscriminator(cfg, rng)
    else:
        raise ValueError(f"unknown discriminator kind {cfg.kind!r}")
    return net.name_parameters("disc.")
