"""Adam, adversarial training loops for the translation and coupled models."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter, Tensor, nn
from .checkpoint import Checkpoint
from .config import TRANSLATION_STAGES, ScenarioConfig
from .dataset import SHAPES, DatasetManifest
from .losses import (adversarial_g_loss, d_loss_and_probs, coupling_loss, l2_reconstruction,
                     perceptual, total_cgan, total_cpgan)
from .models import (DiscriminatorConfig, FeatureNet, GeneratorConfig, build_discriminator,
                     build_generator)

# networks see images as (x - 0.5) * PIXEL_GAIN
PIXEL_GAIN = 4.0


def to_net(img: np.ndarray) -> np.ndarray:
    return ((img - 0.5) * PIXEL_GAIN).astype(np.float32)


def from_net(x: np.ndarray) -> np.ndarray:
    return np.clip(x / PIXEL_GAIN + 0.5, 0.0, 1.0).astype(np.float32)


# --- optimizer ------------------------------------------------------------------

@dataclass
class AdamState:
    params: list[Parameter]
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]


def adam_step(params: list[Parameter], state: AdamState) -> None:
    """Bias-corrected Adam update; a missing gradient counts as zero.
    Gradients are cleared afterwards."""
    if len(params) != len(state.m):
        raise ValueError("parameter list does not match optimizer state")
    for p in params:
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise FloatingPointError(f"non-finite gradient in parameter {p.name or '<unnamed>'}")
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)
        p.grad = None


def make_adam(net: nn.Module, cfg: ScenarioConfig) -> AdamState:
    o = cfg.optimizer
    return AdamState(net.parameters(), o.lr, o.beta1, o.beta2, o.eps)


# --- data -------------------------------------------------------------------------

class TrainingError(RuntimeError):
    pass


def _stack(manifest: DatasetManifest, recs) -> np.ndarray:
    return np.stack([to_net(manifest.load(r)[0]) for r in recs])[:, None]


class Cropper:
    """Co-registered random crops, circular along the angular axis.

    Crop sizes and offsets are given in HR pixels; LR arrays use half of them.
    """

    def __init__(self, crop: tuple[int, int] | None):
        self.crop = crop

    def offsets(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.crop is None:
            return np.zeros((n, 2), int)
        ch, _ = self.crop
        rows = 2 * rng.integers(0, (SHAPES["HR"][0] - ch) // 2 + 1, size=n)
        cols = 2 * rng.integers(0, SHAPES["HR"][1] // 2, size=n)
        return np.stack([rows, cols], axis=1)

    def apply(self, batch: np.ndarray, offsets: np.ndarray) -> np.ndarray:
        if self.crop is None:
            return batch
        scale = SHAPES["HR"][0] // batch.shape[2]
        ch, cw = self.crop[0] // scale, self.crop[1] // scale
        w = batch.shape[3]
        out = np.empty(batch.shape[:2] + (ch, cw), batch.dtype)
        for k, (r, c) in enumerate(offsets // scale):
            cols = (c + np.arange(cw)) % w
            out[k] = batch[k][:, r:r + ch][:, :, cols]
        return out

    def shape(self, res: str) -> tuple[int, int]:
        h, w = SHAPES[res]
        if self.crop is None:
            return h, w
        scale = SHAPES["HR"][0] // h
        return self.crop[0] // scale, self.crop[1] // scale


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]

    def log_csv(self) -> str:
        return history_csv(self.history)


def history_csv(history: list[dict]) -> str:
    if not history:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(history[0]), lineterminator="\n")
    writer.writeheader()
    for row in history:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def _seeds(seed: int, n: int, *key: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence([seed, *key])
    return [np.random.default_rng(s) for s in ss.spawn(n)]


def _assert_no_grad(net: nn.Module, what: str) -> None:
    for name, p in net.named_parameters():
        if p.grad is not None:
            raise TrainingError(f"gradient leaked into {what} parameter {name}")


def _steps(cfg: ScenarioConfig, per_epoch: int) -> int:
    return cfg.steps if cfg.epochs is None else cfg.epochs * per_epoch


def _d_accuracy(p_real: np.ndarray, p_fake: np.ndarray) -> float:
    return float(((p_real > 0.5).mean() + (p_fake < 0.5).mean()) / 2)


# --- translation model ------------------------------------------------------------

def train_cgan(data: DatasetManifest, cfg: ScenarioConfig, stage: int = 0) -> TrainResult:
    """Train one translation generator against a global discriminator.

    ``stage`` picks the stage of a two-stage scenario; it also keys the seeds,
    so stages are independent of each other and of the order they run in.
    """
    if cfg.scenario not in TRANSLATION_STAGES:
        raise TrainingError(f"{cfg.scenario} is not a translation scenario")
    src, dst, kind = TRANSLATION_STAGES[cfg.scenario][stage]
    pairs = data.pairs("train", src, dst)
    if not pairs:
        raise TrainingError(f"no training pairs {src} -> {dst} in the manifest")
    x_all = _stack(data, [p[0] for p in pairs])
    y_all = _stack(data, [p[1] for p in pairs])
    if x_all.shape[2:] != SHAPES[src[1]] or y_all.shape[2:] != SHAPES[dst[1]]:
        raise TrainingError("image shapes do not match the scenario resolutions")

    g_rng, d_rng, data_rng = _seeds(cfg.seed, 3, 1, stage)
    arch = cfg.architecture
    gcfg = GeneratorConfig(kind, arch.width_multiplier, arch.blocks, arch.head_kernel,
                           dropout=arch.translate_dropout)
    crop = Cropper(cfg.crop)
    out_hw = crop.shape(dst[1])
    dcfg = DiscriminatorConfig("global", arch.disc_width_multiplier, out_hw, 2,
                               cond_scale=2 if kind == "translate_sr" else 1)
    G = build_generator(gcfg, g_rng)
    D = build_discriminator(dcfg, d_rng)
    V = FeatureNet(arch.feature_seed)
    opt_g, opt_d = make_adam(G, cfg), make_adam(D, cfg)
    w = cfg.weights

    n = len(pairs)
    bs = min(cfg.batch_size, n)
    if bs < 2:
        raise TrainingError("need at least two training pairs")
    per_epoch = max(1, n // bs)
    total = _steps(cfg, per_epoch)
    history = []
    order = iter(())
    epoch = -1
    for step in range(total):
        idx = next(order, None)
        if idx is None:
            epoch += 1
            perm = data_rng.permutation(n)
            order = iter([perm[k * bs:(k + 1) * bs] for k in range(per_epoch)])
            idx = next(order)
        off = crop.offsets(data_rng, len(idx))
        x = Tensor(crop.apply(x_all[idx], off))
        y = Tensor(crop.apply(y_all[idx], off))

        fake = G(x)
        # discriminator step on the detached output
        loss_d, p_real, p_fake = d_loss_and_probs(D, y, fake, x)
        loss_d.backward()
        _assert_no_grad(G, "generator")
        adam_step(D.parameters(), opt_d)

        # generator step with the discriminator frozen
        D.requires_grad_(False)
        adv = adversarial_g_loss(D, fake, x)
        l2 = l2_reconstruction(fake, y)
        perc = perceptual(fake, y, V)
        loss_g = total_cgan(l2, adv, perc, w)
        loss_g.backward()
        D.requires_grad_(True)
        _assert_no_grad(D, "discriminator")
        adam_step(G.parameters(), opt_g)

        history.append({"step": step, "epoch": epoch, "loss_d": loss_d.item(),
                        "loss_g": loss_g.item(), "l2": l2.item(), "adv": adv.item(),
                        "perc": perc.item(), "d_acc": _d_accuracy(p_real, p_fake)})
    meta = {"scenario": cfg.scenario, "stage": stage, "source": list(src), "target": list(dst),
            "steps": total}
    ckpt = Checkpoint({"gen": G.eval(), "disc": D.eval(), "feature": V}, cfg.to_dict(), meta)
    return TrainResult(ckpt, history)


def run_scenario_2b(data: DatasetManifest, cfg: ScenarioConfig) -> tuple[TrainResult, TrainResult]:
    """Train the LR translation stage and the 2x super-resolution stage separately."""
    if cfg.scenario != "S2b_separate":
        raise TrainingError("run_scenario_2b needs the S2b_separate scenario")
    return train_cgan(data, cfg, 0), train_cgan(data, cfg, 1)


def train_scenario(data: DatasetManifest, cfg: ScenarioConfig) -> list[TrainResult]:
    if cfg.scenario == "CPGAN":
        return [train_cpgan(data, cfg)]
    if cfg.scenario == "BASELINE":
        return []
    return [train_cgan(data, cfg, k) for k in range(len(TRANSLATION_STAGES[cfg.scenario]))]


# --- coupled model ------------------------------------------------------------------

class PairSampler:
    """Balanced genuine/impostor (VIS, NIR) pairs from the training split.

    An epoch walks every genuine (VIS record, NIR record) combination once;
    impostor partners are drawn uniformly from the other classes.
    """

    def __init__(self, vis_recs, nir_recs, rng: np.random.Generator):
        self.vis = vis_recs
        self.nir = nir_recs
        self.rng = rng
        classes = sorted({r.class_id for r in vis_recs} & {r.class_id for r in nir_recs})
        if len(classes) < 2:
            raise TrainingError("coupled training needs at least two classes")
        self.nir_by_class = {c: [k for k, r in enumerate(nir_recs) if r.class_id == c]
                             for c in classes}
        self.genuine = [(a, b) for a, r in enumerate(vis_recs) if r.class_id in self.nir_by_class
                        for b in self.nir_by_class[r.class_id]]
        self._order: list = []
        self.epoch = -1

    def _impostor_partner(self, vis_index: int) -> int:
        c = self.vis[vis_index].class_id
        others = [k for k, r in enumerate(self.nir) if r.class_id != c]
        return int(others[self.rng.integers(len(others))])

    def batch(self, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n_gen = (size + 1) // 2
        n_imp = size - n_gen
        gen = []
        while len(gen) < n_gen:
            if not self._order:
                self.epoch += 1
                self._order = [self.genuine[k] for k in self.rng.permutation(len(self.genuine))]
            gen.append(self._order.pop())
        imp_vis = self.rng.integers(0, len(self.vis), size=n_imp)
        imp = [(int(a), self._impostor_partner(int(a))) for a in imp_vis]
        pairs = gen + imp
        labels = np.array([0] * n_gen + [1] * n_imp)
        perm = self.rng.permutation(size)
        vis_idx = np.array([pairs[k][0] for k in perm])
        nir_idx = np.array([pairs[k][1] for k in perm])
        return vis_idx, nir_idx, labels[perm]


def train_cpgan(data: DatasetManifest, cfg: ScenarioConfig) -> TrainResult:
    """Coupled U-Net generators with patch discriminators and a contrastive
    loss on their pooled bottleneck embeddings."""
    if cfg.scenario != "CPGAN":
        raise TrainingError("train_cpgan needs the CPGAN scenario")
    vis_recs = data.select("train", "VIS", cfg.probe_resolution)
    nir_recs = data.select("train", "NIR", cfg.gallery_resolution)
    if not vis_recs or not nir_recs:
        raise TrainingError("empty training split for the coupled model")
    xv_all, xn_all = _stack(data, vis_recs), _stack(data, nir_recs)

    gv_rng, gn_rng, dv_rng, dn_rng, data_rng = _seeds(cfg.seed, 5, 2)
    arch = cfg.architecture
    gcfg = GeneratorConfig("unet", arch.width_multiplier, depth=arch.unet_depth,
                           dropout=arch.unet_dropout, init=arch.unet_init)
    crop = Cropper(cfg.crop)
    Gv, Gn = build_generator(gcfg, gv_rng), build_generator(gcfg, gn_rng)
    Dv = build_discriminator(DiscriminatorConfig(
        "patch", arch.disc_width_multiplier, crop.shape(cfg.probe_resolution), 2), dv_rng)
    Dn = build_discriminator(DiscriminatorConfig(
        "patch", arch.disc_width_multiplier, crop.shape(cfg.gallery_resolution), 2), dn_rng)
    V = FeatureNet(arch.feature_seed)
    opt = {k: make_adam(net, cfg) for k, net in (("gv", Gv), ("gn", Gn), ("dv", Dv), ("dn", Dn))}
    sampler = PairSampler(vis_recs, nir_recs, data_rng)
    w = cfg.weights
    per_epoch = max(1, len(sampler.genuine) // ((cfg.batch_size + 1) // 2))
    total = _steps(cfg, per_epoch)
    history = []
    for step in range(total):
        vi, ni, labels = sampler.batch(cfg.batch_size)
        xv = Tensor(crop.apply(xv_all[vi], crop.offsets(data_rng, len(vi))))
        xn = Tensor(crop.apply(xn_all[ni], crop.offsets(data_rng, len(ni))))
        ov, zv = Gv.forward_with_embedding(xv)
        on, zn = Gn.forward_with_embedding(xn)

        loss_dv, pv_real, pv_fake = d_loss_and_probs(Dv, xv, ov, xv)
        loss_dn, pn_real, pn_fake = d_loss_and_probs(Dn, xn, on, xn)
        loss_d = loss_dv + loss_dn
        loss_d.backward()
        _assert_no_grad(Gv, "VIS generator")
        _assert_no_grad(Gn, "NIR generator")
        d_acc = (_d_accuracy(pv_real, pv_fake) + _d_accuracy(pn_real, pn_fake)) / 2
        adam_step(Dv.parameters(), opt["dv"])
        adam_step(Dn.parameters(), opt["dn"])

        Dv.requires_grad_(False)
        Dn.requires_grad_(False)
        gan = adversarial_g_loss(Dv, ov, xv) + adversarial_g_loss(Dn, on, xn)
        cpl = coupling_loss(zv, zn, labels, w.margin)
        perc = perceptual(ov, xv, V) + perceptual(on, xn, V)
        l2 = l2_reconstruction(ov, xv) + l2_reconstruction(on, xn)
        loss_g = total_cpgan(cpl, gan, perc, l2, w)
        loss_g.backward()
        Dv.requires_grad_(True)
        Dn.requires_grad_(True)
        _assert_no_grad(Dv, "VIS discriminator")
        _assert_no_grad(Dn, "NIR discriminator")
        adam_step(Gv.parameters(), opt["gv"])
        adam_step(Gn.parameters(), opt["gn"])

        history.append({"step": step, "epoch": sampler.epoch, "loss_d": loss_d.item(),
                        "loss_g": loss_g.item(), "cpl": cpl.item(), "gan": gan.item(),
                        "perc": perc.item(), "l2": l2.item(), "d_acc": d_acc})
    nets = {"gen_vis": Gv.eval(), "gen_nir": Gn.eval(), "disc_vis": Dv.eval(),
            "disc_nir": Dn.eval(), "feature": V}
    meta = {"scenario": "CPGAN", "probe": ["VIS", cfg.probe_resolution],
            "gallery": ["NIR", cfg.gallery_resolution], "steps": total}
    return TrainResult(Checkpoint(nets, cfg.to_dict(), meta), history)


def embedding_tile(cfg: ScenarioConfig, res: str) -> tuple[int, int] | None:
    """Strips are embedded as the mean over tiles of the training crop size."""
    return None if cfg.crop is None else Cropper(cfg.crop).shape(res)


def embedding_distances(data: DatasetManifest, ckpt: Checkpoint, split: str = "test"
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Genuine and impostor embedding distances over all (VIS, NIR) pairs of a split."""
    from .evaluate import embed_records
    cfg = ScenarioConfig.from_dict(ckpt.config)
    vis = data.select(split, "VIS", cfg.probe_resolution)
    nir = data.select(split, "NIR", cfg.gallery_resolution)
    zv = embed_records(data, vis, ckpt["gen_vis"], embedding_tile(cfg, cfg.probe_resolution))
    zn = embed_records(data, nir, ckpt["gen_nir"], embedding_tile(cfg, cfg.gallery_resolution))
    d = np.sqrt(((zv[:, None, :] - zn[None, :, :]) ** 2).sum(-1))
    same = np.array([[a.class_id == b.class_id for b in nir] for a in vis])
    return d[same], d[~same]


__all__ = ["AdamState", "adam_step", "train_cgan", "train_cpgan", "run_scenario_2b",
           "train_scenario", "PairSampler", "TrainResult", "to_net", "from_net",
           "embedding_distances", "embedding_tile"]
