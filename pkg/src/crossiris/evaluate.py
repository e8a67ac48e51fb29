"""Scenario scoring, reports and the cross-database driver."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .autodiff import Tensor, no_grad
from .checkpoint import Checkpoint
from .config import TRANSLATION_STAGES, ScenarioConfig
from .dataset import DatasetManifest, Record
from .iriscode import GaborBank, encode, hamming_matrix
from .metrics import FAR_TARGETS, ScoreSet, format_percent, roc, summarize
from .train import embedding_tile, from_net, to_net

EVAL_CHUNK = 8


class EmptySplitError(ValueError):
    pass


class CheckpointMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Pair:
    probe: Record
    gallery: Record
    genuine: bool


@dataclass
class PairList:
    probes: list[Record]
    gallery: list[Record]
    pairs: list[Pair]

    @property
    def n_genuine(self) -> int:
        return sum(p.genuine for p in self.pairs)

    @property
    def n_impostor(self) -> int:
        return len(self.pairs) - self.n_genuine

    @property
    def flagged(self) -> bool:
        """True when one of the two score populations is empty."""
        return self.n_genuine == 0 or self.n_impostor == 0

    def counts(self) -> dict:
        return {"pairs": len(self.pairs), "genuine": self.n_genuine,
                "impostor": self.n_impostor, "flagged": self.flagged}


def pair_protocol(manifest: DatasetManifest, probe: tuple[str, str] = ("VIS", "HR"),
                  gallery: tuple[str, str] = ("NIR", "HR"), split: str = "test",
                  mode: str = "all_to_all") -> PairList:
    """Every probe against every gallery entry; genuine iff the classes match."""
    if mode != "all_to_all":
        raise ValueError(f"unsupported pairing mode {mode!r}")
    probes = manifest.select(split, *probe)
    gal = manifest.select(split, *gallery)
    if not probes or not gal:
        raise EmptySplitError(f"empty {split} split for probe {probe} / gallery {gallery}")
    pairs = [Pair(p, g, p.class_id == g.class_id) for p in probes for g in gal]
    return PairList(probes, gal, pairs)


def record_id(r: Record) -> str:
    return f"{r.spectrum}_{r.resolution}_c{r.class_id}_i{r.instance}"


# --- per-image pipeline pieces ---------------------------------------------------

def run_generator(net, images: np.ndarray) -> np.ndarray:
    """Apply a translation generator (eval mode) to [0,1] images, shape (N, H, W)."""
    net.eval()
    out = []
    with no_grad():
        for k in range(0, len(images), EVAL_CHUNK):
            x = Tensor(to_net(images[k:k + EVAL_CHUNK])[:, None])
            out.append(from_net(net(x).data[:, 0]))
    return np.concatenate(out)


def upsample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    return mask.repeat(factor, axis=0).repeat(factor, axis=1) if factor > 1 else mask


def translate_records(manifest: DatasetManifest, recs: Sequence[Record], ckpts: Sequence[Checkpoint]
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Push records through the chained generators; masks follow the geometry."""
    imgs = np.stack([manifest.load(r)[0] for r in recs])
    masks = np.stack([manifest.load(r)[1] for r in recs])
    for ck in ckpts:
        before = imgs.shape[1]
        imgs = run_generator(ck["gen"], imgs)
        f = imgs.shape[1] // before
        masks = np.stack([upsample_mask(m, f) for m in masks])
    return imgs, masks


def embed_records(manifest: DatasetManifest, recs: Sequence[Record], net,
                  tile: tuple[int, int] | None = None) -> np.ndarray:
    net.eval()
    out = []
    with no_grad():
        for k in range(0, len(recs), EVAL_CHUNK):
            x = np.stack([to_net(manifest.load(r)[0]) for r in recs[k:k + EVAL_CHUNK]])[:, None]
            out.append(net.embed(Tensor(x), tile).data.astype(np.float64))
    return np.concatenate(out)


def gabor_bank(cfg: ScenarioConfig) -> GaborBank:
    m = cfg.matching
    return GaborBank(tuple(m.wavelengths), m.sigma_on_f, m.bands)


def _codes(images: np.ndarray, masks: np.ndarray, bank: GaborBank):
    return [encode(i, m, bank) for i, m in zip(images, masks)]


def _load(manifest: DatasetManifest, recs: Sequence[Record]) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([manifest.load(r)[0] for r in recs]),
            np.stack([manifest.load(r)[1] for r in recs]))


# --- scoring ----------------------------------------------------------------------

@dataclass
class ScoreTable:
    rows: list[tuple[str, str, int, float]]
    provenance: dict

    def scoreset(self) -> ScoreSet:
        g = [r[3] for r in self.rows if r[2]]
        i = [r[3] for r in self.rows if not r[2]]
        return ScoreSet(g, i, dict(self.provenance))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["probe_id", "gallery_id", "genuine", "score"])
        for p, g, gen, s in self.rows:
            w.writerow([p, g, gen, repr(float(s))])
        return buf.getvalue()


def read_scores_csv(path) -> ScoreSet:
    gen, imp = [], []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        need = {"probe_id", "gallery_id", "genuine", "score"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns {sorted(need)}")
        for row in reader:
            (gen if int(row["genuine"]) else imp).append(float(row["score"]))
    return ScoreSet(gen, imp, {"source": str(path)})


def _probe_gallery(cfg: ScenarioConfig) -> tuple[tuple[str, str], tuple[str, str]]:
    if cfg.scenario in TRANSLATION_STAGES:
        stages = TRANSLATION_STAGES[cfg.scenario]
        if cfg.scenario == "S3_vis2nir":
            return ("VIS", "HR"), ("NIR", "HR")
        return stages[-1][1], stages[0][0]
    return ("VIS", cfg.probe_resolution), ("NIR", cfg.gallery_resolution)


def _check_checkpoints(cfg: ScenarioConfig, ckpts: Sequence[Checkpoint]) -> None:
    if cfg.scenario == "BASELINE":
        return
    if cfg.scenario == "CPGAN":
        if len(ckpts) != 1 or "gen_vis" not in ckpts[0].nets:
            raise CheckpointMismatch("CPGAN scoring needs one coupled checkpoint")
        meta = ckpts[0].meta
        want = (["VIS", cfg.probe_resolution], ["NIR", cfg.gallery_resolution])
        if (meta.get("probe"), meta.get("gallery")) != want:
            raise CheckpointMismatch(f"checkpoint trained for {meta.get('probe')} vs {meta.get('gallery')}, "
                             f"config asks for {want}")
        return
    stages = TRANSLATION_STAGES[cfg.scenario]
    if len(ckpts) != len(stages):
        raise CheckpointMismatch(f"{cfg.scenario} needs {len(stages)} checkpoint(s), got {len(ckpts)}")
    for ck, (src, dst, _) in zip(ckpts, stages):
        if (ck.meta.get("source"), ck.meta.get("target")) != (list(src), list(dst)):
            raise CheckpointMismatch(f"checkpoint maps {ck.meta.get('source')} -> {ck.meta.get('target')}, "
                             f"expected {src} -> {dst}")


def score_scenario(cfg: ScenarioConfig, checkpoints: Sequence[Checkpoint],
                   manifest: DatasetManifest, split: str = "test",
                   dataset_id: str = "") -> ScoreTable:
    """Dissimilarity scores for every all-to-all (probe, gallery) pair of a split.

    Translation scenarios translate the gallery (S3 translates the probe) and
    compare IrisCodes; CPGAN compares bottleneck embeddings; BASELINE compares
    raw cross-spectral IrisCodes.
    """
    _check_checkpoints(cfg, checkpoints)
    probe_key, gallery_key = _probe_gallery(cfg)
    plist = pair_protocol(manifest, probe_key, gallery_key, split)
    bank = gabor_bank(cfg)
    max_shift = cfg.matching.max_shift

    if cfg.scenario == "CPGAN":
        zp = embed_records(manifest, plist.probes, checkpoints[0]["gen_vis"],
                           embedding_tile(cfg, probe_key[1]))
        zg = embed_records(manifest, plist.gallery, checkpoints[0]["gen_nir"],
                           embedding_tile(cfg, gallery_key[1]))
        mat = np.sqrt(((zp[:, None, :] - zg[None, :, :]) ** 2).sum(-1))
    else:
        if cfg.scenario == "S3_vis2nir":
            p_img, p_mask = translate_records(manifest, plist.probes, checkpoints)
            g_img, g_mask = _load(manifest, plist.gallery)
        elif cfg.scenario == "BASELINE":
            p_img, p_mask = _load(manifest, plist.probes)
            g_img, g_mask = _load(manifest, plist.gallery)
        else:
            p_img, p_mask = _load(manifest, plist.probes)
            g_img, g_mask = translate_records(manifest, plist.gallery, checkpoints)
        if p_img.shape[1:] != g_img.shape[1:]:
            raise CheckpointMismatch(f"probe {p_img.shape[1:]} and gallery {g_img.shape[1:]} resolutions differ")
        mat = hamming_matrix(_codes(p_img, p_mask, bank), _codes(g_img, g_mask, bank), max_shift)

    index_p = {id(r): k for k, r in enumerate(plist.probes)}
    index_g = {id(r): k for k, r in enumerate(plist.gallery)}
    rows = [(record_id(p.probe), record_id(p.gallery), int(p.genuine),
             float(mat[index_p[id(p.probe)], index_g[id(p.gallery)]])) for p in plist.pairs]
    prov = {"scenario": cfg.scenario, "probe": list(probe_key), "gallery": list(gallery_key),
            "dataset": dataset_id, "split": split, **plist.counts()}
    return ScoreTable(rows, prov)


# --- reports ------------------------------------------------------------------------

def roc_csv(scores: ScoreSet) -> str:
    r = roc(scores)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "far", "gar"])
    for t, f, g in zip(r.threshold, r.far, r.gar):
        w.writerow([repr(float(t)), repr(float(f)), repr(float(g))])
    return buf.getvalue()


COMPARISON_LABEL = {
    "S1_nir2vis": "HR VIS vs translated HR NIR",
    "S3_vis2nir": "translated HR VIS vs HR NIR",
    "S2a_joint_sr": "HR VIS vs translated LR NIR (joint)",
    "S2b_separate": "HR VIS vs translated LR NIR (two-stage)",
}


def comparison_label(cfg_or_prov) -> str:
    if isinstance(cfg_or_prov, ScenarioConfig):
        scen = cfg_or_prov.scenario
        p, g = _probe_gallery(cfg_or_prov)
    else:
        scen = cfg_or_prov["scenario"]
        p, g = cfg_or_prov["probe"], cfg_or_prov["gallery"]
    return COMPARISON_LABEL.get(scen, f"{p[1]} {p[0]} vs {g[1]} {g[0]}")


def report_row(method: str, comparison: str, scores: ScoreSet, **extra) -> dict:
    row = {"method": method, "comparison": comparison, **extra}
    row.update(summarize(scores))
    return row


def format_table(rows: Sequence[dict], first: Sequence[str] = ("method", "comparison"),
                 targets: Sequence[float] = FAR_TARGETS) -> str:
    """Aligned text table: leading label columns, GAR (%) at each target FAR, EER (%)."""
    head = list(first) + [f"GAR@FAR={t:g}" for t in targets] + ["EER(%)"]
    body = []
    for r in rows:
        body.append([str(r.get(k, "")) for k in first]
                    + [format_percent(r[f"gar@{t:g}"]) for t in targets]
                    + [format_percent(r["eer"])])
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h)
              for i, h in enumerate(head)]
    line = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [line(head), line(["-" * w for w in widths])] + [line(b) for b in body]
    return "\n".join(out) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cross_database_eval(checkpoints: Sequence[Checkpoint], cfg: ScenarioConfig,
                        foreign: DatasetManifest, train_id: str, test_id: str,
                        split: str = "test") -> dict:
    """Score a trained model on another dataset without any fine-tuning."""
    table = score_scenario(cfg, checkpoints, foreign, split, test_id)
    scores = table.scoreset()
    return report_row("cpGAN" if cfg.scenario == "CPGAN" else "cGAN", comparison_label(cfg),
                      scores, train_dataset=train_id, test_dataset=test_id,
                      scenario=cfg.scenario)


def upsample_bicubic(img: np.ndarray, factor: int = 2) -> np.ndarray:
    """Cubic-spline upsampling, columns periodic; the reference for SR comparisons."""
    h, w = img.shape
    rows = (np.arange(h * factor) + 0.5) / factor - 0.5
    cols = (np.arange(w * factor) + 0.5) / factor - 0.5
    rr, cc = np.meshgrid(np.clip(rows, 0, h - 1), cols % w, indexing="ij")
    return ndimage.map_coordinates(img.astype(np.float64), [rr, cc], order=3, mode="grid-wrap")
