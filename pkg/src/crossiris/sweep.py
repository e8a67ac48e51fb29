"""Loss-weight sweeps over the translation and coupled models."""
from __future__ import annotations

import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields

import numpy as np

from .config import ConfigError, ScenarioConfig
from .dataset import load_manifest
from .evaluate import score_scenario
from .losses import LossWeights
from .metrics import format_percent, summarize
from .train import train_cpgan, train_scenario

# named presets: the adversarial/perceptual grid of the translation model and
# the perceptual/reconstruction grid of the coupled model
CGAN_WEIGHTS = [{"lambda1": l1, "lambda2": l2} for l1, l2 in
                [(1.0, 2e-3), (1e-2, 2e-3), (1e-4, 2e-3), (1e-6, 2e-3), (1e-6, 2e-2), (1e-6, 2e-1)]]
CPGAN_WEIGHTS = [{"lambda3": 1.0, "lambda4": l4, "lambda5": l5} for l4, l5 in
                 [(1.0, 0.3), (0.7, 0.3), (0.5, 0.3), (0.3, 0.3), (0.3, 0.5), (0.3, 0.7), (0.3, 0.1)]]
PRESETS = {"cgan_weights": ("S1_nir2vis", CGAN_WEIGHTS), "cpgan_weights": ("CPGAN", CPGAN_WEIGHTS)}
SWEEP_TARGETS = (0.01, 0.001)

WEIGHT_NAMES = tuple(f.name for f in fields(LossWeights))


def expand(spec: dict) -> list[dict]:
    """Turn a sweep spec into an ordered, de-duplicated list of weight overrides.

    Accepted forms: {"preset": name}, {"settings": [...]}, {"grid": {name: [values]}}
    and {"random": {"n": k, "seed": s, "ranges": {name: [lo, hi, "log"|"linear"]}}}.
    """
    kinds = [k for k in ("preset", "settings", "grid", "random") if k in spec]
    if len(kinds) != 1:
        raise ConfigError("sweep spec needs exactly one of preset, settings, grid, random")
    kind = kinds[0]
    if kind == "preset":
        if spec["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {spec['preset']!r}; choose from {sorted(PRESETS)}")
        settings = PRESETS[spec["preset"]][1]
    elif kind == "settings":
        settings = list(spec["settings"])
    elif kind == "grid":
        grid = spec["grid"]
        names = list(grid)
        settings = [dict(zip(names, vals)) for vals in itertools.product(*(grid[n] for n in names))]
    else:
        r = spec["random"]
        rng = np.random.default_rng(np.random.SeedSequence([int(r.get("seed", 0)), 7]))
        settings = []
        for _ in range(int(r["n"])):
            s = {}
            for name, rg in r["ranges"].items():
                lo, hi = float(rg[0]), float(rg[1])
                scale = rg[2] if len(rg) > 2 else "linear"
                if scale == "log":
                    s[name] = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
                else:
                    s[name] = float(rng.uniform(lo, hi))
            settings.append(s)
    out, seen = [], set()
    for s in settings:
        unknown = set(s) - set(WEIGHT_NAMES)
        if unknown:
            raise ConfigError(f"unknown loss weights {sorted(unknown)}")
        key = tuple(sorted((k, float(v)) for k, v in s.items()))
        if key not in seen:
            seen.add(key)
            out.append({k: float(v) for k, v in s.items()})
    if not out:
        raise ConfigError("empty sweep spec")
    return out


def setting_label(setting: dict) -> str:
    return ", ".join(f"{k} = {v:g}" for k, v in setting.items())


def _run_one(args) -> dict:
    manifest_path, base, setting = args
    data = load_manifest(manifest_path)
    cfg = ScenarioConfig.from_dict(base)
    cfg = cfg.replace(weights=LossWeights(**{**asdict(cfg.weights), **setting}))
    if cfg.scenario == "CPGAN":
        ckpts = [train_cpgan(data, cfg).checkpoint]
    else:
        ckpts = [r.checkpoint for r in train_scenario(data, cfg)]
    m = summarize(score_scenario(cfg, ckpts, data).scoreset())
    return {"settings": setting_label(setting), "weights": setting, **m}


def hyperparameter_sweep(spec: dict, base: ScenarioConfig, manifest_path, jobs: int = 1) -> dict:
    """Train and score one model per setting; rows keep the spec's order.

    A preset also fixes the scenario it was designed for.
    """
    settings = expand(spec)
    if "preset" in spec:
        base = base.replace(scenario=PRESETS[spec["preset"]][0], probe_resolution="HR",
                            gallery_resolution="HR")
    if base.scenario == "BASELINE":
        raise ConfigError("the baseline has no trainable weights to sweep")
    tasks = [(str(manifest_path), base.to_dict(), s) for s in settings]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_one, tasks))
    else:
        rows = [_run_one(t) for t in tasks]
    return {"scenario": base.scenario, "base": base.to_dict(), "rows": rows}


def format_sweep(report: dict, targets=SWEEP_TARGETS) -> str:
    head = ["Hyperparameter Settings"] + [f"GAR@FAR={t:g}" for t in targets] + ["EER(%)"]
    body = [[r["settings"]] + [format_percent(r[f"gar@{t:g}"]) for t in targets]
            + [format_percent(r["eer"])] for r in report["rows"]]
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(head)]
    line = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    return "\n".join([line(head), "-+-".join("-" * w for w in widths)] + [line(b) for b in body]) + "\n"


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
