"""Command line entry point: ``crossiris <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags, bad or
missing input files, inconsistent configs).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, CheckpointError
from .config import ConfigError, RunConfig, ScenarioConfig, dumps
from .dataset import ManifestError, generate_dataset, load_manifest
from .evaluate import (CheckpointMismatch, EmptySplitError, comparison_label, cross_database_eval,
                       format_table, read_scores_csv, report_row, roc_csv, run_generator,
                       score_scenario, upsample_mask, write_json)
from .imageio import ImageFormatError, read_image, read_mask, write_image, write_mask
from .metrics import FAR_TARGETS, summarize
from .normalize import IrisAnnotation, enhance, rubber_sheet
from .sweep import dumps_report, format_sweep, hyperparameter_sweep
from .train import history_csv, train_scenario


class UsageError(Exception):
    pass


USAGE_ERRORS = (UsageError, ConfigError, ManifestError, CheckpointError, CheckpointMismatch,
                EmptySplitError, ImageFormatError, FileNotFoundError, IsADirectoryError)


def _prepare_out(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    if out.exists() and any(out.iterdir()):
        if not force:
            raise UsageError(f"{out} is not empty (use --force to overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _positive(name):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer") from None
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be at least 1")
        return v
    return parse


# --- commands -------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.instances < 2:
        raise UsageError("--instances must be at least 2")
    out = _prepare_out(args.out, args.force)
    m = generate_dataset(args.classes, args.instances, args.seed, out_dir=out,
                         train_instances=args.train_instances, with_lr=not args.no_lr,
                         lr_sigma=args.lr_sigma, protocol=args.protocol)
    print(f"wrote {len(m.records)} records to {out / 'manifest.jsonl'}")
    return 0


def _load_run_config(args, want: tuple[str, ...]) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    scen = cfg.scenario
    if args.scenario:
        res = {"S2a_joint_sr": "LR", "S2b_separate": "LR"}.get(args.scenario, "HR")
        scen = scen.replace(scenario=args.scenario, gallery_resolution=res)
    if args.seed is not None:
        scen = scen.replace(seed=args.seed)
    if args.steps is not None:
        scen = scen.replace(steps=args.steps)
    if scen.scenario not in want:
        raise UsageError(f"scenario {scen.scenario} cannot be trained by this command")
    ds = cfg.dataset
    if args.manifest:
        ds = dataclasses.replace(ds, manifest=str(Path(args.manifest).resolve()))
    return RunConfig(ds, scen, str(args.out))


def _dataset(run: RunConfig, out: Path):
    ds = run.dataset
    if ds.manifest:
        return load_manifest(ds.manifest, None)
    # no manifest given: generate the configured synthetic set inside the run dir
    return generate_dataset(ds.classes, ds.instances, ds.seed, out_dir=out / "data",
                            train_instances=ds.train_instances, with_lr=True,
                            lr_sigma=ds.lr_sigma, protocol=ds.protocol)


def _train(args, want) -> int:
    run = _load_run_config(args, want)
    out = _prepare_out(args.out, args.force)
    (out / "config.json").write_text(dumps(run.to_dict()))
    data = _dataset(run, out)
    results = train_scenario(data, run.scenario)
    (out / "logs").mkdir()
    (out / "checkpoints").mkdir()
    rows = []
    for k, r in enumerate(results):
        r.checkpoint.save(out / "checkpoints" / f"stage{k}.ckpt")
        rows += [{"stage": k, **h} for h in r.history]
    (out / "logs" / "train.csv").write_text(history_csv(rows))
    if args.evaluate:
        _score_into(out, run.scenario, [r.checkpoint for r in results], data, "test")
    print(f"trained {run.scenario.scenario} ({len(results)} stage(s)) into {out}")
    return 0


def cmd_train_cgan(args) -> int:
    return _train(args, ("S1_nir2vis", "S2a_joint_sr", "S2b_separate", "S3_vis2nir"))


def cmd_train_cpgan(args) -> int:
    return _train(args, ("CPGAN",))


def cmd_translate(args) -> int:
    ckpts = [Checkpoint.load(p) for p in args.ckpt]
    for c in ckpts:
        if "gen" not in c.nets:
            raise UsageError("translate needs translation checkpoints (coupled models embed, not translate)")
    img = read_image(args.inp)
    mask = read_mask(args.mask) if args.mask else np.ones(img.shape, bool)
    for c in ckpts:
        src = tuple(c.meta["source"])
        want = {"HR": (64, 512), "LR": (32, 256)}[src[1]]
        if img.shape != want:
            raise UsageError(f"checkpoint expects a {src[1]} input of shape {want}, got {img.shape}")
        before = img.shape[0]
        img = run_generator(c["gen"], img[None])[0]
        mask = upsample_mask(mask, img.shape[0] // before)
    write_image(args.out, img, bits=args.bits)
    if args.mask_out:
        write_mask(args.mask_out, mask)
    print(f"wrote {img.shape[0]}x{img.shape[1]} image to {args.out}")
    return 0


def _scenario_for_match(args, ckpts) -> ScenarioConfig:
    if args.mode == "baseline":
        if ckpts:
            raise UsageError("baseline matching takes no checkpoint")
        return ScenarioConfig(scenario="BASELINE", probe_resolution=args.resolution,
                              gallery_resolution=args.resolution)
    if not ckpts:
        raise UsageError(f"--mode {args.mode} needs --ckpt")
    cfg = ScenarioConfig.from_dict(ckpts[0].config)
    if (args.mode == "cpgan") != (cfg.scenario == "CPGAN"):
        raise UsageError(f"checkpoint holds a {cfg.scenario} model, not a {args.mode} model")
    return cfg


def _score_into(out: Path, cfg: ScenarioConfig, ckpts, manifest, split, dataset_id="") -> dict:
    table = score_scenario(cfg, ckpts, manifest, split, dataset_id)
    scores = table.scoreset()
    (out / "scores.csv").write_text(table.to_csv())
    (out / "roc.csv").write_text(roc_csv(scores))
    method = {"BASELINE": "IrisCode", "CPGAN": "cpGAN"}.get(cfg.scenario, "cGAN")
    row = report_row(method, comparison_label(cfg), scores, scenario=cfg.scenario)
    report = {"rows": [row], "provenance": table.provenance}
    write_json(out / "report.json", report)
    (out / "report.txt").write_text(format_table([row]))
    return report


def cmd_match(args) -> int:
    ckpts = [Checkpoint.load(p) for p in args.ckpt or []]
    cfg = _scenario_for_match(args, ckpts)
    manifest = load_manifest(args.manifest)
    out = _prepare_out(args.out, args.force)
    report = _score_into(out, cfg, ckpts, manifest, args.split, args.dataset_id)
    sys.stdout.write(format_table(report["rows"]))
    return 0


def cmd_eval(args) -> int:
    try:
        scores = read_scores_csv(args.scores)
        scores.check()
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{args.scores}: {exc}") from None
    summary = summarize(scores)
    print(f"EER {summary['eer']!r}")
    for t in FAR_TARGETS:
        print(f"GAR@FAR={t:g} {summary[f'gar@{t:g}']!r}")
    if args.out:
        out = _prepare_out(args.out, args.force)
        (out / "roc.csv").write_text(roc_csv(scores))
        write_json(out / "report.json", {"rows": [summary]})
    return 0


def cmd_ablate(args) -> int:
    try:
        spec = json.loads(Path(args.grid).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.grid}: invalid JSON ({exc.msg})") from None
    base = RunConfig.load(args.config).scenario if args.config else ScenarioConfig()
    if args.seed is not None:
        base = base.replace(seed=args.seed)
    if args.steps is not None:
        base = base.replace(steps=args.steps)
    load_manifest(args.manifest)  # validate before any training
    out = _prepare_out(args.out, args.force)
    report = hyperparameter_sweep(spec, base, Path(args.manifest).resolve(), jobs=args.jobs)
    (out / "report.json").write_text(dumps_report(report))
    table = format_sweep(report)
    (out / "report.txt").write_text(table)
    sys.stdout.write(table)
    return 0


def cmd_cross_eval(args) -> int:
    ckpts = [Checkpoint.load(p) for p in args.ckpt]
    cfg = ScenarioConfig.from_dict(ckpts[0].config)
    foreign = load_manifest(args.manifest)
    out = _prepare_out(args.out, args.force)
    row = cross_database_eval(ckpts, cfg, foreign, args.train_id, args.test_id, args.split)
    write_json(out / "report.json", {"rows": [row]})
    table = format_table([row], first=("method", "train_dataset", "test_dataset", "comparison"))
    (out / "report.txt").write_text(table)
    sys.stdout.write(table)
    return 0


def cmd_normalize(args) -> int:
    eye = read_image(args.image)
    ann = IrisAnnotation.load(args.annotation)
    iris = rubber_sheet(eye, ann, args.radial, args.angular)
    if args.enhance:
        iris = enhance(iris)
    write_image(args.out, iris.strip, bits=args.bits)
    if args.mask_out:
        write_mask(args.mask_out, iris.mask)
    return 0


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossiris", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    g = sub.add_parser("gen-data", help="generate a seeded synthetic VIS/NIR dataset")
    g.add_argument("--classes", type=_positive("--classes"), required=True, help="number of identities")
    g.add_argument("--instances", type=_positive("--instances"), required=True,
                   help="captures per identity and spectrum (at least 2)")
    g.add_argument("--seed", type=int, default=0, help="dataset seed")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--train-instances", type=int, default=None,
                   help="instances per class in the train split (default: half)")
    g.add_argument("--protocol", choices=("instance", "class"), default="instance",
                   help="split by capture instance or by identity")
    g.add_argument("--lr-sigma", type=float, default=1.0, help="Gaussian sigma before 2x decimation")
    g.add_argument("--no-lr", action="store_true", help="skip the low-resolution derivatives")
    g.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    g.set_defaults(func=cmd_gen_data)

    for name, func, helptext in (("train-cgan", cmd_train_cgan, "train a translation scenario"),
                                 ("train-cpgan", cmd_train_cpgan, "train the coupled model")):
        t = sub.add_parser(name, help=helptext)
        t.add_argument("--config", help="run config JSON (defaults apply when omitted)")
        t.add_argument("--out", required=True, help="run directory")
        t.add_argument("--manifest", help="dataset manifest (overrides the config)")
        t.add_argument("--scenario", choices=("S1_nir2vis", "S2a_joint_sr", "S2b_separate",
                                              "S3_vis2nir", "CPGAN"),
                       help="scenario (overrides the config)")
        t.add_argument("--seed", type=int, help="training seed (overrides the config)")
        t.add_argument("--steps", type=int, help="optimizer steps (overrides the config)")
        t.add_argument("--evaluate", action="store_true",
                       help="also score the test split into scores.csv, roc.csv and report.json")
        t.add_argument("--force", action="store_true", help="overwrite a non-empty run directory")
        t.set_defaults(func=func)

    t = sub.add_parser("translate", help="translate one strip with trained generator(s)")
    t.add_argument("--ckpt", nargs="+", required=True, help="checkpoint(s), applied in order")
    t.add_argument("--in", dest="inp", required=True, help="input PNG/PGM strip")
    t.add_argument("--mask", help="input validity mask")
    t.add_argument("--out", required=True, help="output image path")
    t.add_argument("--mask-out", help="where to write the propagated mask")
    t.add_argument("--bits", type=int, choices=(8, 16), default=8, help="output bit depth")
    t.set_defaults(func=cmd_translate)

    m = sub.add_parser("match", help="score all test pairs of a manifest")
    m.add_argument("--mode", choices=("baseline", "cgan", "cpgan"), required=True,
                   help="raw IrisCode, translated IrisCode, or coupled embeddings")
    m.add_argument("--ckpt", nargs="*", help="checkpoint(s) for cgan/cpgan modes, in stage order")
    m.add_argument("--manifest", required=True, help="dataset manifest")
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--resolution", choices=("HR", "LR"), default="HR", help="baseline resolution")
    m.add_argument("--split", default="test", help="manifest split to score")
    m.add_argument("--dataset-id", default="", help="label recorded in the report")
    m.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    m.set_defaults(func=cmd_match)

    e = sub.add_parser("eval", help="metrics from a scores CSV")
    e.add_argument("--scores", required=True, help="CSV with probe_id, gallery_id, genuine, score")
    e.add_argument("--out", help="directory for roc.csv and report.json")
    e.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="loss-weight sweep")
    a.add_argument("--grid", required=True,
                   help='sweep spec JSON, e.g. {"preset": "cgan_weights"} or {"grid": {"lambda1": [...]}}')
    a.add_argument("--manifest", required=True, help="dataset manifest")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--config", help="run config JSON whose scenario section is the base")
    a.add_argument("--seed", type=int, help="training seed (overrides the config)")
    a.add_argument("--steps", type=int, help="optimizer steps per setting")
    a.add_argument("--jobs", type=_positive("--jobs"), default=1, help="parallel worker processes")
    a.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("cross-eval", help="score trained checkpoint(s) on another dataset")
    c.add_argument("--ckpt", nargs="+", required=True, help="checkpoint(s), in stage order")
    c.add_argument("--manifest", required=True, help="foreign dataset manifest")
    c.add_argument("--train-id", required=True, help="label of the training dataset")
    c.add_argument("--test-id", required=True, help="label of the foreign dataset")
    c.add_argument("--split", default="test", help="split of the foreign manifest to score")
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    c.set_defaults(func=cmd_cross_eval)

    n = sub.add_parser("normalize", help="unwrap an eye image with circle annotations")
    n.add_argument("--image", required=True, help="eye image (PNG/PGM)")
    n.add_argument("--annotation", required=True, help="JSON with pupil, limbus and eyelids")
    n.add_argument("--out", required=True, help="output strip path")
    n.add_argument("--mask-out", help="where to write the validity mask")
    n.add_argument("--radial", type=_positive("--radial"), default=64, help="strip height")
    n.add_argument("--angular", type=_positive("--angular"), default=512, help="strip width")
    n.add_argument("--enhance", action="store_true", help="apply background removal and stretch")
    n.add_argument("--bits", type=int, choices=(8, 16), default=8, help="output bit depth")
    n.set_defaults(func=cmd_normalize)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"crossiris {args.command}: error: {_one_line(exc)}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"crossiris {args.command}: failed: {type(exc).__name__}: {_one_line(exc)}",
              file=sys.stderr)
        return 1


def _one_line(exc: BaseException) -> str:
    text = str(exc) or type(exc).__name__
    return " ".join(text.split())


if __name__ == "__main__":
    sys.exit(main())
