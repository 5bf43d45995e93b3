"""Command-line entry point: ``polarbev gen|train|forward|eval|bench|gradcheck``.

Exit codes: 0 success, 1 failed gradient check, 2 I/O error, 3 invalid
configuration, checkpoint or data, 4 non-finite training loss.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import tensorcore as tc
from .errors import ConfigurationError, PolarBEVError, TrainingError, ValidationError
from .geometry import CameraRig
from .metrics import EvalSetting, RectPrediction, evaluate, write_pgm
from .pipeline import (
    PipelineConfig,
    RunConfig,
    SceneData,
    forward_rect,
    init_params,
    load_checkpoint,
    rasterize_on_grid,
    run_model,
    save_checkpoint,
    train_toy,
)
from .pipeline.check import mini_gradcheck
from .pipeline.remap import remap_polar_to_rect
from .synth import SceneSpec, gen_scene_set, make_ring_rig, rasterize_gt, render_views

log = logging.getLogger("polarbev")

EXIT_OK, EXIT_GRADCHECK, EXIT_IO, EXIT_INVALID, EXIT_NONFINITE = 0, 1, 2, 3, 4
MANIFEST_SCHEMA = "polarbev.manifest/1"
BENCH_SCHEMA = "polarbev.bench/1"
FORWARD_SCHEMA = "polarbev.forward/1"


# ---------------------------------------------------------------- helpers


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def content_hash(paths) -> str:
    """sha256 over the relative names and bytes of every file under ``paths``."""
    h = hashlib.sha256()
    for root in paths:
        root = Path(root)
        files = sorted(p for p in root.rglob("*") if p.is_file()) if root.is_dir() else [root]
        for f in files:
            h.update(str(f.relative_to(root) if root.is_dir() else f.name).encode())
            h.update(f.read_bytes())
    return h.hexdigest()


def write_manifest(out: Path, command: str, seed: int, inputs, config_path=None, timings=None) -> None:
    _write_json(out / "manifest.json", {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "config": str(config_path) if config_path else None,
        "seed": seed,
        "input_hash": content_hash([p for p in inputs if p]),
        "output_dir": str(out),
        "timings": timings or {},
    })


def resolve_rig(spec: str, width: int, height: int) -> CameraRig:
    if spec == "ring6":
        return make_ring_rig(6, width=width, height=height)
    if spec == "ring1":
        return make_ring_rig(1, width=width, height=height)
    if spec.startswith("file:"):
        return CameraRig.load(spec[5:])
    raise ValidationError(f"unknown rig {spec!r}; use ring6, ring1 or file:PATH", "rig")


def load_run_config(spec: str | None) -> tuple[RunConfig, str | None]:
    if spec in (None, "default"):
        return RunConfig(), None
    return RunConfig.load(spec), spec


def load_dataset(data: Path, cfg: PipelineConfig, setting: EvalSetting) -> tuple[CameraRig, list[SceneData]]:
    """Scenes written by ``gen``: rendered views from disk, targets re-rasterized for ``setting``."""
    rig = CameraRig.load(data / "rig.json")
    index = json.loads((data / "scenes.json").read_text())
    grid = cfg.grid()
    out = []
    for name in index["scenes"]:
        sdir = data / name
        scene = SceneSpec.load(sdir / "scene.json")
        images = [tc.load_tensor(sdir / f"view_{k}.tensor") for k in range(len(rig))]
        if images[0].shape[0] != cfg.image_channels:
            raise ValidationError(f"views have {images[0].shape[0]} channels, config expects {cfg.image_channels}",
                                  "config.model.image_channels")
        fg, height = rasterize_on_grid(scene, grid)
        out.append(SceneData(name, images, rasterize_gt(scene, setting), fg, height))
    return rig, out


def set_threads(n: int | None):
    n = n or int(os.environ.get("POLARBEV_THREADS", "0") or 0)
    if n <= 0:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    out = Path(args.out)
    rig = resolve_rig(args.rig, args.width, args.height)
    scenes = gen_scene_set(args.scenes, args.seed, args.difficulty)
    out.mkdir(parents=True, exist_ok=True)
    rig.save(out / "rig.json")
    setting = EvalSetting.preset(args.setting)
    names = []
    for scene in scenes:
        sdir = out / scene.name
        sdir.mkdir(exist_ok=True)
        scene.save(sdir / "scene.json")
        images, _ = render_views(scene, rig)
        for k, img in enumerate(images):
            tc.save_tensor(sdir / f"view_{k}.tensor", img, name=f"{scene.name}/view_{k}")
        gt = rasterize_gt(scene, setting)
        for field in ("seg", "instances", "centerness", "offset", "height"):
            arr = np.asarray(getattr(gt, field))
            tc.save_tensor(sdir / f"gt_{field}.tensor", arr.astype(np.float64), name=f"{scene.name}/{field}")
        write_pgm(sdir / "gt_seg.pgm", gt.seg.astype(np.uint8) * 255)
        names.append(scene.name)
    _write_json(out / "scenes.json", {"schema": "polarbev.scenes/1", "seed": args.seed, "setting": args.setting,
                                      "difficulty": args.difficulty, "scenes": names})
    print(f"wrote {len(names)} scenes with {len(rig)} views each to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    run, cfg_path = load_run_config(args.config)
    if args.steps is not None:
        from dataclasses import replace

        run = replace(run, optimizer=replace(run.optimizer, steps=args.steps))
    setting = EvalSetting.preset(run.setting)
    data_dir, out = Path(args.data), Path(args.out)
    rig, data = load_dataset(data_dir, run.model, setting)
    t0 = time.perf_counter()
    res = train_toy(data, run, rig, setting, log=lambda e: print(json.dumps(e), flush=True))
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "ckpt", res.params, run.model)
    (out / "trace.json").write_text(res.trace_json() + "\n")
    (out / "run_config.json").write_text(run.to_json() + "\n")
    write_manifest(out, "train", run.seed, [data_dir, cfg_path], cfg_path,
                   {"train_seconds": time.perf_counter() - t0})
    final = res.trace[-1]
    print(f"final iou={final['iou']:.4f} pq={final['pq']:.4f} height_error={final['height_error']}")
    return EXIT_OK


def cmd_forward(args) -> int:
    params, cfg = load_checkpoint(args.ckpt)
    data_dir, out = Path(args.data), Path(args.out)
    setting = EvalSetting.preset(args.setting)
    rig, data = load_dataset(data_dir, cfg, setting)
    summary = []
    for d in data:
        timings: dict = {}
        bev, trace = run_model(d.images, rig, cfg, params, timings)
        sdir = out / d.name
        sdir.mkdir(parents=True, exist_ok=True)
        for key, value in bev.numpy().items():
            tc.save_tensor(sdir / f"{key}.tensor", value, name=f"{d.name}/{key}")
        if args.dump_heights:
            for t, hf in enumerate(trace):
                tc.save_tensor(sdir / f"height_z_{t}.tensor", hf.z.data, name=f"{d.name}/z{t}")
        summary.append({"name": d.name, "timings": timings})
    _write_json(out / "forward.json", {"schema": FORWARD_SCHEMA, "scenes": summary})
    write_manifest(out, "forward", 0, [data_dir, Path(args.ckpt)])
    print(f"wrote outputs for {len(data)} scenes to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, cfg = load_checkpoint(args.ckpt)
    setting = EvalSetting.preset(args.setting)
    rig, data = load_dataset(Path(args.data), cfg, setting)
    preds = []
    for d in data:
        (seg, cen, off), _ = forward_rect(params, cfg, rig, d.images, setting)
        preds.append(RectPrediction.from_logits(seg.data, cen.data, off.data))
    report = evaluate(preds, [d.gt for d in data], setting, args.center_thresh, args.nms_radius,
                      [d.name for d in data])
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    agg = report["aggregate"]
    print(f"setting {args.setting}: iou={agg['iou']:.4f} rq={agg['rq']:.4f} sq={agg['sq']:.4f} pq={agg['pq']:.4f}")
    return EXIT_OK


def bench_forward(cfg: PipelineConfig, repeat: int = 3, seed: int = 0, width: int = 256, height: int = 160,
                  setting: int = 2) -> dict:
    """Median per-stage wall time of tape-free f32 forward passes on a rendered ring-rig scene."""
    cfg = cfg.replace(dtype="float32")
    rig = make_ring_rig(6, width=width, height=height)
    scene = gen_scene_set(1, seed)[0]
    images, _ = render_views(scene, rig)
    params = init_params(cfg, seed)
    for p in params.values():
        p.requires_grad = False
    grid, rect = cfg.grid(), EvalSetting.preset(setting)
    runs = []
    for _ in range(repeat + 1):
        timings: dict = {}
        t0 = time.perf_counter()
        bev, _ = run_model(images, rig, cfg, params, timings)
        t1 = time.perf_counter()
        for x in (bev.seg_logits, bev.centerness, bev.offset):
            remap_polar_to_rect(x, grid, rect)
        timings["remap"] = time.perf_counter() - t1
        timings["total"] = time.perf_counter() - t0
        runs.append(timings)
    runs = runs[1:]  # the first run warms caches
    stages = {k: float(np.median([r[k] for r in runs])) for k in runs[0]}
    transform = sum(v for k, v in stages.items() if k.startswith("transform."))
    cells = grid.size
    return {"grid": list(grid.shape), "channels": cfg.C, "n_iters": cfg.n_iters, "repeat": repeat,
            "stages": stages, "transform_total": transform,
            "cells_per_second": cells * cfg.n_iters / transform if transform else None,
            "forward_cells_per_second": cells / stages["total"]}


def cmd_bench(args) -> int:
    run, _ = load_run_config(args.config)
    cfg = run.model
    result = {"schema": BENCH_SCHEMA, "default": bench_forward(cfg, args.repeat)}
    if args.sweep:
        half = bench_forward(cfg.replace(d_ang=cfg.d_ang // 2), args.repeat)
        result["half_d_ang"] = half
        result["transform_ratio"] = result["default"]["transform_total"] / half["transform_total"]
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    report = mini_gradcheck(seed=args.seed)
    print(f"{report.summary()} seconds={time.perf_counter() - t0:.1f}")
    return EXIT_OK if report.passed else EXIT_GRADCHECK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polarbev", description="Polar BEV segmentation toolkit")
    ap.add_argument("--threads", type=int, default=None, help="BLAS threads (fallback: POLARBEV_THREADS)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate scenes, renders and ground truth")
    g.add_argument("--scenes", type=int, default=8)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--rig", default="ring6", help="ring6, ring1 or file:PATH")
    g.add_argument("--difficulty", type=int, default=1, choices=[0, 1, 2])
    g.add_argument("--width", type=int, default=256)
    g.add_argument("--height", type=int, default=160)
    g.add_argument("--setting", type=int, default=2, choices=[1, 2])
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train on a generated dataset")
    t.add_argument("--config", default="default")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=None)
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("forward", help="run a checkpoint and write raw outputs")
    f.add_argument("--ckpt", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--setting", type=int, default=2, choices=[1, 2])
    f.add_argument("--dump-heights", action="store_true")
    f.set_defaults(func=cmd_forward)

    e = sub.add_parser("eval", help="metric report for a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--setting", type=int, default=2, choices=[1, 2])
    e.add_argument("--center-thresh", type=float, default=0.3)
    e.add_argument("--nms-radius", type=float, default=2.0)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="per-stage forward timings in f32 without a tape")
    b.add_argument("--config", default="default")
    b.add_argument("--repeat", type=int, default=3)
    b.add_argument("--sweep", action="store_true", help="also time d_ang / 2 and report the transform ratio")
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("gradcheck", help="finite-difference check of the miniature pipeline")
    c.add_argument("--config-mini", action="store_true", default=True)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with set_threads(args.threads):
            return args.func(args)
    except TrainingError as exc:
        print(f"error: {exc} (step {exc.step})", file=sys.stderr)
        return EXIT_NONFINITE
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigurationError, PolarBEVError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
