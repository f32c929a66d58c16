"""Batch command line: train models, project photos, run scripted edits,
morph photos and evaluate reconstruction quality — everything the studio
does, reproducible without a browser.

Exit codes: 0 success, 1 usage/validation error, 2 internal failure.
Errors print one line to stderr: `error: <reason>`.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import editing, flow, weights
from .config import ConfigError, load_config
from .data import DatasetError, ingest_folder, synth_shapes
from .editing import ConstraintError
from .hog import HogConfig
from .images import load_image, psnr, resize_image, save_image
from .models import ArchDescriptor, graph_from_params
from .projection import (
    FeatureExtractor,
    ReconLoss,
    project_hybrid,
    project_net,
    project_opt,
)
from .training import TrainConfig, TrainingDiverged, train_encoder, train_gan
from .wire import materialize_all


class UsageError(ValueError):
    pass


def _dataset_from_args(args):
    if args.image_folder:
        return ingest_folder(args.image_folder, args.resolution, seed=args.seed)
    return synth_shapes(args.synth_count, args.resolution, seed=args.seed)


def _load_models(model_dir: str):
    base = Path(model_dir)
    if not (base / "generator.gvmw").exists():
        raise UsageError(f"no generator.gvmw under {base}")
    gen_params = weights.load_params(base / "generator.gvmw")
    disc_params = weights.load_params(base / "discriminator.gvmw")
    enc_path = base / "encoder.gvmw"
    enc_params = weights.load_params(enc_path) if enc_path.exists() else None
    return gen_params, disc_params, enc_params


def _graphs(model_dir: str, need_encoder: bool = True):
    gen_params, disc_params, enc_params = _load_models(model_dir)
    if need_encoder and enc_params is None:
        raise UsageError(f"no encoder.gvmw under {model_dir}")
    gen = graph_from_params(gen_params)
    enc = graph_from_params(enc_params) if enc_params else None
    recon = ReconLoss(extractor=FeatureExtractor.from_params(disc_params))
    return gen, enc, recon, gen_params.descriptor


def cmd_train(args) -> int:
    if not args.image_folder and args.synth_count <= 0:
        raise UsageError("need --image-folder or a positive --synth-count")
    dataset = _dataset_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(
        iterations=args.iterations,
        batch_size=args.batch_size,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        out_dir=str(out),
    )
    if args.network == "gan":
        desc = ArchDescriptor(args.resolution, args.latent_dim, args.base_channels)
        train_gan(dataset, cfg, desc)
        print(f"wrote {out / 'generator.gvmw'} and {out / 'discriminator.gvmw'}")
    else:
        gen_params, disc_params, _ = _load_models(args.model_dir or str(out))
        train_encoder(gen_params, disc_params, dataset, cfg)
        print(f"wrote {out / 'encoder.gvmw'}")
    return 0


_METHODS = ("opt", "net", "hybrid")


def _project_one(img, method, gen, enc, recon, args):
    if method == "opt":
        return project_opt(img, gen, recon, restarts=args.restarts,
                           steps=args.steps, seed=args.seed)
    if method == "net":
        return project_net(img, enc, gen, recon)
    return project_hybrid(img, enc, gen, recon, steps=args.steps)


def cmd_project(args) -> int:
    gen, enc, recon, desc = _graphs(args.model_dir, need_encoder=args.method != "opt")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    source = Path(args.image)
    if source.is_dir():
        rows = []
        for path in sorted(source.iterdir()):
            if not path.is_file():
                continue
            try:
                img = load_image(path, desc.resolution)
            except Exception:
                continue
            res = _project_one(img, args.method, gen, enc, recon, args)
            save_image(res.recon, out / f"{path.stem}_recon.png")
            rows.append((path.name, res.loss, psnr(res.recon, img)))
        if not rows:
            raise UsageError(f"no decodable images in {source}")
        with open(out / "projection.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("image", "loss", "psnr_db"))
            writer.writerows(rows)
        print(f"projected {len(rows)} images; report at {out / 'projection.csv'}")
        return 0
    if not source.is_file():
        raise UsageError(f"no such image: {source}")
    img = load_image(source, desc.resolution)
    res = _project_one(img, args.method, gen, enc, recon, args)
    save_image(res.recon, out / "reconstruction.png")
    report = {"method": res.method, "loss": res.loss,
              "psnr_db": psnr(res.recon, img), "iterations": res.iterations}
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_edit(args) -> int:
    gen, enc, recon, desc = _graphs(args.model_dir)
    source = Path(args.image)
    if not source.is_file():
        raise UsageError(f"no such image: {source}")
    script = Path(args.constraints)
    if not script.is_file():
        raise UsageError(f"no such constraints file: {script}")
    specs = json.loads(script.read_text())
    if not isinstance(specs, list) or not specs:
        raise UsageError("constraints file must hold a non-empty JSON list")

    photo = load_image(source)
    small = resize_image(photo, desc.resolution, desc.resolution)
    proj = project_hybrid(small, enc, gen, recon, steps=args.steps)
    state = editing.make_edit_state(proj.z)
    from .images import nchw_to_hwc

    frame = nchw_to_hwc(gen.forward(state.z[None], "inference"))
    constraints = materialize_all(specs, frame, desc.resolution, HogConfig())
    state = state.with_constraints(constraints)
    state, _ = editing.step(state, gen, None, k=args.edit_steps)
    seq = flow.transfer_edit(photo, state.z0, state.z, gen, frames=args.frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(seq):
        save_image(img, out / f"edit_{i:03d}.png")
    print(f"wrote {len(seq)} frames to {out}")
    return 0


def cmd_transform(args) -> int:
    gen, enc, recon, desc = _graphs(args.model_dir)
    for p in (args.image_a, args.image_b):
        if not Path(p).is_file():
            raise UsageError(f"no such image: {p}")
    photo_a = load_image(args.image_a)
    photo_b = load_image(args.image_b)
    seq = flow.generative_transform(
        photo_a, photo_b, gen, enc, recon, mode=args.mode,
        frames=args.frames, steps=args.steps,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(seq):
        save_image(img, out / f"morph_{i:03d}.png")
    print(f"wrote {len(seq)} frames to {out}")
    return 0


def cmd_eval(args) -> int:
    gen, enc, recon, desc = _graphs(args.model_dir)
    folder = Path(args.folder)
    if not folder.is_dir():
        raise UsageError(f"no such folder: {folder}")
    images = []
    for path in sorted(folder.iterdir()):
        if not path.is_file():
            continue
        try:
            images.append((path.name, load_image(path, desc.resolution)))
        except Exception:
            continue
        if args.limit and len(images) >= args.limit:
            break
    if not images:
        raise UsageError(f"no decodable images in {folder}")

    per_method = {}
    timing = {}
    for method in _METHODS:
        losses, psnrs = [], []
        t0 = time.perf_counter()
        for _, img in images:
            res = _project_one(img, method, gen, enc, recon, args)
            losses.append(res.loss)
            psnrs.append(psnr(res.recon, img))
        timing[method] = time.perf_counter() - t0
        per_method[method] = (float(np.mean(losses)), float(np.mean(psnrs)))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("method", "mean_loss", "mean_psnr_db", "seconds"))
        for method in _METHODS:
            loss, snr = per_method[method]
            writer.writerow((method, f"{loss:.6f}", f"{snr:.3f}", f"{timing[method]:.2f}"))
    for method in _METHODS:
        loss, snr = per_method[method]
        print(f"{method}: mean loss {loss:.6f}, mean psnr {snr:.2f} dB")
    return 0


def cmd_serve(args) -> int:
    from .service import run_server

    cfg = load_config(args.config)
    if args.port:
        cfg.port = args.port
    run_server(cfg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentstudio",
        description="Latent-manifold image editing: train, project, edit, morph, serve.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common_data(p):
        p.add_argument("--synth-count", type=int, default=2000,
                       help="size of the procedural shape corpus")
        p.add_argument("--image-folder", default=None,
                       help="train on a folder of photos instead")
        p.add_argument("--resolution", type=int, default=32, choices=(32, 64))

    train = sub.add_parser("train", help="train the adversarial pair or the encoder")
    train.add_argument("network", choices=("gan", "encoder"))
    common_data(train)
    train.add_argument("--out", required=True, help="checkpoint directory")
    train.add_argument("--model-dir", default=None,
                       help="where generator/discriminator live (encoder training)")
    train.add_argument("--iterations", type=int, default=3000)
    train.add_argument("--batch-size", type=int, default=64)
    train.add_argument("--base-channels", type=int, default=64)
    train.add_argument("--latent-dim", type=int, default=100)
    train.add_argument("--checkpoint-every", type=int, default=0)
    train.add_argument("--seed", type=int, default=0)
    train.set_defaults(func=cmd_train)

    project = sub.add_parser("project", help="reconstruct a photo on the manifold")
    project.add_argument("--model-dir", required=True)
    project.add_argument("--image", required=True, help="an image file or a folder")
    project.add_argument("--method", choices=_METHODS, default="hybrid")
    project.add_argument("--steps", type=int, default=100)
    project.add_argument("--restarts", type=int, default=10)
    project.add_argument("--seed", type=int, default=0)
    project.add_argument("--out", required=True)
    project.set_defaults(func=cmd_project)

    edit = sub.add_parser("edit", help="apply a scripted brush edit to a photo")
    edit.add_argument("--model-dir", required=True)
    edit.add_argument("--image", required=True)
    edit.add_argument("--constraints", required=True, help="JSON list of brush specs")
    edit.add_argument("--steps", type=int, default=60, help="projection steps")
    edit.add_argument("--edit-steps", type=int, default=20, help="latent update steps")
    edit.add_argument("--frames", type=int, default=7)
    edit.add_argument("--seed", type=int, default=0)
    edit.add_argument("--out", required=True)
    edit.set_defaults(func=cmd_edit)

    transform = sub.add_parser("transform", help="morph one photo toward another")
    transform.add_argument("--model-dir", required=True)
    transform.add_argument("--image-a", required=True)
    transform.add_argument("--image-b", required=True)
    transform.add_argument("--mode", choices=("shape+color", "shape-only"),
                           default="shape+color")
    transform.add_argument("--frames", type=int, default=7)
    transform.add_argument("--steps", type=int, default=60)
    transform.add_argument("--seed", type=int, default=0)
    transform.add_argument("--out", required=True)
    transform.set_defaults(func=cmd_transform)

    ev = sub.add_parser("eval", help="mean reconstruction error per method")
    ev.add_argument("--model-dir", required=True)
    ev.add_argument("--folder", required=True)
    ev.add_argument("--limit", type=int, default=0)
    ev.add_argument("--steps", type=int, default=60)
    ev.add_argument("--restarts", type=int, default=4)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    serve = sub.add_parser("serve", help="run the session server")
    serve.add_argument("--config", default=None, help="key=value config file")
    serve.add_argument("--port", type=int, default=0)
    serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (UsageError, DatasetError, ConstraintError, ConfigError,
            weights.WeightsError, FileNotFoundError, json.JSONDecodeError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, flow.FlowError, Exception) as exc:  # noqa: BLE001
        print(f"error: internal: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
