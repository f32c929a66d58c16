import json

import numpy as np
import pytest

from latentstudio import weights
from latentstudio.cli import main
from latentstudio.data import synth_shapes
from latentstudio.images import load_image, save_image


@pytest.fixture(scope="module")
def model_dir(tiny_models, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_models")
    weights.save_params(tiny_models["gen_params"], root / "generator.gvmw")
    weights.save_params(tiny_models["disc_params"], root / "discriminator.gvmw")
    weights.save_params(tiny_models["enc_params"], root / "encoder.gvmw")
    return root


@pytest.fixture(scope="module")
def photo(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_photos")
    img = synth_shapes(1, 64, seed=9, test_fraction=0.0).train[0]
    path = root / "photo.png"
    save_image(img, path)
    return path


def test_train_gan_writes_checkpoints_and_csv(tmp_path):
    out = tmp_path / "run"
    code = main([
        "train", "gan", "--synth-count", "24", "--resolution", "32",
        "--iterations", "2", "--batch-size", "4", "--base-channels", "8",
        "--latent-dim", "8", "--out", str(out), "--seed", "3",
    ])
    assert code == 0
    assert (out / "generator.gvmw").exists()
    assert (out / "discriminator.gvmw").exists()
    assert (out / "gan_loss.csv").read_text().startswith("iteration,d_loss,g_loss")


def test_train_seed_honored_end_to_end(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main([
            "train", "gan", "--synth-count", "16", "--iterations", "1",
            "--batch-size", "4", "--base-channels", "8", "--latent-dim", "8",
            "--out", str(out), "--seed", "7",
        ]) == 0
        outs.append((out / "generator.gvmw").read_bytes())
    assert outs[0] == outs[1]


def test_train_encoder_requires_models(tmp_path):
    code = main([
        "train", "encoder", "--synth-count", "8", "--iterations", "1",
        "--batch-size", "2", "--out", str(tmp_path / "enc"),
        "--model-dir", str(tmp_path / "missing"),
    ])
    assert code == 1


def test_train_missing_dataset_is_usage_error(tmp_path):
    code = main([
        "train", "gan", "--image-folder", str(tmp_path / "nope"),
        "--iterations", "1", "--out", str(tmp_path / "x"),
    ])
    assert code == 1


def test_project_single_image(model_dir, photo, tmp_path, capsys):
    out = tmp_path / "proj"
    code = main([
        "project", "--model-dir", str(model_dir), "--image", str(photo),
        "--method", "hybrid", "--steps", "5", "--out", str(out),
    ])
    assert code == 0
    assert (out / "reconstruction.png").exists()
    report = json.loads((out / "report.json").read_text())
    assert report["method"] == "hybrid" and report["loss"] > 0


def test_project_batch_csv(model_dir, tmp_path):
    folder = tmp_path / "batch"
    folder.mkdir()
    ds = synth_shapes(3, 32, seed=4, test_fraction=0.0)
    for i, img in enumerate(ds.train):
        save_image(img, folder / f"img_{i}.png")
    out = tmp_path / "proj"
    code = main([
        "project", "--model-dir", str(model_dir), "--image", str(folder),
        "--method", "net", "--out", str(out),
    ])
    assert code == 0
    lines = (out / "projection.csv").read_text().strip().splitlines()
    assert lines[0] == "image,loss,psnr_db"
    assert len(lines) == 4


def test_project_missing_image_is_usage_error(model_dir, tmp_path):
    code = main([
        "project", "--model-dir", str(model_dir),
        "--image", str(tmp_path / "ghost.png"), "--out", str(tmp_path / "o"),
    ])
    assert code == 1


def test_edit_scripted_constraints(model_dir, photo, tmp_path):
    script = tmp_path / "brushes.json"
    script.write_text(json.dumps([
        {"kind": "color", "color": [0.9, -0.5, -0.5], "pixels":
            [[y, x] for y in range(12, 16) for x in range(12, 16)]},
    ]))
    out = tmp_path / "edited"
    code = main([
        "edit", "--model-dir", str(model_dir), "--image", str(photo),
        "--constraints", str(script), "--steps", "4", "--edit-steps", "3",
        "--out", str(out),
    ])
    assert code == 0
    frames = sorted(out.glob("edit_*.png"))
    assert len(frames) == 8  # frames+1 outputs


def test_edit_empty_constraints_rejected(model_dir, photo, tmp_path):
    script = tmp_path / "empty.json"
    script.write_text("[]")
    code = main([
        "edit", "--model-dir", str(model_dir), "--image", str(photo),
        "--constraints", str(script), "--out", str(tmp_path / "out"),
    ])
    assert code == 1


def test_transform_shape_only(model_dir, tmp_path):
    ds = synth_shapes(2, 48, seed=6, test_fraction=0.0)
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    save_image(ds.train[0], a)
    save_image(ds.train[1], b)
    out = tmp_path / "morph"
    code = main([
        "transform", "--model-dir", str(model_dir), "--image-a", str(a),
        "--image-b", str(b), "--mode", "shape-only", "--steps", "3",
        "--out", str(out),
    ])
    assert code == 0
    assert len(sorted(out.glob("morph_*.png"))) == 8


def test_transform_same_image_near_identity(model_dir, tmp_path):
    ds = synth_shapes(1, 48, seed=8, test_fraction=0.0)
    a = tmp_path / "same.png"
    save_image(ds.train[0], a)
    out = tmp_path / "morph"
    code = main([
        "transform", "--model-dir", str(model_dir), "--image-a", str(a),
        "--image-b", str(a), "--steps", "3", "--out", str(out),
    ])
    assert code == 0
    first = load_image(out / "morph_000.png")
    last = load_image(out / "morph_007.png")
    assert np.abs(first - last).mean() < 0.05


def test_eval_table(model_dir, tmp_path):
    folder = tmp_path / "test_imgs"
    folder.mkdir()
    ds = synth_shapes(3, 32, seed=10, test_fraction=0.0)
    for i, img in enumerate(ds.train):
        save_image(img, folder / f"t_{i}.png")
    out = tmp_path / "eval"
    code = main([
        "eval", "--model-dir", str(model_dir), "--folder", str(folder),
        "--steps", "3", "--restarts", "2", "--out", str(out),
    ])
    assert code == 0
    lines = (out / "eval.csv").read_text().strip().splitlines()
    assert lines[0] == "method,mean_loss,mean_psnr_db,seconds"
    assert len(lines) == 4
    timing = {row.split(",")[0]: float(row.split(",")[3]) for row in lines[1:]}
    assert timing["net"] < timing["opt"] and timing["net"] < timing["hybrid"]


def test_eval_empty_folder_is_usage_error(model_dir, tmp_path):
    empty = tmp_path / "void"
    empty.mkdir()
    code = main([
        "eval", "--model-dir", str(model_dir), "--folder", str(empty),
        "--out", str(tmp_path / "o"),
    ])
    assert code == 1


def test_missing_subcommand_usage_error(capsys):
    assert main([]) == 1


def test_constraint_script_round_trips_service_schema(tmp_path):
    # the CLI script format IS the service schema: validate canonical form
    from latentstudio.wire import validate_spec

    spec = {"kind": "warp", "rect": [2, 2, 6, 6], "displacement": [4, 4], "weight": 2.0}
    canonical = validate_spec(spec)
    assert validate_spec(canonical) == canonical
    script = tmp_path / "s.json"
    script.write_text(json.dumps([canonical]))
    parsed = json.loads(script.read_text())
    assert [validate_spec(s) for s in parsed] == [canonical]
