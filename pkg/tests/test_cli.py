import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from fontdml.cli import ConfigError, emit_comparison_grid, resolve_config, run
from fontdml.data import write_png
from pipeline import run_all_subcommands, tree_bytes


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    first = run_all_subcommands(tmp_path_factory.mktemp("run1"))
    second = run_all_subcommands(tmp_path_factory.mktemp("run2"))
    return first, second


def test_every_subcommand_is_byte_reproducible(pipeline_runs):
    first, second = pipeline_runs
    for name in first:
        a, b = tree_bytes(first[name]), tree_bytes(second[name])
        assert a.keys() == b.keys(), name
        for rel in a:
            assert a[rel] == b[rel], f"{name}/{rel} differs"


def test_training_outputs(pipeline_runs):
    out = pipeline_runs[0]["pretrain"]
    for fname in ("final.ckpt", "loss_log.csv", "lr_log.csv", "config.ini", "val_history.json"):
        assert (out / fname).exists()
    assert (out / "loss_log.csv").read_text().startswith("step,term,value\n")
    ini = (out / "config.ini").read_text()
    assert "[model]" in ini and "[schedule]" in ini and "[loss]" in ini


def test_generate_outputs(pipeline_runs):
    out = pipeline_runs[0]["generate"]
    refs = json.loads((out / "references.json").read_text())
    (font, chars), = refs.items()
    assert len(chars) == 5
    assert (out / "comparison.png").exists() and (out / "comparison_refs.png").exists()
    assert len(list((out / font).glob("*.png"))) == 12 - 5


def test_eval_outputs(pipeline_runs):
    out = pipeline_runs[0]
    data = json.loads((out["eval_images"] / "image_metrics.json").read_text())
    assert set(data["aggregate"]) == {"l1", "psnr", "ssim", "fid"}
    emb = json.loads((out["eval_embeddings"] / "embedding_metrics.json").read_text())
    assert 0 <= emb["recall@1"] <= 1 and 0 <= emb["nmi_best"] <= 1
    lines = (out["project_tsne"] / "projection_tsne.csv").read_text().splitlines()
    assert lines[0] == "font_id,char_id,x,y" and len(lines) == emb["N"] + 1


def test_eval_images_identical_dirs(pipeline_runs, tmp_path):
    src = pipeline_runs[0]["import"]
    assert run(["eval", "images", "--generated", str(src), "--truth", str(src), "-o", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "image_metrics.json").read_text())
    for vals in data["per_font"].values():
        assert vals["l1"] == 0.0 and vals["psnr"] == 100.0 and vals["ssim"] == pytest.approx(1.0)


def test_unknown_flag_exits_2(capsys):
    assert run(["dataset", "synth", "--bogus"]) == 2
    assert run(["nonsense"]) == 2
    assert "bogus" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path, pipeline_runs):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[model]\nembed_dim = 32\ncolour = red\n")
    with pytest.raises(ConfigError, match="colour"):
        resolve_config(str(cfg), {})
    data = pipeline_runs[0]["import"]
    assert run(["train", "emd", "--data", str(data), "--config", str(cfg), "-o", str(tmp_path / "o")]) == 2
    assert run(["train", "emd", "--data", str(data), "--set", "schedule.warmup=3", "-o", str(tmp_path / "o")]) == 2


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[schedule]\nepochs = 7\nseed = 2\n")
    resolved = resolve_config(str(cfg), {"schedule": {"epochs": "3"}})
    assert resolved["schedule"]["epochs"] == 3 and resolved["schedule"]["seed"] == 2


def test_missing_data_exits_3(tmp_path):
    assert run(["train", "emd", "--data", str(tmp_path / "absent"), "-o", str(tmp_path / "o")]) == 3


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("FONTDML_OUTPUT_ROOT", str(tmp_path))
    assert run(["dataset", "synth", "--fonts", "3", "--chars", "4"]) == 0
    assert (tmp_path / "dataset" / "manifest.json").exists()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "fontdml", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "dataset" in res.stdout


def test_comparison_grid_layout(tmp_path):
    rng = np.random.default_rng(0)
    fonts, chars = ["fa", "fb"], ["x", "y", "z"]
    gt = {f: {c: rng.random((8, 8)) for c in chars} for f in fonts}
    gen = {f: {c: rng.random((8, 8)) for c in chars} for f in fonts}
    sheet = emit_comparison_grid(gen, gt, None, tmp_path / "grid.png", chars)
    assert sheet.shape == (2 * 2 * 8, 3 * 8)
    for fi, f in enumerate(fonts):
        for ci, c in enumerate(chars):
            cols = slice(ci * 8, ci * 8 + 8)
            assert np.array_equal(sheet[fi * 16:fi * 16 + 8, cols], gt[f][c])
            assert np.array_equal(sheet[fi * 16 + 8:fi * 16 + 16, cols], gen[f][c])
    png = np.asarray(Image.open(tmp_path / "grid.png"), dtype=np.float64) / 255
    assert np.abs(png - sheet).max() <= 0.5 / 255 + 1e-9


def test_comparison_grid_refs_and_empty(tmp_path):
    img = np.ones((4, 4))
    emit_comparison_grid({"f": {"a": img}}, {"f": {"a": img}}, {"f": [img, img]}, tmp_path / "g.png")
    assert np.asarray(Image.open(tmp_path / "g_refs.png")).shape == (4, 8)
    with pytest.raises(ValueError):
        emit_comparison_grid({}, {}, None, tmp_path / "e.png")


def test_write_png_round_trip(tmp_path):
    arr = np.linspace(0, 1, 64).reshape(8, 8)
    write_png(arr, tmp_path / "p.png")
    back = np.asarray(Image.open(tmp_path / "p.png"), dtype=np.float64) / 255
    assert np.abs(back - arr).max() <= 0.5 / 255 + 1e-9
