import json
import subprocess
import sys

import numpy as np
import pytest

from macoviz.cli import EXIT_IO, EXIT_MODEL, EXIT_OK, EXIT_USAGE, main
from macoviz.imageio import save_png
from macoviz.metrics import template_hf_ratio
from macoviz.spectral import load_template


@pytest.fixture(scope="module")
def template_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("tpl") / "shapes.macomag"
    assert main(["template", "--data", "builtin:shapes", "--size", "32x32", "--count", "60", "--out", str(path)]) == 0
    return path


def _snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.suffix in (".png", ".json", ".csv", ".txt")}


def test_template_command(template_file, capsys, tmp_path):
    template = load_template(template_file)
    assert template.size == (32, 32) and template.source_count == 60
    out = tmp_path / "t.macomag"
    main(["--json", "template", "--data", "builtin:shapes", "--size", "32x32", "--count", "60", "--out", str(out)])
    document = json.loads(capsys.readouterr().out)
    assert document["hf_ratio"] == pytest.approx(template_hf_ratio(template))
    assert out.read_bytes() == template_file.read_bytes()


def test_template_from_directory(tmp_path, rng):
    images = tmp_path / "imgs"
    images.mkdir()
    for i in range(4):
        save_png(images / f"{i}.png", rng.uniform(size=(3, 20, 24)))
    out = tmp_path / "dir.macomag"
    assert main(["template", "--data", str(images), "--size", "16x16", "--out", str(out)]) == 0
    assert load_template(out).source_count == 4


def test_empty_directory_is_io_error(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["template", "--data", str(empty), "--size", "16x16", "--out", str(tmp_path / "x")]) == EXIT_IO
    assert main(["template", "--data", str(tmp_path / "missing"), "--size", "16x16", "--out", str(tmp_path / "x")]) == EXIT_IO


def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["visualize", "--model", "plugin:zero", "--objective", "logit:0", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["template", "--data", "builtin:shapes", "--size", "abc", "--out", "x"]) == EXIT_USAGE
    assert "template" in capsys.readouterr().err


def test_model_errors(tmp_path, template_file):
    base = ["visualize", "--template", str(template_file), "--steps", "1", "--out", str(tmp_path)]
    assert main(base + ["--model", "resnet50", "--objective", "logit:0"]) == EXIT_MODEL
    assert main(base + ["--model", "plugin:zero", "--objective", "logit:"]) == EXIT_MODEL
    assert main(base + ["--model", "ref:0", "--objective", "channel:conv99:1"]) == EXIT_MODEL


def test_zero_plugin_gives_zero_objective(tmp_path, template_file):
    out = tmp_path / "zero"
    code = main(["visualize", "--model", "plugin:zero", "--objective", "logit:3", "--template", str(template_file),
                 "--steps", "4", "--out", str(out)])
    assert code == EXIT_OK
    sidecar = json.loads((out / "visualization.json").read_text())
    assert sidecar["final_objective"] == 0.0
    assert (out / "visualization.png").exists() and (out / "index.html").exists()


@pytest.mark.parametrize("method", ["maco", "fourier", "cbr"])
def test_visualize_is_byte_deterministic(tmp_path, template_file, method):
    out = tmp_path / method
    argv = ["visualize", "--model", "ref:0", "--objective", "logit:2", "--method", method,
            "--template", str(template_file), "--steps", "6", "--seed", "5", "--out", str(out)]
    assert main(argv) == 0
    first = _snapshot(out)
    assert main(argv) == 0
    assert _snapshot(out) == first
    sidecar = json.loads(first["visualization.json"])
    assert sidecar["method"] == method and sidecar["steps"] == 6


def test_invert_and_report(tmp_path, template_file, rng):
    reference = tmp_path / "ref.png"
    save_png(reference, rng.uniform(size=(3, 32, 32)))
    out = tmp_path / "inv"
    assert main(["invert", "--model", "ref:0", "--layer", "conv3", "--reference", str(reference),
                 "--template", str(template_file), "--steps", "5", "--out", str(out)]) == 0
    assert (out / "inversion.png").exists() and (out / "reference.png").exists()
    report = tmp_path / "report"
    assert main(["report", "--images", str(out), "--template", str(template_file), "--out", str(report)]) == 0
    document = json.loads((report / "spectrum.json").read_text())
    assert document["source"] == "npy"
    assert abs(document["hf_ratio_difference"]) < 1e-4
    for name in ("spectrum.png", "radial_profile.png", "spectrum.csv"):
        assert (report / name).stat().st_size > 0
    first = _snapshot(report)
    main(["report", "--images", str(out), "--template", str(template_file), "--out", str(report)])
    assert _snapshot(report) == first


def test_report_of_pngs(tmp_path, rng):
    images = tmp_path / "pngs"
    images.mkdir()
    for i in range(3):
        save_png(images / f"{i}.png", np.full((3, 16, 16), 0.5))
    assert main(["--json", "report", "--images", str(images), "--out", str(tmp_path / "r")]) == 0
    assert json.loads((tmp_path / "r" / "spectrum.json").read_text())["hf_ratio"] == 0.0


def test_concepts_command(tmp_path, template_file):
    from macoviz.models import generate_shapes_dataset

    images = tmp_path / "class"
    images.mkdir()
    data = generate_shapes_dataset(10, 3, 48)
    for i, img in enumerate(data.images):
        save_png(images / f"{i:02d}.png", img)
    out = tmp_path / "concepts"
    argv = ["concepts", "--model", "ref:0", "--layer", "conv5", "--class-images", str(images), "--rank", "2",
            "--iterations", "50", "--top", "3", "--template", str(template_file), "--steps", "3", "--out", str(out)]
    assert main(argv) == 0
    document = json.loads((out / "concepts.json").read_text())
    assert [c["rank"] for c in document["concepts"]] == [0, 1]
    assert document["importance_proxy"] == "mean-coefficient"
    assert len(document["concepts"][0]["top_patches"]) == 3
    first = _snapshot(out)
    assert main(argv) == 0
    assert _snapshot(out) == first


def test_evaluate_and_ablate(tmp_path):
    report = tmp_path / "eval" / "report.json"
    argv = ["evaluate", "--seeds", "0", "--per-class", "1", "--steps", "2", "--emit", "csv", "--out", str(report)]
    assert main(argv) == 0
    document = json.loads(report.read_text())
    assert set(document["methods"]) == {"maco", "fourier", "cbr"}
    for scores in document["methods"].values():
        assert {"plausibility", "fid", "transferability"} <= set(scores)
        assert len(scores["transferability"]) == 3
    for suffix in (".txt", ".csv", ".png"):
        assert report.with_suffix(suffix).exists()
    first = _snapshot(report.parent)
    assert main(argv) == 0
    assert _snapshot(report.parent) == first

    ablation = tmp_path / "abl" / "ablation.json"
    assert main(["ablate", "--per-class", "1", "--steps", "2", "--out", str(ablation)]) == 0
    rows = json.loads(ablation.read_text())["rows"]
    assert [r["label"] for r in rows] == ["full", "- transparency", "- crop", "- noise", "fourier"]
    assert main(["ablate", "--toggles", "full,-bogus", "--out", str(ablation)]) == EXIT_USAGE


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "macoviz.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "visualize" in proc.stdout
