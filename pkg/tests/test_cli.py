import numpy as np
import pytest

from maxvqa.cli import main
from maxvqa.dimensions import AXIS_CODES
from maxvqa.evaluator import QualityReport
from maxvqa.video import write_video

N_VIDEOS = 8


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    rng = np.random.default_rng(11)
    videos = root / "videos"
    videos.mkdir()
    for k in range(N_VIDEOS):
        write_video(videos / f"vid{k}.avi", rng.integers(0, 256, (4, 240, 240, 3), dtype=np.uint8))
    lines = ["video_id\taxis_code\tsubject_id\topinion"]
    for k in range(N_VIDEOS):
        for a in AXIS_CODES:
            for s in range(3):
                lines.append(f"vid{k}\t{a}\ts{s}\t{rng.integers(-1, 2)}")
    (root / "ann.tsv").write_text("\n".join(lines) + "\n")
    config = root / "run.yaml"
    config.write_text(
        f"paths:\n  videos: {videos}\n  cache: {root / 'cache'}\n  annotations: {root / 'ann.tsv'}\n"
        f"  checkpoint: {root / 'ck' / 'model.pt'}\n  output: {root / 'out'}\n"
        "fragments:\n  num_frames: 4\n"
        "train:\n  epochs: 2\n  batch_size: 4\n"
        "split:\n  mode: random\n  k: 2\n  test_fraction: 0.375\n"
        "workers: 1\n")
    assert main(["-c", str(config), "extract-features", "--report", str(root / "status.tsv")]) == 0
    return root, config


def run(config, *args):
    return main(["-c", str(config), *args])


def test_extract_report(workspace):
    root, config = workspace
    rows = (root / "status.tsv").read_text().splitlines()
    assert len(rows) == N_VIDEOS and all(r.split("\t")[1] == "ok" for r in rows)
    assert run(config, "extract-features", "--report", str(root / "again.tsv")) == 0
    assert all(r.split("\t")[1] == "skip" for r in (root / "again.tsv").read_text().splitlines())


def test_train_predict_deterministic(workspace):
    root, config = workspace
    assert run(config, "train") == 0
    ck = root / "ck" / "model.pt"
    assert ck.exists() and ck.with_suffix(".json").exists()
    assert ck.with_suffix(".history.tsv").read_text().startswith("epoch\tloss")
    outs = []
    for k in range(2):
        out = root / f"pred{k}.tsv"
        assert run(config, "predict", "--id", "vid0", "--out", str(out)) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    report = QualityReport.from_text(outs[0].decode())[0]
    assert set(report.scores) == set(AXIS_CODES)
    assert all(0 < v < 1 for v in report.scores.values())
    assert run(config, "predict", "--video", str(root / "videos" / "vid1.avi"), "--out", str(root / "p.tsv")) == 0


def test_zero_shot(workspace):
    root, config = workspace
    assert run(config, "zero-shot", "--id", "vid2", "--out", str(root / "zs.tsv")) == 0
    assert len((root / "zs.tsv").read_text().splitlines()) == 17
    assert run(config, "zero-shot", "--out", str(root / "zs_eval.tsv")) == 0
    assert (root / "zs_eval.tsv").read_text().startswith("split\tmetric\tA-1")


def test_quality_map(workspace):
    root, config = workspace
    assert run(config, "quality-map", "--video", str(root / "videos" / "vid3.avi"), "--zero-shot",
               "--axes", "O", "T-1") == 0
    out = root / "out" / "maps_vid3"
    grid = np.load(out / "O.npy")
    assert grid.shape == (4, 7, 7) and ((grid > 0) & (grid < 1)).all()
    assert (out / "overlay.png").exists() and (out / "T-1_t000.png").exists()


def test_evaluate_and_byte_identical_sidecars(workspace):
    root, config = workspace
    assert run(config, "evaluate") == 0
    first = (root / "out" / "benchmark.tsv").read_bytes()
    assert run(config, "evaluate") == 0
    assert (root / "out" / "benchmark.tsv").read_bytes() == first
    rows = first.decode().splitlines()
    assert rows[0].split("\t")[:3] == ["split", "metric", "A-1"]
    assert [r.split("\t")[0] for r in rows[1:]] == ["split0"] * 2 + ["split1"] * 2 + ["mean"] * 2
    assert run(config, "evaluate", "--checkpoint", str(root / "ck" / "model.pt")) == 0


def test_analyze_opinions(workspace):
    root, config = workspace
    pred = root / "all_preds.tsv"
    text = ""
    for k in range(N_VIDEOS):
        out = root / f"pa{k}.tsv"
        assert run(config, "zero-shot", "--id", f"vid{k}", "--out", str(out)) == 0
        body = out.read_text().splitlines()
        text += "\n".join(body if not text else body[1:]) + "\n"
    pred.write_text(text)
    assert run(config, "analyze-opinions", "--predictions", str(pred)) == 0
    out = root / "out"
    first = (out / "opinions.tsv").read_bytes()
    assert len(first.decode().splitlines()) == 17
    for name in ("correlation", "cross_dimension", "responses"):
        assert (out / f"{name}.png").exists() and (out / f"{name}.tsv").exists()
    sidecar = (out / "correlation.tsv").read_bytes()
    assert run(config, "analyze-opinions") == 0
    assert (out / "opinions.tsv").read_bytes() == first
    assert (out / "correlation.tsv").read_bytes() == sidecar


def test_export_prompts(workspace, tmp_path):
    _, config = workspace
    out = tmp_path / "prompts.tsv"
    assert run(config, "export-prompts", "--token-ids", "--out", str(out)) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 33 and lines[1].split("\t")[3] == "A X Sharp photo."


def test_exit_codes(workspace, tmp_path):
    root, config = workspace
    assert main(["no-such-command"]) == 1
    assert run(config, "--set", "axes=[T-99]", "evaluate") == 1
    assert main(["-c", str(tmp_path / "missing.yaml"), "evaluate"]) == 1
    assert run(config, "predict", "--id", "not-cached") == 2
    bad = tmp_path / "bad.mp4"
    bad.write_bytes(b"junk")
    assert run(config, "predict", "--video", str(bad)) == 2
    assert run(config, "--set", "backbones.dual_encoder=openclip-rn50",
               "--set", "backbones.fragment_encoder=nope", "zero-shot", "--id", "vid0") in (2, 3)
