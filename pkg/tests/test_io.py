import numpy as np
import pytest
import torch

from conftest import random_clip
from maxvqa.config import RunConfig, apply_overrides, from_dict, load_config
from maxvqa.errors import CacheMissError, ConfigError, DecodeError, UnknownAxisError
from maxvqa.features import ExtractionSettings, FeatureCache, extract_bundle
from maxvqa.pipeline import extract_features
from maxvqa.video import ingest, write_video

SMALL = ExtractionSettings(grid_count=7, patch_size=32, num_frames=4, seed=0)


def test_cache_round_trip(tmp_path, encoder, fragment_encoder, rng):
    bundle = extract_bundle(random_clip(rng, source_id="abc"), encoder, fragment_encoder, SMALL)
    cache = FeatureCache(tmp_path, SMALL)
    assert "abc" not in cache
    cache.write(bundle)
    back = cache.read("abc")
    assert cache.ids() == ["abc"]
    assert torch.equal(back.local, bundle.local.float())
    assert torch.equal(back.fragment, bundle.fragment.float())
    assert back.local.shape == (4, 7, 7, encoder.visual.embed_dim)
    assert back.meta["frame_indices"] == [0, 1, 3, 4]


def test_cache_miss(tmp_path):
    with pytest.raises(CacheMissError):
        FeatureCache(tmp_path, SMALL).read("nothing")


def test_cache_key_separates_settings(tmp_path):
    a = FeatureCache(tmp_path, SMALL)
    b = FeatureCache(tmp_path, ExtractionSettings(grid_count=7, patch_size=32, num_frames=4, seed=1))
    c = FeatureCache(tmp_path, ExtractionSettings(dual_encoder="openclip-rn50", num_frames=4))
    assert len({a.dir, b.dir, c.dir}) == 3


def test_ingest_video_and_image(tmp_path, rng):
    frames = rng.integers(0, 256, size=(5, 64, 80, 3), dtype=np.uint8)
    write_video(tmp_path / "clip.avi", frames, fps=10)
    clip = ingest(tmp_path / "clip.avi")
    assert clip.frames.shape == (5, 64, 80, 3) and clip.source_id == "clip"
    assert clip.frame_rate == pytest.approx(10)
    assert ingest(tmp_path / "clip.avi", max_frames=2).frames.shape[0] == 2
    from PIL import Image

    Image.fromarray(frames[0]).save(tmp_path / "still.png")
    still = ingest(tmp_path / "still.png")
    assert still.frames.shape == (1, 64, 80, 3)
    assert np.array_equal(still.frames[0], frames[0])


def test_ingest_corrupt(tmp_path):
    bad = tmp_path / "broken.mp4"
    bad.write_bytes(b"not a video at all")
    with pytest.raises(DecodeError):
        ingest(bad)
    (tmp_path / "broken.png").write_bytes(b"\x89PNG garbage")
    with pytest.raises(DecodeError):
        ingest(tmp_path / "broken.png")
    with pytest.raises(DecodeError):
        ingest(tmp_path / "missing.avi")


def test_extraction_idempotent_with_status(tmp_path, encoder, fragment_encoder, rng):
    videos = tmp_path / "videos"
    videos.mkdir()
    for name in ("a", "b"):
        write_video(videos / f"{name}.avi", rng.integers(0, 256, (4, 240, 240, 3), dtype=np.uint8))
    (videos / "c.mp4").write_bytes(b"junk")
    config = from_dict({"paths": {"videos": str(videos), "cache": str(tmp_path / "cache")},
                        "fragments": {"num_frames": 4}, "workers": 2})
    first = {r.video_id: r.status for r in extract_features(config, (encoder, fragment_encoder))}
    assert first == {"a": "ok", "b": "ok", "c": "error"}
    cache = FeatureCache(tmp_path / "cache", config.extraction())
    before = {p.name: p.read_bytes() for p in cache.dir.iterdir()}
    second = {r.video_id: r.status for r in extract_features(config, (encoder, fragment_encoder))}
    assert second == {"a": "skip", "b": "skip", "c": "error"}
    assert {p.name: p.read_bytes() for p in cache.dir.iterdir()} == before


def test_config_overrides_and_validation(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("train:\n  epochs: 3\nsplit:\n  mode: random\n")
    config = load_config(path, ["train.learning_rate=0.01", "fragments.grid_count=4"])
    assert config.train.epochs == 3 and config.train.learning_rate == 0.01
    assert config.fragments.grid_count == 4 and config.split.mode == "random"
    with pytest.raises(ConfigError):
        from_dict({"train": {"epochz": 1}})
    with pytest.raises(ConfigError):
        from_dict({"split": {"mode": "weird"}})
    with pytest.raises(ConfigError):
        apply_overrides({}, ["no-equals-sign"])
    with pytest.raises(UnknownAxisError):
        from_dict({"axes": ["T-1", "T-99"]}).validate()
    with pytest.raises(ConfigError):
        RunConfig().validate(require=("videos",))
