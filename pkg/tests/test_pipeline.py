import logging

import numpy as np
import pytest

from anicolor.conditioning import interpolate_trajectories, build_heatmaps, default_sigma
from anicolor.correspondence import MatcherSpec, oracle_matches
from anicolor.diffusion import DenoiserConfig
from anicolor.pipeline import (
    ABLATION_FIELDS,
    ConditionedExample,
    ConfigError,
    NEUTRAL_SKETCH,
    SkipExample,
    TrainConfig,
    ablation_config,
    config_diff,
    encode_correspondence,
    infer_dense,
    infer_sparse,
    make_example,
    read_trace,
    train,
)
from anicolor.synthgen import GenConfig, Motion, SpriteSpec, generate_clip, render_clip

TINY_MODEL = DenoiserConfig(
    base_channels=8,
    channel_mults=(1, 2),
    heads=2,
    norm_groups=4,
    time_embed_dim=16,
    temporal_attention_levels=(1,),
    spatial_attention_levels=(1,),
)


def tiny_cfg(**kw):
    base = dict(clip_length=4, total_steps=3, batch_size=2, schedule_steps=50, model=TINY_MODEL)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def clips():
    return [generate_clip(GenConfig(T=4, H=32, W=32), s) for s in range(3)]


@pytest.fixture(scope="module")
def dense_run(clips, tmp_path_factory):
    out = tmp_path_factory.mktemp("dense")
    return train(clips, tiny_cfg(), out_dir=out), out


def test_dense_example_uses_all_anchors():
    clip = generate_clip(GenConfig(T=4, H=32, W=32, n_anchors=(12, 12), n_sprites=1), 0)
    ex = make_example(clip, tiny_cfg(background_augment_p=0.0), np.random.default_rng(0))
    assert ex.tracks.n == oracle_matches(clip.registry, 0).n
    assert ex.tracks.n == len({tuple(p) for p in clip.registry.frames[0][clip.registry.frame_valid[0] & clip.registry.reference_valid].tolist()})


def test_dense_example_binary_sketches(clips):
    ex = make_example(clips[0], tiny_cfg(sketch_mode="leaky"), np.random.default_rng(0))
    assert set(np.unique(ex.sketches)) <= {0, 255}
    assert ex.heatmaps is None and ex.point_maps.shape == (2, 4, 32, 32)


def test_unbinarized_example_keeps_leak(clips):
    ex = make_example(clips[0], tiny_cfg(sketch_mode="leaky", binarize=False), np.random.default_rng(0))
    assert len(np.unique(ex.sketches)) > 2


def test_sparse_example_layout(clips):
    cfg = tiny_cfg(stage="sparse")
    ex = make_example(clips[1], cfg, np.random.default_rng(0))
    non_neutral = [t for t in range(ex.T) if (ex.sketches[t] != NEUTRAL_SKETCH).any()]
    assert non_neutral == [0, ex.T - 1]
    assert ex.tracks.n <= 5
    assert ex.heatmaps.shape == (4, 32, 32)
    np.testing.assert_array_equal(ex.heatmaps, build_heatmaps(ex.tracks, default_sigma(32), 32, 32).astype(np.float32))
    assert ex.point_maps.max() <= 1.0


def test_make_example_deterministic(clips):
    a = make_example(clips[2], tiny_cfg(), np.random.default_rng(5))
    b = make_example(clips[2], tiny_cfg(), np.random.default_rng(5))
    np.testing.assert_array_equal(a.point_maps, b.point_maps)
    np.testing.assert_array_equal(a.reference.pixels, b.reference.pixels)


def test_make_example_skips_without_keypoints():
    # the lone anchor is hidden in the reference behind a second sprite
    back = SpriteSpec("ellipse", 5.0, (0.2, 0.6, 0.3), Motion(-2, 3, (10.0, 16.0), (22.0, 16.0)),
                      anchor_points=(("center", (0.0, 0.0)),))
    front = SpriteSpec("ellipse", 6.0, (0.9, 0.5, 0.1), Motion(-2, 3, (10.0, 16.0), (10.0, 16.0)), z_order=1,
                       anchor_points=(("center", (0.0, 0.0)),))
    clip = render_clip([back, front], GenConfig(T=4, H=32, W=32, reference_offset=2), 0)
    clip.registry.reference_valid[1] = False
    with pytest.raises(SkipExample):
        make_example(clip, tiny_cfg(reference_offset=2), np.random.default_rng(0))


def test_make_example_rejects_reference_offset_mismatch(clips):
    with pytest.raises(ConfigError, match="reference"):
        make_example(clips[0], tiny_cfg(reference_offset=0), np.random.default_rng(0))


def test_example_save_load(tmp_path, clips):
    ex = make_example(clips[0], tiny_cfg(stage="sparse"), np.random.default_rng(0))
    ex.save(tmp_path / "e.npz")
    back = ConditionedExample.load(tmp_path / "e.npz")
    np.testing.assert_array_equal(back.point_maps, ex.point_maps)
    np.testing.assert_array_equal(back.heatmaps, ex.heatmaps)
    np.testing.assert_array_equal(back.tracks.positions, ex.tracks.positions)
    assert back.provenance == ex.provenance


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(stage="medium")
    with pytest.raises(ConfigError):
        TrainConfig(stage="sparse", max_keypoints=6)
    with pytest.raises(ConfigError, match="unknown"):
        TrainConfig.from_dict({"learning_rte": 1e-4})
    with pytest.raises(ConfigError, match="unknown model"):
        TrainConfig.from_dict({"model": {"width": 3}})
    cfg = tiny_cfg()
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_training_writes_artifacts(dense_run):
    result, out = dense_run
    assert (out / "checkpoint" / "manifest.json").exists()
    trace = read_trace(out / "loss_trace.csv")
    assert [r["step"] for r in trace] == [1, 2, 3]
    assert all(np.isfinite(r["loss"]) for r in trace)
    assert result.state.meta["train_config"]["clip_length"] == 4


def test_training_deterministic(clips, dense_run):
    again = train(clips, tiny_cfg())
    assert [r["loss"] for r in again.trace] == [r["loss"] for r in dense_run[0].trace]


def test_sparse_without_init(clips):
    with pytest.raises(ConfigError, match="init"):
        train(clips, tiny_cfg(stage="sparse"))


def test_infer_dense_paths(dense_run, clips):
    state = dense_run[0].state
    clip = clips[0]
    a = infer_dense(state, clip.reference, clip.outlines, MatcherSpec("oracle"), 1, registry=clip.registry, steps=3)
    b = infer_dense(state, clip.reference, clip.outlines, MatcherSpec("oracle"), 1, registry=clip.registry, steps=3)
    assert a.video.shape == (4, 32, 32, 3)
    np.testing.assert_array_equal(a.video, b.video)
    d = infer_dense(state, clip.reference, clip.outlines, MatcherSpec("descriptor"), 0, track_backend="descriptor", steps=2)
    assert d.video.shape == (4, 32, 32, 3)


def test_infer_dense_empty_matches(dense_run, caplog):
    state = dense_run[0].state
    clip = generate_clip(GenConfig(T=4, H=32, W=32), 9)
    blank = np.full((4, 32, 32), 255, np.uint8)
    with caplog.at_level(logging.WARNING):
        res = infer_dense(state, clip.reference, blank, MatcherSpec("descriptor"), 0, steps=2)
    assert res.video.shape == (4, 32, 32, 3)
    assert res.warnings and not res.point_maps.any()


def test_stage_mismatch(dense_run, clips):
    clip = clips[0]
    with pytest.raises(ConfigError):
        infer_sparse(dense_run[0].state, clip.reference, clip.outlines[0], clip.outlines[-1], T=4, registry=clip.registry)


def test_sparse_stage_end_to_end(dense_run, clips):
    res = train(clips, tiny_cfg(stage="sparse", total_steps=2), init=dense_run[0].state)
    assert res.state.stage == "sparse"
    clip = clips[0]
    out = infer_sparse(res.state, clip.reference, clip.outlines[0], clip.outlines[-1], MatcherSpec("oracle"), 0,
                       T=4, registry=clip.registry, steps=2)
    assert out.video.shape == (4, 32, 32, 3)
    # correspondence channels follow the conditioning module exactly
    start = oracle_matches(clip.registry, 0)
    end = oracle_matches(clip.registry, 3)
    full = interpolate_trajectories(start, end, 4)
    for i, r in enumerate(out.tracks.ref_points.tolist()):
        j = full.ref_points.tolist().index(r)
        np.testing.assert_array_equal(out.tracks.positions[i], full.positions[j])
    np.testing.assert_array_equal(out.point_maps, encode_correspondence(out.tracks, 32, 32, 5))


def test_ablation_configs_differ_in_one_group():
    base = tiny_cfg()
    for suite, fields in ABLATION_FIELDS.items():
        diff = config_diff(base, ablation_config(suite, base))
        assert set(diff) == set(fields)
    with pytest.raises(ConfigError):
        ablation_config("no_attention", base)
