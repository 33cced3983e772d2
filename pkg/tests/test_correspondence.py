import logging

import numpy as np
import pytest

from anicolor.conditioning import MatchSet
from anicolor.correspondence import (
    MatcherSpec,
    MatchingError,
    ink_map,
    match_edge_maps,
    match_reference,
    oracle_matches,
    registry_tracks,
    track_points,
)
from anicolor.synthgen import GenConfig, Motion, ReferenceImage, SpriteSpec, extract_lineart, generate_clip, render_clip


def test_oracle_identity_on_reference(small_clip):
    ref_outline = extract_lineart(small_clip.reference.pixels, "oracle")
    m = match_reference(small_clip.reference, ref_outline, small_clip.registry, MatcherSpec("oracle", 200), None)
    reg = small_clip.registry
    assert m.n == len({tuple(p) for p in reg.reference[reg.reference_valid].tolist()})
    np.testing.assert_array_equal(m.ref_points, m.frame_points)


def test_oracle_without_registry():
    clip = generate_clip(GenConfig(T=2, H=32, W=32), 0)
    with pytest.raises(MatchingError):
        match_reference(clip.reference, clip.outlines[0], None, MatcherSpec("oracle"))


def test_oracle_labels_in_scan_order(small_clip):
    m = oracle_matches(small_clip.registry, 0)
    keys = [(y, x) for x, y in m.ref_points.tolist()]
    assert keys == sorted(keys)


def test_descriptor_recovers_translation():
    clip = generate_clip(GenConfig(T=2, H=64, W=64, n_sprites=2, background_kind="none"), 11)
    outline = extract_lineart(clip.reference.pixels, "oracle")
    shifted = np.full_like(outline, 255)
    shifted[:, 5:] = outline[:, :-5]
    m = match_reference(clip.reference, shifted, spec=MatcherSpec("descriptor"))
    assert m.n >= 3
    off = m.frame_points - m.ref_points
    good = (np.abs(off[:, 0] - 5) <= 1) & (np.abs(off[:, 1]) <= 1)
    assert good.mean() >= 0.8


def test_descriptor_without_corners_is_empty(caplog):
    ref = ReferenceImage(np.ones((32, 32, 3), np.float32), np.zeros((32, 32), bool), False)
    with caplog.at_level(logging.WARNING):
        m = match_reference(ref, np.full((32, 32), 255, np.uint8), spec=MatcherSpec("descriptor"))
    assert m.n == 0
    assert "no matches" in caplog.text


def test_edge_matching_symmetric():
    clip = generate_clip(GenConfig(T=3, H=48, W=48, n_sprites=2), 4)
    a, b = ink_map(clip.outlines[0]), ink_map(clip.outlines[2])
    spec = MatcherSpec("descriptor")
    ab = {(p, q) for p, q, _ in match_edge_maps(a, b, spec)}
    ba = {(q, p) for p, q, _ in match_edge_maps(b, a, spec)}
    assert ab == ba


def test_static_sprite_constant_tracks():
    clip = generate_clip(GenConfig(T=5, H=32, W=32, motion="static"), 2)
    tr = track_points(clip, oracle_matches(clip.registry, 0), "oracle")
    assert tr.n > 0
    assert (tr.positions == tr.positions[:, :1]).all()


def test_linear_sprite_tracks_follow_path():
    sprite = SpriteSpec("ellipse", 5.0, (0.2, 0.6, 0.3), Motion(0, 6, (8.2, 10.0), (20.7, 14.4)),
                        anchor_points=(("center", (0.0, 0.0)), ("a", (2.0, 1.0))))
    clip = render_clip([sprite], GenConfig(T=7, H=32, W=32, n_sprites=1, reference_offset=0), 0)
    tr = track_points(clip, oracle_matches(clip.registry, 0), "oracle")
    for i, name in enumerate(["center", "a"]):
        k = [tuple(p) for p in clip.registry.frames[0].tolist()].index(tuple(tr.positions[i, 0].astype(int)))
        for t in range(7):
            x, y = sprite.anchor_position(clip.registry.names[k][1], t)
            assert tuple(tr.positions[i, t]) == (np.floor(x + 0.5), np.floor(y + 0.5))


def test_occluded_anchor_becomes_invalid():
    sprite = SpriteSpec("ellipse", 4.0, (0.2, 0.6, 0.3), Motion(0, 4, (16.0, 16.0), (16.0, 16.0)),
                        anchor_points=(("center", (0.0, 0.0)), ("edge", (3.0, 0.0))))
    front = SpriteSpec("ellipse", 3.0, (0.9, 0.9, 0.2), Motion(0, 4, (27.0, 16.0), (19.0, 16.0)), z_order=1,
                       anchor_points=(("center", (0.0, 0.0)),))
    clip = render_clip([sprite, front], GenConfig(T=5, H=32, W=32, n_sprites=2, reference_offset=0), 0)
    k = clip.registry.names.index((0, "edge"))
    valid = clip.registry.frame_valid[:, k]
    assert valid[0] and not valid[-1]
    tr = registry_tracks(clip.registry, MatchSet(clip.registry.reference[[k]], clip.registry.frames[0, [k]]))
    np.testing.assert_array_equal(tr.valid[0], valid)


def test_track_start_must_be_anchor(small_clip):
    m = MatchSet(np.array([[0, 0]]), np.array([[0, 0]]))
    with pytest.raises(MatchingError, match="label 1"):
        track_points(small_clip, m, "oracle")


def test_interpolated_backend(small_clip):
    start = oracle_matches(small_clip.registry, 0)
    tr = track_points(small_clip, start, "interpolated")
    end = oracle_matches(small_clip.registry, small_clip.T - 1)
    lookup = {tuple(r): f for r, f in zip(end.ref_points.tolist(), end.frame_points.tolist())}
    for r, p in zip(tr.ref_points.tolist(), tr.positions[:, -1].tolist()):
        assert tuple(p) == tuple(lookup[tuple(r)])
