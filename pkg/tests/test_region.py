import itertools

import numpy as np
import pytest
from matplotlib.path import Path
from hypothesis import given, settings
from hypothesis import strategies as st

from facemotion.errors import GeometryError, ParameterError
from facemotion.region import (
    Camera,
    RenderStyle,
    apply_warp,
    attenuate_outside_mask,
    convex_hull,
    estimate_warp_field,
    expand_landmarks,
    facial_masks,
    polygon_area,
    rasterize_convex,
    render_keypoint_frame,
)
from facemotion.rig import FlameParams, keypoints_full


def brute_force_hull(points):
    """Vertices of the hull by the O(n^3) all-points-on-one-side test."""
    pts = np.unique(np.asarray(points), axis=0)
    verts = set()
    for i, j in itertools.permutations(range(len(pts)), 2):
        a, b = pts[i], pts[j]
        cross = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        others = np.ones(len(pts), bool)
        others[[i, j]] = False
        if np.all(cross[others] > 0):
            # keep only true corners: collinear points on the edge lie strictly between
            verts.update([tuple(a), tuple(b)])
    return verts


def test_expand_identity_and_square():
    pts = np.random.default_rng(0).random((6, 2))
    assert np.allclose(expand_landmarks(pts, 1.0), pts)
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    assert np.allclose(expand_landmarks(sq, 2.0), [[-0.5, -0.5], [1.5, -0.5], [1.5, 1.5], [-0.5, 1.5]])


def test_expand_scales_pairwise_distances():
    pts = np.random.default_rng(1).random((10, 2))
    out = expand_landmarks(pts, 1.7)
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=2)
    assert np.allclose(d1, 1.7 * d0)


def test_expand_errors():
    with pytest.raises(GeometryError):
        expand_landmarks(np.zeros((2, 2)))
    with pytest.raises(GeometryError):
        expand_landmarks(np.ones((4, 2)))
    with pytest.raises(ParameterError):
        expand_landmarks(np.random.default_rng(0).random((4, 2)), 0.5)


def test_hull_small_cases():
    tri = np.array([[0, 0], [2, 0], [0, 1]], float)
    assert {tuple(p) for p in convex_hull(tri)} == {tuple(p) for p in tri}
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5], [0.5, 0]], float)
    assert {tuple(p) for p in convex_hull(sq)} == {(0, 0), (1, 0), (1, 1), (0, 1)}
    assert polygon_area(convex_hull(sq)) == pytest.approx(1.0)
    with pytest.raises(GeometryError):
        convex_hull([[0, 0], [1, 1], [2, 2]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_hull_contains_every_point(seed):
    pts = np.random.default_rng(seed).random((100, 2))
    hull = convex_hull(pts)
    assert polygon_area(hull) > 0
    for a, b in zip(hull, np.roll(hull, -1, axis=0)):
        cross = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        assert np.all(cross >= -1e-12)
    assert {tuple(p) for p in hull} <= {tuple(p) for p in pts}


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000))
def test_hull_matches_brute_force(seed):
    pts = np.random.default_rng(seed).random((25, 2))
    assert {tuple(p) for p in convex_hull(pts)} == brute_force_hull(pts)


def test_mask_full_frame():
    facial, nonfacial = facial_masks([[-5, -5], [50, -5], [50, 50], [-5, 50]], 1.0, 32, 32)
    assert facial.all() and not nonfacial.any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_mask_partition_and_containment(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(8, 56, size=(12, 2))
    facial, nonfacial = facial_masks(pts, 1.2, 64, 64)
    assert not np.any(facial & nonfacial) and np.all(facial | nonfacial)
    grown = expand_landmarks(pts, 1.2)
    hull = convex_hull(grown)
    for a, b in zip(hull, np.roll(hull, -1, axis=0)):
        cross = (b[0] - a[0]) * (grown[:, 1] - a[1]) - (b[1] - a[1]) * (grown[:, 0] - a[0])
        assert np.all(cross >= -1e-9)
    # independent point-in-polygon oracle for the rasterized pixel centres
    ys, xs = np.mgrid[0:64, 0:64]
    centres = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float)
    oracle = Path(hull).contains_points(centres).reshape(64, 64)
    for x, y in grown:
        oracle[int(np.floor(y + 0.5)), int(np.floor(x + 0.5))] = True
        assert facial[int(np.floor(y + 0.5)), int(np.floor(x + 0.5))]
    assert np.array_equal(facial, oracle)


def test_raster_area_matches_triangle():
    tri = np.array([[5.3, 4.1], [40.7, 9.9], [18.2, 35.5]])
    hull = convex_hull(tri)
    count = rasterize_convex(hull, 48, 48).sum()
    perimeter = np.sum(np.linalg.norm(hull - np.roll(hull, -1, axis=0), axis=1))
    assert abs(count - polygon_area(hull)) <= 2 * perimeter


def test_warp_field_cases():
    pts = np.array([[10.0, 12.0], [20.0, 5.0]])
    assert not np.any(estimate_warp_field(pts, pts, 32, 32))
    src, dst = np.array([[13.5, 9.25]]), np.array([[10.0, 12.0]])
    field = estimate_warp_field(src, dst, 32, 32, sigma=3.0)
    assert np.array_equal(field[12, 10], src[0] - dst[0])


def test_warp_field_two_keypoint_blend():
    dst = np.array([[10.0, 10.0], [14.0, 10.0]])
    src = dst + np.array([[1.0, 0.0], [0.0, 2.0]])
    sigma = 2.0
    field = estimate_warp_field(src, dst, 20, 20, sigma=sigma)
    w = np.exp(-4.0 / (2 * sigma ** 2))  # both keypoints are 2 px from (12, 10)
    expected = (w * np.array([1.0, 0.0]) + w * np.array([0.0, 2.0])) / max(2 * w, 1.0)
    assert np.allclose(field[10, 12], expected, atol=1e-15)


def test_attenuation_cases():
    field = np.random.default_rng(0).normal(size=(16, 16, 2))
    assert np.array_equal(attenuate_outside_mask(field, np.ones((16, 16), bool)), field)
    assert not np.any(attenuate_outside_mask(field, np.zeros((16, 16), bool)))
    mask = np.zeros((16, 16), bool)
    mask[:, :8] = True
    out = attenuate_outside_mask(np.ones((16, 16, 2)), mask, feather=4)
    assert np.allclose(out[5, 8:13, 0], [0.75, 0.5, 0.25, 0.0, 0.0])
    assert np.all(out[:, :8] == 1.0)
    with pytest.raises(ParameterError):
        attenuate_outside_mask(field, mask[:4])


def test_apply_warp_cases():
    rng = np.random.default_rng(1)
    img = rng.random((12, 12))
    assert np.array_equal(apply_warp(img, np.zeros((12, 12, 2))), img)
    ramp = np.tile(np.arange(12.0), (12, 1))
    field = np.zeros((12, 12, 2))
    field[..., 0] = -1.0
    out = apply_warp(ramp, field)
    assert np.array_equal(out[:, 1:], ramp[:, :-1])
    checker = (np.indices((12, 12)).sum(axis=0) % 2).astype(float)
    half = np.zeros((12, 12, 2))
    half[..., 0] = 0.5
    assert np.allclose(apply_warp(checker, half)[:, :-1], 0.5)
    color = rng.random((12, 12, 3))
    assert apply_warp(color, field).shape == (12, 12, 3)


def test_render_deterministic_and_translates(rig):
    p = FlameParams(np.zeros(rig.n_shape), np.zeros(rig.n_expr), theta_head=[0.1, 0.2, 0.0])
    cam = Camera.default(64, 64)
    a = render_keypoint_frame(rig, p, cam, 64, 64)
    assert np.array_equal(a, render_keypoint_frame(rig, p, cam, 64, 64))
    shifted = render_keypoint_frame(rig, p, Camera(cam.scale, (cam.offset[0] + 3, cam.offset[1] + 2)),
                                    64, 64, RenderStyle())
    assert np.allclose(shifted[12:-12, 12:-12], a[10:-14, 9:-15], atol=1e-12)


def test_projection_matches_camera(rig):
    p = FlameParams(np.zeros(rig.n_shape), np.zeros(rig.n_expr))
    cam = Camera.default(128, 128)
    uv = cam.project(keypoints_full(rig, p))
    kp = keypoints_full(rig, p)
    assert np.all(np.abs(uv[:, 0] - (64 + cam.scale * kp[:, 0])) <= 0.5)
    assert np.all(np.abs(uv[:, 1] - (cam.offset[1] - cam.scale * kp[:, 1])) <= 0.5)
    with pytest.raises(ParameterError):
        Camera(0.0, (0, 0))
