import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import toy_rig
from facemotion.errors import DomainError, ParameterError
from facemotion.rig import (
    FlameParams,
    RigDefinition,
    flame_forward,
    joint_world_transforms,
    keypoints_canonical,
    keypoints_expression,
    keypoints_full,
    make_synthetic_rig,
)
from facemotion.rotations import axis_angle_to_matrix


def random_params(rig, seed, pose=0.3):
    rng = np.random.default_rng(seed)
    return FlameParams(
        beta=rng.normal(size=rig.n_shape), psi=rng.normal(size=rig.n_expr),
        theta_head=rng.normal(scale=pose, size=3), theta_neck=rng.normal(scale=pose, size=3),
        theta_jaw=rng.normal(scale=pose, size=3), theta_eye_l=rng.normal(scale=pose, size=3),
        theta_eye_r=rng.normal(scale=pose, size=3))


def test_zero_params_give_template(rig):
    assert np.array_equal(flame_forward(rig, FlameParams.zeros(rig)), rig.template_vertices)


def test_unit_expression_adds_first_column(rig):
    psi = np.zeros(rig.n_expr)
    psi[0] = 1.0
    out = flame_forward(rig, FlameParams(np.zeros(rig.n_shape), psi))
    assert np.allclose(out, rig.template_vertices + rig.expr_basis[:, :, 0], atol=1e-15)


def test_jaw_rotation_matches_per_vertex_oracle():
    w = np.array([[0, 1, 0, 0, 0], [0, 0.3, 0.7, 0, 0], [0.5, 0.5, 0, 0, 0]], dtype=float)
    rig = toy_rig(w)
    p = FlameParams(np.zeros(1), np.zeros(1), theta_jaw=[0.2, 0.0, 0.0])
    out = flame_forward(rig, p)
    c, s = np.cos(0.2), np.sin(0.2)
    rx = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    jaw = np.array([0.0, 0.0, 0.1])
    for v, weights, got in zip(rig.template_vertices, w, out):
        rotated = rx @ (v - jaw) + jaw
        expected = weights[2] * rotated + (1 - weights[2]) * v
        assert np.allclose(got, expected, atol=1e-15)


def test_canonical_keypoints(rig):
    assert np.array_equal(keypoints_canonical(rig, np.zeros(rig.n_shape)),
                          rig.template_vertices[rig.keypoint_indices])
    beta = np.zeros(rig.n_shape)
    beta[0] = 1.0
    expected = (rig.template_vertices + rig.shape_basis[:, :, 0])[rig.keypoint_indices]
    assert np.allclose(keypoints_canonical(rig, beta), expected, atol=1e-15)


def test_canonical_equals_select_after_forward(rig):
    beta = np.random.default_rng(1).normal(size=rig.n_shape)
    full = flame_forward(rig, FlameParams(beta, np.zeros(rig.n_expr)))
    assert np.allclose(keypoints_canonical(rig, beta), full[rig.keypoint_indices], atol=1e-14)


def test_expression_keypoints_degenerate_to_canonical(rig):
    beta = np.random.default_rng(2).normal(size=rig.n_shape)
    assert np.array_equal(keypoints_expression(rig, beta, np.zeros(rig.n_expr)),
                          keypoints_canonical(rig, beta))


def test_jaw_only_moves_jaw_weighted_keypoints(rig):
    beta = np.zeros(rig.n_shape)
    base = keypoints_canonical(rig, beta)
    moved = keypoints_expression(rig, beta, np.zeros(rig.n_expr), theta_jaw=[0.1, 0, 0])
    w_jaw = rig.skin_weights[rig.keypoint_indices, 2]
    shift = np.linalg.norm(moved - base, axis=1)
    assert np.all(shift[w_jaw == 0] == 0)
    assert np.all(shift[w_jaw > 0] > 0)
    # per-keypoint oracle
    c, s = np.cos(0.1), np.sin(0.1)
    rx = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    jaw = rig.joint_positions[2]
    expected = base + w_jaw[:, None] * ((base - jaw) @ rx.T + jaw - base)
    assert np.allclose(moved, expected, atol=1e-14)


def test_eye_rotation_moves_only_eyes(rig):
    beta = np.zeros(rig.n_shape)
    base = keypoints_canonical(rig, beta)
    moved = keypoints_expression(rig, beta, np.zeros(rig.n_expr), theta_eye_l=[0.1, 0.2, 0],
                                 theta_eye_r=[0.1, 0.2, 0])
    eye = rig.skin_weights[rig.keypoint_indices, 3:].sum(axis=1) > 0
    changed = np.any(moved != base, axis=1)
    assert np.array_equal(changed, eye)


def test_full_zero_is_canonical(rig):
    beta = np.random.default_rng(3).normal(size=rig.n_shape)
    p = FlameParams(beta, np.zeros(rig.n_expr))
    assert np.array_equal(keypoints_full(rig, p), keypoints_canonical(rig, beta))


def test_head_quarter_turn_about_joint(rig):
    p = FlameParams(np.zeros(rig.n_shape), np.zeros(rig.n_expr), theta_head=[0, 0, np.pi / 2])
    canon = keypoints_canonical(rig, np.zeros(rig.n_shape))
    head = rig.joint_positions[0]
    rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(keypoints_full(rig, p), (canon - head) @ rz.T + head, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_full_keypoints_select_after_forward(seed):
    rig = make_synthetic_rig(0, n_vertices=120, n_shape=4, n_expr=4, n_keypoints=20)
    p = random_params(rig, seed)
    assert np.allclose(keypoints_full(rig, p), flame_forward(rig, p)[rig.keypoint_indices],
                       atol=1e-14)


def test_lbs_brute_force_per_vertex(small_rig):
    p = random_params(small_rig, 7)
    out = flame_forward(small_rig, p)
    world_r, world_p = joint_world_transforms(small_rig, p)
    shaped = small_rig.template_vertices + small_rig.shape_basis @ p.beta + small_rig.expr_basis @ p.psi
    j = small_rig.joint_positions
    for v in range(small_rig.n_vertices):
        acc = np.zeros(3)
        for k in range(5):
            acc += small_rig.skin_weights[v, k] * (world_r[k] @ (shaped[v] - j[k]) + world_p[k])
        assert np.allclose(out[v], acc, atol=1e-13)


def test_world_transform_chain(small_rig):
    p = random_params(small_rig, 9)
    world_r, _ = joint_world_transforms(small_rig, p)
    head = axis_angle_to_matrix(p.theta_head)
    neck = head @ axis_angle_to_matrix(p.theta_neck)
    assert np.allclose(world_r[1], neck)
    assert np.allclose(world_r[2], neck @ axis_angle_to_matrix(p.theta_jaw))


def test_synthetic_rig_deterministic():
    a, b = make_synthetic_rig(5), make_synthetic_rig(5)
    assert a.to_json_dict() == b.to_json_dict()


def test_synthetic_rig_small_sizes():
    rig = make_synthetic_rig(1, n_vertices=64, n_keypoints=49)
    assert len(np.unique(rig.keypoint_indices)) == 49
    assert np.allclose(rig.skin_weights.sum(axis=1), 1.0, atol=1e-12)


def test_rig_json_round_trip(tmp_path, small_rig):
    path = tmp_path / "rig.json"
    small_rig.save(path)
    back = RigDefinition.load(path)
    assert back.to_json_dict() == small_rig.to_json_dict()


def test_rig_validation_errors(small_rig):
    doc = small_rig.to_json_dict()
    doc["skin_weights"][0][0] += 0.5
    with pytest.raises(ParameterError):
        RigDefinition.from_json_dict(doc)
    doc = small_rig.to_json_dict()
    doc["keypoint_indices"][1] = doc["keypoint_indices"][0]
    with pytest.raises(ParameterError):
        RigDefinition.from_json_dict(doc)
    with pytest.raises(ParameterError):
        RigDefinition.from_json_dict({"schema": "other"})


def test_param_errors(small_rig):
    with pytest.raises(ParameterError):
        keypoints_full(small_rig, FlameParams(np.zeros(3), np.zeros(small_rig.n_expr)))
    with pytest.raises(DomainError):
        keypoints_full(small_rig, FlameParams(np.full(small_rig.n_shape, np.nan),
                                              np.zeros(small_rig.n_expr)))
    with pytest.raises(ParameterError):
        FlameParams(np.zeros(4), np.zeros(4), theta_jaw=[1.0, 2.0])


def test_param_vector_round_trip(small_rig):
    p = random_params(small_rig, 4)
    back = FlameParams.from_vector(p.to_vector(), small_rig.n_shape, small_rig.n_expr)
    assert np.array_equal(back.to_vector(), p.to_vector())
    assert np.array_equal(FlameParams.from_json_dict(p.to_json_dict()).to_vector(), p.to_vector())
