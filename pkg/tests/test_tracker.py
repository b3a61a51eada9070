import numpy as np
import pytest

from facemotion.errors import ParameterError
from facemotion.rig import FlameParams, keypoints_full
from facemotion.tracker import (
    TrackedSequence,
    TrackerConfig,
    _Problem,
    fit_frame,
    fit_sequence,
    parameter_names,
)


def truth(rig, seed, pose=0.15, expr=0.5):
    rng = np.random.default_rng(seed)
    return FlameParams(rng.normal(scale=0.5, size=rig.n_shape), rng.uniform(-expr, expr, rig.n_expr),
                       theta_head=rng.normal(scale=pose, size=3), theta_jaw=[0.05, 0, 0])


def head_pose(p):
    return np.concatenate([p.theta_head, p.theta_neck])


def test_already_optimal_needs_no_iterations(rig):
    p = truth(rig, 0)
    res = fit_frame(rig, keypoints_full(rig, p), p)
    assert res.iterations == 0 and res.residual < 1e-10 and res.converged


def test_recovers_ground_truth(rig):
    p = truth(rig, 1)
    res = fit_frame(rig, keypoints_full(rig, p), FlameParams.zeros(rig), frozen_beta=False)
    assert res.converged and res.residual < 1e-9
    assert np.degrees(np.abs(res.params.theta_head - p.theta_head).max()) < 0.5
    assert np.abs(res.params.psi - p.psi).max() < 1e-2
    assert np.all(np.diff(res.cost_history) <= 0)


def test_planar_observations(small_rig):
    p = truth(small_rig, 2, pose=0.1)
    p = p.replace(psi=np.concatenate([p.psi[:2], [0.0, 0.0]]))
    obs = keypoints_full(small_rig, p)[:, :2]
    res = fit_frame(small_rig, obs, FlameParams.zeros(small_rig).replace(beta=p.beta),
                    active=["psi[0]", "psi[1]", "theta_jaw[0]"] + [f"theta_head[{i}]" for i in range(3)])
    assert res.converged and res.residual < 1e-9
    assert np.abs(res.params.psi - p.psi).max() < 1e-2


def test_restricted_fit_matches_grid_search(rig):
    p = truth(rig, 3)
    target = p.replace(psi=p.psi + 0.01234, theta_jaw=[0.0731, 0.0, 0.0])
    obs = keypoints_full(rig, target) + np.random.default_rng(3).normal(scale=1e-3, size=(rig.n_keypoints, 3))
    res = fit_frame(rig, obs, p, active=["theta_jaw[0]", "psi[0]"])
    best = (res.params.theta_jaw[0], res.params.psi[0])

    def cost(jaw, psi0):
        psi = p.psi.copy()
        psi[0] = psi0
        r = keypoints_full(rig, p.replace(psi=psi, theta_jaw=[jaw, 0.0, 0.0])) - obs
        return float(np.sum(r * r))

    grid = np.arange(-0.02, 0.0201, 1e-3)
    jaws, psis = best[0] + grid, best[1] + grid
    costs = np.array([[cost(j, q) for q in psis] for j in jaws])
    i, j = np.unravel_index(np.argmin(costs), costs.shape)
    assert abs(jaws[i] - best[0]) <= 1e-3 and abs(psis[j] - best[1]) <= 1e-3
    assert cost(*best) <= costs.min() + 1e-12


def test_constant_sequence_repeats_first_fit(small_rig):
    p = truth(small_rig, 4, pose=0.1)
    obs = [keypoints_full(small_rig, p)] * 4
    seq = fit_sequence(small_rig, obs)
    first = seq.params_per_frame[0].to_vector()
    for q in seq.params_per_frame[1:]:
        assert np.allclose(q.to_vector(), first, atol=1e-9)


def test_zero_lambda_equals_independent_fits(small_rig):
    cfg = TrackerConfig(smoothness_lambda=0.0)
    frames = [keypoints_full(small_rig, truth(small_rig, 5).replace(psi=np.full(4, 0.1 * t)))
              for t in range(3)]
    seq = fit_sequence(small_rig, frames, cfg)
    for t in range(1, 3):
        alone = fit_frame(small_rig, frames[t], seq.params_per_frame[t - 1], cfg=cfg)
        assert np.array_equal(alone.params.to_vector(), seq.params_per_frame[t].to_vector())


def test_smoothing_reduces_pose_variation(small_rig):
    base = truth(small_rig, 6, pose=0.05)
    rng = np.random.default_rng(6)
    frames = [keypoints_full(small_rig, base.replace(theta_head=base.theta_head + rng.normal(scale=0.02, size=3)))
              for _ in range(6)]
    def total_variation(cfg):
        seq = fit_sequence(small_rig, frames, cfg, beta=base.beta)
        poses = np.array([head_pose(p) for p in seq.params_per_frame])
        return np.abs(np.diff(poses, axis=0)).sum()
    assert total_variation(TrackerConfig(smoothness_lambda=10.0)) < total_variation(
        TrackerConfig(smoothness_lambda=0.0))


def test_analytic_and_fd_jacobians_agree(small_rig):
    p = truth(small_rig, 7)
    obs = keypoints_full(small_rig, p)
    idx = np.arange(len(parameter_names(small_rig)))
    jac = {}
    for mode in ("analytic", "fd"):
        prob = _Problem(small_rig, obs, p, idx, None, 0.0, TrackerConfig(jacobian_mode=mode), False)
        jac[mode] = prob.jacobian(p.to_vector())
    assert np.allclose(jac["analytic"], jac["fd"], atol=1e-7)


def test_sequence_json_round_trip(small_rig):
    p = truth(small_rig, 8)
    seq = TrackedSequence([p, p], [0.0, 1e-12], [True, False])
    back = TrackedSequence.from_json_dict(seq.to_json_dict())
    assert np.array_equal(back.params_per_frame[1].to_vector(), p.to_vector())
    assert back.converged_flags == [True, False] and not back.all_converged


def test_validation(small_rig):
    with pytest.raises(ParameterError):
        fit_frame(small_rig, np.zeros((3, 3)), FlameParams.zeros(small_rig))
    with pytest.raises(ParameterError):
        fit_frame(small_rig, np.zeros((small_rig.n_keypoints, 3)), FlameParams.zeros(small_rig),
                  active=["nonsense"])
    with pytest.raises(ParameterError):
        TrackerConfig(fd_step=1e-2)
    with pytest.raises(ParameterError):
        fit_sequence(small_rig, [])
