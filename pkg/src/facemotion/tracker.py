"""Keypoint-residual tracking of rig parameters.

Each frame is fitted by Levenberg-damped Gauss-Newton on

    sum |K(p) - observed|^2 + lambda * |K(p) - K(p_prev)|^2

with ``K = keypoints_full``. The temporal term covers the non-shape
parameters and is only used for sequences; it measures a parameter change by
the keypoint motion it causes (model units), so directions the keypoints
barely constrain are not pulled around by it. Shape is estimated once
(frame 0) and then frozen. Rotations are updated additively in axis-angle
coordinates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from facemotion.errors import ParameterError, RankError
from facemotion.rig import (
    FlameParams,
    RigDefinition,
    ROTATION_FIELDS,
    blend_transforms,
    keypoints_full,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrackerConfig:
    max_iterations: int = 100
    step_damping: float = 1e-3
    convergence_tol: float = 1e-9
    smoothness_lambda: float = 0.1
    jacobian_mode: str = "analytic"
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ParameterError("max_iterations must be nonnegative")
        if not (self.step_damping > 0 and self.convergence_tol > 0):
            raise ParameterError("damping and convergence tolerance must be positive")
        if self.smoothness_lambda < 0:
            raise ParameterError("smoothness_lambda must be nonnegative")
        if self.jacobian_mode not in ("analytic", "fd"):
            raise ParameterError("jacobian_mode must be 'analytic' or 'fd'")
        if not (1e-7 <= self.fd_step <= 1e-3):
            raise ParameterError("fd_step must lie in [1e-7, 1e-3]")


@dataclass
class FitResult:
    params: FlameParams
    residual: float
    converged: bool
    iterations: int
    cost_history: list = field(default_factory=list)


@dataclass
class TrackedSequence:
    params_per_frame: list
    residual_per_frame: list
    converged_flags: list
    cost_histories: list = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        return all(self.converged_flags)

    def to_json_dict(self) -> dict:
        return {
            "schema": "facemotion.tracked",
            "version": 1,
            "frames": [
                {"params": p.to_json_dict(), "residual": r, "converged": bool(c)}
                for p, r, c in zip(self.params_per_frame, self.residual_per_frame,
                                   self.converged_flags)
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TrackedSequence":
        frames = doc["frames"]
        return cls([FlameParams.from_json_dict(f["params"]) for f in frames],
                   [float(f["residual"]) for f in frames],
                   [bool(f["converged"]) for f in frames])


def parameter_names(rig: RigDefinition) -> list[str]:
    """Names of the entries of :meth:`FlameParams.to_vector`, e.g. ``psi[0]``."""
    names = [f"beta[{i}]" for i in range(rig.n_shape)]
    names += [f"psi[{i}]" for i in range(rig.n_expr)]
    names += [f"{r}[{i}]" for r in ROTATION_FIELDS for i in range(3)]
    return names


class _Problem:
    """Residual and Jacobian over the active subset of the parameter vector."""

    def __init__(self, rig, observed, base, active, prior, lam, cfg, planar):
        self.rig = rig
        self.observed = observed
        self.base = base.to_vector()
        self.active = active
        self.prior = prior
        self.lam = lam
        self.cfg = cfg
        self.planar = planar
        self.nb, self.ne = rig.n_shape, rig.n_expr
        # smoothness acts on non-shape parameters only
        self.smooth = active >= self.nb
        self.regularized = prior is not None and lam > 0
        if self.regularized:
            self.prior_params = FlameParams.from_vector(prior, self.nb, self.ne)
            self.prior_kp = self.keypoint_residual(self.prior_params) + observed.reshape(-1)

    def params(self, x) -> FlameParams:
        vec = self.base.copy()
        vec[self.active] = x
        return FlameParams.from_vector(vec, self.nb, self.ne)

    def keypoint_residual(self, p: FlameParams) -> np.ndarray:
        kp = keypoints_full(self.rig, p)
        if self.planar:
            kp = kp[:, :2]
        return (kp - self.observed).reshape(-1)

    def _smoothed(self, p: FlameParams) -> FlameParams:
        # the temporal term never sees shape changes
        return p.replace(beta=self.prior_params.beta)

    def residual(self, x):
        p = self.params(x)
        r_kp = self.keypoint_residual(p)
        if not self.regularized:
            return r_kp, r_kp
        moved = self.keypoint_residual(self._smoothed(p)) + self.observed.reshape(-1)
        reg = np.sqrt(self.lam) * (moved - self.prior_kp)
        return np.concatenate([r_kp, reg]), r_kp

    def jacobian(self, x) -> np.ndarray:
        p = self.params(x)
        cols = self._data_jacobian(p)
        if not self.regularized:
            return cols
        reg = self._data_jacobian(self._smoothed(p)) if np.any(~self.smooth) else cols.copy()
        reg[:, ~self.smooth] = 0.0
        return np.vstack([cols, np.sqrt(self.lam) * reg])

    def _data_jacobian(self, p: FlameParams) -> np.ndarray:
        n_kp = self.observed.size
        cols = np.zeros((n_kp, len(self.active)))
        x = p.to_vector()[self.active]
        base = p.to_vector()
        linear = self.active < self.nb + self.ne
        if self.cfg.jacobian_mode == "analytic" and np.any(linear):
            m, _ = blend_transforms(self.rig, p, self.rig.keypoint_indices)
            basis = np.concatenate(
                [self.rig.shape_basis[self.rig.keypoint_indices],
                 self.rig.expr_basis[self.rig.keypoint_indices]], axis=2)
            jb = np.einsum("vab,vbk->vak", m, basis[:, :, self.active[linear]])
            if self.planar:
                jb = jb[:, :2, :]
            cols[:, linear] = jb.reshape(n_kp, -1)
            fd_cols = np.flatnonzero(~linear)
        else:
            fd_cols = np.arange(len(self.active))
        h = self.cfg.fd_step
        for c in fd_cols:
            xp, xm = x.copy(), x.copy()
            xp[c] += h
            xm[c] -= h
            vp, vm = base.copy(), base.copy()
            vp[self.active] = xp
            vm[self.active] = xm
            cols[:, c] = (self.keypoint_residual(FlameParams.from_vector(vp, self.nb, self.ne))
                          - self.keypoint_residual(FlameParams.from_vector(vm, self.nb, self.ne))
                          ) / (2 * h)
        return cols


def _active_indices(rig, frozen_beta, active):
    names = parameter_names(rig)
    if active is None:
        start = rig.n_shape if frozen_beta else 0
        return np.arange(start, len(names))
    lookup = {n: i for i, n in enumerate(names)}
    try:
        idx = np.array(sorted(lookup[n] for n in active), dtype=int)
    except KeyError as exc:
        raise ParameterError(f"unknown parameter name {exc.args[0]!r}") from None
    if frozen_beta:
        idx = idx[idx >= rig.n_shape]
    return idx


def _observed(rig, observed):
    obs = np.asarray(observed, dtype=float)
    if obs.ndim != 2 or obs.shape[0] != rig.n_keypoints or obs.shape[1] not in (2, 3):
        raise ParameterError(
            f"observed keypoints must be ({rig.n_keypoints}, 3) or ({rig.n_keypoints}, 2),"
            f" got {obs.shape}")
    return obs


def fit_frame(rig: RigDefinition, observed, init: FlameParams, frozen_beta: bool = True,
              cfg: TrackerConfig = TrackerConfig(), prior: FlameParams | None = None,
              active=None) -> FitResult:
    """Fit one frame of observed keypoints.

    ``observed`` is ``(K, 3)``, or ``(K, 2)`` for orthographic x/y only.
    ``prior`` enables the temporal term ``cfg.smoothness_lambda * |K(p) - K(prior)|^2``.
    ``active`` optionally restricts the fit to named parameters (see
    :func:`parameter_names`); everything else stays at ``init``.

    Non-convergence is reported through ``converged=False`` with the best
    iterate; a persistently singular system raises :class:`RankError`.
    """
    init.check(rig)
    obs = _observed(rig, observed)
    idx = _active_indices(rig, frozen_beta, active)
    prior_vec = None if prior is None else prior.to_vector()
    problem = _Problem(rig, obs, init, idx, prior_vec, cfg.smoothness_lambda, cfg,
                       planar=obs.shape[1] == 2)
    n_obs = obs.size

    x = init.to_vector()[idx]
    r, r_kp = problem.residual(x)
    cost = float(r @ r)
    history = [cost]
    rms = float(np.sqrt(r_kp @ r_kp / n_obs))
    if len(idx) == 0 or (rms < cfg.convergence_tol and not problem.regularized):
        return FitResult(problem.params(x), rms, True, 0, history)

    mu = cfg.step_damping
    converged = False
    iterations = 0
    eye = np.eye(len(idx))
    while iterations < cfg.max_iterations:
        iterations += 1
        jac = problem.jacobian(x)
        jtj = jac.T @ jac
        g = jac.T @ r
        accepted = False
        while mu < 1e12:
            try:
                step = np.linalg.solve(jtj + mu * eye, -g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            x_new = x + step
            r_new, r_kp_new = problem.residual(x_new)
            cost_new = float(r_new @ r_new)
            change = float(np.sqrt(np.mean((r_kp_new - r_kp) ** 2)))
            if cost_new < cost:
                x, r, r_kp, cost = x_new, r_new, r_kp_new, cost_new
                history.append(cost)
                mu = max(mu / 3.0, 1e-12)
                accepted = True
                break
            if change < cfg.convergence_tol:
                # no further decrease is representable
                converged = True
                break
            mu *= 10.0
        else:
            if not np.all(np.isfinite(jtj)) or np.linalg.matrix_rank(jtj) == 0:
                raise RankError("normal equations are singular")
            converged = True
        if converged:
            break
        if accepted and change < cfg.convergence_tol:
            converged = True
            break
    rms = float(np.sqrt(r_kp @ r_kp / n_obs))
    if not converged:
        log.debug("fit_frame stopped after %d iterations (rms %.3e)", iterations, rms)
    return FitResult(problem.params(x), rms, converged, iterations, history)


def fit_sequence(rig: RigDefinition, observed_frames, cfg: TrackerConfig = TrackerConfig(),
                 beta=None) -> TrackedSequence:
    """Track a keypoint sequence with frozen shape and temporal smoothing.

    Shape comes from ``beta`` when given, otherwise from a free fit of frame 0.
    Every later frame starts from the previous solution, which is also the
    smoothness anchor.
    """
    frames = list(observed_frames)
    if not frames:
        raise ParameterError("observed_frames is empty")
    params, residuals, flags, costs = [], [], [], []
    start = FlameParams.zeros(rig)
    if beta is None:
        first = fit_frame(rig, frames[0], start, frozen_beta=False, cfg=cfg)
    else:
        first = fit_frame(rig, frames[0], start.replace(beta=beta), frozen_beta=True, cfg=cfg)
    params.append(first.params)
    residuals.append(first.residual)
    flags.append(first.converged)
    costs.append(first.cost_history)
    for t, obs in enumerate(frames[1:], start=1):
        prev = params[-1]
        try:
            res = fit_frame(rig, obs, prev, frozen_beta=True, cfg=cfg, prior=prev)
        except RankError as exc:
            log.warning("frame %d: %s", t, exc)
            res = FitResult(prev, float("nan"), False, 0)
        params.append(res.params)
        residuals.append(res.residual)
        flags.append(res.converged)
        costs.append(res.cost_history)
    return TrackedSequence(params, residuals, flags, costs)
