"""Keypoint transforms, expression-editing arithmetic and a similarity-fit oracle.

Row-vector convention throughout: a keypoint is a row ``x`` and a rotation
acts as ``x @ R``. Scale is a per-axis 3-vector applied elementwise.

Two transforms are provided:

``transform_liveportrait``  ``s * (x_c @ R + delta) + t``  (rotate, then deform)
``transform_recast``        ``s * ((x_c + delta) @ R) + t``  (deform, then rotate)

The second matches how a blendshape rig poses its mesh, so the expression
offset ``delta`` never has to absorb any head rotation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from facemotion.errors import DomainError, ParameterError, RankError
from facemotion.rig import (
    FlameParams,
    RigDefinition,
    expression_part,
    joint_offsets,
    keypoints_canonical,
    keypoints_expression,
)
from facemotion.rotations import (
    axis_angle_to_matrix,
    euler_from_rotation,
    is_rotation,
    rotation_from_euler,
)

__all__ = [
    "MotionDescriptor",
    "RigidFit",
    "animate",
    "delta_leakage",
    "descriptor_from_params",
    "edit_enhance",
    "edit_replace",
    "perturb_keypoints",
    "procrustes_fit",
    "rotation_from_euler",
    "transform_liveportrait",
    "transform_recast",
]


def _points(value, name="points") -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ParameterError(f"{name} must be a (K, 3) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class MotionDescriptor:
    """Canonical keypoints plus rotation, expression offset, scale and translation."""

    x_c: np.ndarray
    rotation: np.ndarray
    delta: np.ndarray
    scale: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        x_c = _points(self.x_c, "x_c")
        delta = _points(self.delta, "delta")
        if delta.shape != x_c.shape:
            raise ParameterError(f"delta shape {delta.shape} does not match x_c {x_c.shape}")
        rotation = np.asarray(self.rotation, dtype=float)
        if not is_rotation(rotation):
            raise ParameterError("rotation must be orthonormal with det +1")
        scale = np.broadcast_to(np.asarray(self.scale, dtype=float), (3,)).copy()
        if not np.all(np.isfinite(scale)) or np.any(scale <= 0):
            raise ParameterError("scale components must be finite and positive")
        translation = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(translation)):
            raise DomainError("translation is not finite")
        for name, value in (("x_c", x_c), ("delta", delta), ("rotation", rotation),
                            ("scale", scale), ("translation", translation)):
            object.__setattr__(self, name, value)

    @property
    def n_keypoints(self) -> int:
        return self.x_c.shape[0]

    def replace(self, **changes) -> "MotionDescriptor":
        values = dict(x_c=self.x_c, rotation=self.rotation, delta=self.delta,
                      scale=self.scale, translation=self.translation)
        values.update(changes)
        return MotionDescriptor(**values)

    def to_json_dict(self, euler: bool = False) -> dict:
        if euler:
            pitch, yaw, roll = euler_from_rotation(self.rotation)
            rotation = {"euler": {"pitch": pitch, "yaw": yaw, "roll": roll}}
        else:
            rotation = {"matrix": self.rotation.tolist()}
        return {
            "x_c": self.x_c.tolist(),
            "delta": self.delta.tolist(),
            "rotation": rotation,
            "scale": self.scale.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "MotionDescriptor":
        rot = doc["rotation"]
        if isinstance(rot, dict) and "euler" in rot:
            e = rot["euler"]
            matrix = rotation_from_euler(e["pitch"], e["yaw"], e["roll"])
        elif isinstance(rot, dict):
            matrix = np.array(rot["matrix"], dtype=float)
        else:
            matrix = np.array(rot, dtype=float)
        return cls(
            x_c=np.array(doc["x_c"], dtype=float),
            rotation=matrix,
            delta=np.array(doc["delta"], dtype=float),
            scale=np.asarray(doc.get("scale", 1.0), dtype=float),
            translation=np.asarray(doc.get("translation", [0.0, 0.0, 0.0]), dtype=float),
        )


@dataclass(frozen=True)
class RigidFit:
    scale: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    residual: float


def transform_liveportrait(md: MotionDescriptor) -> np.ndarray:
    return md.scale * (md.x_c @ md.rotation + md.delta) + md.translation


def transform_recast(md: MotionDescriptor) -> np.ndarray:
    return md.scale * ((md.x_c + md.delta) @ md.rotation) + md.translation


def _delta(value, k, name):
    arr = _points(value, name)
    if arr.shape[0] != k:
        raise ParameterError(f"{name} has {arr.shape[0]} keypoints, expected {k}")
    return arr


def edit_replace(md_source: MotionDescriptor, delta_driving):
    """Swap in the driving expression offset; every rigid quantity stays the source's."""
    delta_driving = _delta(delta_driving, md_source.n_keypoints, "delta_driving")
    x_s = transform_recast(md_source)
    x_d = transform_recast(md_source.replace(delta=delta_driving))
    return x_s, x_d


def edit_enhance(md_source_i: MotionDescriptor, delta_drv_i, delta_drv_0):
    """Add the driving expression change relative to its anchor frame.

    ``x_d = s * ((x_c + delta_s + delta_d_i - delta_d_0) @ R) + t`` with all
    rigid quantities from the source frame.
    """
    k = md_source_i.n_keypoints
    delta_drv_i = _delta(delta_drv_i, k, "delta_drv_i")
    delta_drv_0 = _delta(delta_drv_0, k, "delta_drv_0")
    x_s = transform_recast(md_source_i)
    combined = md_source_i.delta + (delta_drv_i - delta_drv_0)
    x_d = transform_recast(md_source_i.replace(delta=combined))
    return x_s, x_d


def animate(md_source: MotionDescriptor, md_driving_i: MotionDescriptor):
    """Source canonical keypoints, everything else from the driving frame."""
    if md_driving_i.n_keypoints != md_source.n_keypoints:
        raise ParameterError("source and driving descriptors have different K")
    x_s = transform_recast(md_source)
    x_d = transform_recast(md_driving_i.replace(x_c=md_source.x_c))
    return x_s, x_d


def _kabsch_rows(a, b):
    """Row-convention rotation ``R`` minimising ``|a @ R - b|`` for centred a, b."""
    u, _, vt = np.linalg.svd(a.T @ b)
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0:
        d = 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _refine_per_axis(a, b, rotation, scale, max_iterations, tol):
    # no closed form once the scale differs per axis; polish the isotropic fit
    def unpack(z):
        r = axis_angle_to_matrix(z[:3]) @ rotation
        return r, z[3:]

    def resid(z):
        r, s = unpack(z)
        return ((a @ r) * s - b).reshape(-1)

    z0 = np.concatenate([np.zeros(3), scale])
    sol = least_squares(resid, z0, method="lm", xtol=tol, ftol=tol, gtol=tol,
                        max_nfev=max_iterations * 10)
    return unpack(sol.x)


def procrustes_fit(reference, observed, per_axis: bool = False,
                   max_iterations: int = 200, tol: float = 1e-15) -> RigidFit:
    """Least-squares similarity ``observed ~ s * (reference @ R) + t``.

    The default uses one isotropic scale (Umeyama). ``per_axis=True`` refines
    a per-axis scale with a Levenberg-Marquardt polish of that fit; it is only
    well-posed when the reference is not close to isotropic.
    """
    ref = _points(reference, "reference")
    obs = _points(observed, "observed")
    if ref.shape != obs.shape:
        raise ParameterError(f"shape mismatch: {ref.shape} vs {obs.shape}")
    if ref.shape[0] < 3:
        raise RankError("need at least three points")
    mu_r, mu_o = ref.mean(axis=0), obs.mean(axis=0)
    a, b = ref - mu_r, obs - mu_o
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise RankError("reference points are collinear or coincident")

    rotation = _kabsch_rows(a, b)
    ar = a @ rotation
    s_iso = float(np.sum(ar * b) / np.sum(ar * ar))
    scale = np.full(3, s_iso)
    if per_axis:
        rotation, scale = _refine_per_axis(a, b, rotation, scale, max_iterations, tol)
    translation = mu_o - scale * (mu_r @ rotation)
    aligned = scale * (ref @ rotation) + translation
    residual = float(np.sqrt(np.mean(np.sum((aligned - obs) ** 2, axis=1))))
    return RigidFit(scale=scale, rotation=rotation, translation=translation, residual=residual)


def delta_leakage(x_c, delta_true, rotation):
    """Expression offsets each convention needs to reproduce ``(x_c + delta) @ R``.

    Returns ``(delta_rotate_first, delta_deform_first)``; the first equals
    ``delta_true @ R`` and so carries the head rotation, the second is
    ``delta_true`` itself.
    """
    x_c = _points(x_c, "x_c")
    delta_true = _delta(delta_true, x_c.shape[0], "delta_true")
    rotation = np.asarray(rotation, dtype=float)
    if not is_rotation(rotation):
        raise ParameterError("rotation must be orthonormal with det +1")
    target = (x_c + delta_true) @ rotation
    # solve s*(x_c R + d) + t = target for d with s = 1, t = 0
    delta_rotate_first = target - x_c @ rotation
    # solve (x_c + d) R = target for d
    delta_deform_first = target @ rotation.T - x_c
    return delta_rotate_first, delta_deform_first


def descriptor_from_params(rig: RigDefinition, params: FlameParams) -> MotionDescriptor:
    """Ground-truth descriptor read off the rig.

    ``x_c`` are the canonical keypoints, ``delta`` the expression keypoints
    minus ``x_c``, and ``(R, t)`` the world transform of the neck joint with
    unit scale. Posing the expression keypoints with that transform reproduces
    the fully posed keypoints exactly when ``theta_neck`` is zero, or when no
    keypoint carries head-root skin weight.
    """
    params.check(rig)
    x_c = keypoints_canonical(rig, params.beta)
    e = expression_part(params)
    v_exp = keypoints_expression(rig, e.beta, e.psi, e.theta_jaw, e.theta_eye_l, e.theta_eye_r)
    world_r, offsets = joint_offsets(rig, params)
    return MotionDescriptor(x_c=x_c, rotation=world_r[1].T, delta=v_exp - x_c,
                            scale=np.ones(3), translation=offsets[1])


def perturb_keypoints(points, sigma: float = 1e-3, seed: int = 0) -> np.ndarray:
    """Add i.i.d. Gaussian noise (training-time augmentation, off by default)."""
    points = np.asarray(points, dtype=float)
    rng = np.random.default_rng(seed)
    return points + rng.normal(scale=sigma, size=points.shape)
