"""Wing loss, the six-term keypoint supervision loss and region-masked image losses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from facemotion.errors import ParameterError
from facemotion.motion import MotionDescriptor, transform_recast

FLAME_TERMS = ("canon_s", "canon_d", "expr_s", "expr_d", "full_s", "full_d")


@dataclass(frozen=True)
class WingConfig:
    w: float = 10.0
    epsilon: float = 2.0

    def __post_init__(self):
        if not (self.w > 0 and self.epsilon > 0):
            raise ParameterError("wing w and epsilon must be positive")

    @property
    def c(self) -> float:
        return self.w - self.w * math.log1p(self.w / self.epsilon)


def wing_elementwise(residuals, cfg: WingConfig = WingConfig()) -> np.ndarray:
    x = np.abs(np.asarray(residuals, dtype=float))
    return np.where(x < cfg.w, cfg.w * np.log1p(x / cfg.epsilon), x - cfg.c)


def wing(residuals, cfg: WingConfig = WingConfig()) -> float:
    """Mean Wing loss over every element of ``residuals``."""
    values = wing_elementwise(residuals, cfg)
    if values.size == 0:
        return 0.0
    return float(np.mean(values))


def wing_grad(residuals, cfg: WingConfig = WingConfig()) -> np.ndarray:
    """Gradient of :func:`wing` with respect to each residual."""
    x = np.asarray(residuals, dtype=float)
    a = np.abs(x)
    g = np.where(a < cfg.w, cfg.w / (cfg.epsilon + a), 1.0) * np.sign(x)
    return g / max(x.size, 1)


@dataclass(frozen=True, eq=False)
class FlameLossInputs:
    md_s: MotionDescriptor
    md_d: MotionDescriptor
    v_c_s: np.ndarray
    v_c_d: np.ndarray
    v_exp_s: np.ndarray
    v_exp_d: np.ndarray
    v_kp_s: np.ndarray
    v_kp_d: np.ndarray

    def check(self) -> None:
        k = self.md_s.n_keypoints
        if self.md_d.n_keypoints != k:
            raise ParameterError("source and driving descriptors have different K")
        for name in ("v_c_s", "v_c_d", "v_exp_s", "v_exp_d", "v_kp_s", "v_kp_d"):
            if np.shape(getattr(self, name)) != (k, 3):
                raise ParameterError(f"{name} must have shape ({k}, 3)")


def flame_loss_terms(inputs: FlameLossInputs, cfg: WingConfig = WingConfig()) -> dict:
    """Each of the six Wing terms, keyed by :data:`FLAME_TERMS`."""
    inputs.check()
    s, d = inputs.md_s, inputs.md_d
    return {
        "canon_s": wing(s.x_c - inputs.v_c_s, cfg),
        "canon_d": wing(d.x_c - inputs.v_c_d, cfg),
        "expr_s": wing(s.x_c + s.delta - inputs.v_exp_s, cfg),
        "expr_d": wing(d.x_c + d.delta - inputs.v_exp_d, cfg),
        "full_s": wing(transform_recast(s) - inputs.v_kp_s, cfg),
        # driving keypoints rebuilt from the driving frame's own canonical set
        "full_d": wing(transform_recast(d) - inputs.v_kp_d, cfg),
    }


def flame_loss(inputs: FlameLossInputs, cfg: WingConfig = WingConfig(),
               weights: dict | None = None) -> float:
    terms = flame_loss_terms(inputs, cfg)
    weights = weights or {}
    return float(sum(weights.get(name, 1.0) * terms[name] for name in FLAME_TERMS))


def _check_pair(a, b, mask=None):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ParameterError(f"image shapes differ: {a.shape} vs {b.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape[:2]:
            raise ParameterError(f"mask shape {mask.shape} does not match image {a.shape[:2]}")
    return a, b, mask


def masked_l1(a, b, mask) -> float:
    """Mean absolute difference over pixels where ``mask`` is true (0 if none)."""
    a, b, mask = _check_pair(a, b, mask)
    count = int(mask.sum())
    if count == 0:
        return 0.0
    diff = np.abs(a - b)
    if diff.ndim == 3:
        diff = diff.mean(axis=2)
    return float(diff[mask].sum() / count)


def identity_features(image) -> np.ndarray:
    return np.asarray(image, dtype=float)


@dataclass(frozen=True)
class RegionLoss:
    """Feature distance plus L1 inside a mask.

    ``features`` stands in for a perceptual backbone; the default returns the
    pixels unchanged so the distance reduces to a second masked L1.
    """

    features: Callable = field(default=identity_features)
    feature_weight: float = 1.0
    l1_weight: float = 1.0

    def __call__(self, a, b, mask) -> float:
        a, b, mask = _check_pair(a, b, mask)
        fa, fb = self.features(a * _expand(mask, a)), self.features(b * _expand(mask, b))
        feat = float(np.mean(np.abs(fa - fb))) if np.size(fa) else 0.0
        return self.feature_weight * feat + self.l1_weight * masked_l1(a, b, mask)


def _expand(mask, image):
    return mask[..., None] if image.ndim == 3 else mask


def facial_loss(student, teacher, facial_mask, region: RegionLoss = RegionLoss()) -> float:
    """Student edit against the teacher edit, inside the facial region."""
    return region(student, teacher, facial_mask)


def nonfacial_loss(student, source, nonfacial_mask, region: RegionLoss = RegionLoss()) -> float:
    """Student edit against the untouched source, outside the facial region."""
    return region(student, source, nonfacial_mask)
