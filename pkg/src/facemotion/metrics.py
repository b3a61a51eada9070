"""Image, parameter and distribution metrics."""

from __future__ import annotations

import numpy as np

from facemotion.errors import DomainError, NumericError, ParameterError
from facemotion.rig import FlameParams, RigDefinition, joint_world_transforms

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB for images in [0, 1]; capped at 100 dB when MSE < 1e-10."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def l1(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _valid_filter(img, kernel):
    # separable 'valid' correlation with a symmetric Gaussian
    g = kernel.sum(axis=1)
    n = len(g)
    rows = sum(g[i] * img[i:img.shape[0] - n + 1 + i, :] for i in range(n))
    return sum(g[j] * rows[:, j:img.shape[1] - n + 1 + j] for j in range(n))


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM over all full 11x11 Gaussian windows (sigma 1.5), averaged over channels."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ParameterError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    kernel = gaussian_window()
    values = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _valid_filter(x, kernel), _valid_filter(y, kernel)
        sxx = _valid_filter(x * x, kernel) - mx * mx
        syy = _valid_filter(y * y, kernel) - my * my
        sxy = _valid_filter(x * y, kernel) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


def mae_angular(b_g, b_d) -> float:
    """Angle between two direction vectors, in degrees."""
    b_g = np.asarray(b_g, dtype=float)
    b_d = np.asarray(b_d, dtype=float)
    ng, nd = np.linalg.norm(b_g), np.linalg.norm(b_d)
    if ng == 0 or nd == 0:
        raise DomainError("direction vectors must be nonzero")
    cos = np.clip(np.dot(b_g, b_d) / (ng * nd), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


def _mean_l1(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ParameterError(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(np.mean(np.abs(x - y)))


def aed(params_g, params_d) -> float:
    """Average expression distance: mean L1 over frames and coefficients."""
    return _mean_l1(params_g, params_d)


def apd(pose_g, pose_d) -> float:
    """Average pose distance: mean L1 over frames and pose channels."""
    return _mean_l1(pose_g, pose_d)


def expression_vector(rig: RigDefinition, params: FlameParams) -> np.ndarray:
    """``(psi, theta_jaw, eyelid proxy)``; the proxy is the eye-region block of psi."""
    eye_cols = [i for i, r in enumerate(rig.expr_regions) if r == "eye"]
    return np.concatenate([params.psi, params.theta_jaw, params.psi[eye_cols]])


def pose_vector(params: FlameParams) -> np.ndarray:
    return np.concatenate([params.theta_head, params.theta_neck])


def gaze_direction(rig: RigDefinition, params: FlameParams) -> np.ndarray:
    """Mean world-space forward (+z) direction of the two eyeballs."""
    world_r, _ = joint_world_transforms(rig, params)
    forward = np.array([0.0, 0.0, 1.0])
    d = world_r[3] @ forward + world_r[4] @ forward
    return d / np.linalg.norm(d)


def matrix_sqrt_psd(m, sym_tol: float = 1e-9, eig_tol: float = 1e-9) -> np.ndarray:
    """Symmetric PSD square root by eigendecomposition."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ParameterError("matrix must be square")
    scale = max(float(np.abs(m).max()), 1.0)
    if np.abs(m - m.T).max() > sym_tol * scale:
        raise ParameterError("matrix is not symmetric")
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    if w.min() < -eig_tol * scale:
        raise NumericError(f"matrix has a negative eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def feature_statistics(features):
    f = np.asarray(features, dtype=float)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ParameterError("need an (M, D) feature array with M >= 2")
    if not np.all(np.isfinite(f)):
        raise DomainError("features are not finite")
    return f.mean(axis=0), np.atleast_2d(np.cov(f, rowvar=False))


def frechet_distance(g, r) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    The trace term uses ``Tr((S_r^1/2 S_g S_r^1/2)^1/2)``, which equals
    ``Tr((S_r S_g)^1/2)`` and stays symmetric.
    """
    mu_g, sig_g = feature_statistics(g)
    mu_r, sig_r = feature_statistics(r)
    if mu_g.shape != mu_r.shape:
        raise ParameterError("feature dimensions differ")
    root_r = matrix_sqrt_psd(sig_r)
    inner = root_r @ sig_g @ root_r
    cross = np.trace(matrix_sqrt_psd(0.5 * (inner + inner.T)))
    value = float(np.sum((mu_g - mu_r) ** 2) + np.trace(sig_g) + np.trace(sig_r) - 2.0 * cross)
    if value < 0:
        if value < -1e-8:
            raise NumericError(f"Frechet distance is negative ({value:.3e})")
        value = 0.0
    return value


def pooled_features(image, grid: int = 8) -> np.ndarray:
    """Default feature extractor: grayscale average-pooled onto a grid x grid array."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 3:
        img = img.mean(axis=2)
    h, w = img.shape
    rows = np.array_split(np.arange(h), grid)
    cols = np.array_split(np.arange(w), grid)
    return np.array([[img[np.ix_(r, c)].mean() for c in cols] for r in rows]).reshape(-1)
