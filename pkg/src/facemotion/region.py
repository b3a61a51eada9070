"""Facial masks, keypoint-driven warp fields and synthetic frame rendering.

Pixel coordinates are ``(x, y)`` = ``(column, row)`` with pixel centres on
integers. A warp field is ``(H, W, 2)`` holding ``(dx, dy)`` in pixels and is
used backward: ``output(p) = input(p + d(p))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from facemotion.errors import GeometryError, ParameterError
from facemotion.rig import FlameParams, RigDefinition, flame_forward


def _points2d(points, name="points") -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ParameterError(f"{name} must be an (n, 2) array, got {pts.shape}")
    return pts


def expand_landmarks(points, factor: float = 1.2) -> np.ndarray:
    """Push every point away from the centroid by ``factor``."""
    pts = _points2d(points)
    if len(pts) < 3:
        raise GeometryError("need at least three landmarks")
    if factor < 1:
        raise ParameterError("expansion factor must be >= 1")
    centroid = pts.mean(axis=0)
    if np.all(np.abs(pts - centroid) == 0):
        raise GeometryError("landmarks are all coincident")
    return centroid + factor * (pts - centroid)


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> np.ndarray:
    """Counter-clockwise hull vertices (monotone chain), collinear points dropped.

    Counter-clockwise is in the mathematical sense (y up); in image
    coordinates with y pointing down the same list runs clockwise on screen.
    """
    pts = _points2d(points)
    uniq = sorted(set(map(tuple, pts.tolist())))
    if len(uniq) < 3:
        raise GeometryError("need at least three distinct points")
    lower, upper = [], []
    for p in uniq:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(uniq):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise GeometryError("points are collinear")
    return np.array(hull, dtype=float)


def polygon_area(poly) -> float:
    x, y = np.asarray(poly, dtype=float).T
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def rasterize_convex(poly, height: int, width: int, tol: float = 1e-9) -> np.ndarray:
    """Pixel centres inside or on a CCW convex polygon."""
    poly = np.asarray(poly, dtype=float)
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    inside = np.ones((height, width), dtype=bool)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        edge = b - a
        scale = max(np.hypot(*edge), 1.0)
        cross = edge[0] * (ys - a[1]) - edge[1] * (xs - a[0])
        inside &= cross >= -tol * scale
    return inside


def landmark_pixels(points, height: int, width: int):
    """``(rows, cols)`` of the pixels containing the in-frame points."""
    pts = _points2d(points)
    cols = np.floor(pts[:, 0] + 0.5).astype(int)
    rows = np.floor(pts[:, 1] + 0.5).astype(int)
    ok = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    return rows[ok], cols[ok]


def facial_masks(landmarks, factor: float = 1.2, height: int = 128, width: int = 128):
    """``(facial, nonfacial)`` masks from the hull of the expanded landmarks.

    Pixels whose centre lies in the hull are facial, and so is every pixel
    holding an expanded landmark. Whatever falls outside the frame is clipped.
    """
    grown = expand_landmarks(landmarks, factor)
    facial = rasterize_convex(convex_hull(grown), height, width)
    facial[landmark_pixels(grown, height, width)] = True
    return facial, ~facial


def estimate_warp_field(x_src, x_dst, height: int, width: int, sigma: float | None = None):
    """Gaussian-weighted blend of keypoint displacements, backward convention.

    ``d(p) = sum_k w_k(p) (x_src_k - x_dst_k) / max(sum_k w_k(p), 1)`` with
    ``w_k(p) = exp(-|p - x_dst_k|^2 / (2 sigma^2))``. The ``max(., 1)`` keeps
    the field a proper weighted average wherever keypoints are close and
    lets it decay to zero far from all of them.
    """
    src = _points2d(x_src, "x_src")
    dst = _points2d(x_dst, "x_dst")
    if src.shape != dst.shape or len(src) < 1:
        raise ParameterError("x_src and x_dst must be matching non-empty point lists")
    if sigma is None:
        sigma = 0.05 * min(height, width)
    if sigma <= 0:
        raise ParameterError("sigma must be positive")
    disp = src - dst
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    field = np.zeros((height, width, 2))
    total = np.zeros((height, width))
    for (px, py), d in zip(dst, disp):
        w = np.exp(-((xs - px) ** 2 + (ys - py) ** 2) / (2.0 * sigma ** 2))
        total += w
        field[..., 0] += w * d[0]
        field[..., 1] += w * d[1]
    return field / np.maximum(total, 1.0)[..., None]


def attenuate_outside_mask(field, facial, feather: float = 0.0):
    """Scale displacements by 1 inside the mask, ramping to 0 over ``feather`` px outside."""
    field = np.asarray(field, dtype=float)
    facial = np.asarray(facial, dtype=bool)
    if field.shape[:2] != facial.shape or field.shape[2:] != (2,):
        raise ParameterError(f"field {field.shape} does not match mask {facial.shape}")
    if feather < 0:
        raise ParameterError("feather must be nonnegative")
    if feather == 0 or not facial.any():
        weight = facial.astype(float)
    else:
        dist = ndimage.distance_transform_edt(~facial)
        weight = np.clip(1.0 - dist / feather, 0.0, 1.0)
    return field * weight[..., None]


def apply_warp(image, field) -> np.ndarray:
    """Bilinear backward sampling with edge clamping."""
    img = np.asarray(image, dtype=float)
    field = np.asarray(field, dtype=float)
    h, w = img.shape[:2]
    if field.shape != (h, w, 2):
        raise ParameterError(f"field shape {field.shape} does not match image {img.shape}")
    if not np.any(field):
        return img.copy()
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    sx = np.clip(xs + field[..., 0], 0.0, w - 1.0)
    sy = np.clip(ys + field[..., 1], 0.0, h - 1.0)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    if img.ndim == 3:
        fx, fy = fx[..., None], fy[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


@dataclass(frozen=True)
class Camera:
    """Orthographic camera: ``u = ox + scale * x``, ``v = oy - scale * y``."""

    scale: float
    offset: tuple[float, float]

    def __post_init__(self):
        if not self.scale > 0:
            raise ParameterError("camera scale must be positive")

    @classmethod
    def default(cls, height: int, width: int) -> "Camera":
        return cls(scale=0.36 * min(height, width), offset=(width / 2.0, height * 0.45))

    def project(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.stack([self.offset[0] + self.scale * pts[:, 0],
                         self.offset[1] - self.scale * pts[:, 1]], axis=1)


@dataclass(frozen=True)
class RenderStyle:
    radius: float = 1.2
    wireframe: bool = True
    edge_intensity: float = 0.45
    background: float = 0.0


def _splat(img, uv, values, radius):
    reach = int(np.ceil(radius + 0.5))
    offs = np.arange(-reach, reach + 1)
    h, w = img.shape
    cx = np.floor(uv[:, 0] + 0.5).astype(int)
    cy = np.floor(uv[:, 1] + 0.5).astype(int)
    for dy in offs:
        for dx in offs:
            px, py = cx + dx, cy + dy
            ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
            dist = np.hypot(px - uv[:, 0], py - uv[:, 1])
            cov = np.clip(radius + 0.5 - dist, 0.0, 1.0) * values
            keep = ok & (cov > 0)
            np.maximum.at(img, (py[keep], px[keep]), cov[keep])


def render_keypoint_frame(rig: RigDefinition, params: FlameParams, camera: Camera,
                          height: int, width: int, style: RenderStyle = RenderStyle()):
    """Grayscale frame of the posed vertex cloud (plus optional wireframe)."""
    if not isinstance(camera, Camera):
        camera = Camera(*camera)
    verts = flame_forward(rig, params)
    uv = camera.project(verts)
    shade = 0.35 + 0.65 * np.clip((verts[:, 2] + 1.0) / 2.0, 0.0, 1.0)
    img = np.full((height, width), float(style.background))
    if style.wireframe and len(rig.edges):
        a, b = rig.edges[:, 0], rig.edges[:, 1]
        length = np.hypot(*(uv[a] - uv[b]).T)
        steps = int(np.clip(np.ceil(length.max(initial=0.0) / 0.75), 1, 256))
        for s in np.linspace(0.0, 1.0, steps + 1):
            pts = uv[a] * (1.0 - s) + uv[b] * s
            vals = style.edge_intensity * (shade[a] * (1.0 - s) + shade[b] * s)
            _splat(img, pts, vals, 0.5)
    _splat(img, uv, shade, style.radius)
    return np.clip(img, 0.0, 1.0)
