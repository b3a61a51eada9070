"""Reading and writing images, masks and warp fields.

Images are float arrays in [0, 1], either ``(H, W)`` or ``(H, W, 3)``.
PNG, PGM and PPM are written with 8 bits per channel; masks go to PBM;
warp fields are raw little-endian float64 next to a JSON header.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from facemotion.errors import ParameterError

WARP_CONVENTION = "backward:output(p)=input(p+d(p)),channels=dx,dy"


def to_uint8(image) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, image) -> None:
    path = Path(path)
    data = to_uint8(image)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    if data.ndim == 3 and data.shape[2] != 3:
        raise ParameterError("images must have 1 or 3 channels")
    suffix = path.suffix.lower()
    if suffix == ".pgm" and data.ndim != 2:
        raise ParameterError("PGM holds single-channel images")
    if suffix == ".ppm" and data.ndim == 2:
        data = np.repeat(data[..., None], 3, axis=2)
    fmt = {".png": "PNG", ".pgm": "PPM", ".ppm": "PPM"}.get(suffix)
    if fmt is None:
        raise ParameterError(f"unsupported image extension {suffix!r}")
    Image.fromarray(data).save(path, format=fmt)


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if len(im.getbands()) >= 3 else "L")
        return np.asarray(im, dtype=float) / 255.0


def write_mask(path, mask) -> None:
    data = np.asarray(mask, dtype=bool)
    Image.fromarray(data).save(Path(path), format="PPM")


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("1"), dtype=bool)


def write_warp_field(path, field) -> None:
    """Write ``<path>.json`` (header) and ``<path>.bin`` (float64 data)."""
    field = np.asarray(field, dtype="<f8")
    if field.ndim != 3 or field.shape[2] != 2:
        raise ParameterError("warp field must be (H, W, 2)")
    base = Path(path)
    header = {"height": field.shape[0], "width": field.shape[1], "channels": 2,
              "dtype": "float64-le", "convention": WARP_CONVENTION,
              "data": base.with_suffix(".bin").name}
    base.with_suffix(".json").write_text(json.dumps(header, sort_keys=True, indent=1))
    base.with_suffix(".bin").write_bytes(field.tobytes())


def read_warp_field(path) -> np.ndarray:
    base = Path(path)
    header = json.loads(base.with_suffix(".json").read_text())
    if header.get("convention") != WARP_CONVENTION:
        raise ParameterError(f"unknown warp convention {header.get('convention')!r}")
    raw = (base.parent / header["data"]).read_bytes()
    return np.frombuffer(raw, dtype="<f8").reshape(header["height"], header["width"], 2).copy()
