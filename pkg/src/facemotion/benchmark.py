"""Synthetic pose-locked, expression-varied benchmark.

Every identity gets one head-pose track shared by all of its videos: one
video per expression track plus one neutral video. Parameter files use
MetaHuman-style channel names (``CTRL_expressions_*``, ``HeadYaw`` ...).

Layout::

    <out>/manifest.json
    <out>/<identity>/rig.json
    <out>/<identity>/<video>/frame_%04d.png
    <out>/<identity>/<video>/params_%04d.json
    <out>/<identity>/<video>/keypoints.json
    <out>/<identity>/<video>/pose.json
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from facemotion.errors import ParameterError
from facemotion.imageio import write_image
from facemotion.rig import FlameParams, RigDefinition, keypoints_full, make_synthetic_rig
from facemotion.region import Camera, render_keypoint_frame
from facemotion.rotations import head_rotvec_from_euler

log = logging.getLogger(__name__)

EXPR_PREFIX = "CTRL_expressions_"
POSE_KEYS = ("HeadYaw", "HeadPitch", "HeadRoll")
POSE_LIMITS = {"HeadYaw": 25.0, "HeadPitch": 15.0, "HeadRoll": 10.0}
JAW_RANGE = 0.10  # radians of jaw opening per unit channel
EYE_PITCH_RANGE = 0.15
EYE_YAW_RANGE = 0.25
NEUTRAL = "neutral"


@dataclass(frozen=True)
class BenchmarkSpec:
    n_identities: int = 4
    n_expression_tracks: int = 4
    frames_per_video: int = 150
    fps: float = 30.0
    pose_track_seed: int = 0
    expression_seeds: tuple = ()
    image_size: tuple = (128, 128)
    seed: int = 0
    n_vertices: int = 400
    n_shape: int = 10
    n_expr: int = 10
    n_keypoints: int = 49
    shape_scale: float = 0.7

    def __post_init__(self):
        if min(self.n_identities, self.n_expression_tracks, self.frames_per_video) < 1:
            raise ParameterError("benchmark counts must be positive")
        if self.fps <= 0:
            raise ParameterError("fps must be positive")
        if self.expression_seeds and len(self.expression_seeds) != self.n_expression_tracks:
            raise ParameterError("need one expression seed per expression track")
        object.__setattr__(self, "expression_seeds", tuple(self.expression_seeds))
        object.__setattr__(self, "image_size", tuple(self.image_size))

    def track_seeds(self) -> tuple:
        if self.expression_seeds:
            return self.expression_seeds
        return tuple(self.seed * 7919 + 101 + j for j in range(self.n_expression_tracks))


@dataclass
class ExpressionTrack:
    """Per-frame channel values, all in [-1, 1]."""

    psi: np.ndarray
    jaw_open: np.ndarray
    eye_pitch: np.ndarray
    eye_yaw: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.psi.shape[0]


@dataclass(frozen=True)
class BenchmarkTriplet:
    source_path: str
    driving_path: str
    ground_truth_path: str
    mode: str
    identity: str = ""


def _sinusoids(rng, frames, fps, amplitude, f_lo, f_hi, zero_start, count=3):
    t = np.arange(frames) / fps
    split = rng.dirichlet(np.ones(count))
    amps = amplitude * split
    freqs = rng.uniform(f_lo, f_hi, count)
    phases = np.zeros(count) if zero_start else rng.uniform(0, 2 * np.pi, count)
    return sum(a * np.sin(2 * np.pi * f * t + p) for a, f, p in zip(amps, freqs, phases))


def generate_pose_track(seed: int, frames: int, fps: float = 30.0) -> np.ndarray:
    """``(frames, 3)`` degrees, columns ``HeadYaw, HeadPitch, HeadRoll``.

    Each channel sums three slow sinusoids (0.05-0.25 Hz) whose amplitudes add
    up to at most 25 degrees.
    """
    if frames < 1:
        raise ParameterError("frames must be >= 1")
    rng = np.random.default_rng([seed, 1])
    cols = [_sinusoids(rng, frames, fps, POSE_LIMITS[k], 0.05, 0.25, zero_start=False)
            for k in POSE_KEYS]
    return np.stack(cols, axis=1)


def generate_expression_track(seed: int, frames: int, n_expr: int, fps: float = 30.0,
                              zero: bool = False) -> ExpressionTrack:
    """Smooth channel curves in [-1, 1]; every channel is 0 at frame 0.

    ``zero=True`` gives the all-neutral track.
    """
    if frames < 1:
        raise ParameterError("frames must be >= 1")
    if zero:
        z = np.zeros(frames)
        return ExpressionTrack(np.zeros((frames, n_expr)), z, z.copy(), z.copy())
    rng = np.random.default_rng([seed, 2])
    def curve():
        return _sinusoids(rng, frames, fps, rng.uniform(0.3, 0.9), 0.05, 0.25, zero_start=True)
    psi = np.stack([curve() for _ in range(n_expr)], axis=1)
    return ExpressionTrack(psi, curve(), curve(), curve())


def frame_channels(pose_row, track: ExpressionTrack, frame: int, beta, fps: float) -> dict:
    doc = {"frame": int(frame), "fps": float(fps), "shape": [float(b) for b in beta]}
    for key, value in zip(POSE_KEYS, pose_row):
        doc[key] = float(value)
    for j, value in enumerate(track.psi[frame]):
        doc[f"{EXPR_PREFIX}psi_{j:02d}"] = float(value)
    doc[f"{EXPR_PREFIX}jawOpen"] = float(track.jaw_open[frame])
    doc[f"{EXPR_PREFIX}eyeLookPitch"] = float(track.eye_pitch[frame])
    doc[f"{EXPR_PREFIX}eyeLookYaw"] = float(track.eye_yaw[frame])
    return doc


def params_from_channels(doc: dict) -> FlameParams:
    """Rig parameters for one frame's channel dictionary."""
    psi_keys = sorted(k for k in doc if k.startswith(f"{EXPR_PREFIX}psi_"))
    psi = [doc[k] for k in psi_keys]
    yaw, pitch, roll = (doc[k] for k in POSE_KEYS)
    jaw = np.array([JAW_RANGE * doc.get(f"{EXPR_PREFIX}jawOpen", 0.0), 0.0, 0.0])
    eye = np.array([EYE_PITCH_RANGE * doc.get(f"{EXPR_PREFIX}eyeLookPitch", 0.0),
                    EYE_YAW_RANGE * doc.get(f"{EXPR_PREFIX}eyeLookYaw", 0.0), 0.0])
    return FlameParams(beta=doc["shape"], psi=psi, theta_head=head_rotvec_from_euler(pitch, yaw, roll),
                       theta_jaw=jaw, theta_eye_l=eye, theta_eye_r=eye.copy())


def load_frame_params(path) -> FlameParams:
    """Read a per-frame parameter file in either channel or plain form."""
    doc = json.loads(Path(path).read_text())
    if POSE_KEYS[0] in doc:
        return params_from_channels(doc)
    return FlameParams.from_json_dict(doc)


def identity_name(i: int) -> str:
    return f"id{i:02d}"


def video_name(j: int | None) -> str:
    return NEUTRAL if j is None else f"expr_{j:02d}"


def _dump(path: Path, doc) -> None:
    try:
        path.write_text(json.dumps(doc, sort_keys=True, indent=1))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _write_video(vdir: Path, rig: RigDefinition, beta, pose, track: ExpressionTrack,
                 spec: BenchmarkSpec, camera: Camera) -> None:
    vdir.mkdir(parents=True, exist_ok=True)
    h, w = spec.image_size
    keypoints = []
    for f in range(spec.frames_per_video):
        channels = frame_channels(pose[f], track, f, beta, spec.fps)
        _dump(vdir / f"params_{f:04d}.json", channels)
        params = params_from_channels(channels)
        keypoints.append(keypoints_full(rig, params).tolist())
        img = render_keypoint_frame(rig, params, camera, h, w)
        try:
            write_image(vdir / f"frame_{f:04d}.png", img)
        except OSError as exc:
            raise OSError(f"cannot write {vdir / f'frame_{f:04d}.png'}: {exc}") from exc
    _dump(vdir / "keypoints.json", {
        "frames": keypoints, "orthographic": False, "fps": spec.fps,
        "camera": {"scale": camera.scale, "offset": list(camera.offset)},
    })
    _dump(vdir / "pose.json", {k: pose[:, i].tolist() for i, k in enumerate(POSE_KEYS)})


def _identity_seeds(spec: BenchmarkSpec, i: int):
    return spec.seed * 1000 + 17 * i + 1, spec.pose_track_seed * 1000 + i


def build_benchmark(spec: BenchmarkSpec, out_dir, jobs: int = 1) -> dict:
    """Write the benchmark under ``out_dir`` and return the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = spec.image_size
    camera = Camera.default(h, w)
    n = spec.frames_per_video
    tracks = [generate_expression_track(s, n, spec.n_expr, spec.fps) for s in spec.track_seeds()]
    neutral = generate_expression_track(0, n, spec.n_expr, spec.fps, zero=True)

    def one_identity(i):
        rig_seed, pose_seed = _identity_seeds(spec, i)
        rig = make_synthetic_rig(rig_seed, spec.n_vertices, spec.n_shape, spec.n_expr,
                                 spec.n_keypoints)
        beta = spec.shape_scale * np.random.default_rng([rig_seed, 3]).normal(size=spec.n_shape)
        pose = generate_pose_track(pose_seed, n, spec.fps)
        idir = out / identity_name(i)
        idir.mkdir(parents=True, exist_ok=True)
        rig.save(idir / "rig.json")
        for j, track in enumerate(tracks):
            _write_video(idir / video_name(j), rig, beta, pose, track, spec, camera)
        _write_video(idir / NEUTRAL, rig, beta, pose, neutral, spec, camera)
        log.info("identity %s written", identity_name(i))
        return {"identity": identity_name(i), "rig_seed": rig_seed, "pose_track_seed": pose_seed,
                "beta": beta.tolist()}

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            identities = list(pool.map(one_identity, range(spec.n_identities)))
    else:
        identities = [one_identity(i) for i in range(spec.n_identities)]

    triplets = []
    pick = np.random.default_rng([spec.seed, 4])
    for i in range(spec.n_identities):
        ident = identity_name(i)
        m = spec.n_expression_tracks
        if m >= 2:
            src, drv = pick.choice(m, size=2, replace=False)
            triplets.append(BenchmarkTriplet(f"{ident}/{video_name(int(src))}",
                                             f"{ident}/{video_name(int(drv))}",
                                             f"{ident}/{video_name(int(drv))}",
                                             "replacement", ident))
        drv = int(pick.integers(m))
        triplets.append(BenchmarkTriplet(f"{ident}/{NEUTRAL}", f"{ident}/{video_name(drv)}",
                                         f"{ident}/{video_name(drv)}", "enhancement", ident))

    videos = [f"{identity_name(i)}/{video_name(j)}" for i in range(spec.n_identities)
              for j in list(range(spec.n_expression_tracks)) + [None]]
    manifest = {
        "schema": "facemotion.benchmark",
        "version": 1,
        "spec": asdict(spec),
        "expression_seeds": list(spec.track_seeds()),
        "camera": {"scale": camera.scale, "offset": list(camera.offset)},
        "identities": identities,
        "videos": videos,
        "triplets": [asdict(t) for t in triplets],
    }
    _dump(out / "manifest.json", manifest)
    return manifest
