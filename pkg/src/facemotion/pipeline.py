"""Command implementations behind the ``facemotion`` CLI.

Every command takes plain values, writes files only, and returns an exit
code: 0 on success, 3 when a fit did not converge. Input problems raise
:class:`InputError` (or one of the library's ValueError subclasses), which
the CLI maps to exit code 2.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from facemotion.benchmark import BenchmarkSpec, build_benchmark, load_frame_params
from facemotion.errors import NumericError, ParameterError
from facemotion.imageio import read_image, read_mask, write_image, write_mask
from facemotion.metrics import (
    aed,
    apd,
    expression_vector,
    frechet_distance,
    gaze_direction,
    l1,
    mae_angular,
    pooled_features,
    pose_vector,
    psnr,
    ssim,
)
from facemotion.losses import masked_l1
from facemotion.motion import (
    animate,
    delta_leakage,
    descriptor_from_params,
    edit_enhance,
    edit_replace,
    MotionDescriptor,
    procrustes_fit,
    transform_liveportrait,
)
from facemotion.plotting import plot_eval, plot_leakage
from facemotion.region import (
    apply_warp,
    attenuate_outside_mask,
    Camera,
    estimate_warp_field,
    facial_masks,
)
from facemotion.rig import FlameParams, RigDefinition, make_synthetic_rig
from facemotion.rotations import axis_angle_to_matrix, matrix_to_axis_angle
from facemotion.tracker import TrackerConfig, fit_sequence

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3
MODES = ("replace", "enhance", "animate")
EVAL_COLUMNS = ("frame", "psnr", "ssim", "l1", "nonfacial_l1", "mae_deg", "aed", "apd", "frechet")


class InputError(ValueError):
    """Unusable command input (missing files, inconsistent lengths ...)."""


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def _map(fn, items, jobs):
    items = list(items)
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _sorted_files(directory: Path, prefix: str, suffix: str):
    return sorted(directory.glob(f"{prefix}_[0-9][0-9][0-9][0-9]{suffix}"))


# ---------------------------------------------------------------- videos


@dataclass
class Video:
    """A frame directory plus whatever per-frame data sits next to it."""

    path: Path
    frames: list
    params: list | None
    keypoints: np.ndarray | None
    camera: Camera | None
    rig: RigDefinition | None

    @property
    def n_frames(self) -> int:
        return len(self.frames)


def find_rig(video_dir: Path, rig_path=None) -> RigDefinition | None:
    candidates = [Path(rig_path)] if rig_path else [video_dir / "rig.json", video_dir.parent / "rig.json"]
    for c in candidates:
        if c.is_file():
            return RigDefinition.load(c)
    if rig_path:
        raise InputError(f"{rig_path}: rig file not found")
    return None


def load_video(path, rig_path=None) -> Video:
    path = Path(path)
    if not path.is_dir():
        raise InputError(f"{path}: not a directory")
    frames = _sorted_files(path, "frame", ".png")
    param_files = _sorted_files(path, "params", ".json")
    params = [load_frame_params(p) for p in param_files] if param_files else None
    keypoints, camera = None, None
    kp_file = path / "keypoints.json"
    if kp_file.is_file():
        doc = read_json(kp_file)
        keypoints = np.asarray(doc["frames"], dtype=float)
        if "camera" in doc:
            camera = Camera(doc["camera"]["scale"], tuple(doc["camera"]["offset"]))
    if params is not None and frames and len(params) != len(frames):
        raise InputError(f"{path}: {len(frames)} frames but {len(params)} parameter files")
    return Video(path, frames, params, keypoints, camera, find_rig(path, rig_path))


def video_params(video: Video, tracker: TrackerConfig) -> tuple[list, bool]:
    """Per-frame parameters, read from disk or tracked from keypoints."""
    if video.params is not None:
        return video.params, True
    if video.keypoints is None or video.rig is None:
        raise InputError(f"{video.path}: no parameter files and no keypoints/rig to track")
    log.info("%s: no parameter files, tracking %d frames", video.path, len(video.keypoints))
    seq = fit_sequence(video.rig, video.keypoints, tracker)
    return seq.params_per_frame, seq.all_converged


# ---------------------------------------------------------------- rig-gen / bench-gen


def cmd_rig_gen(out, seed=0, n_vertices=400, n_shape=10, n_expr=10, n_keypoints=49) -> int:
    rig = make_synthetic_rig(seed, n_vertices, n_shape, n_expr, n_keypoints)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rig.save(out)
    log.info("wrote rig with %d vertices to %s", rig.n_vertices, out)
    return EXIT_OK


def cmd_bench_gen(out_dir, jobs=1, **spec_fields) -> int:
    spec = BenchmarkSpec(**spec_fields)
    manifest = build_benchmark(spec, out_dir, jobs=jobs)
    log.info("wrote %d videos and %d triplets to %s", len(manifest["videos"]),
             len(manifest["triplets"]), out_dir)
    return EXIT_OK


# ---------------------------------------------------------------- track


def cmd_track(keypoints_path, rig_path, out, tracker: TrackerConfig = TrackerConfig(),
              beta=None) -> int:
    doc = read_json(keypoints_path)
    frames = doc.get("frames") if isinstance(doc, dict) else doc
    if not frames:
        raise InputError(f"{keypoints_path}: frame list is empty")
    rig = RigDefinition.load(rig_path)
    obs = [np.asarray(f, dtype=float) for f in frames]
    for i, f in enumerate(obs):
        if f.ndim != 2 or f.shape[0] != rig.n_keypoints or f.shape[1] not in (2, 3):
            raise InputError(f"frame {i}: expected ({rig.n_keypoints}, 3) keypoints, got {f.shape}")
    seq = fit_sequence(rig, obs, tracker, beta=beta)
    report = seq.to_json_dict()
    residuals = np.asarray(seq.residual_per_frame)
    report["summary"] = {
        "frames": len(obs),
        "converged": int(np.sum(seq.converged_flags)),
        "max_residual_rms": float(np.nanmax(residuals)),
        "mean_residual_rms": float(np.nanmean(residuals)),
    }
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_json(out, report)
    if not seq.all_converged:
        log.error("%d of %d frames did not converge", len(obs) - report["summary"]["converged"], len(obs))
        return EXIT_NONCONVERGED
    return EXIT_OK


# ---------------------------------------------------------------- edit


@dataclass(frozen=True)
class EditOptions:
    mode: str = "replace"
    bam: bool | None = None
    feather: float = 0.0
    expansion: float = 1.2
    sigma: float | None = None
    anchor: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.feather < 0 or self.expansion < 1:
            raise ParameterError("feather must be >= 0 and expansion >= 1")

    @property
    def use_bam(self) -> bool:
        return self.mode != "animate" if self.bam is None else bool(self.bam)


def implied_params(mode, ps: FlameParams, pd: FlameParams, pd0: FlameParams) -> FlameParams:
    """Parameters the edited frame nominally carries."""
    if mode == "replace":
        return ps.replace(psi=pd.psi, theta_jaw=pd.theta_jaw, theta_eye_l=pd.theta_eye_l,
                          theta_eye_r=pd.theta_eye_r)
    if mode == "enhance":
        def add(name):
            return getattr(ps, name) + getattr(pd, name) - getattr(pd0, name)
        return ps.replace(psi=add("psi"), theta_jaw=add("theta_jaw"),
                          theta_eye_l=add("theta_eye_l"), theta_eye_r=add("theta_eye_r"))
    return pd.replace(beta=ps.beta)


def edit_keypoints(mode, md_s: list, md_d: list, anchor: int = 0):
    """Per-frame ``(x_s, x_d)`` for the chosen editing mode."""
    out = []
    for i, d in enumerate(md_d):
        if mode == "replace":
            out.append(edit_replace(md_s[i], d.delta))
        elif mode == "enhance":
            out.append(edit_enhance(md_s[i], d.delta, md_d[anchor].delta))
        else:
            out.append(animate(md_s[0], d))
    return out


def cmd_edit(source_dir, driving_dir, out_dir, options: EditOptions = EditOptions(),
             rig_path=None, tracker: TrackerConfig = TrackerConfig(), jobs: int = 1) -> int:
    src = load_video(source_dir, rig_path)
    drv = load_video(driving_dir, rig_path)
    if src.rig is None:
        raise InputError(f"{source_dir}: no rig.json found (pass --rig)")
    if not src.frames:
        raise InputError(f"{source_dir}: no frame_XXXX.png files")
    n = drv.n_frames if drv.params is None else len(drv.params)
    if options.mode != "animate" and n != src.n_frames:
        raise InputError(f"frame-count mismatch: source {src.n_frames}, driving {n}")
    if not 0 <= options.anchor < n:
        raise InputError(f"anchor frame {options.anchor} outside 0..{n - 1}")
    drv_rig = drv.rig or src.rig
    ps, ok_s = video_params(src, tracker)
    pd, ok_d = video_params(drv, tracker)
    md_s = [descriptor_from_params(src.rig, p) for p in ps]
    md_d = [descriptor_from_params(drv_rig, p) for p in pd]
    pairs = edit_keypoints(options.mode, md_s, md_d, options.anchor)

    first = read_image(src.frames[0])
    h, w = first.shape[:2]
    camera = src.camera or Camera.default(h, w)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def one(i):
        x_s, x_d = pairs[i]
        frame = first if options.mode == "animate" else read_image(src.frames[i])
        uv_s, uv_d = camera.project(x_s), camera.project(x_d)
        facial, _ = facial_masks(uv_s, options.expansion, h, w)
        field = estimate_warp_field(uv_s, uv_d, h, w, options.sigma)
        if options.use_bam:
            field = attenuate_outside_mask(field, facial, options.feather)
        write_image(out / f"frame_{i:04d}.png", apply_warp(frame, field))
        write_mask(out / f"mask_{i:04d}.pbm", facial)
        p0 = pd[options.anchor]
        base = ps[0] if options.mode == "animate" else ps[i]
        write_json(out / f"params_{i:04d}.json",
                   implied_params(options.mode, base, pd[i], p0).to_json_dict())
        return x_d.tolist()

    edited = _map(one, range(len(pairs)), jobs)
    write_json(out / "keypoints.json", {
        "frames": edited, "orthographic": False,
        "camera": {"scale": camera.scale, "offset": list(camera.offset)},
        "mode": options.mode, "bam": options.use_bam,
    })
    log.info("edited %d frames (%s, bam=%s) into %s", len(pairs), options.mode, options.use_bam, out)
    return EXIT_OK if (ok_s and ok_d) else EXIT_NONCONVERGED


# ---------------------------------------------------------------- eval


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if value is None or not np.isfinite(value):
        return "nan"
    return repr(float(value))


def _frame_metrics(gen: Video, ref: Video, i: int, rig, gen_params, ref_params):
    a, b = read_image(gen.frames[i]), read_image(ref.frames[i])
    if a.shape != b.shape:
        raise InputError(f"frame {i}: image sizes differ {a.shape} vs {b.shape}")
    row = {"frame": i, "psnr": psnr(a, b), "ssim": ssim(a, b), "l1": l1(a, b)}
    mask_file = gen.path / f"mask_{i:04d}.pbm"
    if mask_file.is_file():
        nonfacial = ~read_mask(mask_file)
    elif ref.keypoints is not None:
        cam = ref.camera or Camera.default(*a.shape[:2])
        nonfacial = facial_masks(cam.project(ref.keypoints[i]), 1.2, *a.shape[:2])[1]
    else:
        nonfacial = None
    row["nonfacial_l1"] = np.nan if nonfacial is None else masked_l1(a, b, nonfacial)
    if rig is not None and gen_params is not None and ref_params is not None:
        pg, pr = gen_params[i], ref_params[i]
        row["mae_deg"] = mae_angular(gaze_direction(rig, pg), gaze_direction(rig, pr))
        row["aed"] = aed(expression_vector(rig, pg), expression_vector(rig, pr))
        row["apd"] = apd(pose_vector(pg), pose_vector(pr))
    else:
        row["mae_deg"] = row["aed"] = row["apd"] = np.nan
    row["frechet"] = np.nan
    return row


def evaluate_dirs(generated, reference, rig_path=None, jobs: int = 1):
    """Per-frame metric rows plus an aggregate row (mean over frames)."""
    gen = load_video(generated, rig_path)
    ref = load_video(reference, rig_path)
    if not gen.frames or gen.n_frames != ref.n_frames:
        raise InputError(f"misaligned frame sets: {gen.n_frames} generated vs {ref.n_frames} reference")
    rig = ref.rig or gen.rig
    rows = _map(lambda i: _frame_metrics(gen, ref, i, rig, gen.params, ref.params),
                range(gen.n_frames), jobs)
    agg = {"frame": "mean"}
    for key in EVAL_COLUMNS[1:-1]:
        values = np.array([r[key] for r in rows], dtype=float)
        agg[key] = float(np.mean(values)) if np.all(np.isfinite(values)) else np.nan
    if gen.n_frames >= 2:
        fg = np.array([pooled_features(read_image(f)) for f in gen.frames])
        fr = np.array([pooled_features(read_image(f)) for f in ref.frames])
        try:
            agg["frechet"] = frechet_distance(fg, fr)
        except NumericError as exc:
            log.warning("Frechet distance unavailable: %s", exc)
            agg["frechet"] = np.nan
    else:
        agg["frechet"] = np.nan
    return rows, agg


def cmd_eval(generated, reference, out_dir, rig_path=None, jobs: int = 1) -> int:
    rows, agg = evaluate_dirs(generated, reference, rig_path, jobs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EVAL_COLUMNS)
    for r in rows + [agg]:
        writer.writerow([_fmt(r[c]) if c != "frame" else str(r[c]) for c in EVAL_COLUMNS])
    (out / "metrics.csv").write_text(buf.getvalue())
    summary = {k: (None if not np.isfinite(v) else float(v)) for k, v in agg.items() if k != "frame"}
    summary["frames"] = len(rows)
    write_json(out / "summary.json", summary)
    plot_eval(rows, out / "metrics.png")
    log.info("evaluated %d frames: PSNR %.2f dB, SSIM %.4f", len(rows), agg["psnr"], agg["ssim"])
    return EXIT_OK


# ---------------------------------------------------------------- leakage


def _random_rotation(rng, min_deg, max_deg):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(min_deg, max_deg))
    return axis_angle_to_matrix(axis * angle), float(np.degrees(angle))


def leakage_samples(seed: int = 0, n_samples: int = 200, n_keypoints: int = 49,
                    min_angle: float = 1.0, max_angle: float = 45.0) -> list[dict]:
    """Random ``(x_c, delta, R)`` draws with both conventions' leakage and pose recovery."""
    if n_samples < 1:
        raise ParameterError("n_samples must be >= 1")
    if not 0 <= min_angle <= max_angle:
        raise ParameterError("need 0 <= min_angle <= max_angle")
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_samples):
        x_c = rng.normal(scale=0.5, size=(n_keypoints, 3))
        delta = rng.normal(scale=0.05, size=(n_keypoints, 3))
        delta_drv = rng.normal(scale=0.05, size=(n_keypoints, 3))
        r_col, angle = _random_rotation(rng, min_angle, max_angle)
        rot = r_col.T
        d1, d3 = delta_leakage(x_c, delta, rot)
        # replacement editing of a source posed by rot; pose recovered by Procrustes
        s, t = rng.uniform(0.8, 1.2), rng.normal(size=3)
        md = MotionDescriptor(x_c=x_c, rotation=rot, delta=delta, scale=s, translation=t)
        reference = x_c + delta_drv
        recovered = {}
        for name, edited in (("deform_first", edit_replace(md, delta_drv)[1]),
                             ("rotate_first", transform_liveportrait(md.replace(delta=delta_drv)))):
            fit = procrustes_fit(reference, edited)
            err = np.linalg.norm(matrix_to_axis_angle((fit.rotation @ rot.T).T))
            recovered[name] = (float(err), fit.residual)
        rows.append({
            "sample": i,
            "angle_deg": angle,
            "leak_rotate_first": float(np.abs(d1 - delta).max()),
            "leak_deform_first": float(np.abs(d3 - delta).max()),
            "pose_err_rad_rotate_first": recovered["rotate_first"][0],
            "pose_err_rad_deform_first": recovered["deform_first"][0],
            "procrustes_residual_rotate_first": recovered["rotate_first"][1],
            "procrustes_residual_deform_first": recovered["deform_first"][1],
        })
    return rows


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"mean": float(v.mean()), "median": float(np.median(v)), "max": float(v.max()),
            "min": float(v.min())}


def cmd_leakage(out_dir, seed: int = 0, n_samples: int = 200, n_keypoints: int = 49,
                min_angle: float = 1.0, max_angle: float = 45.0) -> int:
    rows = leakage_samples(seed, n_samples, n_keypoints, min_angle, max_angle)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(keys)
    for r in rows:
        writer.writerow([str(r[k]) if k == "sample" else repr(r[k]) for k in keys])
    (out / "leakage.csv").write_text(buf.getvalue())
    report = {"seed": seed, "n_samples": n_samples, "n_keypoints": n_keypoints,
              "angle_range_deg": [min_angle, max_angle]}
    report.update({k: _stats([r[k] for r in rows]) for k in keys if k not in ("sample",)})
    write_json(out / "leakage.json", report)
    plot_leakage([r["angle_deg"] for r in rows], [r["leak_rotate_first"] for r in rows],
                 [r["leak_deform_first"] for r in rows], out / "leakage.png")
    log.info("leakage: rotate-first mean %.3e, deform-first max %.3e",
             report["leak_rotate_first"]["mean"], report["leak_deform_first"]["max"])
    return EXIT_OK


__all__ = [
    "EditOptions", "InputError", "cmd_bench_gen", "cmd_edit", "cmd_eval",
    "cmd_leakage", "cmd_rig_gen", "cmd_track", "edit_keypoints", "evaluate_dirs",
    "implied_params", "leakage_samples", "load_video",
]
