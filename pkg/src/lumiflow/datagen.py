"""Paired-sample dataset generation for light/object editing tasks.

Every sample stores four disentangled renders (ambient + direct for frames A
and B) plus the edit parameters; the supervised input/target images are
recomputed from those files with one uniform rule:

    input  = tone_map(composite(frame A))          (ambient only for insertion)
    target = tone_map(relight(frame B, alpha, 2**stops, tint))

Tone mapping uses the exhaustive luminance percentile of the *input* frame for
both images, so a pair shares one exposure and edits stay radiometrically
comparable.  Per-sample seeds derive from (dataset_seed, sample_index), which
makes parallel and serial generation emit identical bytes.
"""

from __future__ import annotations

import colorsys
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import imgio, radiometry
from .control_frames import (
    BoundingBox,
    DegenerateBoxError,
    augment_box,
    crop_object_frame,
    encode_color_frame,
    encode_intensity_frame,
    encode_movement_map,
)
from .render import (
    SampleRejected,
    Scene,
    SceneConfig,
    Sphere,
    generate_movement_pair,
    move_light,
    project_sphere_bbox,
    render_disentangled,
    sample_scene,
)

MANIFEST_VERSION = 1

TASKS = ("light_move", "object_move", "color", "intensity", "joint", "removal", "insertion")

# The published task mix lists six ratio terms for seven categories; the
# artifact pins an explicit weight per task instead (joint gets the leftover
# low weight alongside removal/insertion).
DEFAULT_TASK_WEIGHTS = {
    "light_move": 6,
    "object_move": 3,
    "color": 3,
    "intensity": 3,
    "joint": 1,
    "removal": 1,
    "insertion": 1,
}

_MAX_ATTEMPTS = 64


class DatasetConfigError(ValueError):
    """Invalid dataset generation configuration."""


@dataclass(frozen=True)
class DatasetConfig:
    n_samples: int = 500
    scene: SceneConfig = field(default_factory=SceneConfig)
    task_weights: dict = field(default_factory=lambda: dict(DEFAULT_TASK_WEIGHTS))
    stops_range: tuple[float, float] = (-3.0, 3.0)
    tint_saturation: tuple[float, float] = (0.5, 1.0)
    min_light_move: float = 0.6
    min_object_move: float = 0.5
    joint_color_prob: float = 0.5

    def validate(self) -> None:
        if self.n_samples < 1:
            raise DatasetConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        unknown = set(self.task_weights) - set(TASKS)
        if unknown:
            raise DatasetConfigError(f"unknown task names in weights: {sorted(unknown)}")
        if not self.task_weights or sum(self.task_weights.values()) <= 0:
            raise DatasetConfigError("task_weights must contain at least one positive weight")
        if any(w < 0 for w in self.task_weights.values()):
            raise DatasetConfigError("task weights must be >= 0")
        self.scene.validate()


def task_schedule(weights: dict, n: int, seed: int) -> list[str]:
    """Apportion n samples to tasks by largest remainder, then shuffle deterministically."""
    names = [t for t in TASKS if weights.get(t, 0) > 0]
    total = sum(weights[t] for t in names)
    exact = {t: n * weights[t] / total for t in names}
    counts = {t: int(np.floor(exact[t])) for t in names}
    leftover = n - sum(counts.values())
    by_frac = sorted(names, key=lambda t: (-(exact[t] - counts[t]), t))
    for t in by_frac[:leftover]:
        counts[t] += 1
    schedule = [t for t in names for _ in range(counts[t])]
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0FFEE)))
    rng.shuffle(schedule)
    return schedule


def _random_tint(rng, saturation_range) -> tuple[float, float, float]:
    h = rng.uniform(0.0, 1.0)
    s = rng.uniform(*saturation_range)
    return tuple(float(c) for c in colorsys.hsv_to_rgb(h, s, 1.0))


def _require_box(box: BoundingBox | None, width: int, height: int) -> BoundingBox:
    """Reject boxes that are absent or too thin to rasterize after 0.8x augmentation."""
    if box is None:
        raise SampleRejected("box projects outside the view")
    min_side = 1.75 / min(width, height)
    if (box.x1 - box.x0) < min_side or (box.y1 - box.y0) < min_side:
        raise SampleRejected("projected box too thin for stable rasterization")
    return box


def _light_box_or_reject(scene: Scene, light_index: int = 0) -> BoundingBox:
    box = project_sphere_bbox(scene.camera, scene.lights[light_index].position, scene.proxy_radius)
    return _require_box(box, scene.camera.width, scene.camera.height)


def _draw_light_trajectory(rng, cfg: DatasetConfig) -> tuple[np.ndarray, np.ndarray]:
    sc = cfg.scene
    for _ in range(_MAX_ATTEMPTS):
        a = np.array([rng.uniform(*sc.light_x), rng.uniform(*sc.light_y), rng.uniform(*sc.light_z)])
        b = np.array([rng.uniform(*sc.light_x), rng.uniform(*sc.light_y), rng.uniform(*sc.light_z)])
        if np.linalg.norm(b - a) >= cfg.min_light_move:
            return a, b
    raise SampleRejected("could not draw a sufficiently long light trajectory")


def _move_sphere(scene: Scene, rng, cfg: DatasetConfig):
    sc = cfg.scene
    spheres = [i for i, o in enumerate(scene.objects) if isinstance(o, Sphere)]
    k = int(rng.choice(spheres))
    old = scene.objects[k]
    for _ in range(_MAX_ATTEMPTS):
        new_center = np.array([rng.uniform(*sc.sphere_x), old.radius, rng.uniform(*sc.sphere_z)])
        if np.linalg.norm(new_center - old.center) >= cfg.min_object_move:
            break
    else:
        raise SampleRejected("could not draw a sufficiently large object displacement")
    objects = list(scene.objects)
    objects[k] = Sphere(center=new_center, radius=old.radius, albedo=old.albedo)
    scene_b = Scene(
        objects=tuple(objects),
        lights=scene.lights,
        camera=scene.camera,
        ambient_level=scene.ambient_level,
        proxy_radius=scene.proxy_radius,
    )
    cam = scene.camera
    src = _require_box(project_sphere_bbox(cam, old.center, old.radius), cam.width, cam.height)
    tgt = _require_box(project_sphere_bbox(cam, new_center, old.radius), cam.width, cam.height)
    return scene_b, src, tgt


def _build_sample(dataset_seed: int, index: int, task: str, cfg: DatasetConfig) -> dict:
    """Render one sample; returns a record with in-memory images attached."""
    rng = np.random.default_rng(np.random.SeedSequence((dataset_seed, index)))
    alpha, stops, tint = 1.0, 0.0, (1.0, 1.0, 1.0)
    if task == "color":
        tint = _random_tint(rng, cfg.tint_saturation)
    elif task == "intensity":
        stops = float(rng.uniform(*cfg.stops_range))
    elif task == "joint":
        if rng.uniform() < cfg.joint_color_prob:
            tint = _random_tint(rng, cfg.tint_saturation)
        else:
            stops = float(rng.uniform(*cfg.stops_range))
    elif task == "removal":
        tint = (0.0, 0.0, 0.0)

    for _ in range(_MAX_ATTEMPTS):
        scene_seed = int(rng.integers(0, 2**62))
        scene = sample_scene(scene_seed, cfg.scene)
        try:
            if task in ("light_move", "joint"):
                pos_a, pos_b = _draw_light_trajectory(rng, cfg)
                pair = generate_movement_pair(scene, 0, (pos_a, pos_b), 0.0, 1.0)
                frame_a, frame_b = pair.frame_a, pair.frame_b
                w, h = cfg.scene.width, cfg.scene.height
                src = _require_box(pair.src_box, w, h)
                tgt = _require_box(pair.tgt_box, w, h)
            elif task == "object_move":
                scene_b, src, tgt = _move_sphere(scene, rng, cfg)
                frame_a = render_disentangled(scene, 0)
                frame_b = render_disentangled(scene_b, 0)
            else:  # color / intensity / removal / insertion: single rendered frame
                src = tgt = _light_box_or_reject(scene)
                frame_a = render_disentangled(scene, 0)
                frame_b = frame_a
            break
        except SampleRejected:
            continue
    else:
        raise RuntimeError(f"sample {index}: no valid draw after {_MAX_ATTEMPTS} attempts")

    return {
        "task": task,
        "src_box": list(src.as_tuple()),
        "tgt_box": list(tgt.as_tuple()),
        "alpha": alpha,
        "stops": stops,
        "tint": list(tint),
        "_frame_a": frame_a,
        "_frame_b": frame_b,
        "_same_frames": frame_b is frame_a,
    }


@dataclass
class DatasetManifest:
    version: int
    seed: int
    samples: list
    base_dir: str = ""

    @property
    def n(self) -> int:
        return len(self.samples)

    def task_counts(self) -> dict:
        counts: dict = {}
        for s in self.samples:
            counts[s["task"]] = counts.get(s["task"], 0) + 1
        return counts


def generate_dataset(cfg: DatasetConfig, seed: int, out_dir, jobs: int = 1) -> str:
    """Render a dataset into out_dir; returns the manifest path.

    Byte-identical across runs (and across jobs counts) for a fixed seed.
    """
    cfg.validate()
    out_dir = str(out_dir)
    img_dir = os.path.join(out_dir, "images")
    try:
        os.makedirs(img_dir, exist_ok=True)
        probe = os.path.join(out_dir, ".write_probe")
        with open(probe, "w") as f:
            f.write("")
        os.remove(probe)
    except OSError as e:
        raise OSError(f"output directory not writable: {out_dir}: {e}") from e

    schedule = task_schedule(cfg.task_weights, cfg.n_samples, seed)
    args = [(seed, i, schedule[i], cfg) for i in range(cfg.n_samples)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_build_sample_star, args, chunksize=8))
    else:
        records = [_build_sample_star(a) for a in args]

    samples = []
    for i, rec in enumerate(records):
        files = {}
        for key, img in (("amb_a", rec["_frame_a"]["amb"]), ("light_a", rec["_frame_a"]["light"])):
            rel = f"images/{i:05d}_{key}.pfm"
            imgio.write_pfm(os.path.join(out_dir, rel), img)
            files[key] = rel
        if rec["_same_frames"]:
            files["amb_b"] = files["amb_a"]
            files["light_b"] = files["light_a"]
        else:
            for key, img in (("amb_b", rec["_frame_b"]["amb"]), ("light_b", rec["_frame_b"]["light"])):
                rel = f"images/{i:05d}_{key}.pfm"
                imgio.write_pfm(os.path.join(out_dir, rel), img)
                files[key] = rel
        samples.append({
            "task": rec["task"],
            "files": files,
            "src_box": rec["src_box"],
            "tgt_box": rec["tgt_box"],
            "alpha": rec["alpha"],
            "stops": rec["stops"],
            "tint": rec["tint"],
        })

    manifest = {"version": MANIFEST_VERSION, "seed": seed, "samples": samples}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _build_sample_star(args):
    return _build_sample(*args)


def load_manifest(path) -> DatasetManifest:
    with open(path) as f:
        data = json.load(f)
    if data.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {data.get('version')!r}")
    return DatasetManifest(
        version=data["version"],
        seed=data["seed"],
        samples=data["samples"],
        base_dir=os.path.dirname(os.path.abspath(path)),
    )


# ---------------------------------------------------------------------------
# Supervised pairs and condition frames
# ---------------------------------------------------------------------------


@dataclass
class TrainingPair:
    """Tone-mapped supervised pair plus the conditioning parameters."""

    task: str
    input_img: np.ndarray
    target_img: np.ndarray
    src_box: BoundingBox
    tgt_box: BoundingBox
    alpha: float
    stops: float
    tint: tuple
    e_max: float


def training_pair(sample: dict, base_dir: str) -> TrainingPair:
    """Materialize the supervised (input, target) pair for a manifest sample."""
    f = sample["files"]
    amb_a = imgio.read_pfm(os.path.join(base_dir, f["amb_a"])).astype(np.float64)
    light_a = imgio.read_pfm(os.path.join(base_dir, f["light_a"])).astype(np.float64)
    if f["amb_b"] == f["amb_a"]:
        amb_b, light_b = amb_a, light_a
    else:
        amb_b = imgio.read_pfm(os.path.join(base_dir, f["amb_b"])).astype(np.float64)
        light_b = imgio.read_pfm(os.path.join(base_dir, f["light_b"])).astype(np.float64)

    task = sample["task"]
    alpha = float(sample["alpha"])
    stops = float(sample["stops"])
    tint = tuple(float(c) for c in sample["tint"])

    if task == "insertion":
        input_linear = alpha * amb_a
    else:
        input_linear = radiometry.composite_linear(amb_a, light_a)
    gain = radiometry.illumination_gain(stops)
    target_linear = radiometry.relight(amb_b, light_b, alpha=alpha, gain=gain, tint=tint)

    # Exhaustive percentile: recomputable from the files alone, no hidden RNG.
    e_max = radiometry.luminance_percentile(
        input_linear, n_samples=input_linear.shape[0] * input_linear.shape[1]
    )
    return TrainingPair(
        task=task,
        input_img=radiometry.tone_map(input_linear, e_max),
        target_img=radiometry.tone_map(target_linear, e_max),
        src_box=BoundingBox(*sample["src_box"]),
        tgt_box=BoundingBox(*sample["tgt_box"]),
        alpha=alpha,
        stops=stops,
        tint=tint,
        e_max=e_max,
    )


@dataclass
class ControlFrameSet:
    """The five condition frames of one sample, all at frame resolution."""

    reference: np.ndarray
    object_frame: np.ndarray
    movement: np.ndarray
    color: np.ndarray
    intensity: np.ndarray
    src_box: BoundingBox
    tgt_box: BoundingBox


def build_control_frames(
    pair: TrainingPair,
    augment_seed: int | None = None,
    box_scale_range: tuple[float, float] = (0.8, 1.2),
) -> ControlFrameSet:
    """Construct the conditioning frames for a pair.

    With ``augment_seed`` the boxes are jittered (center-preserving scale)
    before rasterization, as done during training.  The object frame crops the
    reference image at the source box; for insertion it crops the target at
    the target box, since the inserted object is provided by the user there.
    """
    h, w = pair.input_img.shape[:2]
    res = (w, h)
    src, tgt = pair.src_box, pair.tgt_box
    if augment_seed is not None:
        src = augment_box(src, augment_seed, box_scale_range)
        tgt = augment_box(tgt, augment_seed + 1, box_scale_range)
        try:
            movement = encode_movement_map(src, tgt, res)
        except DegenerateBoxError:
            src, tgt = pair.src_box, pair.tgt_box
            movement = encode_movement_map(src, tgt, res)
    else:
        movement = encode_movement_map(src, tgt, res)
    if pair.task == "insertion":
        obj = crop_object_frame(pair.target_img, tgt, res)
    else:
        obj = crop_object_frame(pair.input_img, src, res)
    return ControlFrameSet(
        reference=pair.input_img,
        object_frame=obj,
        movement=movement,
        color=encode_color_frame(pair.tint, res),
        intensity=encode_intensity_frame(pair.stops, res),
        src_box=pair.src_box,  # pruning decisions use the unaugmented boxes
        tgt_box=pair.tgt_box,
    )


def save_config_snapshot(cfg: DatasetConfig, path) -> None:
    with open(path, "w") as f:
        json.dump(asdict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")
