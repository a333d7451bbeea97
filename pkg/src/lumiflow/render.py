"""Procedural analytic renderer with physically disentangled ambient/direct passes.

Scenes are a floor plane, a back wall, a few matte spheres, and point lights.
The ambient pass is ``ambient_level * albedo`` at every visible surface point;
the direct pass is single-bounce Lambertian shading from one selected light
(cosine falloff, inverse-square, hard shadows via occlusion rays).  Both
passes are deterministic and composite linearly.

The selected emitter is visualized as a small emissive proxy sphere that
appears only in its own direct pass, so the light source is a visible,
croppable object that tints and scales together with its illumination.  Proxy
spheres never occlude shading rays.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .control_frames import BoundingBox

BACKGROUND = 0.02  # constant dark-gray miss color, keeps full-frame PSNR meaningful
_EPS = 1e-9
_SHADOW_EPS = 1e-6


class SampleRejected(Exception):
    """A randomly drawn sample violates a geometric precondition; retry with a new draw."""


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    albedo: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "albedo", np.asarray(self.albedo, dtype=np.float64))
        if self.radius <= 0:
            raise ValueError(f"sphere radius must be > 0, got {self.radius}")


@dataclass(frozen=True)
class Plane:
    point: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))
        n = np.asarray(self.normal, dtype=np.float64)
        object.__setattr__(self, "normal", n / np.linalg.norm(n))
        object.__setattr__(self, "albedo", np.asarray(self.albedo, dtype=np.float64))


@dataclass(frozen=True)
class PointLight:
    """Point emitter; emission is fixed at pure white, unit intensity."""

    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))

    @property
    def emission(self) -> np.ndarray:
        return np.ones(3)


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    vfov_deg: float
    width: int
    height: int
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "look_at", np.asarray(self.look_at, dtype=np.float64))
        object.__setattr__(self, "up", np.asarray(self.up, dtype=np.float64))
        if not 0.0 < self.vfov_deg < 180.0:
            raise ValueError(f"vertical FOV must be in (0, 180) degrees, got {self.vfov_deg}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        fwd = self.look_at - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        right = right / np.linalg.norm(right)
        up = np.cross(right, fwd)
        return right, up, fwd


@dataclass(frozen=True)
class Scene:
    objects: tuple
    lights: tuple
    camera: Camera
    ambient_level: float
    proxy_radius: float = 0.12

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "lights", tuple(self.lights))
        if len(self.objects) == 0:
            raise ValueError("scene needs at least one object")
        if len(self.lights) == 0:
            raise ValueError("scene needs at least one light")
        if self.ambient_level < 0:
            raise ValueError(f"ambient_level must be >= 0, got {self.ambient_level}")


# ---------------------------------------------------------------------------
# Ray intersection (vectorized over a bundle of rays)
# ---------------------------------------------------------------------------


def camera_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Primary ray origins and unit directions, shape (H, W, 3)."""
    right, up, fwd = camera.basis()
    tan_half = np.tan(np.deg2rad(camera.vfov_deg) / 2.0)
    aspect = camera.width / camera.height
    xs = ((np.arange(camera.width) + 0.5) / camera.width * 2.0 - 1.0) * tan_half * aspect
    ys = (1.0 - 2.0 * (np.arange(camera.height) + 0.5) / camera.height) * tan_half
    d = (
        fwd[None, None, :]
        + xs[None, :, None] * right[None, None, :]
        + ys[:, None, None] * up[None, None, :]
    )
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(camera.position, d.shape)
    return o, d


def _intersect_sphere(o, d, sphere: Sphere) -> np.ndarray:
    """Smallest positive hit distance per ray, inf on miss."""
    oc = o - sphere.center
    b = np.sum(oc * d, axis=-1)
    c = np.sum(oc * oc, axis=-1) - sphere.radius**2
    disc = b * b - c
    t = np.full(b.shape, np.inf)
    hit = disc >= 0.0
    if np.any(hit):
        sq = np.sqrt(disc[hit])
        t0 = -b[hit] - sq
        t1 = -b[hit] + sq
        tt = np.where(t0 > _EPS, t0, np.where(t1 > _EPS, t1, np.inf))
        t[hit] = tt
    return t


def _intersect_plane(o, d, plane: Plane) -> np.ndarray:
    denom = np.sum(d * plane.normal, axis=-1)
    num = np.sum((plane.point - o) * plane.normal, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / denom
    t = np.where((np.abs(denom) > _EPS) & (t > _EPS), t, np.inf)
    return t


def _intersect_object(o, d, obj) -> np.ndarray:
    if isinstance(obj, Sphere):
        return _intersect_sphere(o, d, obj)
    if isinstance(obj, Plane):
        return _intersect_plane(o, d, obj)
    raise TypeError(f"unsupported primitive {type(obj).__name__}")


def _closest_hit(o, d, objects):
    """Nearest hit over a list of primitives.

    Returns (t, index) with t = inf and index = -1 on miss.
    """
    t_best = np.full(o.shape[:-1], np.inf)
    idx = np.full(o.shape[:-1], -1, dtype=np.int64)
    for k, obj in enumerate(objects):
        t = _intersect_object(o, d, obj)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        idx = np.where(closer, k, idx)
    return t_best, idx


def _surface_attributes(o, d, t, idx, objects):
    """Hit points, shading normals, and albedos for rays with idx >= 0."""
    t_safe = np.where(np.isfinite(t), t, 0.0)  # miss pixels are never read
    p = o + t_safe[..., None] * d
    n = np.zeros_like(p)
    alb = np.zeros_like(p)
    for k, obj in enumerate(objects):
        sel = idx == k
        if not np.any(sel):
            continue
        if isinstance(obj, Sphere):
            nk = (p[sel] - obj.center) / obj.radius
        else:
            nk = np.broadcast_to(obj.normal, p[sel].shape)
        n[sel] = nk
        alb[sel] = obj.albedo
    return p, n, alb


def _occluded(p, light_pos, objects) -> np.ndarray:
    """True where a shadow ray from p toward the light hits any object."""
    to_light = light_pos - p
    dist = np.linalg.norm(to_light, axis=-1)
    d = to_light / np.maximum(dist, _EPS)[..., None]
    blocked = np.zeros(p.shape[:-1], dtype=bool)
    for obj in objects:
        t = _intersect_object(p, d, obj)
        blocked |= (t > _SHADOW_EPS) & (t < dist - _SHADOW_EPS)
    return blocked


# ---------------------------------------------------------------------------
# Disentangled passes
# ---------------------------------------------------------------------------


def render_ambient(scene: Scene) -> np.ndarray:
    """Ambient base pass: ambient_level * albedo at every visible point.

    Independent of all emitter positions; misses get the constant background.
    """
    o, d = camera_rays(scene.camera)
    t, idx = _closest_hit(o, d, scene.objects)
    img = np.full(o.shape, BACKGROUND, dtype=np.float64)
    hit = idx >= 0
    if np.any(hit):
        _, _, alb = _surface_attributes(o, d, t, idx, scene.objects)
        img[hit] = scene.ambient_level * alb[hit]
    return img


def render_direct(scene: Scene, light_index: int, show_proxy: bool = True) -> np.ndarray:
    """Direct-light pass from one emitter: Lambertian point-light shading.

    Unshadowed surface points receive ``albedo * max(0, n.l) / (pi * d^2)``
    with white unit emission.  With ``show_proxy`` the emitter itself is drawn
    as a small emissive sphere (unit white) where it is the nearest visible
    surface; the proxy never blocks shadow rays.
    """
    if not 0 <= light_index < len(scene.lights):
        raise IndexError(f"light_index {light_index} out of range for {len(scene.lights)} lights")
    light = scene.lights[light_index]
    o, d = camera_rays(scene.camera)
    t, idx = _closest_hit(o, d, scene.objects)
    img = np.zeros(o.shape, dtype=np.float64)

    proxy_visible = np.zeros(t.shape, dtype=bool)
    if show_proxy:
        proxy = Sphere(center=light.position, radius=scene.proxy_radius, albedo=np.zeros(3))
        t_proxy = _intersect_sphere(o, d, proxy)
        proxy_visible = t_proxy < t
        img[proxy_visible] = light.emission

    shade = (idx >= 0) & ~proxy_visible
    if np.any(shade):
        p, n, alb = _surface_attributes(o, d, t, idx, scene.objects)
        to_light = light.position - p
        dist2 = np.sum(to_light * to_light, axis=-1)
        dist = np.sqrt(dist2)
        l_hat = to_light / np.maximum(dist, _EPS)[..., None]
        cos = np.maximum(0.0, np.sum(n * l_hat, axis=-1))
        lit = shade & (cos > 0.0)
        if np.any(lit):
            vals = alb[lit] * (cos[lit] / (np.pi * dist2[lit]))[:, None]
            vals[_occluded(p[lit], light.position, scene.objects)] = 0.0
            img[lit] = vals
    return img


def render_direct_multi(scene: Scene, light_indices, show_proxy: bool = True) -> np.ndarray:
    """Direct pass for several emitters; contributions superpose pixelwise."""
    out = np.zeros((scene.camera.height, scene.camera.width, 3), dtype=np.float64)
    for i in light_indices:
        out += render_direct(scene, i, show_proxy=show_proxy)
    return out


def render_disentangled(scene: Scene, light_index: int) -> dict:
    """Ambient and direct components for one emitter, as {'amb', 'light'}."""
    return {
        "amb": render_ambient(scene),
        "light": render_direct(scene, light_index),
    }


# ---------------------------------------------------------------------------
# Screen-space projection
# ---------------------------------------------------------------------------


def project_sphere_bbox(camera: Camera, center, radius: float) -> BoundingBox | None:
    """Normalized screen bbox of a sphere (center projection +/- angular radius).

    Returns None when the sphere center is behind the camera or the clamped
    box is empty.  The box is the axis-aligned bound of the projected disc,
    clamped to the unit square.
    """
    right, up, fwd = camera.basis()
    rel = np.asarray(center, dtype=np.float64) - camera.position
    x_c, y_c, z_c = rel @ right, rel @ up, rel @ fwd
    if z_c <= radius:
        return None
    tan_half = np.tan(np.deg2rad(camera.vfov_deg) / 2.0)
    aspect = camera.width / camera.height
    u = 0.5 + 0.5 * x_c / (z_c * tan_half * aspect)
    v = 0.5 - 0.5 * y_c / (z_c * tan_half)
    ru = 0.5 * radius / (z_c * tan_half * aspect)
    rv = 0.5 * radius / (z_c * tan_half)
    x0, x1 = max(0.0, u - ru), min(1.0, u + ru)
    y0, y1 = max(0.0, v - rv), min(1.0, v + rv)
    if x0 >= x1 or y0 >= y1:
        return None
    return BoundingBox(x0=x0, y0=y0, x1=x1, y1=y1)


# ---------------------------------------------------------------------------
# Scene sampling and movement pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SceneConfig:
    """Sampling ranges for procedural scenes (floor + back wall + spheres)."""

    width: int = 64
    height: int = 64
    n_spheres: tuple[int, int] = (1, 3)
    sphere_radius: tuple[float, float] = (0.18, 0.45)
    sphere_x: tuple[float, float] = (-0.9, 0.9)
    sphere_z: tuple[float, float] = (-0.4, 1.2)
    albedo: tuple[float, float] = (0.2, 0.9)
    ambient_level: tuple[float, float] = (0.08, 0.25)
    n_lights: int = 1
    light_x: tuple[float, float] = (-1.1, 1.1)
    light_y: tuple[float, float] = (0.7, 1.7)
    light_z: tuple[float, float] = (-1.2, 1.0)
    camera_position: tuple[float, float, float] = (0.0, 0.9, -2.6)
    camera_look_at: tuple[float, float, float] = (0.0, 0.35, 0.4)
    vfov_deg: float = 50.0
    proxy_radius: float = 0.12

    def validate(self) -> None:
        for name in ("n_spheres", "sphere_radius", "sphere_x", "sphere_z", "albedo",
                     "ambient_level", "light_x", "light_y", "light_z"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"SceneConfig.{name}: empty range ({lo}, {hi})")
        if self.n_spheres[0] < 1:
            raise ValueError("SceneConfig.n_spheres must allow at least one sphere")
        if self.n_lights < 1:
            raise ValueError("SceneConfig.n_lights must be >= 1")
        if self.sphere_radius[0] <= 0:
            raise ValueError("SceneConfig.sphere_radius must be positive")


def sample_scene(seed: int, config: SceneConfig | None = None) -> Scene:
    """Draw a deterministic random scene from the configured ranges."""
    cfg = config or SceneConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    floor = Plane(point=(0.0, 0.0, 0.0), normal=(0.0, 1.0, 0.0),
                  albedo=rng.uniform(0.3, 0.8, size=3))
    wall = Plane(point=(0.0, 0.0, 2.5), normal=(0.0, 0.0, -1.0),
                 albedo=rng.uniform(0.3, 0.8, size=3))
    objects = [floor, wall]
    n_spheres = int(rng.integers(cfg.n_spheres[0], cfg.n_spheres[1] + 1))
    for _ in range(n_spheres):
        radius = rng.uniform(*cfg.sphere_radius)
        center = np.array([
            rng.uniform(*cfg.sphere_x),
            radius,  # resting on the floor
            rng.uniform(*cfg.sphere_z),
        ])
        objects.append(Sphere(center=center, radius=radius, albedo=rng.uniform(*cfg.albedo, size=3)))
    lights = [
        PointLight(position=np.array([
            rng.uniform(*cfg.light_x),
            rng.uniform(*cfg.light_y),
            rng.uniform(*cfg.light_z),
        ]))
        for _ in range(cfg.n_lights)
    ]
    camera = Camera(
        position=cfg.camera_position,
        look_at=cfg.camera_look_at,
        vfov_deg=cfg.vfov_deg,
        width=cfg.width,
        height=cfg.height,
    )
    return Scene(
        objects=tuple(objects),
        lights=tuple(lights),
        camera=camera,
        ambient_level=float(rng.uniform(*cfg.ambient_level)),
        proxy_radius=cfg.proxy_radius,
    )


@dataclass(frozen=True)
class MovementPair:
    """Two disentangled renders differing only in the selected emitter position."""

    frame_a: dict
    frame_b: dict
    src_box: BoundingBox
    tgt_box: BoundingBox
    scene_a: Scene
    scene_b: Scene
    meta: dict


def move_light(scene: Scene, light_index: int, position) -> Scene:
    """Copy of the scene with one emitter relocated; geometry untouched."""
    lights = list(scene.lights)
    lights[light_index] = PointLight(position=np.asarray(position, dtype=np.float64))
    return replace(scene, lights=tuple(lights))


def generate_movement_pair(
    scene: Scene,
    light_index: int,
    trajectory: tuple,
    t0: float,
    t1: float,
) -> MovementPair:
    """Render a light-movement pair along a line-segment trajectory.

    The emitter sits at ``lerp(trajectory, t0)`` in frame A and
    ``lerp(trajectory, t1)`` in frame B.  Source/target boxes are the
    projected bounds of the proxy sphere at the two positions.

    Raises:
        ValueError: t0 == t1 or parameters outside [0, 1].
        SampleRejected: the emitter projects off-screen in either frame.
    """
    if not (0.0 <= t0 <= 1.0 and 0.0 <= t1 <= 1.0):
        raise ValueError(f"trajectory parameters must be in [0, 1], got {t0}, {t1}")
    if t0 == t1:
        raise ValueError("t0 and t1 must differ")
    p0 = np.asarray(trajectory[0], dtype=np.float64)
    p1 = np.asarray(trajectory[1], dtype=np.float64)
    pos_a = p0 + t0 * (p1 - p0)
    pos_b = p0 + t1 * (p1 - p0)
    scene_a = move_light(scene, light_index, pos_a)
    scene_b = move_light(scene, light_index, pos_b)
    src = project_sphere_bbox(scene.camera, pos_a, scene.proxy_radius)
    tgt = project_sphere_bbox(scene.camera, pos_b, scene.proxy_radius)
    if src is None or tgt is None:
        raise SampleRejected("emitter proxy projects outside the view in at least one frame")
    return MovementPair(
        frame_a=render_disentangled(scene_a, light_index),
        frame_b=render_disentangled(scene_b, light_index),
        src_box=src,
        tgt_box=tgt,
        scene_a=scene_a,
        scene_b=scene_b,
        meta={"light_index": light_index, "t0": t0, "t1": t1},
    )
