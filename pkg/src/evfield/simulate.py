"""Synthetic scenes: analytic primitives, ground-truth rendering, and
frame-to-event conversion.

The simulator is the package's source of supervision for tests and
experiments: render a textured scene along a trajectory, take log-intensity
differences per pixel, and emit threshold-crossing events.  Everything is
deterministic; sensor noise is limited to optional per-pixel threshold
jitter behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics, PinholeCamera, Pose, Trajectory, all_pixels, look_at, pixel_rays
from .events import EventStream

_EPS_T = 1e-9  # minimum hit distance, keeps grazing self-hits out


# ---------------------------------------------------------------------------
# textures

@dataclass(frozen=True)
class Checker:
    """3-D checkerboard: albedo_a on even parity cells, albedo_b on odd."""

    cell: float
    albedo_a: float
    albedo_b: float

    def __post_init__(self):
        if self.cell <= 0.0:
            raise ValueError("checker cell size must be positive")
        for v in (self.albedo_a, self.albedo_b):
            if not 0.0 <= v <= 1.0:
                raise ValueError("albedo outside [0, 1]")

    def albedo(self, points: np.ndarray) -> np.ndarray:
        parity = np.floor(points / self.cell).sum(axis=1).astype(np.int64) % 2
        return np.where(parity == 0, self.albedo_a, self.albedo_b)


@dataclass(frozen=True)
class Sinusoid:
    """Smooth plane-wave albedo along (1,1,1); low contrast produces few events."""

    freq: float
    base: float
    amp: float

    def __post_init__(self):
        if not (0.0 <= self.base - self.amp and self.base + self.amp <= 1.0):
            raise ValueError("sinusoid range leaves [0, 1]")

    def albedo(self, points: np.ndarray) -> np.ndarray:
        phase = points.sum(axis=1) / np.sqrt(3.0)
        return self.base + self.amp * np.sin(2.0 * np.pi * self.freq * phase)


# ---------------------------------------------------------------------------
# primitives

@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    texture: object

    def intersect(self, origins, dirs):
        oc = origins - np.asarray(self.center, dtype=np.float64)
        b = np.einsum("ij,ij->i", oc, dirs)
        disc = b * b - (np.einsum("ij,ij->i", oc, oc) - self.radius ** 2)
        hit = disc >= 0.0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t_near = -b - sq
        t_far = -b + sq
        t = np.where(t_near > _EPS_T, t_near, t_far)
        return np.where(hit & (t > _EPS_T), t, np.inf)


@dataclass(frozen=True)
class Plane:
    point: np.ndarray
    normal: np.ndarray
    texture: object

    def intersect(self, origins, dirs):
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((np.asarray(self.point, dtype=np.float64) - origins) @ n) / denom
        ok = (np.abs(denom) > 1e-12) & (t > _EPS_T)
        return np.where(ok, t, np.inf)


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray
    texture: object

    def intersect(self, origins, dirs):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - origins) / dirs
            t2 = (hi - origins) / dirs
        t1 = np.nan_to_num(t1, nan=-np.inf, posinf=np.inf, neginf=-np.inf)
        t2 = np.nan_to_num(t2, nan=np.inf, posinf=np.inf, neginf=-np.inf)
        t_near = np.minimum(t1, t2).max(axis=1)
        t_far = np.maximum(t1, t2).min(axis=1)
        hit = (t_near <= t_far) & (t_far > _EPS_T)
        t = np.where(t_near > _EPS_T, t_near, t_far)
        return np.where(hit, t, np.inf)


@dataclass(frozen=True)
class SyntheticScene:
    objects: tuple
    background: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.background <= 1.0:
            raise ValueError("background intensity outside [0, 1]")


@dataclass(frozen=True)
class FrameSequence:
    """Rendered video with per-frame depth; the raw material for events."""

    times: np.ndarray       # (T,)
    intensity: np.ndarray   # (T, H, W) in [0, 1]
    depth: np.ndarray       # (T, H, W) meters, 0 where nothing was hit

    def __post_init__(self):
        if not (len(self.times) == len(self.intensity) == len(self.depth)):
            raise ValueError("timestamps, intensity and depth counts differ")
        if self.intensity.shape != self.depth.shape:
            raise ValueError("intensity and depth shapes differ")
        if len(self.times) and np.any(np.diff(self.times) <= 0.0):
            raise ValueError("frame timestamps must be strictly increasing")


# ---------------------------------------------------------------------------
# rendering

def render_groundtruth(scene: SyntheticScene, camera: PinholeCamera):
    """Nearest-hit render: returns (intensity, depth-along-optical-axis)."""
    k = camera.intrinsics
    pixels = all_pixels(k.width, k.height)
    origins, dirs, axial = pixel_rays(camera, pixels)
    n = pixels.shape[0]
    best_t = np.full(n, np.inf)
    intensity = np.full(n, scene.background, dtype=np.float64)
    for obj in scene.objects:
        t = obj.intersect(origins, dirs)
        closer = t < best_t
        if np.any(closer):
            pts = origins[closer] + t[closer, None] * dirs[closer]
            intensity[closer] = obj.texture.albedo(pts)
            best_t[closer] = t[closer]
    hit = np.isfinite(best_t)
    depth = np.where(hit, best_t * axial, 0.0)
    shape = (k.height, k.width)
    return intensity.reshape(shape), depth.reshape(shape)


def orbit_trajectory(radius: float, height: float, n_views: int, t_span: float,
                     look_at_point=(0.0, 0.0, 0.0), phase: float = 0.0) -> Trajectory:
    """Poses evenly spaced on a horizontal circle, all looking at one point.

    `phase` offsets the start angle; handy for held-out views between the
    training positions.
    """
    if n_views < 2:
        raise ValueError("orbit needs at least 2 views")
    if radius <= 0.0 or t_span <= 0.0:
        raise ValueError("radius and t_span must be positive")
    target = np.asarray(look_at_point, dtype=np.float64)
    times = np.linspace(0.0, t_span, n_views)
    poses = []
    for i in range(n_views):
        a = 2.0 * np.pi * i / n_views + phase
        position = target + np.array([radius * np.cos(a), height, radius * np.sin(a)])
        poses.append(look_at(position, target))
    return Trajectory(times, poses)


def render_sequence(scene: SyntheticScene, intrinsics: Intrinsics,
                    trajectory: Trajectory) -> FrameSequence:
    frames, depths = [], []
    for pose in trajectory.poses:
        img, dep = render_groundtruth(scene, PinholeCamera(intrinsics, pose))
        frames.append(img)
        depths.append(dep)
    return FrameSequence(trajectory.times.copy(), np.stack(frames), np.stack(depths))


# ---------------------------------------------------------------------------
# frame-to-event conversion

def video_to_events(frames: FrameSequence, contrast: float, offset: float,
                    rng_seed: int = 0, jitter: bool = False) -> EventStream:
    """Threshold-crossing events from a rendered sequence.

    Per pixel the reference level only ever moves in integer steps of the
    local threshold, so the emitted count stays an exact function of the
    log-intensity path (no accumulation drift).  Event timestamps are spaced
    evenly inside the open inter-frame interval (the crossing times of a
    log-linear intensity ramp), which keeps frame-aligned half-open windows
    lossless and gives motion compensation temporal structure to work with.
    """
    if len(frames.times) < 2:
        raise ValueError("need at least 2 frames to emit events")
    if contrast <= 0.0:
        raise ValueError("contrast threshold must be positive")
    if offset <= 0.0:
        raise ValueError("log offset must be positive")
    n_frames, height, width = frames.intensity.shape
    log_frames = np.log(frames.intensity + offset)

    if jitter:
        rng = np.random.default_rng(rng_seed)
        eta = rng.uniform(-0.1, 0.1, size=(height, width))
        c_px = contrast * (1.0 + eta)
    else:
        c_px = np.full((height, width), contrast)

    ref_steps = np.zeros((height, width), dtype=np.int64)
    l0 = log_frames[0]
    out_t, out_x, out_y, out_p = [], [], [], []
    for i in range(1, n_frames):
        delta = log_frames[i] - (l0 + c_px * ref_steps)
        k = np.sign(delta).astype(np.int64) * np.floor(
            np.abs(delta) / c_px).astype(np.int64)
        ys, xs = np.nonzero(k)
        if ys.size == 0:
            continue
        counts = np.abs(k[ys, xs])
        sign = np.sign(k[ys, xs]).astype(np.int8)
        total = int(counts.sum())
        rep_y = np.repeat(ys, counts)
        rep_x = np.repeat(xs, counts)
        rep_p = np.repeat(sign, counts)
        rep_n = np.repeat(counts, counts)
        starts = np.cumsum(counts) - counts
        j = np.arange(total) - np.repeat(starts, counts) + 1
        t_prev, t_next = frames.times[i - 1], frames.times[i]
        tt = t_prev + (t_next - t_prev) * (j / (rep_n + 1.0))
        order = np.lexsort((rep_x, rep_y, tt))  # sort by t, ties row-major
        out_t.append(tt[order])
        out_x.append(rep_x[order])
        out_y.append(rep_y[order])
        out_p.append(rep_p[order])
        ref_steps[ys, xs] += k[ys, xs]

    if out_t:
        t = np.concatenate(out_t)
        x = np.concatenate(out_x)
        y = np.concatenate(out_y)
        p = np.concatenate(out_p)
    else:
        t = x = y = p = np.array([])
    return EventStream(t, x, y, p, width, height, contrast)


# ---------------------------------------------------------------------------
# presets

def preset_scene(name: str) -> SyntheticScene:
    # Spheres sit slightly off the orbit fixation point so their silhouettes
    # sweep across pixels; a perfectly centered orbit leaves the outline (and
    # the background) event-free and therefore unobservable.  Gray background
    # keeps silhouette log-steps comparable to texture steps.
    if name == "checker-sphere":
        return SyntheticScene(
            objects=(Sphere(np.array([0.25, 0.0, 0.15]), 1.0,
                            Checker(0.35, 0.35, 0.95)),),
            background=0.25)
    if name == "sparse-sphere":
        return SyntheticScene(
            objects=(Sphere(np.array([0.25, 0.0, 0.15]), 1.0,
                            Sinusoid(0.35, 0.55, 0.2)),),
            background=0.25)
    if name == "checker-box":
        return SyntheticScene(
            objects=(Box(np.array([-0.8, -0.6, -0.8]), np.array([0.8, 0.6, 0.8]),
                         Checker(0.4, 0.3, 0.9)),),
            background=0.0)
    raise ValueError(f"unknown scene preset '{name}'")
