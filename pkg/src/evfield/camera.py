"""Pinhole cameras, rigid poses, and time-interpolated trajectories.

Conventions, used consistently by the simulator and the renderer:

* camera looks down its local -z axis, x right, y up (right-handed);
* continuous image coordinates (u, v) with u in [0, W], v in [0, H];
  integer pixel (ix, iy) has its center at (ix + 0.5, iy + 0.5);
* poses are camera-to-world: X_world = R @ X_cam + t.

Pose files are plain text: one comment header line with intrinsics, then one
line per sample ``t tx ty tz qx qy qz qw`` (quaternion w-last).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation, Slerp


class PoseFormatError(ValueError):
    """Malformed pose file."""


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform."""

    rotation: np.ndarray     # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("pose needs a 3x3 rotation and length-3 translation")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if not np.isclose(np.linalg.det(r), 1.0, atol=1e-9):
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def optical_axis(self) -> np.ndarray:
        """Viewing direction in world coordinates."""
        return -self.rotation[:, 2]


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int


@dataclass(frozen=True)
class PinholeCamera:
    intrinsics: Intrinsics
    pose: Pose


def look_at(position, target, up=(0.0, 1.0, 0.0)) -> Pose:
    """Pose at `position` with -z toward `target`."""
    position = np.asarray(position, dtype=np.float64)
    z = position - np.asarray(target, dtype=np.float64)
    nz = np.linalg.norm(z)
    if nz < 1e-12:
        raise ValueError("camera position coincides with target")
    z = z / nz
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(up, z)
    if np.linalg.norm(x) < 1e-9:
        # viewing direction parallel to up; fall back to a fixed alternate
        x = np.cross(np.array([0.0, 0.0, 1.0]), z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), position)


def pixel_rays(camera: PinholeCamera, pixels: np.ndarray):
    """World-space rays through the centers of integer pixel coords.

    Returns (origins (N,3), unit directions (N,3), axial (N,)) where `axial`
    converts distance along the ray into distance along the optical axis.
    """
    k = camera.intrinsics
    pixels = np.asarray(pixels, dtype=np.float64)
    u = pixels[:, 0] + 0.5
    v = pixels[:, 1] + 0.5
    d_cam = np.stack([(u - k.cx) / k.fx,
                      -(v - k.cy) / k.fy,
                      -np.ones_like(u)], axis=1)
    norms = np.linalg.norm(d_cam, axis=1, keepdims=True)
    d_cam = d_cam / norms
    d_world = d_cam @ camera.pose.rotation.T
    origins = np.broadcast_to(camera.pose.translation, d_world.shape).copy()
    axial = 1.0 / norms[:, 0]  # |z component| of the unit camera-frame direction
    return origins, d_world, axial


def all_pixels(width: int, height: int) -> np.ndarray:
    """Integer pixel coords of a full frame, row-major."""
    xs, ys = np.meshgrid(np.arange(width), np.arange(height))
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


class Trajectory:
    """Continuous camera path from discrete pose samples.

    Translation is interpolated linearly, rotation by slerp.  Query times
    outside the sampled span are an error rather than an extrapolation.
    """

    def __init__(self, times, poses):
        times = np.asarray(times, dtype=np.float64)
        if times.ndim != 1 or times.size == 0 or times.size != len(poses):
            raise ValueError("need one pose per timestamp")
        if times.size > 1 and not np.all(np.diff(times) > 0.0):
            raise ValueError("timestamps must be strictly increasing")
        self.times = times
        self.poses = list(poses)
        self._translations = np.stack([p.translation for p in self.poses])
        self._rotations = Rotation.from_matrix(
            np.stack([p.rotation for p in self.poses]))
        self._slerp = Slerp(times, self._rotations) if times.size > 1 else None

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def pose_at(self, t: float) -> Pose:
        if not (self.times[0] <= t <= self.times[-1]):
            raise ValueError(
                f"time {t} outside trajectory span [{self.times[0]}, {self.times[-1]}]")
        if self._slerp is None:
            return self.poses[0]
        rot = self._slerp([t]).as_matrix()[0]
        # snap tiny numeric drift so Pose validation stays strict
        u, _, vt = np.linalg.svd(rot)
        rot = u @ vt
        i = np.searchsorted(self.times, t, side="right") - 1
        i = min(max(i, 0), self.times.size - 2)
        w = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        trans = (1.0 - w) * self._translations[i] + w * self._translations[i + 1]
        return Pose(rot, trans)


def save_trajectory(path, intrinsics: Intrinsics, trajectory: Trajectory) -> None:
    k = intrinsics
    lines = [f"# {k.fx:.17g} {k.fy:.17g} {k.cx:.17g} {k.cy:.17g} {k.width} {k.height}"]
    quats = trajectory._rotations.as_quat(canonical=True)  # (x, y, z, w)
    for t, tr, q in zip(trajectory.times, trajectory._translations, quats):
        vals = [t, tr[0], tr[1], tr[2], q[0], q[1], q[2], q[3]]
        lines.append(" ".join(f"{v:.17g}" for v in vals))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_trajectory(path):
    """Returns (Intrinsics, Trajectory)."""
    with open(path) as f:
        lines = [ln.strip() for ln in f.readlines()]
    lines = [ln for ln in lines if ln]
    if not lines or not lines[0].startswith("#"):
        raise PoseFormatError("missing intrinsics header line")
    head = lines[0][1:].split()
    if len(head) != 6:
        raise PoseFormatError(f"intrinsics header has {len(head)} fields, need 6")
    try:
        fx, fy, cx, cy = (float(v) for v in head[:4])
        width, height = int(head[4]), int(head[5])
    except ValueError as e:
        raise PoseFormatError(f"bad intrinsics header: {e}") from e
    intr = Intrinsics(fx, fy, cx, cy, width, height)
    times, poses = [], []
    for ln_no, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 8:
            raise PoseFormatError(f"line {ln_no}: expected 8 fields, got {len(parts)}")
        try:
            t, tx, ty, tz, qx, qy, qz, qw = (float(v) for v in parts)
        except ValueError as e:
            raise PoseFormatError(f"line {ln_no}: {e}") from e
        rot = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
        times.append(t)
        poses.append(Pose(rot, np.array([tx, ty, tz])))
    try:
        return intr, Trajectory(np.array(times), poses)
    except ValueError as e:
        raise PoseFormatError(str(e)) from e
