"""Shared fixtures: synthetic streams with known ground-truth motion."""

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from evfield.events import EventStream
from evfield.simulate import FrameSequence, video_to_events


def translating_sequence(v=(4.0, 0.0), size=32, n_frames=21, t_span=1.0,
                         seed=0, smooth=0.6):
    """Frames of a random texture translating at constant pixel velocity."""
    vx, vy = v
    margin = int(np.ceil(max(abs(vx), abs(vy)) * t_span)) + 4
    rng = np.random.default_rng(seed)
    base = gaussian_filter(rng.uniform(0.05, 1.0, (size + 2 * margin,
                                                   size + 2 * margin)), smooth)
    base = np.clip(base, 0.02, 1.0)
    times = np.linspace(0.0, t_span, n_frames)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    frames = []
    for t in times:
        # texture moves by +v*t, so sample the base at x - v*t
        coords = np.stack([ys + margin - vy * t, xs + margin - vx * t])
        frames.append(map_coordinates(base, coords, order=1, mode="nearest"))
    frames = np.stack(frames)
    return FrameSequence(times, frames, np.zeros_like(frames))


def translating_stream(v=(4.0, 0.0), size=32, n_frames=21, t_span=1.0,
                       seed=0, contrast=0.05, offset=0.05) -> EventStream:
    seq = translating_sequence(v, size, n_frames, t_span, seed)
    return video_to_events(seq, contrast, offset)


def checker_stream(v=(4.0, 0.0), size=64, cell=8.0, n_frames=41, t_span=1.0,
                   contrast=0.1, offset=0.1, lo=0.2, hi=0.9,
                   blur_px=1.0) -> EventStream:
    """Translating soft-edged checkerboard; the classic motion-recovery rig."""
    vx, vy = v
    times = np.linspace(0.0, t_span, n_frames)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    frames = []
    for t in times:
        u = (xs - vx * t) / cell
        w = (ys - vy * t) / cell
        sq = np.tanh(np.sin(np.pi * u) * np.sin(np.pi * w) * (cell / blur_px))
        frames.append(lo + (hi - lo) * (0.5 * sq + 0.5))
    frames = np.stack(frames)
    seq = FrameSequence(times, frames, np.zeros_like(frames))
    return video_to_events(seq, contrast, offset)


def random_stream(n=60, size=16, t_span=0.5, seed=0, contrast=0.2) -> EventStream:
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0.0, t_span, n))
    x = rng.integers(0, size, n)
    y = rng.integers(0, size, n)
    p = rng.choice([-1, 1], n)
    return EventStream(t, x, y, p, size, size, contrast)


def sphere_setup(size=16, n_views=31, t_span=1.0, contrast=0.1, offset=0.05,
                 preset="checker-sphere", flow=(6.0, 0.0)):
    """Orbiting camera around a preset scene, with a hand-built warp field.

    Returns (stream, intrinsics, trajectory, warp_field, frames).  The warp
    field is a single translation window so trainer tests never depend on
    the motion optimizer.
    """
    from evfield.camera import Intrinsics
    from evfield.motion import MotionParams, WarpField, WarpWindow
    from evfield.simulate import orbit_trajectory, preset_scene, render_sequence

    scene = preset_scene(preset)
    intr = Intrinsics(float(size), float(size), size / 2.0, size / 2.0,
                      size, size)
    traj = orbit_trajectory(radius=3.0, height=0.8, n_views=n_views,
                            t_span=t_span)
    frames = render_sequence(scene, intr, traj)
    stream = video_to_events(frames, contrast, offset)
    wf = WarpField([WarpWindow(0.0, t_span, t_span / 2.0,
                               MotionParams("translation",
                                            np.asarray(flow, dtype=float)),
                               1.0)])
    return stream, intr, traj, wf, frames
