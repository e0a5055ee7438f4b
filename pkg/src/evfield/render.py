"""Differentiable volume rendering: rays, sampling, and compositing.

Compositing follows the standard discrete quadrature: alpha_i = 1 -
exp(-sigma_i * delta_i), transmittance T_i = exp(-sum_{j<i} sigma_j
delta_j), blend weight w_i = T_i * alpha_i.  Color, depth, and ambient
occlusion are all weighted sums, so AO is the blend-weight sum by
construction.  The last sample gap is capped at (t_far - t_near) / N
instead of infinity so AO stays finite and differentiable.

All compositing ops accept either numpy arrays or autodiff tensors and
return the matching kind; sample locations are always plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .camera import PinholeCamera, all_pixels, pixel_rays
from .field import FieldParams, field_forward, positional_encode


@dataclass(frozen=True)
class RayBatch:
    origins: np.ndarray      # (N, 3)
    directions: np.ndarray   # (N, 3) unit
    t_near: float
    t_far: float
    pixels: np.ndarray       # (N, 2) integer coords the rays came from
    axial: np.ndarray        # (N,) ray-distance -> optical-axis-distance factor

    def __post_init__(self):
        if not self.t_near < self.t_far:
            raise ValueError("t_near must be less than t_far")

    @property
    def n_rays(self) -> int:
        return self.origins.shape[0]


@dataclass(frozen=True)
class RenderConfig:
    n_coarse: int = 32
    n_fine: int = 32
    t_near: float = 1.0
    t_far: float = 6.0
    chunk: int = 4096
    jitter: bool = True   # False pins coarse samples to bin midpoints


@dataclass(frozen=True)
class RenderOutput:
    intensity: np.ndarray    # (H, W) in [0, 1]
    depth: np.ndarray        # (H, W) meters along the ray
    ao: np.ndarray           # (H, W) blend-weight sums
    weight_sum: np.ndarray   # alias of ao's values, kept for mask consumers


def generate_rays(camera: PinholeCamera, pixels, t_near: float,
                  t_far: float) -> RayBatch:
    pixels = np.asarray(pixels)
    k = camera.intrinsics
    if np.any(pixels[:, 0] < 0) or np.any(pixels[:, 0] >= k.width) or \
       np.any(pixels[:, 1] < 0) or np.any(pixels[:, 1] >= k.height):
        raise IndexError("pixel outside sensor bounds")
    origins, dirs, axial = pixel_rays(camera, pixels)
    return RayBatch(origins, dirs, float(t_near), float(t_far),
                    pixels.copy(), axial)


def stratified_depths(n_rays: int, t_near: float, t_far: float, n: int,
                      uniforms=None) -> np.ndarray:
    """One depth per equal bin of [t_near, t_far]; midpoints when uniforms is None."""
    if n < 2:
        raise ValueError("need at least 2 samples per ray")
    if uniforms is None:
        uniforms = np.full((n_rays, n), 0.5)
    binw = (t_far - t_near) / n
    return t_near + (np.arange(n) + uniforms) * binw


def sample_gaps(depths: np.ndarray, t_near: float, t_far: float) -> np.ndarray:
    """delta_i = z_{i+1} - z_i, with the trailing gap capped at span / N."""
    n = depths.shape[-1]
    cap = (t_far - t_near) / n
    last = np.full(depths.shape[:-1] + (1,), cap)
    return np.concatenate([np.diff(depths, axis=-1), last], axis=-1)


_wrap = ad.wrap
_unwrap = ad.unwrap


def blend_weights(sigmas, deltas):
    """w_i = T_i * alpha_i along the last axis."""
    s, keep_s = _wrap(sigmas)
    d, keep_d = _wrap(deltas)
    tau = s * d
    accum = tau.cumsum(axis=s.ndim - 1)
    trans = ad.exp(-(accum - tau))      # exclusive prefix: T_i
    alpha = 1.0 - ad.exp(-tau)
    return _unwrap(trans * alpha, keep_s or keep_d)


def ambient_occlusion(sigmas, deltas):
    """AO = sum of blend weights = 1 - exp(-sum tau)."""
    w, keep = _wrap(blend_weights(sigmas, deltas))
    return _unwrap(w.sum(axis=w.ndim - 1), keep)


def _check_lengths(a, b, what):
    sa = a.shape if isinstance(a, np.ndarray) else a.data.shape
    sb = b.shape if isinstance(b, np.ndarray) else b.data.shape
    if sa[-1] != sb[-1]:
        raise ValueError(f"{what}: length mismatch {sa[-1]} vs {sb[-1]}")


def composite_color(weights, colors):
    _check_lengths(weights, colors, "composite_color")
    w, keep_w = _wrap(weights)
    c, keep_c = _wrap(colors)
    return _unwrap((w * c).sum(axis=w.ndim - 1), keep_w or keep_c)


def composite_depth(weights, depths):
    _check_lengths(weights, depths, "composite_depth")
    w, keep_w = _wrap(weights)
    z, keep_z = _wrap(depths)
    return _unwrap((w * z).sum(axis=w.ndim - 1), keep_w or keep_z)


def hierarchical_resample(coarse_weights: np.ndarray, coarse_depths: np.ndarray,
                          n_fine: int, uniforms: np.ndarray, t_near: float,
                          t_far: float) -> np.ndarray:
    """Inverse-CDF draws from bins [z_i, z_i + delta_i) weighted by w_i.

    A 1e-5 floor per bin keeps the CDF invertible; all-zero weights thus
    degrade to uniform sampling.  Returns coarse and fine depths merged,
    sorted ascending per ray.
    """
    if n_fine < 1:
        raise ValueError("need at least one fine sample")
    w = np.maximum(coarse_weights, 0.0) + 1e-5
    gaps = sample_gaps(coarse_depths, t_near, t_far)
    r, n = w.shape
    cdf = np.cumsum(w, axis=1)
    cdf = cdf / cdf[:, -1:]
    # row-offset trick: one flat searchsorted instead of a per-ray loop
    offs = 2.0 * np.arange(r)[:, None]
    flat_cdf = (cdf + offs).ravel()
    u = uniforms
    idx = np.searchsorted(flat_cdf, (u + offs).ravel(), side="right")
    idx = idx.reshape(r, n_fine) - np.arange(r)[:, None] * n
    idx = np.clip(idx, 0, n - 1)
    lo = np.where(idx > 0,
                  np.take_along_axis(cdf, np.maximum(idx - 1, 0), axis=1), 0.0)
    hi = np.take_along_axis(cdf, idx, axis=1)
    frac = (u - lo) / np.maximum(hi - lo, 1e-12)
    z0 = np.take_along_axis(coarse_depths, idx, axis=1)
    dz = np.take_along_axis(gaps, idx, axis=1)
    fine = z0 + frac * dz
    return np.sort(np.concatenate([coarse_depths, fine], axis=1), axis=1)


def _eval_field(field, positions: np.ndarray, dirs: np.ndarray):
    """(c, sigma) arrays for flattened sample positions."""
    if isinstance(field, FieldParams):
        enc = field.arch.encoding
        with ad.no_grad():
            c, s = field_forward(field,
                                 positional_encode(positions, enc.l_pos,
                                                   enc.include_input),
                                 positional_encode(dirs, enc.l_dir,
                                                   enc.include_input))
        return c.data[:, 0], s.data[:, 0]
    return field(positions, dirs)


def render_rays(field, rays: RayBatch, cfg: RenderConfig, seed: int = 0):
    """Composited intensity/depth/AO per ray (flat arrays)."""
    n = rays.n_rays
    rng = np.random.default_rng(seed)
    u_coarse = rng.random((n, cfg.n_coarse)) if cfg.jitter else None
    u_fine = rng.random((n, cfg.n_fine)) if cfg.n_fine > 0 else None
    intensity = np.empty(n)
    depth = np.empty(n)
    ao = np.empty(n)
    for lo in range(0, n, cfg.chunk):
        hi = min(lo + cfg.chunk, n)
        sl = slice(lo, hi)
        z = stratified_depths(hi - lo, rays.t_near, rays.t_far, cfg.n_coarse,
                              None if u_coarse is None else u_coarse[sl])
        c, s, w = _composited(field, rays, sl, z)
        if u_fine is not None:
            z = hierarchical_resample(w, z, cfg.n_fine, u_fine[sl],
                                      rays.t_near, rays.t_far)
            c, s, w = _composited(field, rays, sl, z)
        intensity[sl] = (w * c).sum(axis=1)
        depth[sl] = (w * z).sum(axis=1)
        ao[sl] = w.sum(axis=1)
    return intensity, depth, ao


def _composited(field, rays: RayBatch, sl: slice, z: np.ndarray):
    o = rays.origins[sl]
    d = rays.directions[sl]
    r, n = z.shape
    positions = (o[:, None, :] + z[..., None] * d[:, None, :]).reshape(-1, 3)
    dirs = np.repeat(d, n, axis=0)
    c, s = _eval_field(field, positions, dirs)
    c = c.reshape(r, n)
    s = s.reshape(r, n)
    w = blend_weights(s, sample_gaps(z, rays.t_near, rays.t_far))
    return c, s, w


def render_view(field, camera: PinholeCamera, cfg: RenderConfig,
                seed: int = 0) -> RenderOutput:
    k = camera.intrinsics
    pixels = all_pixels(k.width, k.height)
    rays = generate_rays(camera, pixels, cfg.t_near, cfg.t_far)
    intensity, depth, ao = render_rays(field, rays, cfg, seed)
    shape = (k.height, k.width)
    ao_img = ao.reshape(shape)
    return RenderOutput(intensity.reshape(shape), depth.reshape(shape),
                        ao_img, ao_img.copy())
