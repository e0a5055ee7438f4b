"""Training loop: event / gradient / geometry losses, AO gating, Adam.

Supervision is purely event-based.  Each step draws a time window, builds
the accumulated event frame, density-samples pixel patches, renders them
at the window's two endpoint poses, and descends the weighted sum of

  event loss     mean (log(I_t+b) - log(I_prev+b) - dL)^2   per pixel
  gradient loss  mean |dL/dt + grad(log I_t) . v|           per patch
  geometry loss  mean |F/F_max - D_min/D|                   per gated ray

where flows v, F come from the contrast-maximization warp field.  Sample
depths and the AO gate are frozen per step before gradients flow (the
usual stop-gradient through resampling), so a step's loss is a smooth
function of the parameters.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .camera import Intrinsics, PinholeCamera, Trajectory
from .events import EventStream, accumulate_event_frame
from .field import FieldParams, field_forward, positional_encode, save_checkpoint
from .motion import WarpField
from .patches import count_event_pixels, patch_probabilities, sample_patches
from .render import (blend_weights, generate_rays, hierarchical_resample,
                     sample_gaps, stratified_depths)


class TrainingError(RuntimeError):
    pass


class DivergedError(TrainingError):
    """A loss term or parameter gradient stopped being finite."""


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    beta: float = 0.01        # geometry loss weight
    gamma: float = 0.01       # gradient loss weight
    lr: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 1000
    patches_per_batch: int = 16
    patch_side: int = 2
    window_min: float = 1.0 / 60.0
    window_max: float = 0.1
    b: float = 1e-3           # log-domain intensity offset; must match the simulator offset
    epsilon_depth: float = 1e-6
    ao_tau_max: float = 0.9
    ao_warmup_steps: int = 0  # 0 derives 20% of total steps
    t_near: float = 1.0
    t_far: float = 6.0
    n_coarse: int = 32
    n_fine: int = 32
    density_guided: bool = True
    patch_offset: float = 1.0  # event-count offset in the patch sampling law
    literal_reciprocal: bool = False
    seed: int = 0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.ao_tau_max <= 1.0:
            raise ValueError("ao_tau_max must lie in [0, 1]")
        if not 0 < self.window_min <= self.window_max:
            raise ValueError("need 0 < window_min <= window_max")
        if self.steps < 0 or self.patches_per_batch < 1 or self.patch_side < 1:
            raise ValueError("steps, patch count, patch side out of range")
        if self.patch_offset <= 0:
            raise ValueError("patch_offset must be positive")

    @property
    def warmup_steps(self) -> int:
        if self.ao_warmup_steps > 0:
            return self.ao_warmup_steps
        return max(1, int(round(0.2 * self.steps)))


@dataclass(frozen=True)
class LossBreakdown:
    event: float
    grad: float
    geo: float
    total: float
    gated_fraction: float


# ---------------------------------------------------------------- losses

def event_loss(pred_t, pred_prev, target, b: float):
    """Mean squared log-intensity-difference error against event values."""
    pt, keep_t = ad.wrap(pred_t)
    pp, keep_p = ad.wrap(pred_prev)
    target = np.asarray(target, dtype=np.float64)
    if pt.shape != pp.shape or pt.shape != target.shape:
        raise ValueError(
            f"shape mismatch: {pt.shape} vs {pp.shape} vs {target.shape}")
    r = ad.log(pt + b) - ad.log(pp + b) - target
    return ad.unwrap((r * r).mean(), keep_t or keep_p)


def gradient_loss(log_patches, event_patches, flows, dt: float):
    """L1 brightness-constancy residual averaged per patch then over patches.

    Spatial gradients are forward differences, so each patch contributes
    its (h-1) x (w-1) top-left block; sides below 2 pixels have no
    neighbors to difference and are rejected.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if len(log_patches) == 0:
        raise ValueError("need at least one patch")
    if not len(log_patches) == len(event_patches) == len(flows):
        raise ValueError("patch lists disagree in length")
    acc = None
    keep = False
    for lp, ep, v in zip(log_patches, event_patches, flows):
        lpt, was = ad.wrap(lp)
        keep = keep or was
        h, w = lpt.shape
        if h < 2 or w < 2:
            raise ValueError(f"patch side {min(h, w)} < 2, cannot difference")
        ep = np.asarray(ep, dtype=np.float64)
        if ep.shape != (h, w):
            raise ValueError("event patch shape differs from render")
        gx = lpt[: h - 1, 1:] - lpt[: h - 1, : w - 1]
        gy = lpt[1:, : w - 1] - lpt[: h - 1, : w - 1]
        r = ep[: h - 1, : w - 1] / dt + gx * float(v[0]) + gy * float(v[1])
        term = ad.absolute(r).mean()
        acc = term if acc is None else acc + term
    return ad.unwrap(acc * (1.0 / len(log_patches)), keep)


def geometry_loss(flow_mags, depths, weight_sums, epsilon: float = 1e-6,
                  literal_reciprocal: bool = False):
    """Flow-disparity consistency over confidently-occupied rays.

    Rays with weight sum below 0.5 are dropped; if none survive (or the
    batch has no flow at all) the loss is skipped.  Returns (loss,
    skipped).
    """
    flow_mags = np.asarray(flow_mags, dtype=np.float64)
    d, keep = ad.wrap(depths)
    ws = weight_sums.data if isinstance(weight_sums, ad.Tensor) else \
        np.asarray(weight_sums, dtype=np.float64)
    if not flow_mags.shape == d.shape == ws.shape:
        raise ValueError("flow, depth, weight-sum lengths differ")
    mask = ws >= 0.5
    if not np.any(mask):
        return 0.0, True
    idx = np.nonzero(mask)[0]
    f = flow_mags[idx]
    fmax = f.max()
    if fmax <= 0.0:
        return 0.0, True
    du = d[idx] + epsilon
    dmin = du[int(np.argmin(du.data))]
    if literal_reciprocal:
        terms = ad.absolute(f * (1.0 / fmax) - 1.0 / (du * dmin))
    else:
        terms = ad.absolute(f * (1.0 / fmax) - dmin / du)
    return ad.unwrap(terms.mean(), keep), False


def ao_gate(ao_values, step: int, tau_max: float = 0.9,
            warmup_steps: int = 1) -> np.ndarray:
    """Boolean mask of rays whose ambient occlusion clears the ramp threshold."""
    ao = np.asarray(ao_values, dtype=np.float64)
    if np.any(ao < -1e-9) or np.any(ao > 1.0 + 1e-9):
        raise ValueError("AO values outside [0, 1]")
    if warmup_steps <= 0:
        tau = tau_max
    else:
        tau = tau_max * min(1.0, step / warmup_steps)
    return ao >= tau


def total_loss(event: float, grad_term: float, geo: float, cfg: TrainConfig,
               gated_fraction: float = 1.0) -> LossBreakdown:
    parts = {"event": event, "grad": grad_term, "geo": geo}
    for name, value in parts.items():
        if not math.isfinite(value):
            raise DivergedError(f"{name} loss is not finite: {value}")
    total = cfg.alpha * event + cfg.beta * geo + cfg.gamma * grad_term
    return LossBreakdown(event, grad_term, geo, total, gated_fraction)


# ------------------------------------------------------------------ adam

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0


def init_adam(params: FieldParams) -> AdamState:
    return AdamState([np.zeros_like(t.data) for t in params.tensors],
                     [np.zeros_like(t.data) for t in params.tensors])


def adam_step(values, grads, state: AdamState, cfg: TrainConfig):
    """Bias-corrected Adam on a list of arrays; returns (values', state')."""
    if len(values) != len(grads):
        raise ValueError("parameter / gradient count mismatch")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    t = state.step + 1
    new_values, new_m, new_v = [], [], []
    for p, g, m, v in zip(values, grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        new_values.append(p - cfg.lr * mhat / (np.sqrt(vhat) + cfg.adam_eps))
        new_m.append(m)
        new_v.append(v)
    return new_values, AdamState(new_m, new_v, t)


# ------------------------------------------------------- step assembly

@dataclass(frozen=True)
class StepBatch:
    frame: object            # accumulated events over [t_end - dt, t_end)
    dt: float
    t_end: float
    pixels: np.ndarray       # (R, 2) x, y of every sampled patch pixel
    patch_blocks: tuple      # (start, h, w) per patch into the pixel list
    patch_flows: np.ndarray  # (k, 2) px/s at each patch center
    flow_mags: np.ndarray    # (R,)
    event_mask: np.ndarray   # (R,) pixel has a nonzero accumulated value
    rays_prev: object
    rays_t: object


@dataclass(frozen=True)
class SamplingPlan:
    z_prev: np.ndarray       # (R, N) frozen sample depths at t_end - dt
    z_t: np.ndarray
    gate_mask: np.ndarray    # (R,) AO warm-up gate, frozen per step
    tau: float


def build_step_batch(stream: EventStream, intrinsics: Intrinsics,
                     trajectory: Trajectory, warp_field: WarpField,
                     cfg: TrainConfig, rng: np.random.Generator,
                     max_retries: int = 10):
    """Window + patch draw; None when every retry hit an empty window."""
    t_lo, t_hi = float(stream.t[0]), float(stream.t[-1])
    span = t_hi - t_lo
    for _ in range(max_retries):
        dt = rng.uniform(cfg.window_min, cfg.window_max)
        dt = min(dt, span)
        t_end = rng.uniform(t_lo + dt, t_hi) if t_lo + dt < t_hi else t_hi
        frame = accumulate_event_frame(stream, t_end - dt, t_end)
        if np.any(frame.values != 0.0):
            break
    else:
        return None

    grid = count_event_pixels(frame, cfg.patch_side)
    if cfg.density_guided:
        probs = patch_probabilities(grid, offset=cfg.patch_offset)
    else:
        probs = np.full(grid.n_patches, 1.0 / grid.n_patches)
    k = min(cfg.patches_per_batch, grid.n_patches)
    draw = sample_patches(grid, probs, k, rng)

    blocks = []
    start = 0
    for j, px in zip(draw.indices, draw.pixels):
        x0, y0 = grid.origins[j]
        h = min(y0 + grid.n, grid.height) - y0
        w = min(x0 + grid.n, grid.width) - x0
        blocks.append((start, int(h), int(w)))
        start += px.shape[0]
    pixels = np.concatenate(draw.pixels, axis=0)

    t_mid = t_end - 0.5 * dt
    flows = warp_field.flow_at(pixels.astype(np.float64), t_mid)
    flow_mags = np.linalg.norm(flows, axis=1)
    centers = np.array([px.mean(axis=0) for px in draw.pixels])
    patch_flows = warp_field.flow_at(centers, t_mid)
    event_mask = frame.values[pixels[:, 1], pixels[:, 0]] != 0.0

    cam_prev = PinholeCamera(intrinsics, trajectory.pose_at(t_end - dt))
    cam_t = PinholeCamera(intrinsics, trajectory.pose_at(t_end))
    rays_prev = generate_rays(cam_prev, pixels, cfg.t_near, cfg.t_far)
    rays_t = generate_rays(cam_t, pixels, cfg.t_near, cfg.t_far)
    return StepBatch(frame, dt, t_end, pixels, tuple(blocks), patch_flows,
                     flow_mags, event_mask, rays_prev, rays_t)


def _render_fixed_depths(params: FieldParams, rays, z: np.ndarray):
    """Differentiable composite at frozen depths -> (intensity, depth, ao)."""
    if params.arch.channels != 1:
        raise TrainingError("training expects a single intensity channel")
    r, n = z.shape
    o, d = rays.origins, rays.directions
    pos = (o[:, None, :] + z[..., None] * d[:, None, :]).reshape(-1, 3)
    dirs = np.repeat(d, n, axis=0)
    enc = params.arch.encoding
    c, s = field_forward(params,
                         positional_encode(pos, enc.l_pos, enc.include_input),
                         positional_encode(dirs, enc.l_dir, enc.include_input))
    c = c.reshape((r, n))
    s = s.reshape((r, n))
    w = blend_weights(s, sample_gaps(z, rays.t_near, rays.t_far))
    intensity = (w * c).sum(axis=1)
    depth = (w * ad.Tensor(z)).sum(axis=1)
    ao = w.sum(axis=1)
    return intensity, depth, ao


def plan_step(params: FieldParams, batch: StepBatch, cfg: TrainConfig,
              rng: np.random.Generator, step: int) -> SamplingPlan:
    """Freeze sample depths and the AO gate before gradients flow."""
    n = batch.rays_t.n_rays
    u = [rng.random((n, cfg.n_coarse)), rng.random((n, cfg.n_fine)),
         rng.random((n, cfg.n_coarse)), rng.random((n, cfg.n_fine))]
    with ad.no_grad():
        z_prev = _resampled(params, batch.rays_prev, cfg, u[0], u[1])
        z_t = _resampled(params, batch.rays_t, cfg, u[2], u[3])
        _, _, ao = _render_fixed_depths(params, batch.rays_t, z_t)
    tau = cfg.ao_tau_max * min(1.0, step / cfg.warmup_steps)
    gate = ao_gate(np.clip(ao.data, 0.0, 1.0), step, cfg.ao_tau_max,
                   cfg.warmup_steps)
    return SamplingPlan(z_prev, z_t, gate, tau)


def _resampled(params, rays, cfg, u_coarse, u_fine):
    z = stratified_depths(rays.n_rays, rays.t_near, rays.t_far, cfg.n_coarse,
                          u_coarse)
    if cfg.n_fine < 1:
        return z
    sig = _sigma_only(params, rays, z)
    w = blend_weights(sig, sample_gaps(z, rays.t_near, rays.t_far))
    w = w.data if isinstance(w, ad.Tensor) else w
    return hierarchical_resample(w, z, cfg.n_fine, u_fine, rays.t_near,
                                 rays.t_far)


def _sigma_only(params, rays, z):
    r, n = z.shape
    pos = (rays.origins[:, None, :]
           + z[..., None] * rays.directions[:, None, :]).reshape(-1, 3)
    dirs = np.repeat(rays.directions, n, axis=0)
    enc = params.arch.encoding
    _, s = field_forward(params,
                         positional_encode(pos, enc.l_pos, enc.include_input),
                         positional_encode(dirs, enc.l_dir, enc.include_input))
    s = s.data if isinstance(s, ad.Tensor) else s
    return s.reshape(r, n)


def step_loss(params: FieldParams, batch: StepBatch, plan: SamplingPlan,
              cfg: TrainConfig):
    """(total loss tensor, LossBreakdown) for one frozen plan."""
    i_prev, _, _ = _render_fixed_depths(params, batch.rays_prev, plan.z_prev)
    i_t, d_t, ao_t = _render_fixed_depths(params, batch.rays_t, plan.z_t)
    target = batch.frame.values[batch.pixels[:, 1], batch.pixels[:, 0]]

    ev = event_loss(i_t, i_prev, target, cfg.b)
    total = cfg.alpha * ev

    gl = 0.0
    if cfg.gamma != 0.0:
        log_t = ad.log(i_t + cfg.b)
        log_patches, event_patches, flows = [], [], []
        for (start, h, w), v in zip(batch.patch_blocks, batch.patch_flows):
            if h < 2 or w < 2:
                continue   # clipped edge patch: nothing to difference
            sl = slice(start, start + h * w)
            log_patches.append(log_t[sl].reshape((h, w)))
            ys = batch.pixels[sl, 1].reshape(h, w)
            xs = batch.pixels[sl, 0].reshape(h, w)
            event_patches.append(batch.frame.values[ys, xs])
            flows.append(v)
        if log_patches:
            gl = gradient_loss(log_patches, event_patches, flows, batch.dt)
            total = total + cfg.gamma * gl

    geo = 0.0
    geo_skipped = True
    if cfg.beta != 0.0:
        cand = batch.event_mask & plan.gate_mask
        if np.any(cand):
            idx = np.nonzero(cand)[0]
            geo, geo_skipped = geometry_loss(
                batch.flow_mags[idx], d_t[idx], ao_t.data[idx],
                cfg.epsilon_depth, cfg.literal_reciprocal)
            if not geo_skipped:
                total = total + cfg.beta * geo

    gated_fraction = float(np.mean(plan.gate_mask))
    breakdown = total_loss(_scalar(ev), _scalar(gl), _scalar(geo), cfg,
                           gated_fraction)
    return total, breakdown


def _scalar(x) -> float:
    return float(x.data) if isinstance(x, ad.Tensor) else float(x)


def compute_param_gradients(params: FieldParams, loss) -> list:
    """Backward pass; non-finite entries raise with their flat parameter index."""
    if not math.isfinite(_scalar(loss)):
        raise DivergedError(f"total loss is not finite: {_scalar(loss)}")
    if isinstance(loss, ad.Tensor) and loss.requires_grad:
        loss.backward()
    grads = []
    offset = 0
    for t in params.tensors:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            bad = offset + int(np.flatnonzero(~np.isfinite(g.ravel()))[0])
            raise DivergedError(f"non-finite gradient at parameter {bad}")
        grads.append(g)
        offset += g.size
    return grads


# ------------------------------------------------------------- the loop

@dataclass(frozen=True)
class TrainResult:
    params: FieldParams
    log: tuple               # (step, LossBreakdown) per executed step
    skipped_steps: tuple     # steps whose window retries found no events


def train(stream: EventStream, intrinsics: Intrinsics, trajectory: Trajectory,
          warp_field: WarpField, params0: FieldParams, cfg: TrainConfig,
          checkpoint_dir=None, checkpoint_every: int = 0,
          on_step=None) -> TrainResult:
    if trajectory.t_start > stream.t[0] or trajectory.t_end < stream.t[-1]:
        raise TrainingError("trajectory does not cover the event stream span")
    if checkpoint_dir is not None and checkpoint_every > 0:
        os.makedirs(checkpoint_dir, exist_ok=True)
    params = FieldParams(params0.arch,
                         [ad.Tensor(t.data.copy(), requires_grad=True)
                          for t in params0.tensors])
    state = init_adam(params)
    rng = np.random.default_rng(cfg.seed)
    log = []
    skipped = []
    for step in range(cfg.steps):
        batch = build_step_batch(stream, intrinsics, trajectory, warp_field,
                                 cfg, rng)
        if batch is None:
            skipped.append(step)
            continue
        plan = plan_step(params, batch, cfg, rng, step)
        for t in params.tensors:
            t.grad = None
        total, breakdown = step_loss(params, batch, plan, cfg)
        grads = compute_param_gradients(params, total)
        new_values, state = adam_step([t.data for t in params.tensors], grads,
                                      state, cfg)
        for t, value in zip(params.tensors, new_values):
            t.data = value
        log.append((step, breakdown))
        if on_step is not None:
            on_step(step, breakdown)
        if checkpoint_dir is not None and checkpoint_every > 0 \
                and (step + 1) % checkpoint_every == 0:
            save_checkpoint(f"{checkpoint_dir}/step_{step + 1:07d}.nfp",
                            params)
    return TrainResult(params, tuple(log), tuple(skipped))


# ------------------------------------------------------------- loss log

LOG_HEADER = "step,event,grad,geo,total,gated_fraction"


def save_loss_log(path, log) -> None:
    with open(path, "w") as f:
        f.write(LOG_HEADER + "\n")
        for step, row in log:
            f.write(f"{step},{row.event:.17g},{row.grad:.17g},"
                    f"{row.geo:.17g},{row.total:.17g},"
                    f"{row.gated_fraction:.17g}\n")


def load_loss_log(path):
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != LOG_HEADER:
        raise TrainingError(f"{path}: missing loss-log header")
    out = []
    for i, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 6:
            raise TrainingError(f"{path}:{i}: expected 6 fields")
        step = int(parts[0])
        vals = [float(v) for v in parts[1:]]
        out.append((step, LossBreakdown(*vals)))
    return out
