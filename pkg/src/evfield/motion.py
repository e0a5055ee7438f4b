"""Contrast-maximization motion extraction.

Events in a short window are warped to the window midpoint under a
parametric motion model; the sharper the image of warped events, the better
the model explains the motion.  Sharpness is scored by the variance of the
warped-event image and maximized by gradient ascent, with the gradient
taken analytically through the bilinear splat.

Two models: constant translation flow (vx, vy in px/s, the default) and an
8-parameter homography whose matrix is interpolated linearly toward the
identity as t approaches the reference time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventStream

MODELS = ("translation", "homography")


class MotionError(ValueError):
    pass


class DegenerateMotionError(MotionError):
    pass


class NoEventsError(MotionError):
    pass


class DivergenceError(MotionError):
    pass


@dataclass(frozen=True)
class MotionParams:
    model: str
    values: np.ndarray

    def __post_init__(self):
        if self.model not in MODELS:
            raise MotionError(f"unknown motion model '{self.model}'")
        v = np.asarray(self.values, dtype=np.float64)
        want = 2 if self.model == "translation" else 8
        if v.shape != (want,):
            raise MotionError(f"{self.model} model needs {want} parameters")
        if self.model == "homography":
            if abs(np.linalg.det(_homography_matrix(v))) <= 1e-9:
                raise DegenerateMotionError("homography is not invertible")
        object.__setattr__(self, "values", v)


def identity_params(model: str) -> MotionParams:
    if model == "translation":
        return MotionParams("translation", np.zeros(2))
    return MotionParams("homography",
                        np.array([1.0, 0, 0, 0, 1.0, 0, 0, 0]))


def _homography_matrix(values: np.ndarray) -> np.ndarray:
    h = np.empty((3, 3))
    h.flat[:8] = values
    h[2, 2] = 1.0
    return h


@dataclass(frozen=True)
class WarpedEvents:
    coords: np.ndarray       # (N, 2) real pixel coordinates at t_ref
    polarity: np.ndarray     # (N,)
    out_of_bounds: np.ndarray  # (N,) bool, center landed outside the grid


@dataclass(frozen=True)
class WarpedEventImage:
    values: np.ndarray   # (H, W) accumulated mass
    n_pixels: int        # grid size, the N_e of the variance objective
    n_events: int        # events that contributed any in-bounds mass


def _theta_terms(values: np.ndarray, dt: np.ndarray, x, y):
    """Homography numerators/denominator at interpolated matrices.

    Theta(dt) = I + dt * (H - I), applied to homogeneous pixel coords.
    """
    p = values
    a = (1.0 + dt * (p[0] - 1.0)) * x + dt * p[1] * y + dt * p[2]
    b = dt * p[3] * x + (1.0 + dt * (p[4] - 1.0)) * y + dt * p[5]
    c = dt * p[6] * x + dt * p[7] * y + 1.0
    return a, b, c


def warp_events(stream: EventStream, theta: MotionParams, t_ref: float) -> WarpedEvents:
    """Transport every event to t_ref under the motion model."""
    x = stream.x.astype(np.float64)
    y = stream.y.astype(np.float64)
    dt = stream.t - t_ref
    if theta.model == "translation":
        vx, vy = theta.values
        wx = x - vx * dt
        wy = y - vy * dt
    else:
        a, b, c = _theta_terms(theta.values, dt, x, y)
        if np.any(np.abs(c) < 1e-12):
            raise DegenerateMotionError("homography denominator vanished")
        wx = a / c
        wy = b / c
    coords = np.stack([wx, wy], axis=1)
    oob = ((wx < 0.0) | (wx > stream.width - 1) |
           (wy < 0.0) | (wy > stream.height - 1))
    return WarpedEvents(coords, stream.polarity.copy(), oob)


def _splat_terms(coords: np.ndarray, width: int, height: int):
    """Bilinear corner indices, weights, and in-bounds masks for each event."""
    x = coords[:, 0]
    y = coords[:, 1]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    # corner order: (x0,y0), (x0+1,y0), (x0,y0+1), (x0+1,y0+1)
    cx = np.stack([x0, x0 + 1, x0, x0 + 1], axis=1)
    cy = np.stack([y0, y0, y0 + 1, y0 + 1], axis=1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy),
                  (1 - fx) * fy, fx * fy], axis=1)
    dw_dx = np.stack([-(1 - fy), (1 - fy), -fy, fy], axis=1)
    dw_dy = np.stack([-(1 - fx), -fx, (1 - fx), fx], axis=1)
    inside = (cx >= 0) & (cx < width) & (cy >= 0) & (cy < height)
    return cx, cy, w, dw_dx, dw_dy, inside


def build_iwe(warped: WarpedEvents, width: int, height: int) -> WarpedEventImage:
    """Accumulate unit mass per event onto the grid (polarity ignored)."""
    coords = warped.coords
    if not np.all(np.isfinite(coords)):
        raise MotionError("warped coordinates are not finite")
    n = coords.shape[0]
    values = np.zeros(height * width)
    if n:
        cx, cy, w, _, _, inside = _splat_terms(coords, width, height)
        flat = (cy * width + cx)[inside]
        values = np.bincount(flat, weights=w[inside], minlength=height * width)
        contributing = int(np.any(inside & (w > 0.0), axis=1).sum())
    else:
        contributing = 0
    return WarpedEventImage(values.reshape(height, width), height * width,
                            contributing)


def contrast_variance(iwe: WarpedEventImage) -> float:
    """Population variance of the warped-event image over all pixels."""
    if iwe.n_pixels == 0:
        raise MotionError("variance undefined for an empty image")
    return float(np.var(iwe.values))


def edge_map(iwe: WarpedEventImage) -> np.ndarray:
    m = iwe.values.max()
    if m <= 0.0:
        return np.zeros_like(iwe.values)
    return iwe.values / m


def variance_and_gradient(stream: EventStream, theta: MotionParams, t_ref: float):
    """V_H and its analytic gradient w.r.t. the motion parameters."""
    warped = warp_events(stream, theta, t_ref)
    width, height = stream.width, stream.height
    cx, cy, w, dw_dx, dw_dy, inside = _splat_terms(warped.coords, width, height)
    n_pix = width * height
    flat = (cy * width + cx)[inside]
    values = np.bincount(flat, weights=w[inside], minlength=n_pix)
    mu = values.mean()
    v = float(np.mean((values - mu) ** 2))
    dv_dh = 2.0 * (values - mu) / n_pix  # mean term drops: sum(dw) = 0 per event
    pixel_grad = np.where(inside, dv_dh[np.clip(cy * width + cx, 0, n_pix - 1)], 0.0)
    g_x = (pixel_grad * dw_dx).sum(axis=1)  # dV/d(warped x) per event
    g_y = (pixel_grad * dw_dy).sum(axis=1)

    dt = stream.t - t_ref
    if theta.model == "translation":
        grad = np.array([-(g_x * dt).sum(), -(g_y * dt).sum()])
    else:
        x = stream.x.astype(np.float64)
        y = stream.y.astype(np.float64)
        a, b, c = _theta_terms(theta.values, dt, x, y)
        wx = a / c
        wy = b / c
        zero = np.zeros_like(x)
        da = np.stack([dt * x, dt * y, dt, zero, zero, zero, zero, zero], axis=1)
        db = np.stack([zero, zero, zero, dt * x, dt * y, dt, zero, zero], axis=1)
        dc = np.stack([zero] * 6 + [dt * x, dt * y], axis=1)
        dwx = (da - wx[:, None] * dc) / c[:, None]
        dwy = (db - wy[:, None] * dc) / c[:, None]
        grad = (g_x[:, None] * dwx + g_y[:, None] * dwy).sum(axis=0)
    return v, grad


def variance_at(stream: EventStream, theta: MotionParams, t_ref: float) -> float:
    warped = warp_events(stream, theta, t_ref)
    return contrast_variance(build_iwe(warped, stream.width, stream.height))


def fd_gradient(stream: EventStream, theta: MotionParams, t_ref: float,
                h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of the variance objective (check oracle)."""
    g = np.zeros_like(theta.values)
    for i in range(theta.values.size):
        vp = theta.values.copy()
        vm = theta.values.copy()
        vp[i] += h
        vm[i] -= h
        g[i] = (variance_at(stream, MotionParams(theta.model, vp), t_ref)
                - variance_at(stream, MotionParams(theta.model, vm), t_ref)) / (2 * h)
    return g


@dataclass(frozen=True)
class MotionOptimConfig:
    lr: float = 2.0          # base ascent step in parameter units
    iters: int = 150
    h: float = 1e-4          # finite-difference step for gradient checks
    max_halvings: int = 25


def optimize_motion(stream: EventStream, t_ref: float, init: MotionParams,
                    cfg: MotionOptimConfig = MotionOptimConfig()):
    """Gradient ascent on warped-image variance; never returns a worse θ."""
    if stream.n_events == 0:
        raise NoEventsError("cannot estimate motion from an empty window")
    if stream.n_events == 1:
        return init, variance_at(stream, init, t_ref)
    theta = init.values.copy()
    v, grad = variance_and_gradient(stream, init, t_ref)
    if not np.isfinite(v):
        raise DivergenceError("objective not finite at iteration 0")
    for it in range(cfg.iters):
        norm = np.linalg.norm(grad)
        if norm < 1e-15:
            break
        direction = grad / norm
        step = cfg.lr
        accepted = None
        for _ in range(cfg.max_halvings):
            cand = theta + step * direction
            try:
                params = MotionParams(init.model, cand)
                v_new = variance_at(stream, params, t_ref)
            except DegenerateMotionError:
                step *= 0.5
                continue
            if not np.isfinite(v_new):
                raise DivergenceError(f"objective not finite at iteration {it + 1}")
            if v_new > v:
                accepted = (cand, v_new)
                break
            step *= 0.5
        if accepted is None:
            break
        theta, v = accepted
        _, grad = variance_and_gradient(stream, MotionParams(init.model, theta), t_ref)
    return MotionParams(init.model, theta), v


@dataclass(frozen=True)
class WarpWindow:
    t0: float
    t1: float
    t_ref: float
    params: MotionParams
    variance: float          # nan marks a window that had no events
    has_events: bool = True


class WarpField:
    """Per-window motion estimates over a stream's time span."""

    def __init__(self, windows):
        windows = list(windows)
        if not windows:
            raise MotionError("warp field needs at least one window")
        for a, b in zip(windows, windows[1:]):
            if b.t0 < a.t1:
                raise MotionError("warp windows overlap or are unsorted")
        self.windows = windows
        self._starts = np.array([w.t0 for w in windows])

    @property
    def t_start(self) -> float:
        return self.windows[0].t0

    @property
    def t_end(self) -> float:
        return self.windows[-1].t1

    def window_at(self, t: float) -> WarpWindow:
        if not (self.t_start <= t <= self.t_end):
            raise MotionError(
                f"time {t} outside warp field span [{self.t_start}, {self.t_end}]")
        i = int(np.searchsorted(self._starts, t, side="right")) - 1
        return self.windows[max(i, 0)]

    def flow_at(self, u, t: float) -> np.ndarray:
        """Pixel velocity (px/s) at image point(s) u and time t."""
        w = self.window_at(t)
        u = np.asarray(u, dtype=np.float64)
        single = u.ndim == 1
        pts = u.reshape(-1, 2)
        if w.params.model == "translation":
            flow = np.broadcast_to(w.params.values, pts.shape).copy()
        else:
            flow = _homography_flow(w.params.values, pts, t, w.t_ref)
        return flow[0] if single else flow


def _homography_flow(values: np.ndarray, pts: np.ndarray, t: float,
                     t_ref: float, baseline: float = 1e-3) -> np.ndarray:
    """Finite-difference velocity of the warp trajectory through (u, t)."""
    x, y = pts[:, 0], pts[:, 1]
    a, b, c = _theta_terms(values, np.full(x.shape, t - t_ref), x, y)
    anchor = np.stack([a / c, b / c, np.ones_like(x)], axis=1)
    theta_next = np.eye(3) + (t + baseline - t_ref) * (_homography_matrix(values) - np.eye(3))
    if abs(np.linalg.det(theta_next)) <= 1e-12:
        raise DegenerateMotionError("homography not invertible at query time")
    nxt = anchor @ np.linalg.inv(theta_next).T
    nxt = nxt[:, :2] / nxt[:, 2:3]
    return (nxt - pts) / baseline


def build_warp_field(stream: EventStream, window_len: float,
                     model: str = "translation",
                     cfg: MotionOptimConfig = MotionOptimConfig()) -> WarpField:
    """Slice the stream into windows and estimate motion per window.

    Each window is warm-started from the previous solution; empty windows
    get identity motion and a no-events mark.
    """
    if window_len <= 0.0:
        raise MotionError("window length must be positive")
    if stream.n_events == 0:
        raise NoEventsError("cannot build a warp field from an empty stream")
    t_begin = float(stream.t[0])
    t_final = float(stream.t[-1])
    n_windows = max(1, int(np.ceil((t_final - t_begin) / window_len - 1e-12)))
    prev = identity_params(model)
    windows = []
    for i in range(n_windows):
        # same expression as the next window's t0, so boundaries match exactly
        t0 = t_begin + i * window_len
        t1 = t_begin + (i + 1) * window_len
        lo = np.searchsorted(stream.t, t0, side="left")
        hi = np.searchsorted(stream.t, t1, side="left")
        if i == n_windows - 1:
            hi = stream.n_events  # final window also owns events at exactly t_final
        t_ref = 0.5 * (t0 + t1)
        if hi == lo:
            windows.append(WarpWindow(t0, t1, t_ref, identity_params(model),
                                      float("nan"), has_events=False))
            continue
        sub = EventStream(stream.t[lo:hi], stream.x[lo:hi], stream.y[lo:hi],
                          stream.polarity[lo:hi], stream.width, stream.height,
                          stream.contrast)
        try:
            params, v = optimize_motion(sub, t_ref, prev, cfg)
        except MotionError as e:
            raise MotionError(f"window {i} [{t0}, {t1}): {e}") from e
        windows.append(WarpWindow(t0, t1, t_ref, params, v))
        prev = params
    return WarpField(windows)


# ---------------------------------------------------------------------------
# cache file

def save_warp_field(path, field_: WarpField) -> None:
    """One line per window: t0 t1 t_ref model_tag p1..pK variance.

    Windows that saw no events store variance as nan; that mark round-trips.
    """
    lines = []
    for w in field_.windows:
        head = " ".join(f"{v:.17g}" for v in (w.t0, w.t1, w.t_ref))
        var = w.variance if w.has_events else float("nan")
        tail = " ".join(f"{v:.17g}" for v in (*w.params.values, var))
        lines.append(f"{head} {w.params.model} {tail}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_warp_field(path) -> WarpField:
    windows = []
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    for ln_no, ln in enumerate(lines, start=1):
        parts = ln.split()
        if len(parts) < 5:
            raise MotionError(f"line {ln_no}: too few fields")
        model = parts[3]
        if model not in MODELS:
            raise MotionError(f"line {ln_no}: unknown model tag '{model}'")
        k = 2 if model == "translation" else 8
        if len(parts) != 3 + 1 + k + 1:
            raise MotionError(
                f"line {ln_no}: expected {3 + 1 + k + 1} fields for {model}")
        try:
            t0, t1, t_ref = (float(v) for v in parts[:3])
            nums = [float(v) for v in parts[4:]]
        except ValueError as e:
            raise MotionError(f"line {ln_no}: {e}") from e
        values = np.array(nums[:k])
        variance = nums[k]
        has_events = not np.isnan(variance)
        params = (MotionParams(model, values) if has_events
                  else identity_params(model))
        windows.append(WarpWindow(t0, t1, t_ref, params, variance, has_events))
    return WarpField(windows)
