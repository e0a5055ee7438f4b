"""Acceptance checks: one test per shipped guarantee.

Each test here is a contract the package promises end to end, from gradient
correctness through full pipeline reproducibility.  Tolerances are pinned in
the assertions; `pytest -v` reports one pass/fail line per guarantee.  The
desk-scale trainings at the bottom are the slow part of the suite (hours,
not seconds) and share their scene and event stream through module fixtures.
"""

import numpy as np
import pytest
from scipy import stats

from common import checker_stream, sphere_setup

from evfield import autodiff as ad
from evfield.cli import main as cli_main
from evfield.events import EventStream, accumulate_event_frame
from evfield.field import FieldArch, init_params
from evfield.motion import (MotionParams, identity_params, optimize_motion,
                            variance_at)
from evfield.patches import (count_event_pixels, patch_probabilities,
                             sample_patches)
from evfield.render import (ambient_occlusion, blend_weights, composite_depth,
                            sample_gaps, stratified_depths)
from evfield.simulate import FrameSequence, video_to_events
from evfield.training import (TrainConfig, build_step_batch,
                              compute_param_gradients, plan_step, step_loss)


def _val(x):
    return x.data if isinstance(x, ad.Tensor) else x


# ------------------------------------------------------- gradient correctness

def test_gradients_match_finite_differences():
    """Analytic gradients of the full training loss vs central differences.

    2-layer/16-wide field, 20 random parameters on each of 5 random batches,
    all three loss terms active, relative error <= 1e-3 throughout.
    """
    stream, intr, traj, wf, _ = sphere_setup(size=16)
    params = init_params(3, FieldArch(depth=2, width=16))
    cfg = TrainConfig(alpha=1.0, beta=0.01, gamma=0.01, b=0.05,
                      n_coarse=8, n_fine=8, patches_per_batch=8, patch_side=2,
                      t_near=1.0, t_far=6.0)
    rng = np.random.default_rng(42)
    h = 1e-4
    sizes = np.array([t.data.size for t in params.tensors])
    bounds = np.cumsum(sizes)
    worst = 0.0
    for _ in range(5):
        batch = build_step_batch(stream, intr, traj, wf, cfg, rng)
        assert batch is not None
        # step 0: the warm-up gate is fully open, so the geometry term is live
        plan = plan_step(params, batch, cfg, rng, step=0)
        for t in params.tensors:
            t.grad = None
        loss, bd = step_loss(params, batch, plan, cfg)
        assert bd.event > 0 and bd.grad > 0 and bd.geo > 0, bd
        flat_g = np.concatenate(
            [g.ravel() for g in compute_param_gradients(params, loss)])
        for i in rng.choice(flat_g.size, size=20, replace=False):
            ti = int(np.searchsorted(bounds, i, side="right"))
            li = int(i - (bounds[ti] - sizes[ti]))
            t = params.tensors[ti]
            orig = t.data.flat[li]
            with ad.no_grad():
                t.data.flat[li] = orig + h
                lp, _ = step_loss(params, batch, plan, cfg)
                t.data.flat[li] = orig - h
                lm, _ = step_loss(params, batch, plan, cfg)
            t.data.flat[li] = orig
            fd = (float(_val(lp)) - float(_val(lm))) / (2 * h)
            rel = abs(flat_g[i] - fd) / max(abs(flat_g[i]), abs(fd), 1e-8)
            worst = max(worst, rel)
    assert worst <= 1e-3, f"max relative error {worst:.3e}"


# ---------------------------------------------------- motion prior recovery

def test_motion_prior_recovers_known_flow():
    """64x64 translating checker: 5% flow recovery, 1.5x variance gain,
    and agreement with an exhaustive velocity-grid search to one cell."""
    v_true = np.array([4.0, 0.0])
    stream = checker_stream(v=v_true, size=64, cell=8.0)
    t_ref = 0.5
    v_id = variance_at(stream, identity_params("translation"), t_ref)
    theta, v_star = optimize_motion(stream, t_ref,
                                    identity_params("translation"))
    rel = np.linalg.norm(theta.values - v_true) / np.linalg.norm(v_true)
    assert rel <= 0.05, f"recovered {theta.values}, rel err {rel:.3f}"
    assert v_star >= 1.5 * v_id, f"variance gain only {v_star / v_id:.2f}x"

    spacing = 0.5
    axis = np.arange(-8.0, 8.0 + spacing / 2, spacing)
    best, best_v = None, -np.inf
    for gx in axis:
        for gy in axis:
            v = variance_at(
                stream, MotionParams("translation", np.array([gx, gy])),
                t_ref)
            if v > best_v:
                best_v, best = v, (gx, gy)
    assert abs(theta.values[0] - best[0]) <= spacing
    assert abs(theta.values[1] - best[1]) <= spacing


# ------------------------------------------------------- event quantization

def test_event_quantization_bound():
    """20 random sequences: accumulated threshold steps track the true log
    difference to within one threshold per pixel.  Exact bound."""
    for seed in range(20):
        rng = np.random.default_rng(seed)
        h = int(rng.integers(4, 17))
        w = int(rng.integers(4, 17))
        n = int(rng.integers(3, 9))
        c = float(rng.uniform(0.05, 0.3))
        off = float(rng.uniform(1e-3, 0.1))
        frames = rng.uniform(0.0, 1.0, (n, h, w))
        times = np.sort(rng.uniform(0.0, 1.0, n))
        while np.any(np.diff(times) <= 0):
            times = np.sort(rng.uniform(0.0, 1.0, n))
        seq = FrameSequence(times, frames, np.zeros_like(frames))
        s = video_to_events(seq, c, off)
        acc = np.zeros((h, w))
        np.add.at(acc, (s.y, s.x), c * s.polarity.astype(np.float64))
        true = np.log(frames[-1] + off) - np.log(frames[0] + off)
        err = np.abs(acc - true).max()
        assert err <= c, f"seed {seed}: residual {err} exceeds threshold {c}"


# --------------------------------------------------- compositing identities

def test_compositing_identities():
    """1e4 random rays: weight sum vs transmittance, the occlusion alias,
    and single-bin depth accuracy against an opaque wall."""
    rng = np.random.default_rng(0)
    n_rays, n = 10_000, 48
    t_near, t_far = 1.0, 6.0
    z = stratified_depths(n_rays, t_near, t_far, n, rng.random((n_rays, n)))
    deltas = sample_gaps(z, t_near, t_far)
    sig = rng.lognormal(mean=-1.0, sigma=2.0, size=(n_rays, n))
    w = _val(blend_weights(sig, deltas))
    opt = 1.0 - np.exp(-(sig * deltas).sum(axis=1))
    assert np.abs(w.sum(axis=1) - opt).max() <= 1e-9

    ao = _val(ambient_occlusion(sig, deltas))
    assert np.abs(ao - w.sum(axis=1)).max() <= 1e-12

    wall = rng.integers(2, n - 1, n_rays)
    sig_wall = np.where(np.arange(n)[None, :] >= wall[:, None], 50.0, 0.0)
    ww = _val(blend_weights(sig_wall, deltas))
    depth = _val(composite_depth(ww, z))
    wall_z = z[np.arange(n_rays), wall]
    assert np.abs(depth - wall_z).max() <= (t_far - t_near) / n


# ----------------------------------------------------------- sampling law

def test_patch_sampling_law():
    """Empirical draw frequencies match the count-plus-offset law within
    0.02 (chi-square p > 0.01, 1e5 draws); probability is strictly
    monotone in the per-patch event-pixel count."""
    rng = np.random.default_rng(7)
    xs, ys = [], []
    per_patch = rng.integers(0, 5, 16)
    for j, c in enumerate(per_patch):
        x0, y0 = (j % 4) * 2, (j // 4) * 2
        for cell in rng.permutation(4)[:c]:
            xs.append(x0 + cell % 2)
            ys.append(y0 + cell // 2)
    s = EventStream(np.linspace(0.1, 0.9, len(xs)), xs, ys,
                    np.ones(len(xs), int), 8, 8, 0.1)
    grid = count_event_pixels(accumulate_event_frame(s, 0.0, 1.0), 2)
    probs = patch_probabilities(grid)

    draws = 100_000
    hits = np.zeros(grid.n_patches)
    for _ in range(draws):
        hits[sample_patches(grid, probs, 1, rng).indices[0]] += 1
    assert np.abs(hits / draws - probs).max() <= 0.02
    _, p = stats.chisquare(hits, probs * draws)
    assert p > 0.01, f"chi-square p = {p}"

    for i in range(grid.n_patches):
        for j in range(grid.n_patches):
            if grid.counts[i] > grid.counts[j]:
                assert probs[i] > probs[j]
            elif grid.counts[i] == grid.counts[j]:
                assert probs[i] == probs[j]


# ------------------------------------------------------------ determinism

PIPE_CFG = """\
sim.size = 16
sim.views = 8
sim.t_span = 0.5
motion.window = 0.5
motion.iters = 3
train.steps = 3
train.patches = 6
train.lr = 0.001
render.n_coarse = 8
render.n_fine = 8
"""


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_cli_determinism(tmp_path, capsys):
    """Every pipeline stage, run twice with the same seed and inputs,
    produces byte-identical artifacts."""
    cfg = tmp_path / "run.cfg"
    cfg.write_text(PIPE_CFG)
    cfg = str(cfg)

    def run(stage, out, extra):
        assert cli_main([stage, "--config", cfg, "--out", str(out)]
                        + extra) == 0
        return _tree_bytes(out)

    sims = [run("simulate", tmp_path / f"sim{i}", ["--seed", "5"])
            for i in (0, 1)]
    assert sims[0] == sims[1]

    ev = str(tmp_path / "sim0" / "events.evt1")
    poses = str(tmp_path / "sim0" / "poses.txt")
    motions = [run("extract-motion", tmp_path / f"mo{i}", ["--events", ev])
               for i in (0, 1)]
    assert motions[0] == motions[1]

    warp = str(tmp_path / "mo0" / "warp.txt")
    fits = [run("train", tmp_path / f"fit{i}",
                ["--events", ev, "--poses", poses, "--warp", warp,
                 "--seed", "3"]) for i in (0, 1)]
    assert fits[0] == fits[1]

    ckpt = str(tmp_path / "fit0" / "checkpoint.nfp")
    renders = [run("render", tmp_path / f"re{i}",
                   ["--checkpoint", ckpt, "--poses", poses, "--seed", "3"])
               for i in (0, 1)]
    assert renders[0] == renders[1]

    gt = str(tmp_path / "sim0" / "gt")
    outs = []
    for _ in (0, 1):
        capsys.readouterr()
        assert cli_main(["eval", "--pred", str(tmp_path / "re0"),
                         "--gt", gt, "--depth"]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
