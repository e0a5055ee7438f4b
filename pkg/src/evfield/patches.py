"""Event-density-guided patch sampling.

The frame is tiled by non-overlapping n-by-n patches (edge patches
clipped).  Each patch gets a weight f(n_e) = n_e + offset where n_e is
its number of pixels with a nonzero accumulated event value, so patches
full of events are drawn most often while empty ones keep a small but
nonzero probability.  Draws are without replacement with sequential
renormalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventFrame


@dataclass(frozen=True)
class PatchGrid:
    n: int                 # patch side length
    width: int
    height: int
    origins: np.ndarray    # (P, 2) top-left x, y in row-major patch order
    counts: np.ndarray     # (P,) pixels with a nonzero frame value

    def __post_init__(self):
        area = self.n * self.n
        if np.any(self.counts < 0) or np.any(self.counts > area):
            raise ValueError("patch counts outside [0, n^2]")

    @property
    def n_patches(self) -> int:
        return self.origins.shape[0]

    def pixels(self, index: int) -> np.ndarray:
        """(m, 2) integer x, y coordinates covered by one patch."""
        x0, y0 = self.origins[index]
        xs = np.arange(x0, min(x0 + self.n, self.width))
        ys = np.arange(y0, min(y0 + self.n, self.height))
        gx, gy = np.meshgrid(xs, ys, indexing="xy")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


@dataclass(frozen=True)
class PatchDraw:
    indices: np.ndarray
    pixels: tuple


def count_event_pixels(frame: EventFrame, n: int) -> PatchGrid:
    if n < 1:
        raise ValueError("patch side must be at least 1")
    occupied = (frame.values != 0.0).astype(np.int64)
    h, w = occupied.shape
    row_starts = np.arange(0, h, n)
    col_starts = np.arange(0, w, n)
    summed = np.add.reduceat(np.add.reduceat(occupied, row_starts, axis=0),
                             col_starts, axis=1)
    gx, gy = np.meshgrid(col_starts, row_starts, indexing="xy")
    origins = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return PatchGrid(n, w, h, origins, summed.ravel())


def patch_probabilities(grid: PatchGrid, offset: float = 1.0) -> np.ndarray:
    if offset <= 0.0:
        raise ValueError("offset must be positive to keep empty patches drawable")
    if grid.n_patches < 1:
        raise ValueError("need at least one patch")
    weights = grid.counts.astype(np.float64) + offset
    return weights / weights.sum()


def sample_patches(grid: PatchGrid, probs: np.ndarray, k: int,
                   rng: np.random.Generator) -> PatchDraw:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (grid.n_patches,):
        raise ValueError("probability vector does not match patch count")
    if not 1 <= k <= grid.n_patches:
        raise ValueError(f"cannot draw {k} of {grid.n_patches} patches")
    if np.any(probs < 0.0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("probabilities must be nonnegative and sum to 1")
    remaining = probs.copy()
    picked = np.empty(k, dtype=np.int64)
    for i in range(k):
        total = remaining.sum()
        if total <= 0.0:
            p = np.where(np.isin(np.arange(grid.n_patches), picked[:i]),
                         0.0, 1.0)
            p /= p.sum()
        else:
            p = remaining / total
        choice = rng.choice(grid.n_patches, p=p)
        picked[i] = choice
        remaining[choice] = 0.0
    return PatchDraw(picked, tuple(grid.pixels(int(j)) for j in picked))
