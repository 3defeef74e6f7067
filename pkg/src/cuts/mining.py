"""Unsupervised anchor/positive pair mining via proximity + SSIM screening.

Positives for an anchor pixel are nearby pixels whose surrounding patch
is structurally similar to the anchor's patch. Negatives are never
sampled explicitly: for any anchor, the positives of all *other* anchors
in the same batch serve as its negatives, which halves the mining work.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .encoder import Patch
from .errors import ShapeMismatchError, TooManyAnchorsError
from .imgio import Image

# SSIM stabilizers for unit dynamic range (L = 1)
SSIM_C1 = (0.01 * 1.0) ** 2
SSIM_C2 = (0.03 * 1.0) ** 2


@dataclass(frozen=True)
class PairSet:
    """Anchor pixels with their mined positive pixels.

    ``anchors`` is (n, 2) int coordinates, ``positives[i]`` the (m_i, 2)
    positives of anchor i (every anchor has at least one). The negative
    set of an anchor is implicit: the union of the positives of all other
    anchors in this PairSet.
    """

    anchors: np.ndarray
    positives: list

    @property
    def num_anchors(self) -> int:
        return len(self.anchors)

    @property
    def is_empty(self) -> bool:
        return len(self.anchors) == 0


def _ssim_from_windows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Single-window SSIM per channel, then channel-averaged.

    a, b: (..., npix, C) stacks of flattened windows. Uses population
    statistics (divide by npix) so a one-pixel window is well defined.
    """
    mu_a = a.mean(axis=-2)
    mu_b = b.mean(axis=-2)
    var_a = (a * a).mean(axis=-2) - mu_a * mu_a
    var_b = (b * b).mean(axis=-2) - mu_b * mu_b
    cov = (a * b).mean(axis=-2) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return (num / den).mean(axis=-1)


def ssim_patch(a, b) -> float:
    """Whole-patch SSIM in [-1, 1]: one uniform window, no sliding."""
    da = a.data if isinstance(a, Patch) else np.asarray(a)
    db = b.data if isinstance(b, Patch) else np.asarray(b)
    if da.shape != db.shape:
        raise ShapeMismatchError(f"patch shapes differ: {da.shape} vs {db.shape}")
    da = da.reshape(-1, da.shape[-1]).astype(np.float64)
    db = db.reshape(-1, db.shape[-1]).astype(np.float64)
    return float(_ssim_from_windows(da, db))


def sample_anchors(img: Image, n: int, seed, patch_size: int = 5) -> np.ndarray:
    """Draw n distinct interior pixels uniformly without replacement.

    Eligible pixels are at least ceil(patch_size/2) from every border.
    Returns (n, 2) coordinates in seeded draw order.
    """
    margin = (patch_size + 1) // 2
    rows = img.height - 2 * margin
    cols = img.width - 2 * margin
    total = rows * cols if rows > 0 and cols > 0 else 0
    if n > total:
        raise TooManyAnchorsError(f"requested {n} anchors but only {total} eligible pixels")
    if n == 0:
        return np.zeros((0, 2), dtype=np.int64)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    flat = rng.choice(total, size=n, replace=False)
    coords = np.empty((n, 2), dtype=np.int64)
    coords[:, 0] = flat // cols + margin
    coords[:, 1] = flat % cols + margin
    return coords


def mine_pairs(
    img: Image,
    anchors: np.ndarray,
    radius: int,
    ssim_threshold: float,
    max_pos: int,
    patch_size: int = 5,
) -> PairSet:
    """Mine positives: pixels within Chebyshev distance <= radius of the
    anchor whose patch SSIM meets the threshold, keeping the max_pos most
    similar. Anchors left with no positive are dropped. Deterministic:
    SSIM ties resolve in row-major candidate order.
    """
    anchors = np.asarray(anchors, dtype=np.int64).reshape(-1, 2)
    h, w = img.height, img.width
    if len(anchors) == 0:
        return PairSet(anchors.copy(), [])

    hw = (patch_size - 1) // 2
    padded = np.pad(img.data.astype(np.float64), ((hw, hw), (hw, hw), (0, 0)))
    win = sliding_window_view(padded, (patch_size, patch_size), axis=(0, 1))
    # win[i, j] is (C, p, p): the zero-padded patch centered at pixel (i, j)

    offs = np.array(
        [(di, dj) for di in range(-radius, radius + 1) for dj in range(-radius, radius + 1)
         if (di, dj) != (0, 0)],
        dtype=np.int64,
    )

    def flat_patches(coords):
        sel = win[coords[:, 0], coords[:, 1]]  # (n, C, p, p)
        return sel.transpose(0, 2, 3, 1).reshape(len(coords), patch_size * patch_size, -1)

    kept_anchors = []
    kept_positives = []
    for a in anchors:
        cand = a[None, :] + offs
        ok = (cand[:, 0] >= 0) & (cand[:, 0] < h) & (cand[:, 1] >= 0) & (cand[:, 1] < w)
        cand = cand[ok]
        if len(cand) == 0:
            continue
        scores = _ssim_from_windows(flat_patches(a[None, :]), flat_patches(cand))
        passing = np.nonzero(scores >= ssim_threshold)[0]
        if len(passing) == 0:
            continue
        order = passing[np.argsort(-scores[passing], kind="stable")][:max_pos]
        kept_anchors.append(a)
        kept_positives.append(cand[order])
    if not kept_anchors:
        return PairSet(np.zeros((0, 2), dtype=np.int64), [])
    return PairSet(np.array(kept_anchors, dtype=np.int64), kept_positives)
