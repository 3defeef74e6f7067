"""Synthetic ground-truth corpora for desk-scale benchmarks.

Three kinds:
  two-region: a random smooth boundary splits the image into two regions
              with mean intensities 0.3 and 0.7;
  blob:       a dark ellipse on a bright background;
  rings:      concentric 3-class annuli.
All images get Gaussian noise (sigma 0.05) and are clamped to [0, 1].
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imgio import Image, LabelMap, save_image, write_label_map

KINDS = ("two-region", "blob", "rings")
NOISE_SIGMA = 0.05


def _noisy(base: np.ndarray, rng: np.random.Generator) -> Image:
    img = base + rng.normal(0.0, NOISE_SIGMA, size=base.shape)
    return Image.from_array(np.clip(img, 0.0, 1.0)[:, :, None])


def make_two_region(h: int, w: int, rng: np.random.Generator):
    """Random smooth vertical-ish boundary; label 0 left, label 1 right."""
    ii = np.arange(h) / max(h - 1, 1)
    boundary = np.full(h, w / 2.0)
    for f in (1, 2, 3):
        amp = rng.uniform(0.0, w / 10.0) / f
        phase = rng.uniform(0.0, 2.0 * np.pi)
        boundary += amp * np.sin(2.0 * np.pi * f * ii + phase)
    boundary = np.clip(boundary, 0.2 * w, 0.8 * w)
    labels = (np.arange(w)[None, :] >= boundary[:, None]).astype(np.int64)
    base = np.where(labels == 0, 0.3, 0.7)
    return _noisy(base, rng), LabelMap(labels)


def make_blob(h: int, w: int, rng: np.random.Generator):
    """Dark ellipse (label 1) on a bright background (label 0)."""
    cy = h / 2.0 + rng.uniform(-h / 8.0, h / 8.0)
    cx = w / 2.0 + rng.uniform(-w / 8.0, w / 8.0)
    ry = rng.uniform(h / 6.0, h / 3.5)
    rx = rng.uniform(w / 6.0, w / 3.5)
    theta = rng.uniform(0.0, np.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    u = dy * np.cos(theta) + dx * np.sin(theta)
    v = -dy * np.sin(theta) + dx * np.cos(theta)
    inside = (u / ry) ** 2 + (v / rx) ** 2 <= 1.0
    labels = inside.astype(np.int64)
    base = np.where(inside, 0.3, 0.7)
    return _noisy(base, rng), LabelMap(labels)


def make_rings(h: int, w: int, rng: np.random.Generator):
    """Concentric annuli: label 2 core, 1 middle ring, 0 outside."""
    cy, cx = h / 2.0, w / 2.0
    r_core = rng.uniform(h / 8.0, h / 5.0)
    r_ring = rng.uniform(h / 3.5, h / 2.5)
    yy, xx = np.mgrid[0:h, 0:w]
    rr = np.hypot(yy - cy, xx - cx)
    labels = np.zeros((h, w), dtype=np.int64)
    labels[rr <= r_ring] = 1
    labels[rr <= r_core] = 2
    base = np.choose(labels, [0.8, 0.5, 0.2])
    return _noisy(base, rng), LabelMap(labels)


_MAKERS = {"two-region": make_two_region, "blob": make_blob, "rings": make_rings}


def synth_pair(kind: str, h: int, w: int, rng: np.random.Generator):
    """One (Image, LabelMap) sample of the requested kind."""
    if kind not in _MAKERS:
        raise ValueError(f"unknown synthetic kind {kind!r} (choose from {KINDS})")
    return _MAKERS[kind](h, w, rng)


def generate_corpus(out_dir, n: int, seed: int, kind: str, size: int = 128) -> list:
    """Write n image/label pairs (img_XXXX.png + gt_XXXX.lbl) to a directory.

    Deterministic for a fixed seed. Returns the list of image paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n):
        img, gt = synth_pair(kind, size, size, rng)
        img_path = out / f"img_{i:04d}.png"
        save_image(img, img_path)
        write_label_map(gt, out / f"gt_{i:04d}.lbl")
        paths.append(img_path)
    return paths
