"""Segmentation metric suite: Dice, Hausdorff, SSIM, ERGAS, RMSE, plus
optimal label matching and per-class aggregation.

Conventions (both oracle-tested): two empty masks have Dice 1.0, and an
empty side in a per-class Hausdorff is scored as the image diagonal.
Unsupervised label maps carry arbitrary ids, so multi-class scoring first
permutes predicted labels to best overlap the ground truth (optimal
assignment, not greedy).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .errors import EmptyMaskError, ShapeMismatchError
from .imgio import BinaryMask, Image, LabelMap
from .mining import SSIM_C1, SSIM_C2

SSIM_WINDOW = 7  # uniform window; border windows shrink to the valid region


def _as_real(x) -> np.ndarray:
    if isinstance(x, Image):
        return x.data.astype(np.float64)
    if isinstance(x, LabelMap):
        return x.labels.astype(np.float64)
    if isinstance(x, BinaryMask):
        return x.bits.astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def _check_shapes(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shapes differ: {a.shape} vs {b.shape}")


def image_diagonal(h: int, w: int) -> float:
    """Largest possible distance between two pixel coordinates."""
    return float(np.hypot(h - 1, w - 1))


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """2|A.B| / (|A| + |B|); both-empty counts as perfect agreement (1.0)."""
    _check_shapes(a.bits, b.bits)
    na, nb = int(a.bits.sum()), int(b.bits.sum())
    if na + nb == 0:
        return 1.0
    inter = int((a.bits & b.bits).sum())
    return 2.0 * inter / (na + nb)


def hausdorff(a: BinaryMask, b: BinaryMask) -> float:
    """Symmetric Hausdorff distance between foreground pixel sets."""
    _check_shapes(a.bits, b.bits)
    pa = np.argwhere(a.bits).astype(np.float64)
    pb = np.argwhere(b.bits).astype(np.float64)
    if len(pa) == 0 or len(pb) == 0:
        raise EmptyMaskError("hausdorff needs foreground pixels on both sides")
    d_ab = cKDTree(pb).query(pa)[0].max()
    d_ba = cKDTree(pa).query(pb)[0].max()
    return float(max(d_ab, d_ba))


def _window_sums(x: np.ndarray, r: int) -> np.ndarray:
    """Sum of x over the (2r+1)-window around each pixel, clipped to bounds."""
    h, w = x.shape
    c = np.zeros((h + 1, w + 1), dtype=np.float64)
    c[1:, 1:] = x.cumsum(axis=0).cumsum(axis=1)
    i = np.arange(h)
    j = np.arange(w)
    r0 = np.maximum(i - r, 0)
    r1 = np.minimum(i + r + 1, h)
    c0 = np.maximum(j - r, 0)
    c1 = np.minimum(j + r + 1, w)
    return c[r1][:, c1] - c[r0][:, c1] - c[r1][:, c0] + c[r0][:, c0]


def ssim_image(a, b) -> float:
    """Mean windowed SSIM with a uniform 7x7 window that shrinks at the
    borders; channels are averaged. Accepts Images or plain arrays."""
    da, db = _as_real(a), _as_real(b)
    _check_shapes(da, db)
    if da.ndim == 2:
        da, db = da[:, :, None], db[:, :, None]
    r = SSIM_WINDOW // 2
    h, w, ch = da.shape
    i = np.arange(h)
    j = np.arange(w)
    counts = (
        (np.minimum(i + r + 1, h) - np.maximum(i - r, 0))[:, None]
        * (np.minimum(j + r + 1, w) - np.maximum(j - r, 0))[None, :]
    ).astype(np.float64)
    total = 0.0
    for c in range(ch):
        xa, xb = da[:, :, c], db[:, :, c]
        mu_a = _window_sums(xa, r) / counts
        mu_b = _window_sums(xb, r) / counts
        var_a = _window_sums(xa * xa, r) / counts - mu_a * mu_a
        var_b = _window_sums(xb * xb, r) / counts - mu_b * mu_b
        cov = _window_sums(xa * xb, r) / counts - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
        den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
        total += float((num / den).mean())
    return total / ch


def rmse(a, b) -> float:
    """sqrt(mean((a - b)^2)) over all elements."""
    da, db = _as_real(a), _as_real(b)
    _check_shapes(da, db)
    return float(np.sqrt(((da - db) ** 2).mean()))


def ergas(pred, ref) -> float:
    """100 * (h/l) * sqrt(mean_c (RMSE_c / mu_c)^2) with scale ratio 1 and
    mu_c the reference channel mean (stabilized by 1e-12 when zero)."""
    dp, dr = _as_real(pred), _as_real(ref)
    _check_shapes(dp, dr)
    if dp.ndim == 2:
        dp, dr = dp[:, :, None], dr[:, :, None]
    terms = []
    for c in range(dp.shape[2]):
        rms = np.sqrt(((dp[:, :, c] - dr[:, :, c]) ** 2).mean())
        mu = dr[:, :, c].mean()
        if mu == 0.0:
            mu = 1e-12
        terms.append((rms / mu) ** 2)
    return float(100.0 * np.sqrt(np.mean(terms)))


def permute_match(pred: LabelMap, gt: LabelMap) -> LabelMap:
    """Relabel pred to best overlap gt via optimal assignment.

    Builds the overlap matrix between pred and gt labels, solves the
    assignment maximizing total overlap, maps matched pred labels to their
    gt label, and gives unmatched pred labels fresh ids above the gt
    range. The induced pixel partition is unchanged.
    """
    _check_shapes(pred.labels, gt.labels)
    pl = np.unique(pred.labels)
    gl = np.unique(gt.labels)
    pi = np.searchsorted(pl, pred.labels.ravel())
    gi = np.searchsorted(gl, gt.labels.ravel())
    overlap = np.zeros((len(pl), len(gl)), dtype=np.int64)
    np.add.at(overlap, (pi, gi), 1)
    rows, cols = linear_sum_assignment(-overlap)
    mapping = {}
    for r, c in zip(rows, cols):
        mapping[int(pl[r])] = int(gl[c])
    fresh = int(gl.max()) + 1
    for lbl in pl:
        if int(lbl) not in mapping:
            mapping[int(lbl)] = fresh
            fresh += 1
    lut = np.zeros(int(pl.max()) + 1, dtype=np.int64)
    for src, dst in mapping.items():
        lut[src] = dst
    return LabelMap(lut[pred.labels])


@dataclass(frozen=True)
class MetricsReport:
    dice: float
    hausdorff: float
    ssim: float
    ergas: float
    rmse: float
    per_class_dice: list = field(default_factory=list)
    per_class_hausdorff: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dice": self.dice,
            "hausdorff": self.hausdorff,
            "ssim": self.ssim,
            "ergas": self.ergas,
            "rmse": self.rmse,
            "per_class_dice": list(self.per_class_dice),
            "per_class_hausdorff": list(self.per_class_hausdorff),
        }


def binary_summary(pred: BinaryMask, gt: BinaryMask) -> MetricsReport:
    """Metric set for a single mask pair; empty-side Hausdorff falls back
    to the image diagonal."""
    _check_shapes(pred.bits, gt.bits)
    try:
        hd = hausdorff(pred, gt)
    except EmptyMaskError:
        hd = 0.0 if not pred.bits.any() and not gt.bits.any() else image_diagonal(
            pred.height, pred.width
        )
    return MetricsReport(
        dice=dice(pred, gt),
        hausdorff=hd,
        ssim=ssim_image(pred.bits.astype(np.float64), gt.bits.astype(np.float64)),
        ergas=ergas(pred, gt),
        rmse=rmse(pred, gt),
    )


def multiclass_summary(pred: LabelMap, gt: LabelMap) -> MetricsReport:
    """Label-permuted per-class scoring.

    After optimal matching, every gt class except 0 (background) is scored
    one-vs-rest; a class absent from the matched prediction scores dice 0
    and Hausdorff = image diagonal. SSIM/ERGAS/RMSE run on the matched
    label values as reals over the whole map.
    """
    _check_shapes(pred.labels, gt.labels)
    matched = permute_match(pred, gt)
    h, w = gt.height, gt.width
    diag = image_diagonal(h, w)
    classes = [int(c) for c in np.unique(gt.labels) if c != 0]
    pc_dice, pc_hd = [], []
    for cls in classes:
        pm = BinaryMask(matched.labels == cls)
        gm = BinaryMask(gt.labels == cls)
        pc_dice.append(dice(pm, gm))
        try:
            pc_hd.append(hausdorff(pm, gm))
        except EmptyMaskError:
            pc_hd.append(diag)
    return MetricsReport(
        dice=float(np.mean(pc_dice)) if pc_dice else 0.0,
        hausdorff=float(np.mean(pc_hd)) if pc_hd else diag,
        ssim=ssim_image(matched.labels.astype(np.float64), gt.labels.astype(np.float64)),
        ergas=ergas(matched, gt),
        rmse=rmse(matched, gt),
        per_class_dice=pc_dice,
        per_class_hausdorff=pc_hd,
    )
