"""Training objective: contrastive + patch-reconstruction losses and the loop.

The contrastive term is the ratio form over mined pairs: for an anchor
embedding z with positive set O+ and negative set O-,

    l = -log( sum_{z+ in O+} exp(sim(z, z+)/tau)
            / sum_{z- in O-} exp(sim(z, z-)/tau) )

with sim = cosine similarity. The denominator runs over negatives only
(it is not the usual normalized softmax), so the value can be negative;
it is implemented verbatim and averaged over anchors. Negatives for an
anchor are the positives of all other anchors in the same PairSet.

The reconstruction term is the element-mean squared error between each
anchor's p x p x c patch and the affine head applied to its embedding.
The combined objective is lam * contrastive + (1 - lam) * reconstruction.

Gradients for every parameter are accumulated by hand through the loss
heads and the convolution stack (see encoder); train_step applies one
Adam update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from .encoder import AdamState, ArchSpec, EmbeddingField, EncoderParams
from .errors import (
    EmptyNegativesError,
    EmptyPairsError,
    LambdaOutOfRangeError,
    NonFiniteLossError,
)
from .imgio import Image
from .mining import PairSet, mine_pairs, sample_anchors


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run; defaults are the working set."""

    lam: float = 0.01
    tau: float = 0.5
    epochs: int = 50
    learning_rate: float = 1e-3
    anchors_per_image: int = 256
    mine_radius: int = 3
    mine_ssim_threshold: float = 0.5
    mine_max_pos: int = 4
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise LambdaOutOfRangeError(f"lambda must be in [0, 1], got {self.lam}")
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    contrastive: float
    reconstruction: float
    combined: float

    def to_dict(self) -> dict:
        return {
            "contrastive": self.contrastive,
            "reconstruction": self.reconstruction,
            "combined": self.combined,
        }


def combined_loss(lc: float, lr: float, lam: float) -> float:
    """lam * contrastive + (1 - lam) * reconstruction."""
    if not (0.0 <= lam <= 1.0):
        raise LambdaOutOfRangeError(f"lambda must be in [0, 1], got {lam}")
    return lam * lc + (1.0 - lam) * lr


def _pair_indices(pairs: PairSet):
    """Deduplicate all coordinates touched by a PairSet.

    Returns (coords (m, 2), anchor_rows (n,), pos_mask (n, m), neg_mask
    (n, m)). Row a of pos_mask flags the positives of anchor a; neg_mask
    flags coordinates that are positives of at least one other anchor.
    """
    if pairs.is_empty:
        raise EmptyPairsError("PairSet has no anchors")
    n = pairs.num_anchors
    coords_all = np.concatenate([pairs.anchors] + list(pairs.positives), axis=0)
    uniq, inverse = np.unique(coords_all, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    m = len(uniq)
    anchor_rows = inverse[:n]
    owners = np.zeros((m, n), dtype=bool)
    off = n
    for a in range(n):
        cnt = len(pairs.positives[a])
        owners[inverse[off : off + cnt], a] = True
        off += cnt
    counts = owners.sum(axis=1)
    pos_mask = owners.T
    neg_mask = (counts[None, :] - pos_mask.astype(np.int64)) > 0
    return uniq, anchor_rows, pos_mask, neg_mask


def _contrastive_core(z, anchor_rows, pos_mask, neg_mask, tau, want_grad):
    """Loss (and optionally dLoss/dz) of the ratio contrastive objective.

    z holds the embeddings of the deduplicated coordinates; masks are as
    built by :func:`_pair_indices`. Anchors without negatives are skipped;
    if none remain this raises EmptyNegativesError.
    """
    has_neg = neg_mask.any(axis=1)
    counted = int(has_neg.sum())
    if counted == 0:
        raise EmptyNegativesError("no anchor has a non-empty negative set")

    dtype = z.dtype
    norms = np.sqrt((z * z).sum(axis=1))
    norms = np.maximum(norms, np.asarray(1e-12, dtype=dtype))
    u = z / norms[:, None]
    sa = u[anchor_rows] @ u.T  # (n, m) cosine similarities anchor -> coord

    neg_inf = -np.inf
    sp = np.where(pos_mask, sa / tau, neg_inf)
    mp = sp.max(axis=1)  # every anchor has >= 1 positive
    ep = np.exp(sp - mp[:, None])
    sum_p = ep.sum(axis=1)
    lse_p = mp + np.log(sum_p)

    rows = np.nonzero(has_neg)[0]
    sn = np.where(neg_mask[rows], sa[rows] / tau, neg_inf)
    mn = sn.max(axis=1)
    en = np.exp(sn - mn[:, None])
    sum_n = en.sum(axis=1)
    lse_n = mn + np.log(sum_n)

    per_anchor = -lse_p[rows] + lse_n
    loss = float(per_anchor.mean())
    if not want_grad:
        return loss, None

    # coefficient of each (anchor, coord) similarity in the mean loss
    coef = np.zeros_like(sa)
    coef -= ep / sum_p[:, None]
    wn = np.zeros_like(sa)
    wn[rows] = en / sum_n[:, None]
    coef += wn
    coef[~has_neg] = 0.0
    coef /= tau * counted

    # chain through cosine: s_ij = u_i . u_j
    row_cs = (coef * sa).sum(axis=1)
    col_cs = (coef * sa).sum(axis=0)
    dz = np.zeros_like(z)
    danchor = (coef @ u - row_cs[:, None] * u[anchor_rows]) / norms[anchor_rows][:, None]
    np.add.at(dz, anchor_rows, danchor.astype(dtype, copy=False))
    dz += (coef.T @ u[anchor_rows] - col_cs[:, None] * u) / norms[:, None]
    return loss, dz


def contrastive_loss(field: EmbeddingField, pairs: PairSet, tau: float) -> float:
    """Mean per-anchor ratio contrastive loss over a PairSet."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    coords, anchor_rows, pos_mask, neg_mask = _pair_indices(pairs)
    z = field.data[coords[:, 0], coords[:, 1], :]
    loss, _ = _contrastive_core(z, anchor_rows, pos_mask, neg_mask, tau, want_grad=False)
    return loss


def _recon_core(params: EncoderParams, z_anchors, patches, want_grad):
    recon = z_anchors @ params.recon_weight.T + params.recon_bias
    diff = recon - patches
    loss = float((diff * diff).mean())
    if not want_grad:
        return loss, None, None, None
    dr = (2.0 / diff.size) * diff
    dw = dr.T @ z_anchors
    db = dr.sum(axis=0)
    dz = dr @ params.recon_weight
    return loss, dw, db, dz


def reconstruction_loss(
    params: EncoderParams, field: EmbeddingField, img: Image, pairs: PairSet
) -> float:
    """Element-mean squared patch reconstruction error over anchors."""
    if pairs.is_empty:
        raise EmptyPairsError("PairSet has no anchors")
    p = params.arch.recon_patch
    z = field.data[pairs.anchors[:, 0], pairs.anchors[:, 1], :]
    patches = enc.extract_patches_flat(img.data, pairs.anchors, p)
    loss, _, _, _ = _recon_core(params, z, patches.astype(z.dtype, copy=False), want_grad=False)
    return loss


def _loss_and_grads(params: EncoderParams, img: Image, pairs: PairSet, lam, tau):
    """Combined loss plus analytic gradients for every parameter tensor.

    The final conv layer is only evaluated at the pixels the losses touch;
    everything below runs dense. Returns (combined, lc, lr, grads) with
    grads in checkpoint tensor order.
    """
    arch = params.arch
    coords, anchor_rows, pos_mask, neg_mask = _pair_indices(pairs)
    x = img.data
    nl = arch.num_layers

    inputs, cols, masks = [], [], []
    a = x
    for li in range(nl - 1):
        inputs.append(a)
        pre, col = enc._conv_same_forward(a, params.conv_weights[li], params.conv_biases[li])
        cols.append(col)
        masks.append(enc._leaky_grad_mask(pre))
        a = enc._leaky(pre)
    z, col_last = enc._conv_at_coords(
        a, params.conv_weights[nl - 1], params.conv_biases[nl - 1], coords
    )

    lc, dz_c = _contrastive_core(z, anchor_rows, pos_mask, neg_mask, tau, want_grad=True)
    patches = enc.extract_patches_flat(x, pairs.anchors, arch.recon_patch)
    lr_, dw_rec, db_rec, dz_rec = _recon_core(
        params, z[anchor_rows], patches.astype(z.dtype, copy=False), want_grad=True
    )
    comb = lam * lc + (1.0 - lam) * lr_

    dz = lam * dz_c
    dz[anchor_rows] += (1.0 - lam) * dz_rec

    da, dw_last, db_last = enc._conv_at_coords_backward(
        col_last, params.conv_weights[nl - 1], dz, coords, a.shape
    )
    dws = [None] * nl
    dbs = [None] * nl
    dws[nl - 1] = dw_last
    dbs[nl - 1] = db_last
    for li in range(nl - 2, -1, -1):
        da = da * masks[li]
        da, dws[li], dbs[li] = enc._conv_same_backward(
            cols[li], params.conv_weights[li], da, inputs[li].shape
        )

    grads = []
    for li in range(nl):
        grads.append(dws[li])
        grads.append(dbs[li])
    grads.append((1.0 - lam) * dw_rec)
    grads.append((1.0 - lam) * db_rec)
    return comb, lc, lr_, grads


def train_step(params: EncoderParams, opt_state: AdamState, batch, config: TrainConfig):
    """One optimization step over a batch of (Image, PairSet) items.

    Computes the combined loss, accumulates exact gradients for every
    parameter, and applies a single Adam update. Returns (params, state,
    LossBreakdown); deterministic given identical inputs.
    """
    if not batch:
        raise ValueError("train_step needs a non-empty batch")
    grad_acc = None
    lcs, lrs, combs = [], [], []
    for img, pairs in batch:
        comb, lc, lr_, grads = _loss_and_grads(params, img, pairs, config.lam, config.tau)
        lcs.append(lc)
        lrs.append(lr_)
        combs.append(comb)
        if grad_acc is None:
            grad_acc = grads
        else:
            grad_acc = [ga + g for ga, g in zip(grad_acc, grads)]
    k = len(batch)
    grad_acc = [g / k for g in grad_acc]
    breakdown = LossBreakdown(
        contrastive=float(np.mean(lcs)),
        reconstruction=float(np.mean(lrs)),
        combined=float(np.mean(combs)),
    )
    if not all(np.isfinite(v) for v in (breakdown.contrastive, breakdown.reconstruction, breakdown.combined)):
        raise NonFiniteLossError(f"loss diverged: {breakdown}")
    params2, state2 = enc.adam_step(params, grad_acc, opt_state, config.learning_rate)
    return params2, state2, breakdown


def _anchor_seed(base_seed: int, epoch: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, epoch, index]).generate_state(1)[0])


def train(dataset, cfg: TrainConfig, arch: ArchSpec | None = None):
    """Train the encoder over a dataset of Images.

    Per epoch, per image: sample anchors, mine pairs, run one train_step.
    Images whose mining yields fewer than two anchors are skipped for
    that epoch (no negatives can be formed). Returns (params, history)
    with one LossBreakdown per epoch; fully deterministic given cfg.seed.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    if arch is None:
        arch = ArchSpec(input_channels=dataset[0].channels)
    params = enc.init_params(arch, cfg.seed)
    state = enc.init_adam(params)
    history = []
    for epoch in range(cfg.epochs):
        epoch_breakdowns = []
        for idx, img in enumerate(dataset):
            anchors = sample_anchors(
                img,
                cfg.anchors_per_image,
                _anchor_seed(cfg.seed, epoch, idx),
                patch_size=arch.recon_patch,
            )
            pairs = mine_pairs(
                img,
                anchors,
                cfg.mine_radius,
                cfg.mine_ssim_threshold,
                cfg.mine_max_pos,
                patch_size=arch.recon_patch,
            )
            if pairs.num_anchors < 2:
                continue
            try:
                params, state, bd = train_step(params, state, [(img, pairs)], cfg)
            except NonFiniteLossError as e:
                raise NonFiniteLossError(f"epoch {epoch}, image {idx}: {e}") from e
            epoch_breakdowns.append(bd)
        if not epoch_breakdowns:
            raise RuntimeError(
                f"epoch {epoch}: no image produced a usable PairSet; "
                "loosen the mining threshold or enlarge the images"
            )
        history.append(
            LossBreakdown(
                contrastive=float(np.mean([b.contrastive for b in epoch_breakdowns])),
                reconstruction=float(np.mean([b.reconstruction for b in epoch_breakdowns])),
                combined=float(np.mean([b.combined for b in epoch_breakdowns])),
            )
        )
    return params, history
