"""Shared test helpers."""

import numpy as np

import cuts
from cuts import objective as obj


def small_arch(channels: int = 1) -> cuts.ArchSpec:
    """Reduced architecture that still exercises every layer kind."""
    return cuts.ArchSpec(
        num_layers=3,
        filter_size=3,
        channel_widths=(4, 6, 8),
        embed_dim=8,
        recon_patch=3,
        input_channels=channels,
    )


def random_pairs(img, rng, n_anchors=6, radius=2, patch=3):
    """A PairSet that accepts every candidate (threshold -1)."""
    anchors = cuts.sample_anchors(img, n_anchors, int(rng.integers(2**31)), patch_size=patch)
    return cuts.mine_pairs(img, anchors, radius, -1.0, 3, patch_size=patch)


def fd_max_rel_err(params, img, pairs, lam, tau, h=1e-4):
    """Worst relative error between analytic and central-difference
    gradients of the combined loss, over every parameter element.

    Everything runs in double precision; the relative error uses
    max(|analytic|, |numeric|, 1e-8) in the denominator.
    """
    params = params.astype(np.float64)
    _, _, _, grads = obj._loss_and_grads(params, img, pairs, lam, tau)
    tensors = params.tensors()

    def loss_now():
        return obj._loss_and_grads(params.with_tensors(tensors), img, pairs, lam, tau)[0]

    worst = 0.0
    for ti, tensor in enumerate(tensors):
        flat = tensor.ravel()
        gflat = np.asarray(grads[ti]).ravel()
        for ei in range(flat.size):
            orig = flat[ei]
            flat[ei] = orig + h
            lp = loss_now()
            flat[ei] = orig - h
            lm = loss_now()
            flat[ei] = orig
            fd = (lp - lm) / (2.0 * h)
            an = gflat[ei]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            worst = max(worst, rel)
    return worst
