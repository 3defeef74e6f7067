"""Turn condensation traces into label maps and binary masks.

Pixel order contract: embedding fields are flattened row-major (pixel
(i, j) is point i*W + j) and condensation preserves that order, so a
trace assignment reshapes directly to H x W.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .condense import CondensationTrace, dense_labels, persistent_structures
from .errors import (
    EmptyForegroundError,
    SelectorUnsatisfiableError,
    ShapeMismatchError,
)
from .imgio import BinaryMask, LabelMap

SELECTOR_MODES = ("by-cluster-count", "by-snapshot-index", "persistent")


@dataclass(frozen=True)
class GranularitySelector:
    """Which granularity of a trace to materialize.

    by-cluster-count: first snapshot with at most ``value`` clusters.
    by-snapshot-index: the value-th snapshot (1-based).
    persistent: the persistence-ranked composite map (value ignored).
    """

    mode: str
    value: int = 1

    def __post_init__(self):
        if self.mode not in SELECTOR_MODES:
            raise ValueError(f"unknown selector mode {self.mode!r}")
        if self.mode != "persistent" and self.value < 1:
            raise ValueError(f"selector value must be >= 1, got {self.value}")


def label_map_at(trace: CondensationTrace, sel: GranularitySelector, h: int, w: int) -> LabelMap:
    """Materialize one granularity of a trace as an H x W label map."""
    if trace.n_points != h * w:
        raise ShapeMismatchError(
            f"trace covers {trace.n_points} points, map wants {h}x{w}={h * w}"
        )
    if sel.mode == "persistent":
        flat = persistent_structures(trace, min_clusters=2)
    elif sel.mode == "by-snapshot-index":
        if sel.value > len(trace.snapshots):
            raise SelectorUnsatisfiableError(
                f"snapshot {sel.value} requested but trace has {len(trace.snapshots)}"
            )
        flat = dense_labels(trace.snapshots[sel.value - 1].assignment)
    else:  # by-cluster-count
        for snap in trace.snapshots:
            if snap.num_clusters <= sel.value:
                flat = dense_labels(snap.assignment)
                break
        else:
            raise SelectorUnsatisfiableError(
                f"no snapshot has <= {sel.value} clusters "
                f"(finest recorded: {trace.snapshots[0].num_clusters})"
            )
    return LabelMap(flat.reshape(h, w))


def binarize_with_hint(lm: LabelMap, gt: BinaryMask) -> BinaryMask:
    """Foreground = the single cluster most frequent over the ground-truth
    foreground pixels (ties go to the smaller label id)."""
    if lm.labels.shape != gt.bits.shape:
        raise ShapeMismatchError(
            f"label map {lm.labels.shape} vs hint mask {gt.bits.shape}"
        )
    hinted = lm.labels[gt.bits]
    if hinted.size == 0:
        raise EmptyForegroundError("hint mask has no foreground pixels")
    modal = int(np.bincount(hinted).argmax())
    return BinaryMask(lm.labels == modal)
