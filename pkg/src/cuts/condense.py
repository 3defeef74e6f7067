"""Diffusion condensation over embedding vectors, plus the k-means baseline.

Condensation alternates two moves: build a degree-normalized Gaussian
kernel operator from the current points, then apply it, pulling every
point toward its local center of gravity. Whenever two groups fall
within a distance threshold they merge (single linkage), and groups that
survive many iterations unmerged are the "persistent" structures. The
bandwidth doubles whenever an iteration merges nothing, which guarantees
the process eventually collapses to a single cluster.

For large clouds the loop runs over cluster representatives (weighted
centroids) instead of raw points, so cost shrinks as clusters form; an
optional subsampling step bounds the initial size, with every left-out
point following its nearest sampled neighbor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import EmptyTraceError, KTooLargeError, NonPositiveEpsilonError

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class PointCloud:
    """n x dim matrix of observations."""

    points: np.ndarray

    def __post_init__(self):
        p = self.points
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError(f"point cloud must be (n >= 1, dim), got shape {p.shape}")
        if not np.isfinite(p).all():
            raise ValueError("point cloud contains non-finite entries")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def from_field(cls, field_obj) -> "PointCloud":
        """Flatten an embedding field row-major: pixel (i, j) -> row i*W + j."""
        d = field_obj.data
        return cls(np.ascontiguousarray(d.reshape(-1, d.shape[2]), dtype=np.float64))


@dataclass(frozen=True)
class CondenseConfig:
    """Knobs of the condensation loop; None means derive from the data.

    epsilon0 defaults to the median pairwise squared distance on a <= 1024
    point subsample; merge_threshold defaults to 1e-3 of the initial cloud
    diameter. The bandwidth is multiplied by epsilon_growth after any
    iteration that merges nothing.
    """

    epsilon0: float | None = None
    epsilon_growth: float = 2.0
    merge_threshold: float | None = None
    max_iters: int = 500
    snapshot_policy: str = "on-merge-events"  # or "every-iteration"
    exact: bool = False
    max_points: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.epsilon0 is not None and self.epsilon0 <= 0:
            raise NonPositiveEpsilonError(f"epsilon0 must be > 0, got {self.epsilon0}")
        if self.epsilon_growth <= 1.0:
            raise ValueError(f"epsilon growth must exceed 1, got {self.epsilon_growth}")
        if self.merge_threshold is not None and self.merge_threshold <= 0:
            raise ValueError("merge threshold must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.snapshot_policy not in ("on-merge-events", "every-iteration"):
            raise ValueError(f"unknown snapshot policy {self.snapshot_policy!r}")
        if self.max_points < 1:
            raise ValueError("max_points must be >= 1")


@dataclass(frozen=True)
class Snapshot:
    iteration: int
    assignment: np.ndarray  # (n_points,) raw cluster ids
    num_clusters: int


@dataclass
class CondensationTrace:
    """Everything the condensation run observed.

    snapshots record (iteration, per-point cluster id, cluster count) in
    time order; persistence counts how many consecutive iterations each
    cluster id stayed intact; merges is the merge tree.
    """

    snapshots: list
    persistence: dict
    merges: list  # (iteration, tuple_of_child_ids, parent_id)
    n_points: int
    converged: bool
    birth_count: dict = field(default_factory=dict)  # cluster id -> #clusters when born
    _members_rep: dict = field(default_factory=dict)  # cluster id -> rep indices
    _rep_of_point: np.ndarray | None = None

    @property
    def num_snapshots(self) -> int:
        return len(self.snapshots)

    def cluster_members(self, cluster_id: int) -> np.ndarray:
        """Original point indices belonging to a cluster id."""
        reps = self._members_rep[cluster_id]
        mask = np.zeros(int(self._rep_of_point.max()) + 1, dtype=bool)
        mask[reps] = True
        return np.nonzero(mask[self._rep_of_point])[0]

    def to_dict(self) -> dict:
        """JSON-ready summary: iterations, counts, merge tree, persistence."""
        return {
            "n_points": self.n_points,
            "converged": self.converged,
            "iterations": [s.iteration for s in self.snapshots],
            "cluster_counts": [s.num_clusters for s in self.snapshots],
            "merges": [
                {"iteration": t, "children": [int(c) for c in ch], "parent": int(p)}
                for (t, ch, p) in self.merges
            ],
            "persistence": {str(k): int(v) for k, v in sorted(self.persistence.items())},
        }


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    d2 = 0.5 * (d2 + d2.T)  # force exact symmetry
    np.fill_diagonal(d2, 0.0)
    return d2


def diffusion_operator(x: PointCloud, epsilon: float):
    """Gaussian kernel K(x_m, x_n) = exp(-||x_m - x_n||^2 / eps) and the
    row-stochastic operator P = D^-1 K with D the diagonal degree matrix.
    """
    if epsilon <= 0:
        raise NonPositiveEpsilonError(f"bandwidth must be > 0, got {epsilon}")
    pts = np.asarray(x.points, dtype=np.float64)
    k = np.exp(-_pairwise_sq_dists(pts) / epsilon)
    np.fill_diagonal(k, 1.0)
    p = k / k.sum(axis=1, keepdims=True)
    return k, p


def _median_sq_dist(pts: np.ndarray, rng: np.random.Generator) -> float:
    if len(pts) > 1024:
        pts = pts[rng.choice(len(pts), 1024, replace=False)]
    d2 = _pairwise_sq_dists(pts)
    off = d2[~np.eye(len(pts), dtype=bool)]
    med = float(np.median(off)) if off.size else 0.0
    return med if med > 0 else 1.0


def _nearest_rep(points: np.ndarray, reps: np.ndarray, chunk: int = 2048) -> np.ndarray:
    out = np.empty(len(points), dtype=np.int64)
    rep_sq = (reps * reps).sum(axis=1)
    for lo in range(0, len(points), chunk):
        blk = points[lo : lo + chunk]
        d2 = (blk * blk).sum(axis=1)[:, None] + rep_sq[None, :] - 2.0 * (blk @ reps.T)
        out[lo : lo + chunk] = d2.argmin(axis=1)
    return out


def condense_run(x: PointCloud, cfg: CondenseConfig) -> CondensationTrace:
    """Run diffusion condensation to a single cluster (or max_iters).

    Each iteration rebuilds the weighted operator over the current cluster
    representatives, applies it, then merges groups whose representatives
    lie within the merge threshold (transitive closure). If nothing merged,
    the bandwidth is multiplied by epsilon_growth. The trace always covers
    every original point in every snapshot; if max_iters is hit with more
    than one cluster the trace is returned with converged=False.
    """
    pts = np.asarray(x.points, dtype=np.float64)
    n = len(pts)
    rng = np.random.default_rng(cfg.seed)

    if not cfg.exact and n > cfg.max_points:
        sub = np.sort(rng.choice(n, cfg.max_points, replace=False))
        reps = pts[sub].copy()
        rep_of_point = _nearest_rep(pts, reps)
        # a sampled point always follows its own representative, even when
        # duplicates would otherwise shadow it (keeps every weight >= 1)
        rep_of_point[sub] = np.arange(len(sub))
    else:
        reps = pts.copy()
        rep_of_point = np.arange(n, dtype=np.int64)
    r = len(reps)

    eps = cfg.epsilon0 if cfg.epsilon0 is not None else _median_sq_dist(reps, rng)
    if cfg.merge_threshold is not None:
        threshold = cfg.merge_threshold
    else:
        diam = float(np.sqrt(_pairwise_sq_dists(reps).max())) if r > 1 else 0.0
        threshold = 1e-3 * diam if diam > 0 else 1e-12

    # cluster state, all in representative space
    positions = reps                      # (k, dim) current cluster representatives
    weights = np.bincount(rep_of_point, minlength=r).astype(np.float64)
    ids = np.arange(r, dtype=np.int64)    # cluster id per active cluster
    rep_cluster = np.arange(r, dtype=np.int64)  # initial-rep index -> current cluster id
    members_rep = {int(i): np.array([i], dtype=np.int64) for i in range(r)}
    birth = {int(i): 0 for i in range(r)}
    birth_count = {int(i): r for i in range(r)}
    death = {}
    next_id = r
    merges = []
    snapshots = [Snapshot(0, rep_cluster[rep_of_point].copy(), r)]
    converged = r == 1
    t = 0

    while not converged and t < cfg.max_iters:
        t += 1
        k_mat = np.exp(-_pairwise_sq_dists(positions) / eps)
        np.fill_diagonal(k_mat, 1.0)
        deg = k_mat @ weights
        p_mat = (k_mat * weights[None, :]) / deg[:, None]
        row_err = np.abs(p_mat.sum(axis=1) - 1.0).max()
        if row_err > ROW_SUM_TOL:
            raise RuntimeError(f"operator rows drifted from stochastic: {row_err:.3e}")
        positions = p_mat @ positions

        d2 = _pairwise_sq_dists(positions)
        adj = d2 < threshold * threshold
        n_comp, comp = connected_components(csr_matrix(adj), directed=False)
        merged_any = n_comp < len(positions)

        if merged_any:
            new_positions = np.empty((n_comp, positions.shape[1]))
            new_weights = np.empty(n_comp)
            new_ids = np.empty(n_comp, dtype=np.int64)
            for c in range(n_comp):
                idx = np.nonzero(comp == c)[0]
                wsum = weights[idx].sum()
                new_positions[c] = (weights[idx][:, None] * positions[idx]).sum(0) / wsum
                new_weights[c] = wsum
                if len(idx) == 1:
                    new_ids[c] = ids[idx[0]]
                else:
                    children = ids[idx]
                    parent = next_id
                    next_id += 1
                    new_ids[c] = parent
                    members_rep[parent] = np.concatenate(
                        [members_rep[int(ch)] for ch in children]
                    )
                    birth[parent] = t
                    birth_count[parent] = n_comp
                    for ch in children:
                        death[int(ch)] = t
                    merges.append((t, tuple(int(ch) for ch in children), parent))
                    rep_cluster[members_rep[parent]] = parent
            positions, weights, ids = new_positions, new_weights, new_ids

        if len(ids) == 1:
            converged = True

        record = (
            cfg.snapshot_policy == "every-iteration"
            or merged_any
            or t % 10 == 0
            or converged
            or t == cfg.max_iters
        )
        if record:
            snapshots.append(Snapshot(t, rep_cluster[rep_of_point].copy(), len(ids)))

        if not merged_any and not converged:
            eps *= cfg.epsilon_growth

    persistence = {
        cid: (death.get(cid, t) - birth[cid]) for cid in birth
    }
    return CondensationTrace(
        snapshots=snapshots,
        persistence=persistence,
        merges=merges,
        n_points=n,
        converged=converged,
        birth_count=birth_count,
        _members_rep=members_rep,
        _rep_of_point=rep_of_point,
    )


def dense_labels(raw: np.ndarray) -> np.ndarray:
    """Relabel arbitrary ids to 0..K-1 in order of first occurrence."""
    out = np.empty(len(raw), dtype=np.int64)
    mapping = {}
    for i, v in enumerate(raw.tolist()):
        if v not in mapping:
            mapping[v] = len(mapping)
        out[i] = mapping[v]
    return out


def persistent_structures(trace: CondensationTrace, min_clusters: int = 2) -> np.ndarray:
    """Single assignment built by painting clusters in ascending persistence.

    Only clusters born into a state with at least min_clusters clusters take
    part (this drops the trivial all-points root for min_clusters >= 2).
    Painting in ascending order means the most persistent cluster containing
    each point wins. Returns dense labels, one per original point.
    """
    if not trace.snapshots:
        raise EmptyTraceError("condensation trace has no snapshots")
    eligible = [cid for cid, bc in trace.birth_count.items() if bc >= min_clusters]
    if not eligible:
        raise ValueError(
            f"no cluster was ever part of a state with >= {min_clusters} clusters"
        )
    order = sorted(eligible, key=lambda cid: (trace.persistence[cid], cid))
    n_reps = int(trace._rep_of_point.max()) + 1
    painted = np.full(n_reps, -1, dtype=np.int64)
    for cid in order:
        painted[trace._members_rep[cid]] = cid
    raw = painted[trace._rep_of_point]
    if (raw < 0).any():
        raise RuntimeError("persistent painting left points uncovered")
    return dense_labels(raw)


def spectral_kmeans(x: PointCloud, k: int, seed) -> np.ndarray:
    """k-means on L2-normalized points: k-means++ seeding, then Lloyd
    iterations (at most 100, or until the assignment is a fixed point).
    Returns per-point labels in 0..k-1; deterministic per seed.
    """
    if k > x.n:
        raise KTooLargeError(f"k={k} exceeds {x.n} points")
    if k < 1:
        raise ValueError("k must be >= 1")
    pts = np.asarray(x.points, dtype=np.float64)
    norms = np.linalg.norm(pts, axis=1)
    pts = pts / np.maximum(norms, 1e-12)[:, None]
    rng = np.random.default_rng(seed)
    n = len(pts)

    # k-means++ seeding
    centers = np.empty((k, pts.shape[1]))
    first = int(rng.integers(n))
    centers[0] = pts[first]
    d2 = ((pts - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = pts[idx]
        d2 = np.minimum(d2, ((pts - centers[c]) ** 2).sum(axis=1))

    assign = None
    for _ in range(100):
        d2_all = (
            (pts * pts).sum(axis=1)[:, None]
            + (centers * centers).sum(axis=1)[None, :]
            - 2.0 * (pts @ centers.T)
        )
        new_assign = d2_all.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            sel = assign == c
            if sel.any():
                centers[c] = pts[sel].mean(axis=0)
    return assign.astype(np.int64)
