"""Label transfer from a dense labeled reference cloud and tree-wise splits.

Each target point takes the majority label among its k nearest reference
points; its tree id comes from the single nearest reference point. Ties are
fully pinned down: equal distances at the k-th neighbor break by ascending
reference index, and a tied vote goes to the label of the nearest reference
point among the tied labels, so the transfer is deterministic and
independent of target point order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .io import LABEL_UNKNOWN, VALID_LABELS, PointCloud


@dataclass
class LabelTransferConfig:
    k: int = 5
    drop_unknown: bool = True

    def validate(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        return self


def _k_nearest(tree, reference_xyz, point, k):
    """Reference indices of the k nearest points, exact-tie aware.

    The kd-tree supplies an upper bound on the k-th distance; candidates
    within that bound are re-ranked by (squared distance, index) so that
    boundary ties resolve by ascending index rather than tree internals.
    """
    distances, _ = tree.query(point, k=k)
    kth = float(np.max(distances))
    candidates = tree.query_ball_point(point, r=kth * (1.0 + 1e-9) + 1e-12)
    candidates = np.asarray(candidates, dtype=np.int64)
    dx = reference_xyz[candidates, 0] - point[0]
    dy = reference_xyz[candidates, 1] - point[1]
    dz = reference_xyz[candidates, 2] - point[2]
    d2 = dx * dx + dy * dy + dz * dz
    order = np.lexsort((candidates, d2))
    return candidates[order[:k]], d2[order[:k]]


def knn_transfer(
    target: PointCloud, reference: PointCloud, cfg: LabelTransferConfig
) -> PointCloud:
    """Transfer labels and tree ids from ``reference`` onto ``target``.

    The reference must be fully labeled. Points ending up with the unknown
    label are removed afterwards when ``drop_unknown`` is set.
    """
    cfg.validate()
    if len(reference) == 0:
        raise ValueError("reference cloud is empty")
    if reference.label is None or not np.isin(reference.label, VALID_LABELS).all():
        raise ValueError("reference cloud must be fully labeled with {-1, 0, 1}")
    if cfg.k > len(reference):
        raise ValueError(
            f"k={cfg.k} exceeds reference size {len(reference)}"
        )
    tree = cKDTree(reference.xyz)
    n = len(target)
    labels = np.empty(n, dtype=np.int64)
    tree_ids = (
        np.empty(n, dtype=np.int64) if reference.tree_id is not None else None
    )
    for i in range(n):
        neighbors, _ = _k_nearest(tree, reference.xyz, target.xyz[i], cfg.k)
        votes = reference.label[neighbors]
        counts = {}
        for label in votes:
            counts[int(label)] = counts.get(int(label), 0) + 1
        best = max(counts.values())
        tied = {label for label, c in counts.items() if c == best}
        if len(tied) == 1:
            labels[i] = tied.pop()
        else:
            # nearest reference point among the tied labels decides
            labels[i] = next(int(v) for v in votes if int(v) in tied)
        if tree_ids is not None:
            tree_ids[i] = reference.tree_id[neighbors[0]]
    out = target.replace(label=labels)
    if tree_ids is not None:
        out = out.replace(tree_id=tree_ids)
    if cfg.drop_unknown:
        out = out.take(np.flatnonzero(out.label != LABEL_UNKNOWN))
    return out


def split_by_tree(
    cloud: PointCloud,
    counts: tuple[int, int, int],
    seed: int,
    assignment: dict[int, str] | None = None,
) -> tuple[PointCloud, PointCloud, PointCloud]:
    """Partition a cloud into train/val/test by whole trees.

    Tree ids are shuffled with the given seed and dealt out in order, so the
    requested counts must use up every distinct tree: a shortfall or a
    leftover tree is an error naming the available count. An explicit
    ``assignment`` (tree id -> "train"/"val"/"test") bypasses the shuffle to
    reproduce a published split.
    """
    if cloud.tree_id is None:
        raise ValueError("cloud has no tree_id column")
    n_train, n_val, n_test = counts
    if min(counts) < 0:
        raise ValueError(f"split counts must be non-negative, got {counts}")
    tree_ids = np.unique(cloud.tree_id)
    requested = n_train + n_val + n_test
    if len(tree_ids) != requested:
        raise ValueError(
            f"split counts {counts} sum to {requested} but the cloud has "
            f"{len(tree_ids)} distinct trees"
        )
    if assignment is not None:
        groups = {"train": [], "val": [], "test": []}
        for tree in tree_ids:
            split = assignment.get(int(tree))
            if split not in groups:
                raise ValueError(f"tree {tree} has no valid split assignment")
            groups[split].append(tree)
        sizes = tuple(len(groups[k]) for k in ("train", "val", "test"))
        if sizes != tuple(counts):
            raise ValueError(f"assignment sizes {sizes} do not match counts {counts}")
        train_ids, val_ids, test_ids = (
            np.asarray(groups["train"]),
            np.asarray(groups["val"]),
            np.asarray(groups["test"]),
        )
    else:
        order = np.random.default_rng(seed).permutation(len(tree_ids))
        shuffled = tree_ids[order]
        train_ids = shuffled[:n_train]
        val_ids = shuffled[n_train : n_train + n_val]
        test_ids = shuffled[n_train + n_val :]

    def subset(ids):
        return cloud.take(np.flatnonzero(np.isin(cloud.tree_id, ids)))

    return subset(train_ids), subset(val_ids), subset(test_ids)
