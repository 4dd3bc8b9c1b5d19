"""
Density-based clustering (HDBSCAN) for part discovery.

Pipeline: mutual-reachability distances -> minimum spanning tree ->
single-linkage hierarchy -> condensed tree -> excess-of-mass selection.
Dense O(n²) memory; callers subsample large inputs.
"""
from collections import defaultdict
from typing import Dict, List, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from src.utils import setup_logger

logger = setup_logger(__name__)

NOISE = -1
DISTANCE_FLOOR = 1e-12


def mutual_reachability(points: np.ndarray, min_samples: int) -> np.ndarray:
    """
    Dense mutual-reachability matrix max(core_i, core_j, d_ij).

    Core distance is the distance to the min_samples-th nearest point,
    counting the point itself. Coincident points keep a zero distance.
    """
    dist = cdist(points, points)
    n = len(points)
    k = min(n - 1, max(min_samples - 1, 0))
    core = np.partition(dist, k, axis=1)[:, k]
    mr = np.maximum(dist, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(mr, 0.0)
    return mr


def prim_mst(mr: np.ndarray) -> np.ndarray:
    """
    Minimum spanning tree of a dense distance matrix by Prim's algorithm.

    Every off-diagonal entry is an edge, zero weights included.

    Returns:
        (n-1, 3) edges [from, to, distance] in the order they were added
    """
    n = len(mr)
    edges = np.zeros((max(n - 1, 0), 3))
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    source = np.zeros(n, dtype=np.int64)
    current = 0
    for i in range(n - 1):
        in_tree[current] = True
        closer = ~in_tree & (mr[current] < best)
        best[closer] = mr[current][closer]
        source[closer] = current
        candidates = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(candidates))
        edges[i] = (source[nxt], nxt, best[nxt])
        current = nxt
    return edges


def single_linkage(mr: np.ndarray) -> np.ndarray:
    """
    Single-linkage hierarchy from the MST of a mutual-reachability matrix.

    Returns:
        (n-1, 4) merges [left, right, distance, size] in scipy linkage
        format; node n + i is created by row i.
    """
    n = len(mr)
    mst = prim_mst(mr)
    edges = mst[np.argsort(mst[:, 2], kind='stable')]

    parent = np.arange(2 * n - 1)
    size = np.concatenate([np.ones(n, dtype=np.int64), np.zeros(n - 1, dtype=np.int64)])

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    linkage = np.zeros((n - 1, 4))
    for i, (a, b, d) in enumerate(edges):
        ra, rb = find(int(a)), find(int(b))
        node = n + i
        linkage[i] = (ra, rb, d, size[ra] + size[rb])
        parent[ra] = parent[rb] = node
        size[node] = size[ra] + size[rb]
    return linkage


def _leaves(node: int, n: int, linkage: np.ndarray) -> List[int]:
    out, stack = [], [node]
    while stack:
        x = stack.pop()
        if x < n:
            out.append(x)
        else:
            row = linkage[x - n]
            stack.extend((int(row[0]), int(row[1])))
    return out


def condense_tree(linkage: np.ndarray, min_cluster_size: int) -> List[Tuple[int, int, float, int]]:
    """
    Condense a single-linkage hierarchy.

    Returns:
        Entries (parent_cluster, child, lambda, child_size). Clusters are
        numbered from n (the root); children below n are points falling out.
    """
    n = len(linkage) + 1
    root = 2 * n - 2
    relabel = {root: n}
    next_label = n + 1
    entries = []
    stack = [root]
    while stack:
        node = stack.pop()
        left, right, dist, _ = linkage[node - n]
        left, right = int(left), int(right)
        lam = 1.0 / max(dist, DISTANCE_FLOOR)
        sizes = [1 if c < n else int(linkage[c - n][3]) for c in (left, right)]
        big = [s >= min_cluster_size for s in sizes]
        parent = relabel[node]
        if all(big):
            for child, child_size in zip((left, right), sizes):
                relabel[child] = next_label
                entries.append((parent, next_label, lam, child_size))
                next_label += 1
                stack.append(child)
        elif not any(big):
            for child in (left, right):
                for point in _leaves(child, n, linkage):
                    entries.append((parent, point, lam, 1))
        else:
            keep, drop = (left, right) if big[0] else (right, left)
            for point in _leaves(drop, n, linkage):
                entries.append((parent, point, lam, 1))
            if keep >= n:
                relabel[keep] = parent
                stack.append(keep)
            else:
                entries.append((parent, keep, lam, 1))
    return entries


def compute_stability(entries: List[Tuple[int, int, float, int]], n: int) -> Dict[int, float]:
    """Excess of mass Σ (λ_child − λ_birth) · size per cluster."""
    birth = {n: 0.0}
    for parent, child, lam, _ in entries:
        if child >= n:
            birth[child] = lam
    stability = {c: 0.0 for c in birth}
    for parent, child, lam, size in entries:
        stability[parent] += (lam - birth[parent]) * size
    return stability


def select_clusters(entries, stability: Dict[int, float], n: int,
                    allow_single_cluster: bool = True) -> List[int]:
    """Excess-of-mass flat extraction; returns selected cluster ids."""
    children: Dict[int, List[int]] = defaultdict(list)
    for parent, child, _, _ in entries:
        if child >= n:
            children[parent].append(child)
    candidates = sorted(stability, reverse=True)
    if not allow_single_cluster:
        candidates = [c for c in candidates if c != n]
    stability = dict(stability)
    selected = {c: False for c in candidates}
    for c in candidates:
        kids = children.get(c, [])
        subtree = sum(stability[k] for k in kids)
        if kids and subtree > stability[c]:
            stability[c] = subtree
        else:
            selected[c] = True
            stack = list(kids)
            while stack:
                k = stack.pop()
                selected[k] = False
                stack.extend(children.get(k, []))
    return sorted(c for c, chosen in selected.items() if chosen)


def hdbscan(points: np.ndarray, min_cluster_size: int, min_samples: int,
            allow_single_cluster: bool = True) -> np.ndarray:
    """
    Cluster points by density.

    Args:
        points: (n, d) array
        min_cluster_size: Smallest group that counts as a cluster
        min_samples: Neighbourhood size for core distances
        allow_single_cluster: Whether the root may be returned as one cluster

    Returns:
        (n,) labels, -1 for noise and 0..K-1 for clusters
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n < max(min_cluster_size, 2):
        return np.full(n, NOISE, dtype=np.int64)

    linkage = single_linkage(mutual_reachability(points, min_samples))
    entries = condense_tree(linkage, min_cluster_size)
    stability = compute_stability(entries, n)
    chosen = select_clusters(entries, stability, n, allow_single_cluster)

    cluster_parent = {child: parent for parent, child, _, _ in entries if child >= n}
    point_parent = {child: parent for parent, child, _, _ in entries if child < n}
    label_of = {c: i for i, c in enumerate(chosen)}
    labels = np.full(n, NOISE, dtype=np.int64)
    for point, cluster in point_parent.items():
        c = cluster
        while c not in label_of and c in cluster_parent:
            c = cluster_parent[c]
        labels[point] = label_of.get(c, NOISE)
    logger.debug(f"hdbscan: {n} points -> {len(chosen)} clusters, {int((labels == NOISE).sum())} noise")
    return labels


def cluster_centroids(points: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """(K, d) mean of each cluster 0..K-1."""
    k = int(labels.max()) + 1 if len(labels) and labels.max() >= 0 else 0
    return np.stack([points[labels == i].mean(axis=0) for i in range(k)]) if k else np.zeros((0, points.shape[1]))


def assign_to_nearest(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid for every point."""
    return np.argmin(cdist(points, centroids), axis=1)
