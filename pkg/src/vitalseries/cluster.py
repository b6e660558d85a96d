"""Average-linkage and k-means clustering of score vectors, with
connectivity, Dunn and silhouette validity indices."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidAssignment, InvalidConfig, InvalidMatrix

DEFAULT_NEIGHBORS = 10


@dataclass(frozen=True)
class Dendrogram:
    """Agglomerative merge history.

    Leaves are nodes ``0..d-1``; merge ``i`` creates node ``d+i``.  Each
    merge records (left node, right node, height).
    """

    leaf_ids: tuple
    merges: tuple

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_ids)


@dataclass(frozen=True)
class ClusterAssignment:
    """District id -> contiguous cluster label in 1..k."""

    labels: dict
    k: int


def pairwise_distances(points) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.clip(d2, 0.0, None, out=d2)
    d = np.sqrt(d2)
    np.fill_diagonal(d, 0.0)
    return d


def upgma(distances, leaf_ids=None) -> Dendrogram:
    """Average-linkage merge tree with lowest-index tie-breaking.

    Inter-cluster distance is the arithmetic mean of all cross-pair
    distances, tracked exactly via pair sums.
    """
    D = np.array(distances, dtype=float)
    d = D.shape[0]
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise InvalidMatrix("distance matrix must be square")
    if not np.allclose(D, D.T, atol=1e-12):
        raise InvalidMatrix("distance matrix must be symmetric")
    if np.any(np.diag(D) != 0):
        raise InvalidMatrix("distance matrix must have a zero diagonal")
    if np.any(D < 0):
        raise InvalidMatrix("distances must be nonnegative")
    if leaf_ids is None:
        leaf_ids = tuple(str(i) for i in range(d))
    leaf_ids = tuple(leaf_ids)
    if len(leaf_ids) != d:
        raise InvalidMatrix("leaf_ids must match the matrix size")

    # S[i, j] = sum of cross-pair distances; sizes give the mean.
    S = D.copy()
    sizes = np.ones(d)
    node = np.arange(d)
    active = np.ones(d, dtype=bool)
    merges = []
    big = np.inf
    for m in range(d - 1):
        counts = sizes[:, None] * sizes[None, :]
        with np.errstate(invalid="ignore"):
            avg = S / counts
        avg[~active, :] = big
        avg[:, ~active] = big
        avg[np.tril_indices(d)] = big
        flat = int(np.argmin(avg))  # row-major: lowest (i, j) wins ties
        i, j = divmod(flat, d)
        merges.append((int(node[i]), int(node[j]), float(avg[i, j])))
        S[i, :] += S[j, :]
        S[:, i] += S[:, j]
        S[i, i] = 0.0
        sizes[i] += sizes[j]
        active[j] = False
        node[i] = d + m
    return Dendrogram(leaf_ids, tuple(merges))


def cut(dendrogram: Dendrogram, k: int) -> ClusterAssignment:
    """The k clusters left after undoing the k-1 highest merges."""
    d = dendrogram.n_leaves
    if not 1 <= k <= d:
        raise IndexError(f"k must be in 1..{d}")
    parent = list(range(2 * d - 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    # UPGMA heights are monotone, so the k-1 highest merges are the last.
    for m, (left, right, _h) in enumerate(dendrogram.merges[: d - k]):
        new = d + m
        parent[find(left)] = new
        parent[find(right)] = new
    roots = {}
    labels = {}
    for leaf in range(d):
        r = find(leaf)
        if r not in roots:
            roots[r] = len(roots) + 1  # label clusters by first leaf seen
        labels[dendrogram.leaf_ids[leaf]] = roots[r]
    return ClusterAssignment(labels, k)


def kmeans(points, k: int, seed: int, ids=None, restarts: int = 10,
           max_iter: int = 300) -> ClusterAssignment:
    """Best-of-restarts Lloyd iterations from k-means++ seeds."""
    x = np.asarray(points, dtype=float)
    d = x.shape[0]
    if not 1 <= k <= d:
        raise InvalidConfig(f"k must be in 1..{d}")
    if ids is None:
        ids = tuple(str(i) for i in range(d))
    rng = np.random.default_rng(seed)
    best_labels, best_wcss = None, np.inf
    for _ in range(restarts):
        centers = _kmeans_pp(x, k, rng)
        labels = np.zeros(d, dtype=int)
        for _it in range(max_iter):
            dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = dist.argmin(axis=1)
            for c in range(k):
                member = new_labels == c
                if member.any():
                    centers[c] = x[member].mean(axis=0)
                else:  # reseed an empty cluster at the farthest point
                    centers[c] = x[int(dist.min(axis=1).argmax())]
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
        wcss = float(((x - centers[labels]) ** 2).sum())
        if wcss < best_wcss - 1e-12:
            best_wcss, best_labels = wcss, labels.copy()
    remap = {}
    for lab in best_labels:
        if lab not in remap:
            remap[lab] = len(remap) + 1
    return ClusterAssignment({ids[i]: remap[best_labels[i]] for i in range(d)}, k)


def _kmeans_pp(x, k, rng):
    d = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(d)]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            centers[c] = x[rng.integers(d)]
        else:
            centers[c] = x[rng.choice(d, p=closest / total)]
        closest = np.minimum(closest, ((x - centers[c]) ** 2).sum(axis=1))
    return centers


def _labels_array(points, assignment, ids):
    x = np.asarray(points, dtype=float)
    if ids is None:
        ids = list(assignment.labels)
    if len(ids) != x.shape[0]:
        raise InvalidAssignment("ids must align with the point rows")
    try:
        labels = np.array([assignment.labels[i] for i in ids], dtype=int)
    except KeyError as exc:
        raise InvalidAssignment(f"point {exc} missing from the assignment") from exc
    return x, labels


def validity(points, assignment: ClusterAssignment, ids=None,
             neighbors: int = DEFAULT_NEIGHBORS):
    """(connectivity, dunn, silhouette) for one assignment.

    Connectivity sums 1/r over each point's r nearest neighbors that land
    in a different cluster (lower is better).  Dunn is the smallest
    between-cluster distance over the largest within-cluster diameter.
    Silhouette averages (b - a) / max(a, b), scoring singletons 0.
    """
    x, labels = _labels_array(points, assignment, ids)
    d = x.shape[0]
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise InvalidAssignment("validity indices need at least 2 clusters")
    dist = pairwise_distances(x)

    L = min(neighbors, d - 1)
    conn = 0.0
    for i in range(d):
        order = np.argsort(np.delete(dist[i], i), kind="stable")
        others = np.delete(np.arange(d), i)
        for r, j in enumerate(others[order[:L]], start=1):
            if labels[j] != labels[i]:
                conn += 1.0 / r

    same = labels[:, None] == labels[None, :]
    off = ~np.eye(d, dtype=bool)
    inter = dist[~same]
    intra = dist[same & off]
    max_diam = intra.max() if intra.size else 0.0
    dunn = float(inter.min() / max_diam) if max_diam > 0 else float("inf")

    sil = np.zeros(d)
    for i in range(d):
        own = same[i] & off[i]
        if not own.any():
            continue  # singleton scores 0
        a = dist[i][own].mean()
        b = min(dist[i][labels == c].mean() for c in uniq if c != labels[i])
        sil[i] = (b - a) / max(a, b)
    return float(conn), float(dunn), float(sil.mean())


def indices_over_k(points, ids, k_range, method: str = "upgma", seed: int = 0,
                   neighbors: int = DEFAULT_NEIGHBORS):
    """Validity indices for each candidate cluster count."""
    x = np.asarray(points, dtype=float)
    rows = []
    dendro = upgma(pairwise_distances(x), ids) if method == "upgma" else None
    for k in k_range:
        if method == "upgma":
            assignment = cut(dendro, k)
        elif method == "kmeans":
            assignment = kmeans(x, k, seed, ids=ids)
        else:
            raise InvalidConfig(f"unknown method {method!r}")
        conn, dunn, sil = validity(x, assignment, ids=ids, neighbors=neighbors)
        rows.append({"k": k, "connectivity": conn, "dunn": dunn, "silhouette": sil})
    return rows


# ---------------------------------------------------------------- #
# Serialization
# ---------------------------------------------------------------- #

def write_assignment_csv(assignment: ClusterAssignment, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("district_id", "cluster"))
        for district, label in assignment.labels.items():
            w.writerow((district, label))


def write_indices_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("k", "connectivity", "dunn", "silhouette"))
        for r in rows:
            w.writerow((r["k"], repr(r["connectivity"]), repr(r["dunn"]),
                        repr(r["silhouette"])))


def dendrogram_to_dict(dendrogram: Dendrogram) -> dict:
    """Nested left/right/height tree for external plotting."""
    d = dendrogram.n_leaves
    nodes = {i: {"id": dendrogram.leaf_ids[i]} for i in range(d)}
    for m, (left, right, height) in enumerate(dendrogram.merges):
        nodes[d + m] = {"height": height, "left": nodes[left], "right": nodes[right]}
    return nodes[d + len(dendrogram.merges) - 1] if dendrogram.merges else nodes[0]


def write_dendrogram_json(dendrogram: Dendrogram, path) -> None:
    with open(path, "w") as fh:
        json.dump(dendrogram_to_dict(dendrogram), fh, indent=2, sort_keys=True)
        fh.write("\n")
