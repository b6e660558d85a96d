import json

import numpy as np
import pytest

from vitalseries.cluster import (
    ClusterAssignment,
    cut,
    dendrogram_to_dict,
    indices_over_k,
    kmeans,
    pairwise_distances,
    upgma,
    validity,
    write_assignment_csv,
    write_dendrogram_json,
    write_indices_csv,
)
from vitalseries.errors import InvalidAssignment, InvalidMatrix

# ------------------------------------------------------------------ #
# Brute-force average-linkage oracle (direct cross-pair means, member
# lists kept explicitly; mirrors the implementation's slot handling so
# sequences are comparable, but recomputes every distance from scratch).
# ------------------------------------------------------------------ #


def upgma_oracle(D):
    D = np.asarray(D, dtype=float)
    d = D.shape[0]
    members = {i: [i] for i in range(d)}
    node = {i: i for i in range(d)}
    active = list(range(d))
    merges = []
    for m in range(d - 1):
        best = None
        for ai in range(len(active)):
            for aj in range(ai + 1, len(active)):
                i, j = active[ai], active[aj]
                pairs = [D[p, q] for p in members[i] for q in members[j]]
                avg = sum(pairs) / len(pairs)
                if best is None or avg < best[0]:
                    best = (avg, i, j)
        avg, i, j = best
        merges.append((node[i], node[j], avg))
        members[i] = members[i] + members[j]
        node[i] = d + m
        active.remove(j)
    return merges


class TestUpgma:
    def test_three_point_example(self):
        D = np.array([[0, 1, 4], [1, 0, 5], [4, 5, 0]], float)
        dendro = upgma(D, ("A", "B", "C"))
        assert dendro.merges[0] == (0, 1, 1.0)
        assert dendro.merges[1][2] == pytest.approx(4.5)

    def test_equal_distances_equal_heights(self):
        D = np.ones((5, 5)) - np.eye(5)
        dendro = upgma(D)
        assert all(h == 1.0 for _, _, h in dendro.merges)

    def test_matches_brute_force_oracle_exactly_integer_distances(self):
        # Integer-valued distances make every cross-pair sum exact in
        # float64, so heights must agree bit for bit.
        rng = np.random.default_rng(123)
        for _ in range(5):
            M = rng.integers(1, 100, size=(10, 10)).astype(float)
            D = np.triu(M, 1)
            D = D + D.T
            dendro = upgma(D)
            oracle = upgma_oracle(D)
            assert [m[:2] for m in dendro.merges] == [m[:2] for m in oracle]
            assert [m[2] for m in dendro.merges] == [m[2] for m in oracle]

    def test_matches_oracle_float_distances(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(12, 3))
        D = pairwise_distances(pts)
        dendro = upgma(D)
        oracle = upgma_oracle(D)
        np.testing.assert_allclose([m[2] for m in dendro.merges],
                                   [m[2] for m in oracle], rtol=1e-12)

    def test_heights_monotone(self):
        rng = np.random.default_rng(8)
        D = pairwise_distances(rng.normal(size=(15, 4)))
        dendro = upgma(D)
        heights = [h for _, _, h in dendro.merges]
        assert all(heights[i + 1] >= heights[i] - 1e-12 for i in range(len(heights) - 1))

    def test_permutation_invariance_up_to_relabeling(self):
        rng = np.random.default_rng(9)
        pts = rng.normal(size=(10, 2))
        D = pairwise_distances(pts)
        ids = tuple(f"p{i}" for i in range(10))
        perm = rng.permutation(10)
        D2 = D[np.ix_(perm, perm)]
        ids2 = tuple(ids[i] for i in perm)
        for k in (2, 3, 5):
            a1 = cut(upgma(D, ids), k).labels
            a2 = cut(upgma(D2, ids2), k).labels
            # same partition of the same ids, labels possibly renamed
            groups1 = {}
            groups2 = {}
            for i in ids:
                groups1.setdefault(a1[i], set()).add(i)
                groups2.setdefault(a2[i], set()).add(i)
            assert set(map(frozenset, groups1.values())) == \
                   set(map(frozenset, groups2.values()))

    def test_invalid_matrices(self):
        with pytest.raises(InvalidMatrix):
            upgma(np.zeros((2, 3)))
        with pytest.raises(InvalidMatrix):
            upgma(np.array([[0, 1], [2, 0]], float))
        with pytest.raises(InvalidMatrix):
            upgma(np.array([[1, 1], [1, 0]], float))
        with pytest.raises(InvalidMatrix):
            upgma(np.array([[0, -1], [-1, 0]], float))


class TestCut:
    @pytest.fixture
    def dendro(self):
        D = np.array([[0, 1, 4], [1, 0, 5], [4, 5, 0]], float)
        return upgma(D, ("A", "B", "C"))

    def test_singletons_and_single_cluster(self, dendro):
        assert len(set(cut(dendro, 3).labels.values())) == 3
        assert len(set(cut(dendro, 1).labels.values())) == 1

    def test_two_clusters(self, dendro):
        labels = cut(dendro, 2).labels
        assert labels["A"] == labels["B"] != labels["C"]

    def test_labels_contiguous(self):
        rng = np.random.default_rng(10)
        D = pairwise_distances(rng.normal(size=(9, 3)))
        dendro = upgma(D)
        for k in range(1, 10):
            labels = sorted(set(cut(dendro, k).labels.values()))
            assert labels == list(range(1, k + 1))

    def test_cuts_nest(self):
        rng = np.random.default_rng(11)
        D = pairwise_distances(rng.normal(size=(14, 3)))
        dendro = upgma(D)
        for k in range(2, 14):
            fine = cut(dendro, k).labels
            coarse = cut(dendro, k - 1).labels
            # every fine cluster maps into exactly one coarse cluster
            mapping = {}
            for leaf, lab in fine.items():
                mapping.setdefault(lab, set()).add(coarse[leaf])
            assert all(len(v) == 1 for v in mapping.values())

    def test_out_of_range(self, dendro):
        with pytest.raises(IndexError):
            cut(dendro, 0)
        with pytest.raises(IndexError):
            cut(dendro, 4)


class TestKmeans:
    def test_recovers_separated_groups(self):
        pts = np.array([[0, 0], [0.2, 0], [9, 9], [9.1, 9.2]])
        a = kmeans(pts, 2, seed=1)
        assert a.labels["0"] == a.labels["1"]
        assert a.labels["2"] == a.labels["3"]
        assert a.labels["0"] != a.labels["2"]

    def test_k_equals_n_zero_wcss(self):
        rng = np.random.default_rng(12)
        pts = rng.normal(size=(6, 2))
        a = kmeans(pts, 6, seed=2)
        assert sorted(set(a.labels.values())) == [1, 2, 3, 4, 5, 6]

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(13)
        pts = rng.normal(size=(30, 4))
        a = kmeans(pts, 4, seed=99)
        b = kmeans(pts, 4, seed=99)
        assert a.labels == b.labels


# ------------------------------------------------------------------ #
# Validity indices vs naive reimplementations
# ------------------------------------------------------------------ #


def naive_validity(points, labels, L):
    pts = np.asarray(points, float)
    d = len(pts)
    dist = np.array([[np.sqrt(((pts[i] - pts[j]) ** 2).sum()) for j in range(d)]
                     for i in range(d)])
    conn = 0.0
    for i in range(d):
        order = sorted((dist[i, j], j) for j in range(d) if j != i)
        for r, (_dd, j) in enumerate(order[:L], start=1):
            if labels[j] != labels[i]:
                conn += 1.0 / r
    inter = min(dist[i, j] for i in range(d) for j in range(d)
                if labels[i] != labels[j])
    intra = max(dist[i, j] for i in range(d) for j in range(d)
                if labels[i] == labels[j])
    dunn = inter / intra
    sils = []
    for i in range(d):
        own = [j for j in range(d) if j != i and labels[j] == labels[i]]
        if not own:
            sils.append(0.0)
            continue
        a = np.mean([dist[i, j] for j in own])
        b = min(np.mean([dist[i, j] for j in range(d) if labels[j] == c])
                for c in set(labels) if c != labels[i])
        sils.append((b - a) / max(a, b))
    return conn, dunn, float(np.mean(sils))


class TestValidity:
    def test_matches_naive_oracle_on_12_points(self):
        rng = np.random.default_rng(14)
        pts = np.vstack([rng.normal(0, 1, (5, 3)), rng.normal(4, 1, (4, 3)),
                         rng.normal(-4, 1, (3, 3))])
        labels = [1] * 5 + [2] * 4 + [3] * 3
        assignment = ClusterAssignment({str(i): labels[i] for i in range(12)}, 3)
        got = validity(pts, assignment, ids=[str(i) for i in range(12)])
        want = naive_validity(pts, labels, 10)
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_far_blobs(self):
        rng = np.random.default_rng(15)
        pts = np.vstack([rng.normal(0, 0.05, (12, 2)), rng.normal(50, 0.05, (12, 2))])
        labels = {str(i): 1 if i < 12 else 2 for i in range(24)}
        conn, dunn, sil = validity(pts, ClusterAssignment(labels, 2),
                                   ids=[str(i) for i in range(24)])
        assert conn == 0.0
        assert sil >= 0.9
        assert dunn > 10

    def test_silhouette_bounds(self):
        rng = np.random.default_rng(16)
        pts = rng.normal(size=(20, 2))
        a = kmeans(pts, 4, seed=3)
        _, _, sil = validity(pts, a)
        assert -1.0 <= sil <= 1.0

    def test_translation_leaves_assignments(self):
        rng = np.random.default_rng(17)
        pts = rng.normal(size=(16, 4))
        base = kmeans(pts, 3, seed=4).labels
        shifted = kmeans(pts + 100.0, 3, seed=4).labels
        assert base == shifted

    def test_requires_two_clusters(self):
        pts = np.zeros((4, 2))
        with pytest.raises(InvalidAssignment):
            validity(pts, ClusterAssignment({str(i): 1 for i in range(4)}, 1),
                     ids=[str(i) for i in range(4)])


class TestIndicesAndSerialization:
    def test_indices_over_k(self):
        rng = np.random.default_rng(18)
        pts = np.vstack([rng.normal(0, 0.5, (8, 2)), rng.normal(6, 0.5, (8, 2))])
        ids = tuple(str(i) for i in range(16))
        rows = indices_over_k(pts, ids, range(2, 6))
        assert [r["k"] for r in rows] == [2, 3, 4, 5]
        best = max(rows, key=lambda r: r["dunn"])
        assert best["k"] == 2  # two real blobs

    def test_writers(self, tmp_path):
        rng = np.random.default_rng(19)
        pts = rng.normal(size=(6, 2))
        ids = tuple(str(i) for i in range(6))
        dendro = upgma(pairwise_distances(pts), ids)
        a = cut(dendro, 2)
        write_assignment_csv(a, tmp_path / "a.csv")
        lines = open(tmp_path / "a.csv").read().splitlines()
        assert lines[0] == "district_id,cluster"
        assert len(lines) == 7

        rows = indices_over_k(pts, ids, [2, 3])
        write_indices_csv(rows, tmp_path / "idx.csv")
        assert open(tmp_path / "idx.csv").readline().startswith("k,connectivity")

        write_dendrogram_json(dendro, tmp_path / "d.json")
        doc = json.load(open(tmp_path / "d.json"))
        assert "height" in doc and "left" in doc and "right" in doc

        flat = dendrogram_to_dict(dendro)
        def leaves(node):
            if "id" in node:
                return [node["id"]]
            return leaves(node["left"]) + leaves(node["right"])
        assert sorted(leaves(flat)) == sorted(ids)
