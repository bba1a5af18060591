"""Maximum spanning trees over the pairwise match graph and composed transforms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .homography import normalize_homography


@dataclass
class PairResult:
    """Outcome of matching image ``a`` against image ``b`` (``a < b``).

    ``H`` maps pixel coordinates of ``a`` into ``b``; it is ``None`` when no
    homography could be fitted.
    """

    a: int
    b: int
    inliers: int
    H: np.ndarray | None = None


@dataclass
class AlignmentTree:
    reference: int
    transforms: dict[int, np.ndarray]  # image id -> homography into the reference frame
    edges: list[tuple[int, int, int]] = field(default_factory=list)  # (a, b, inliers)

    @property
    def nodes(self) -> list[int]:
        return sorted(self.transforms)


def _edge_transform(pairs: dict[tuple[int, int], PairResult], src: int, dst: int) -> np.ndarray:
    """Homography taking ``src`` coordinates into ``dst`` coordinates."""
    if src < dst:
        return pairs[(src, dst)].H
    return np.linalg.inv(pairs[(dst, src)].H)


def build_alignment_trees(
    image_ids: list[int], pair_results: list[PairResult], min_inliers: int = 15
) -> list[AlignmentTree]:
    """One maximum-spanning tree per connected component of the match graph.

    Edges need at least ``min_inliers`` inliers. Kruskal's order is by
    inlier count, ties going to the lexicographically smaller id pair. The
    reference is the node with the largest total inlier count over its kept
    edges (lowest id on ties).
    """
    ids = sorted(int(i) for i in image_ids)
    pairs = {}
    for pr in pair_results:
        a, b = (pr.a, pr.b) if pr.a < pr.b else (pr.b, pr.a)
        H = pr.H if pr.a < pr.b or pr.H is None else np.linalg.inv(pr.H)
        if pr.H is not None and pr.inliers >= min_inliers and a in ids and b in ids:
            pairs[(a, b)] = PairResult(a, b, pr.inliers, H)

    parent = {i: i for i in ids}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    tree_edges = []
    for (a, b), pr in sorted(pairs.items(), key=lambda kv: (-kv[1].inliers, kv[0])):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
            tree_edges.append((a, b, pr.inliers))

    components: dict[int, list[int]] = {}
    for i in ids:
        components.setdefault(find(i), []).append(i)

    strength = {i: 0 for i in ids}
    for (a, b), pr in pairs.items():
        strength[a] += pr.inliers
        strength[b] += pr.inliers

    trees = []
    for members in sorted(components.values(), key=lambda m: m[0]):
        member_set = set(members)
        ref = min(members, key=lambda i: (-strength[i], i))
        edges = [e for e in tree_edges if e[0] in member_set]
        adj: dict[int, list[int]] = {i: [] for i in members}
        for a, b, _ in edges:
            adj[a].append(b)
            adj[b].append(a)
        transforms = {ref: np.eye(3)}
        stack = [ref]
        while stack:
            node = stack.pop()
            for nb in sorted(adj[node]):
                if nb in transforms:
                    continue
                # nb -> node -> ... -> ref
                transforms[nb] = normalize_homography(transforms[node] @ _edge_transform(pairs, nb, node))
                stack.append(nb)
        trees.append(AlignmentTree(ref, transforms, edges))
    return trees
