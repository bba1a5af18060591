"""Pose-similarity graphs and dominant-set clustering by replicator dynamics.

A dominant set is a maximally cohesive group of nodes: internally similar and
externally dissimilar. Clusters are found one at a time by running replicator
dynamics on the remaining graph and peeling off the support of the limit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import InvalidValue, MissingPose
from .odometry.pose import Pose

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterParams:
    sigma_pos: float = 0.5
    sigma_rot: float = np.pi / 3
    support_threshold: float = 1e-4
    min_cohesiveness: float = 0.05
    min_cluster_size: int = 2
    tol: float = 1e-8
    max_iters: int = 10000

    def __post_init__(self):
        for name in ("sigma_pos", "sigma_rot"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidValue(f"{name} must be positive, got {v!r}")
        if self.min_cluster_size < 1:
            raise InvalidValue("min_cluster_size must be >= 1")


@dataclass
class AffinityGraph:
    A: np.ndarray
    node_ids: list[int]
    scene_scale: float = 1.0
    mode: str = "pose"

    @property
    def n(self) -> int:
        return len(self.node_ids)


@dataclass
class ReplicatorState:
    x: np.ndarray
    payoff: float
    iterations: int = 0
    converged: bool = True
    payoffs: list[float] = field(default_factory=list)


@dataclass
class Cluster:
    members: list[int]  # node ids
    weights: np.ndarray  # characteristic vector restricted to members
    cohesiveness: float


def rotation_distance(R_a: np.ndarray, R_b: np.ndarray) -> float:
    c = (np.trace(R_a.T @ R_b) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def pose_affinity(
    pose_a: Pose | None,
    pose_b: Pose | None,
    sigma_pos: float = 0.5,
    sigma_rot: float = np.pi / 3,
    scene_scale: float = 1.0,
) -> float:
    """Gaussian similarity of camera centers times Gaussian similarity of orientations."""
    if pose_a is None or pose_b is None:
        raise MissingPose("pose affinity needs both poses")
    if not (sigma_pos > 0 and sigma_rot > 0 and scene_scale > 0):
        raise InvalidValue("sigma_pos, sigma_rot and scene_scale must be positive")
    d_pos = float(np.linalg.norm(pose_a.center - pose_b.center))
    d_rot = rotation_distance(pose_a.R, pose_b.R)
    return float(np.exp(-((d_pos / (sigma_pos * scene_scale)) ** 2)) * np.exp(-((d_rot / sigma_rot) ** 2)))


def scene_scale(centers: np.ndarray) -> float:
    """Median distance of camera centers to their centroid (1.0 for fewer than 3)."""
    centers = np.asarray(centers, dtype=np.float64)
    if len(centers) < 3:
        return 1.0
    s = float(np.median(np.linalg.norm(centers - centers.mean(axis=0), axis=1)))
    return s if s > 0 else 1.0


def build_affinity_graph(
    poses: Sequence[Pose], node_ids: Sequence[int] | None = None, params: ClusterParams = ClusterParams()
) -> AffinityGraph:
    """Dense pose-affinity graph with a zero diagonal."""
    n = len(poses)
    if n < 1:
        raise InvalidValue("need at least one keyframe")
    ids = list(range(n)) if node_ids is None else [int(i) for i in node_ids]
    scale = scene_scale(np.array([p.center for p in poses]))
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            A[i, j] = A[j, i] = pose_affinity(poses[i], poses[j], params.sigma_pos, params.sigma_rot, scale)
    return AffinityGraph(A, ids, scale, "pose")


def appearance_affinity_graph(inlier_counts: np.ndarray, keypoint_counts: Sequence[int], node_ids=None) -> AffinityGraph:
    """Fallback graph from verified match counts, normalized by the smaller keypoint count.

    ``inlier_counts[i, j]`` is the number of geometrically verified matches
    between keyframes ``i`` and ``j``.
    """
    C = np.asarray(inlier_counts, dtype=np.float64)
    C = np.maximum(C, C.T)
    k = np.asarray(keypoint_counts, dtype=np.float64)
    denom = np.maximum(np.minimum.outer(k, k), 1.0)
    A = np.clip(C / denom, 0.0, 1.0)
    np.fill_diagonal(A, 0.0)
    ids = list(range(len(k))) if node_ids is None else [int(i) for i in node_ids]
    return AffinityGraph(A, ids, 1.0, "appearance")


def replicator_dynamics(
    A: np.ndarray,
    x0: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iters: int = 10000,
    record: bool = False,
) -> ReplicatorState:
    """Discrete replicator dynamics ``x_i <- x_i (Ax)_i / x'Ax``.

    Stops when the L1 change falls below ``tol``; a run that reaches
    ``max_iters`` first is returned with ``converged=False``.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    x = np.full(n, 1.0 / n) if x0 is None else np.array(x0, dtype=np.float64)
    state = ReplicatorState(x, 0.0)
    Ax = A @ x
    payoff = float(x @ Ax)
    if record:
        state.payoffs.append(payoff)
    if payoff <= 0.0:
        state.x, state.payoff = x, 0.0
        return state
    converged = False
    it = 0
    while it < max_iters:
        it += 1
        x_new = x * Ax / payoff
        x_new /= x_new.sum()
        delta = float(np.abs(x_new - x).sum())
        x = x_new
        Ax = A @ x
        payoff = float(x @ Ax)
        if record:
            state.payoffs.append(payoff)
        if payoff <= 0.0:
            payoff = 0.0
            converged = True
            break
        if delta < tol:
            converged = True
            break
    state.x, state.payoff, state.iterations, state.converged = x, payoff, it, converged
    return state


def _components(A: np.ndarray) -> list[np.ndarray]:
    n_comp, labels = connected_components(A > 0, directed=False)
    return [np.nonzero(labels == c)[0] for c in range(n_comp)]


def _best_dominant_set(A: np.ndarray, params: ClusterParams) -> tuple[np.ndarray, np.ndarray, float] | None:
    """Run the dynamics on each connected component; keep the most cohesive support.

    Starting from the barycenter of a graph with several disconnected parts
    keeps mass on all of them, so each part is solved separately.
    """
    best = None
    for comp in _components(A):
        if len(comp) < params.min_cluster_size:
            continue
        sub = A[np.ix_(comp, comp)]
        st = replicator_dynamics(sub, None, params.tol, params.max_iters)
        if not st.converged:
            log.warning("replicator dynamics hit max_iters=%d without converging", params.max_iters)
        support = st.x > params.support_threshold
        if best is None or st.payoff > best[2]:
            best = (comp[support], st.x[support], st.payoff)
    return best


def extract_dominant_sets(
    graph: AffinityGraph | np.ndarray, params: ClusterParams = ClusterParams()
) -> tuple[list[Cluster], list[int]]:
    """Peel dominant sets off the graph until none is cohesive enough.

    Returns the clusters in extraction order and the node ids left
    unassigned. The number of clusters is never an input.
    """
    if isinstance(graph, AffinityGraph):
        A, ids = graph.A, graph.node_ids
    else:
        A = np.asarray(graph, dtype=np.float64)
        ids = list(range(A.shape[0]))
    remaining = np.arange(A.shape[0])
    clusters: list[Cluster] = []
    unassigned: list[int] = []
    while len(remaining) >= params.min_cluster_size:
        sub = A[np.ix_(remaining, remaining)]
        found = _best_dominant_set(sub, params)
        if found is None or found[2] < params.min_cohesiveness:
            break
        local, weights, cohesiveness = found
        members = remaining[local]
        if len(members) < params.min_cluster_size:
            # too small to be a group; set it aside and keep peeling
            unassigned.extend(ids[i] for i in members)
        else:
            w = weights / weights.sum()
            clusters.append(Cluster([ids[i] for i in members], w, float(cohesiveness)))
        remaining = np.setdiff1d(remaining, members)
    unassigned.extend(ids[i] for i in remaining)
    return clusters, sorted(unassigned)
