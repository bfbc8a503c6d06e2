"""Pose-graph integration of pairwise solutions.

Views are 0-based; view 0 carries the gauge (identity rotation).  An edge
``(i, j, solution, inliers)`` means view ``i`` plays "view 1" and view ``j``
"view 2" of the pair, so ``R_ij = R_i R_j^T`` maps view-j coordinates to view i.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .correspondences import CorrespondenceSet, center
from .geometry import GbrTransform, matrix_to_euler, rotation_angle_between
from .residuals import ParamVector, count_residuals, residual_vector
from .solvers import PairSolution, convergence_threshold

logger = logging.getLogger(__name__)


class GraphDisconnectedError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Edge:
    i: int
    j: int
    solution: PairSolution
    inliers: CorrespondenceSet


@dataclass(frozen=True, eq=False)
class PoseGraph:
    n_views: int
    edges: list
    rotations: list                 # absolute rotations, rotations[0] = I
    gbrs: list                      # one GbrTransform per view
    initial_rotations: list = field(default_factory=list)
    cost: float = float("inf")
    converged: bool = False

    def relative(self, i: int, j: int) -> np.ndarray:
        return self.rotations[i] @ self.rotations[j].T

    def to_dict(self) -> dict:
        return {
            "n_views": self.n_views,
            "rotations": [R.tolist() for R in self.rotations],
            "gbrs": [list(g.as_tuple()) for g in self.gbrs],
            "cost": float(self.cost),
            "converged": bool(self.converged),
            "edges": [[e.i, e.j] for e in self.edges],
        }


def _centered(s: CorrespondenceSet) -> CorrespondenceSet:
    return s if s.centered or len(s.pixels) == 0 else center(s)[0]


def _as_edges(pairs) -> list[Edge]:
    out = []
    for item in pairs:
        e = item if isinstance(item, Edge) else Edge(*item)
        if e.i == e.j:
            raise ValueError(f"self-loop on view {e.i}")
        out.append(Edge(int(e.i), int(e.j), e.solution, _centered(e.inliers)))
    return out


def spanning_tree_init(edges: list[Edge], n_views: int) -> tuple[list, list]:
    """Absolute rotations and per-view GBRs chained along a maximum-inlier spanning tree."""
    g = nx.Graph()
    g.add_nodes_from(range(n_views))
    for k, e in enumerate(edges):
        w = sum(e.inliers.counts)
        if not g.has_edge(e.i, e.j) or g[e.i][e.j]["weight"] < w:
            g.add_edge(e.i, e.j, weight=w, index=k)
    if not nx.is_connected(g):
        raise GraphDisconnectedError("pairwise graph does not connect all views")
    tree = nx.maximum_spanning_tree(g, weight="weight")
    rots: list = [None] * n_views
    gbrs: list = [None] * n_views
    rots[0] = np.eye(3)
    for parent, child in nx.bfs_edges(tree, 0):
        e = edges[tree[parent][child]["index"]]
        if e.i == parent:                      # R_child = R_ij^T R_parent
            rots[child] = e.solution.R21.T @ rots[parent]
            gbrs[child] = e.solution.g2
            gbrs[parent] = gbrs[parent] or e.solution.g1
        else:                                  # R_child = R_ij R_parent
            rots[child] = e.solution.R21 @ rots[parent]
            gbrs[child] = e.solution.g1
            gbrs[parent] = gbrs[parent] or e.solution.g2
    return rots, gbrs


def _unpack(z: np.ndarray, base: list, n: int):
    rots = [base[0]]
    for k in range(1, n):
        rots.append(Rotation.from_rotvec(z[3 * (k - 1):3 * k]).as_matrix() @ base[k])
    off = 3 * (n - 1)
    gbrs = [z[off + 3 * k: off + 3 * k + 3] for k in range(n)]
    return rots, gbrs


def _pair_params(Ri, Rj, gi, gj) -> np.ndarray:
    a = matrix_to_euler(Ri @ Rj.T)
    return np.array([a.theta, a.phi, a.eta, *gi, *gj])


def _gbr_vec(g: GbrTransform) -> list[float]:
    return [g.mu, g.nu, float(np.log(g.lam))]


def multiview_residuals(rotations, gbrs, edges: list[Edge]) -> np.ndarray:
    """Stacked per-pair objective residuals; ``gbrs`` entries are GbrTransform or (mu, nu, log lam)."""
    gv = [_gbr_vec(g) if isinstance(g, GbrTransform) else list(g) for g in gbrs]
    parts = [residual_vector(_pair_params(rotations[e.i], rotations[e.j], gv[e.i], gv[e.j]), e.inliers)
             for e in edges]
    return np.concatenate(parts) if parts else np.zeros(0)


def multiview_objective(rotations, gbrs, edges) -> float:
    r = multiview_residuals(rotations, gbrs, _as_edges(edges))
    return float(r @ r)


def integrate_multiview(pairs, n_views: int | None = None, refine: bool = True) -> PoseGraph:
    """Spanning-tree initialisation then joint refinement of rotations and per-view GBRs."""
    edges = _as_edges(pairs)
    if not edges:
        raise GraphDisconnectedError("no pairwise solutions")
    n = n_views or 1 + max(max(e.i, e.j) for e in edges)
    rots0, gbrs0 = spanning_tree_init(edges, n)
    z0 = np.concatenate([np.zeros(3 * (n - 1))] + [_gbr_vec(g) for g in gbrs0])

    def fun(z):
        rots, gbrs = _unpack(z, rots0, n)
        return multiview_residuals(rots, gbrs, edges)

    z = z0
    if refine:
        with np.errstate(all="ignore"):
            res = least_squares(fun, z0, method="lm" if len(fun(z0)) >= len(z0) else "trf",
                                xtol=1e-14, ftol=1e-14, gtol=1e-12)
        if np.all(np.isfinite(res.fun)) and res.cost <= 0.5 * float(fun(z0) @ fun(z0)):
            z = res.x
    rots, gv = _unpack(z, rots0, n)
    r = fun(z)
    cost = float(r @ r)
    m = sum(count_residuals(e.inliers) for e in edges)
    gbrs = [GbrTransform(g[0], g[1], np.exp(g[2])) for g in gv]
    logger.info("multiview: %d views, %d edges, cost %.3g", n, len(edges), cost)
    return PoseGraph(n, edges, rots, gbrs, rots0, cost, cost < convergence_threshold(m))


def loop_rotation_error(graph: PoseGraph, cycle) -> float:
    """Angle (radians) of the composed relative rotations around ``cycle`` of view indices."""
    M = np.eye(3)
    for a, b in zip(cycle, list(cycle[1:]) + [cycle[0]]):
        M = M @ graph.relative(a, b)
    return rotation_angle_between(M, np.eye(3))


def params_for_edge(graph: PoseGraph, i: int, j: int) -> ParamVector:
    return ParamVector.from_array(_pair_params(graph.rotations[i], graph.rotations[j],
                                               _gbr_vec(graph.gbrs[i]), _gbr_vec(graph.gbrs[j])))


__all__ = [
    "Edge", "PoseGraph", "GraphDisconnectedError", "integrate_multiview", "spanning_tree_init",
    "multiview_objective", "multiview_residuals", "loop_rotation_error", "params_for_edge",
]
