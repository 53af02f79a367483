"""Physical measurements on converged states: aspect ratio, defects, alignment."""

from __future__ import annotations

import numpy as np

from .mesh import SimplicialMesh, boundary_frames
from .qfield import NodalQField, field_orders


class MeasureError(ValueError):
    pass


def aspect_ratio(mesh: SimplicialMesh) -> float:
    """Ratio of the largest to smallest equivalent-ellipse semi-axis.

    Uses the second-moment tensor of the enclosed region about its centroid,
    so the result is invariant under rigid motions and uniform scaling.
    """
    measures = mesh.signed_measures()
    volume = float(measures.sum())
    if volume <= 0:
        raise MeasureError("degenerate region")
    d = mesh.dimension
    coords = mesh.vertices[mesh.elements]  # (N, d+1, d)
    vertex_sum = coords.sum(axis=1)
    centroid = (measures[:, None] * vertex_sum / (d + 1)).sum(axis=0) / volume
    # exact simplex second moments: int_T x x^T = |T|/((d+1)(d+2)) (sum_v p_v p_v^T + S S^T)
    outer_self = np.einsum("nvd,nve->nde", coords, coords)
    outer_sum = np.einsum("nd,ne->nde", vertex_sum, vertex_sum)
    second = np.einsum(
        "n,nde->de", measures / ((d + 1) * (d + 2)), outer_self + outer_sum
    )
    cov = second / volume - np.outer(centroid, centroid)
    eig = np.linalg.eigvalsh(cov)
    if eig[0] <= 0:
        raise MeasureError("degenerate second-moment tensor")
    return float(np.sqrt(eig[-1] / eig[0]))


def detect_defects(
    mesh: SimplicialMesh,
    field: NodalQField,
    s0: float,
    threshold: float = 0.5,
) -> list[np.ndarray]:
    """Defect sites: clustered strict local minima of S below threshold*s0.

    Returns the centroid position of each adjacency-connected cluster.
    """
    orders, _, _ = field_orders(field)
    adjacency = mesh.vertex_adjacency()
    cut = threshold * s0
    candidates = [
        v
        for v in range(mesh.vertex_count)
        if orders[v] < cut and all(orders[v] < orders[u] for u in adjacency[v])
    ]
    # union adjacent candidates into sites
    candidate_set = set(candidates)
    sites = []
    seen = set()
    for v in candidates:
        if v in seen:
            continue
        stack = [v]
        cluster = []
        while stack:
            u = stack.pop()
            if u in seen:
                continue
            seen.add(u)
            cluster.append(u)
            stack.extend(w for w in adjacency[u] if w in candidate_set and w not in seen)
        sites.append(mesh.vertices[cluster].mean(axis=0))
    return sites


def boundary_alignment(mesh: SimplicialMesh, field: NodalQField) -> float:
    """Mean boundary alignment in [0, 1].

    2D: mean |n . t| over boundary vertices; 3D: mean (1 - |n . nu|), so both
    approach 1 for perfect tangential anchoring.
    """
    frames = boundary_frames(mesh)
    _, axes, _ = field_orders(field)
    ids = frames.vertex_ids
    if mesh.dimension == 2:
        n2 = axes[ids][:, :2]
        dots = np.abs(np.einsum("ij,ij->i", n2, frames.vertex_tangents))
    else:
        dots = 1.0 - np.abs(np.einsum("ij,ij->i", axes[ids], frames.vertex_normals))
    return float(dots.mean())
