"""Simplicial meshes for tactoid domains: construction, refinement, flips, quality."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

_FACTORIAL = {2: 2.0, 3: 6.0}

# Outward-oriented faces of a positively oriented simplex, by local index.
_TRI_FACES = ((0, 1), (1, 2), (2, 0))
_TET_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))


class MeshError(ValueError):
    """Invalid mesh input or a failed mesh operation."""


class DegenerateElementError(MeshError):
    """An element or boundary facet has nonpositive measure."""


@dataclass(frozen=True)
class RefinementMap:
    """Coarse-to-fine bookkeeping produced by :func:`refine_uniform`.

    Fine vertex k is a copy of coarse vertex k for k < n_coarse_vertices,
    otherwise the midpoint of the coarse edge midpoint_parents[k - n_coarse_vertices].
    """

    n_coarse_vertices: int
    parent_children: np.ndarray  # (N_coarse, 4) triangles / (N_coarse, 8) tets
    midpoint_parents: np.ndarray  # (n_midpoints, 2) coarse endpoint indices
    edge_midpoint: dict


@dataclass(frozen=True)
class MeshQualityReport:
    min_angle_deg: float  # interior angle (2D) or dihedral angle (3D)
    measure_ratio: float  # max/min element measure
    boundary_vertex_count: int


@dataclass(frozen=True)
class BoundaryFrame:
    """Unit tangents/normals on the boundary, facet-wise and vertex-wise.

    vertex_ids indexes into the mesh vertex array; vertex_index maps a mesh
    vertex id to its row here (-1 for interior vertices).
    """

    vertex_ids: np.ndarray
    vertex_index: np.ndarray
    vertex_normals: np.ndarray
    facet_normals: np.ndarray
    vertex_tangents: np.ndarray | None = None  # 2D only
    facet_tangents: np.ndarray | None = None  # 2D only


@dataclass
class SimplicialMesh:
    """Simplicial complex with positively oriented elements and a closed boundary.

    boundary_facets holds outward-oriented vertex tuples; boundary_elements the
    adjacent element index of each facet.
    """

    dimension: int
    vertices: np.ndarray
    elements: np.ndarray
    boundary_facets: np.ndarray
    boundary_elements: np.ndarray

    @classmethod
    def from_arrays(cls, dimension: int, vertices, elements, *, validate: bool = True) -> "SimplicialMesh":
        if dimension not in (2, 3):
            raise MeshError(f"dimension must be 2 or 3, got {dimension}")
        vertices = np.ascontiguousarray(vertices, dtype=float)
        elements = np.ascontiguousarray(elements, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != dimension:
            raise MeshError(f"vertices must be (p, {dimension}), got {vertices.shape}")
        if elements.ndim != 2 or elements.shape[1] != dimension + 1:
            raise MeshError(f"elements must be (N, {dimension + 1}), got {elements.shape}")
        facets, adjacent = _extract_boundary(dimension, elements, len(vertices))
        mesh = cls(dimension, vertices, elements, facets, adjacent)
        if validate:
            mesh.validate()
        return mesh

    def validate(self) -> None:
        measures = self.signed_measures()
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinates")
        if np.any(measures <= 0.0):
            bad = int(np.argmin(measures))
            raise DegenerateElementError(
                f"element {bad} has nonpositive measure {measures[bad]:.3e}"
            )
        keys = [tuple(sorted(e)) for e in self.elements]
        if len(set(keys)) != len(keys):
            raise MeshError("duplicate elements")
        if len(set(self.elements.ravel().tolist())) != len(self.vertices):
            raise MeshError("unreferenced or out-of-range vertices")
        _check_boundary_manifold(self.dimension, self.boundary_facets)

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def element_count(self) -> int:
        return len(self.elements)

    def with_vertices(self, vertices: np.ndarray) -> "SimplicialMesh":
        """Same connectivity with replaced vertex positions (no validation)."""
        return replace(self, vertices=np.ascontiguousarray(vertices, dtype=float))

    def signed_measures(self) -> np.ndarray:
        return element_measures(self.vertices, self.elements, self.dimension)

    def edges(self) -> np.ndarray:
        """Unique sorted vertex pairs over all elements, lexicographically ordered."""
        d = self.dimension
        pairs = []
        for i in range(d + 1):
            for j in range(i + 1, d + 1):
                pairs.append(self.elements[:, (i, j)])
        edges = np.sort(np.concatenate(pairs, axis=0), axis=1)
        return np.unique(edges, axis=0)

    def boundary_vertex_ids(self) -> np.ndarray:
        return np.unique(self.boundary_facets.ravel())

    def vertex_adjacency(self) -> list[set]:
        adj: list[set] = [set() for _ in range(self.vertex_count)]
        d = self.dimension
        for elem in self.elements:
            for i in range(d + 1):
                for j in range(i + 1, d + 1):
                    adj[elem[i]].add(int(elem[j]))
                    adj[elem[j]].add(int(elem[i]))
        return adj


def element_measures(vertices: np.ndarray, elements: np.ndarray, dimension: int) -> np.ndarray:
    """Signed measures (areas/volumes) of the elements."""
    coords = vertices[elements]
    rel = coords[:, 1:, :] - coords[:, :1, :]
    if dimension == 2:
        det = rel[:, 0, 0] * rel[:, 1, 1] - rel[:, 0, 1] * rel[:, 1, 0]
    else:
        det = np.linalg.det(rel)
    return det / _FACTORIAL[dimension]


def total_measure(mesh: SimplicialMesh) -> float:
    """Sum of signed element measures (area in 2D, volume in 3D)."""
    return float(mesh.signed_measures().sum())


def _extract_boundary(dimension, elements, n_vertices):
    if np.any(elements < 0) or np.any(elements >= n_vertices):
        raise MeshError("element vertex index out of range")
    face_patterns = _TRI_FACES if dimension == 2 else _TET_FACES
    seen: dict[tuple, list] = {}
    for ei, elem in enumerate(elements):
        for pat in face_patterns:
            oriented = tuple(int(elem[i]) for i in pat)
            key = tuple(sorted(oriented))
            seen.setdefault(key, []).append((ei, oriented))
    facets = []
    adjacent = []
    for key, occurrences in seen.items():
        if len(occurrences) > 2:
            raise MeshError(f"non-manifold facet {key}")
        if len(occurrences) == 1:
            ei, oriented = occurrences[0]
            facets.append(oriented)
            adjacent.append(ei)
    order = np.lexsort(np.array(facets, dtype=np.int64).T[::-1])
    facets_arr = np.array(facets, dtype=np.int64)[order]
    adjacent_arr = np.array(adjacent, dtype=np.int64)[order]
    return facets_arr, adjacent_arr


def _check_boundary_manifold(dimension, facets):
    if dimension == 2:
        counts: dict[int, int] = {}
        for a, b in facets:
            counts[int(a)] = counts.get(int(a), 0) + 1
            counts[int(b)] = counts.get(int(b), 0) + 1
        if any(c != 2 for c in counts.values()):
            raise MeshError("boundary is not a closed curve")
    else:
        counts = {}
        for tri in facets:
            for i in range(3):
                key = tuple(sorted((int(tri[i]), int(tri[(i + 1) % 3]))))
                counts[key] = counts.get(key, 0) + 1
        if any(c != 2 for c in counts.values()):
            raise MeshError("boundary is not a closed surface")


def boundary_loops(mesh: SimplicialMesh) -> list[np.ndarray]:
    """Boundary vertex cycles of a 2D mesh, each following the outward (CCW) orientation."""
    if mesh.dimension != 2:
        raise MeshError("boundary loops are defined for 2D meshes")
    succ = {int(a): int(b) for a, b in mesh.boundary_facets}
    loops = []
    remaining = set(succ)
    while remaining:
        start = min(remaining)
        loop = [start]
        remaining.discard(start)
        v = succ[start]
        while v != start:
            loop.append(v)
            remaining.discard(v)
            v = succ[v]
        loops.append(np.array(loop, dtype=np.int64))
    return loops


# ---------------------------------------------------------------------------
# constructors


def build_disc(boundary_vertex_count: int, target_area: float) -> SimplicialMesh:
    """Fan triangulation of a regular polygon, rescaled to exactly target_area."""
    n = int(boundary_vertex_count)
    if n < 3:
        raise MeshError("boundary_vertex_count must be at least 3")
    if target_area <= 0:
        raise MeshError("target_area must be positive")
    theta = 2.0 * np.pi * np.arange(n) / n
    ring = np.column_stack([np.cos(theta), np.sin(theta)])
    vertices = np.vstack([ring, [[0.0, 0.0]]])
    center = n
    elements = np.array([[i, (i + 1) % n, center] for i in range(n)], dtype=np.int64)
    mesh = SimplicialMesh.from_arrays(2, vertices, elements)
    return _rescale(mesh, target_area)


def build_coarse_disc(target_area: float) -> SimplicialMesh:
    """16-vertex dodecagon disc (12 boundary, small interior ring, center).

    This is the standard starting grid for 2D runs; refining it gives the
    vertex sequence 16, 49, 169, 625, 2401, ...
    """
    if target_area <= 0:
        raise MeshError("target_area must be positive")
    nb = 12
    theta = 2.0 * np.pi * np.arange(nb) / nb
    boundary = np.column_stack([np.cos(theta), np.sin(theta)])
    ring_r = 0.45
    ring_theta = 2.0 * np.pi * np.arange(3) / 3
    ring = ring_r * np.column_stack([np.cos(ring_theta), np.sin(ring_theta)])
    vertices = np.vstack([boundary, ring, [[0.0, 0.0]]])
    r0, r1, r2, center = 12, 13, 14, 15
    elements = [(center, r0, r1), (center, r1, r2), (center, r2, r0)]
    fans = {r0: (10, 11, 0, 1), r1: (2, 3, 4, 5), r2: (6, 7, 8, 9)}
    for rv, arcs in fans.items():
        for j in arcs:
            elements.append((j, (j + 1) % nb, rv))
    elements += [(r0, 2, r1), (r1, 6, r2), (r2, 10, r0)]
    mesh = SimplicialMesh.from_arrays(2, vertices, np.array(elements, dtype=np.int64))
    return _rescale(mesh, target_area)


def build_ball(target_volume: float) -> SimplicialMesh:
    """27-vertex tetrahedral ball: a 3x3x3 lattice mapped onto the unit ball.

    Each of the 8 lattice cubes is split into 6 tetrahedra sharing its main
    diagonal; lattice points are pushed onto concentric sphere shells.
    Refinement reproduces the vertex sequence 27, 125, 729, 4913, ...
    """
    if target_volume <= 0:
        raise MeshError("target_volume must be positive")
    coords = np.array([-1.0, 0.0, 1.0])
    points = np.array([[x, y, z] for x in coords for y in coords for z in coords])

    def idx(i, j, k):
        return 9 * i + 3 * j + k

    # cube -> sphere: scale each point so the lattice surface lands on |x| = 1
    mapped = points.copy()
    norms = np.linalg.norm(points, axis=1)
    inf_norms = np.max(np.abs(points), axis=1)
    nz = norms > 0
    mapped[nz] = points[nz] * (inf_norms[nz] / norms[nz])[:, None]

    elements = []
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    for ci in range(2):
        for cj in range(2):
            for ck in range(2):
                corner = np.array([ci, cj, ck])
                for perm in perms:
                    walk = [corner.copy()]
                    for axis in perm:
                        nxt = walk[-1].copy()
                        nxt[axis] += 1
                        walk.append(nxt)
                    elements.append([idx(*w) for w in walk])
    elements = _fix_orientation(mapped, np.array(elements, dtype=np.int64), 3)
    mesh = SimplicialMesh.from_arrays(3, mapped, elements)
    return _rescale(mesh, target_volume)


def _rescale(mesh: SimplicialMesh, target: float) -> SimplicialMesh:
    current = total_measure(mesh)
    factor = (target / current) ** (1.0 / mesh.dimension)
    return mesh.with_vertices(mesh.vertices * factor)


def _fix_orientation(vertices, elements, dimension):
    measures = element_measures(vertices, elements, dimension)
    flipped = elements.copy()
    neg = measures < 0
    flipped[neg, -1], flipped[neg, -2] = elements[neg, -2], elements[neg, -1]
    return flipped


# ---------------------------------------------------------------------------
# refinement


def refine_uniform(mesh: SimplicialMesh) -> tuple[SimplicialMesh, RefinementMap]:
    """Split each triangle into 4 (tetrahedron into 8) via edge midpoints."""
    edges = mesh.edges()
    n_coarse = mesh.vertex_count
    edge_midpoint = {
        (int(a), int(b)): n_coarse + k for k, (a, b) in enumerate(edges)
    }
    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    fine_vertices = np.vstack([mesh.vertices, midpoints])

    def mid(i, j):
        return edge_midpoint[(i, j) if i < j else (j, i)]

    children = []
    parent_children = []
    if mesh.dimension == 2:
        for v0, v1, v2 in mesh.elements:
            v0, v1, v2 = int(v0), int(v1), int(v2)
            m01, m12, m02 = mid(v0, v1), mid(v1, v2), mid(v0, v2)
            block = [(v0, m01, m02), (m01, v1, m12), (m02, m12, v2), (m01, m12, m02)]
            parent_children.append(range(len(children), len(children) + 4))
            children.extend(block)
    else:
        for v0, v1, v2, v3 in mesh.elements:
            v0, v1, v2, v3 = int(v0), int(v1), int(v2), int(v3)
            m01, m02, m03 = mid(v0, v1), mid(v0, v2), mid(v0, v3)
            m12, m13, m23 = mid(v1, v2), mid(v1, v3), mid(v2, v3)
            block = [
                (v0, m01, m02, m03),
                (m01, v1, m12, m13),
                (m02, m12, v2, m23),
                (m03, m13, m23, v3),
            ]
            # interior octahedron: cut along its shortest diagonal
            diagonals = (
                ((m01, m23), (m02, m12, m13, m03)),
                ((m02, m13), (m01, m12, m23, m03)),
                ((m03, m12), (m01, m13, m23, m02)),
            )
            lengths = [
                np.linalg.norm(fine_vertices[a] - fine_vertices[b])
                for (a, b), _ in diagonals
            ]
            (a, b), cycle = diagonals[int(np.argmin(lengths))]
            for t in range(4):
                block.append((a, b, cycle[t], cycle[(t + 1) % 4]))
            parent_children.append(range(len(children), len(children) + 8))
            children.extend(block)

    fine_elements = _fix_orientation(
        fine_vertices, np.array(children, dtype=np.int64), mesh.dimension
    )
    fine = SimplicialMesh.from_arrays(mesh.dimension, fine_vertices, fine_elements)
    rmap = RefinementMap(
        n_coarse_vertices=n_coarse,
        parent_children=np.array([list(r) for r in parent_children], dtype=np.int64),
        midpoint_parents=edges.copy(),
        edge_midpoint=edge_midpoint,
    )
    return fine, rmap


# ---------------------------------------------------------------------------
# equiangulation (Lawson flips)


def equiangulate(mesh: SimplicialMesh, *, angle_tol: float = 1e-10) -> SimplicialMesh:
    """Flip interior edges until no pair of opposite angles sums past pi.

    Vertex positions are untouched, so nodal data stays valid by index.
    In 3D this is a no-op: tetrahedral quality is controlled by the
    shortest-diagonal refinement rule instead.
    """
    if mesh.dimension == 3:
        return mesh
    x = mesh.vertices
    triangles = [tuple(int(v) for v in t) for t in mesh.elements]
    edge_tris: dict[tuple, list] = {}
    for ti, tri in enumerate(triangles):
        for i in range(3):
            key = _ekey(tri[i], tri[(i + 1) % 3])
            edge_tris.setdefault(key, []).append(ti)

    queue = deque(k for k, ts in edge_tris.items() if len(ts) == 2)
    in_queue = set(queue)
    max_flips = 10 * len(edge_tris)
    flips = 0
    while queue:
        key = queue.popleft()
        in_queue.discard(key)
        tris = edge_tris.get(key)
        if tris is None or len(tris) != 2:
            continue
        i, j = key
        t1, t2 = tris
        k = _opposite(triangles[t1], i, j)
        l = _opposite(triangles[t2], i, j)
        ang = _angle_at(x, k, i, j) + _angle_at(x, l, i, j)
        if ang <= np.pi + angle_tol:
            continue
        new1, new2 = _flip_pair(triangles[t1], i, j, k, l)
        if _tri_area(x, new1) <= 0.0 or _tri_area(x, new2) <= 0.0:
            continue
        flips += 1
        if flips > max_flips:
            raise MeshError("equiangulation did not terminate")
        triangles[t1], triangles[t2] = new1, new2
        del edge_tris[key]
        edge_tris[_ekey(k, l)] = [t1, t2]
        _replace_tri(edge_tris[_ekey(j, k)], t1, t2)
        _replace_tri(edge_tris[_ekey(i, l)], t2, t1)
        for a, b in ((i, k), (k, j), (j, l), (l, i)):
            nk = _ekey(a, b)
            if len(edge_tris.get(nk, ())) == 2 and nk not in in_queue:
                queue.append(nk)
                in_queue.add(nk)

    return SimplicialMesh.from_arrays(2, x, np.array(triangles, dtype=np.int64))


def _ekey(a, b):
    return (a, b) if a < b else (b, a)


def _opposite(tri, i, j):
    for v in tri:
        if v != i and v != j:
            return v
    raise MeshError("degenerate triangle in flip")


def _angle_at(x, apex, a, b):
    u = x[a] - x[apex]
    v = x[b] - x[apex]
    cross = u[0] * v[1] - u[1] * v[0]
    return float(np.arctan2(abs(cross), float(np.dot(u, v))))


def _flip_pair(tri1, i, j, k, l):
    # tri1 is (i, j, k) up to rotation; keep CCW order in the children
    idx = tri1.index(i)
    if tri1[(idx + 1) % 3] == j:
        return (i, l, k), (l, j, k)
    return (i, k, l), (k, j, l)


def _tri_area(x, tri):
    a, b, c = tri
    u = x[b] - x[a]
    v = x[c] - x[a]
    return 0.5 * (u[0] * v[1] - u[1] * v[0])


def _replace_tri(lst, old, new):
    for n, t in enumerate(lst):
        if t == old:
            lst[n] = new
            return
    raise MeshError("inconsistent edge bookkeeping during flip")


def delaunay_violations(mesh: SimplicialMesh, angle_tol: float = 1e-10) -> int:
    """Number of interior edges whose opposite angles sum past pi (scan check)."""
    x = mesh.vertices
    edge_tris: dict[tuple, list] = {}
    triangles = [tuple(int(v) for v in t) for t in mesh.elements]
    for ti, tri in enumerate(triangles):
        for i in range(3):
            edge_tris.setdefault(_ekey(tri[i], tri[(i + 1) % 3]), []).append(ti)
    bad = 0
    for (i, j), tris in edge_tris.items():
        if len(tris) != 2:
            continue
        k = _opposite(triangles[tris[0]], i, j)
        l = _opposite(triangles[tris[1]], i, j)
        if _angle_at(x, k, i, j) + _angle_at(x, l, i, j) > np.pi + angle_tol:
            bad += 1
    return bad


# ---------------------------------------------------------------------------
# boundary frames


def boundary_frames(mesh: SimplicialMesh) -> BoundaryFrame:
    """Facet and vertex tangents/normals on the boundary.

    2D vertex tangents average the two incident edge tangents; 3D vertex
    normals are area-weighted averages of incident facet normals.
    """
    if mesh.dimension == 2:
        return _frames_2d(mesh)
    return _frames_3d(mesh)


def _frames_2d(mesh):
    x = mesh.vertices
    facets = mesh.boundary_facets
    vec = x[facets[:, 1]] - x[facets[:, 0]]
    lengths = np.linalg.norm(vec, axis=1)
    if np.any(lengths < 1e-300):
        raise DegenerateElementError("zero-length boundary edge")
    facet_t = vec / lengths[:, None]
    facet_n = np.column_stack([facet_t[:, 1], -facet_t[:, 0]])

    vertex_ids = mesh.boundary_vertex_ids()
    vertex_index = np.full(mesh.vertex_count, -1, dtype=np.int64)
    vertex_index[vertex_ids] = np.arange(len(vertex_ids))
    sums = np.zeros((len(vertex_ids), 2))
    np.add.at(sums, vertex_index[facets[:, 0]], facet_t)
    np.add.at(sums, vertex_index[facets[:, 1]], facet_t)
    norms = np.linalg.norm(sums, axis=1)
    if np.any(norms < 1e-14):
        raise DegenerateElementError("degenerate boundary vertex tangent")
    vt = sums / norms[:, None]
    vn = np.column_stack([vt[:, 1], -vt[:, 0]])
    return BoundaryFrame(vertex_ids, vertex_index, vn, facet_n, vt, facet_t)


def _frames_3d(mesh):
    x = mesh.vertices
    facets = mesh.boundary_facets
    cross = np.cross(x[facets[:, 1]] - x[facets[:, 0]], x[facets[:, 2]] - x[facets[:, 0]])
    areas2 = np.linalg.norm(cross, axis=1)
    if np.any(areas2 < 1e-300):
        raise DegenerateElementError("zero-area boundary facet")
    facet_n = cross / areas2[:, None]

    # outward check against the adjacent element centroid
    elem_centroid = x[mesh.elements[mesh.boundary_elements]].mean(axis=1)
    facet_centroid = x[facets].mean(axis=1)
    if np.any(np.einsum("ij,ij->i", facet_n, facet_centroid - elem_centroid) <= 0.0):
        raise MeshError("boundary facet normal points inward")

    vertex_ids = mesh.boundary_vertex_ids()
    vertex_index = np.full(mesh.vertex_count, -1, dtype=np.int64)
    vertex_index[vertex_ids] = np.arange(len(vertex_ids))
    sums = np.zeros((len(vertex_ids), 3))
    for corner in range(3):
        np.add.at(sums, vertex_index[facets[:, corner]], cross)
    norms = np.linalg.norm(sums, axis=1)
    if np.any(norms < 1e-14):
        raise DegenerateElementError("degenerate boundary vertex normal")
    vn = sums / norms[:, None]
    return BoundaryFrame(vertex_ids, vertex_index, vn, facet_n)


def mesh_quality(mesh: SimplicialMesh) -> MeshQualityReport:
    measures = mesh.signed_measures()
    ratio = float(measures.max() / measures.min())
    nb = len(mesh.boundary_vertex_ids())
    if mesh.dimension == 2:
        angle = _min_interior_angle(mesh)
    else:
        angle = _min_dihedral_angle(mesh)
    return MeshQualityReport(np.degrees(angle), ratio, nb)


def _min_interior_angle(mesh):
    worst = np.inf
    x = mesh.vertices
    for tri in mesh.elements:
        for i in range(3):
            worst = min(worst, _angle_at(x, int(tri[i]), int(tri[(i + 1) % 3]), int(tri[(i + 2) % 3])))
    return worst


def _min_dihedral_angle(mesh):
    worst = np.inf
    x = mesh.vertices
    for tet in mesh.elements:
        p = x[tet]
        normals = []
        for face in _TET_FACES:
            n = np.cross(p[face[1]] - p[face[0]], p[face[2]] - p[face[0]])
            normals.append(n / np.linalg.norm(n))
        # dihedral along the edge shared by faces (a, b): pi - angle(n_a, n_b)
        for a in range(4):
            for b in range(a + 1, 4):
                c = float(np.clip(np.dot(normals[a], normals[b]), -1.0, 1.0))
                worst = min(worst, np.pi - np.arccos(c))
    return worst
