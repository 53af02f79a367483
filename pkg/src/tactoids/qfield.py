"""Q-tensor values and nodal fields: parameterizations, eigenanalysis, prolongation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import RefinementMap

PLANAR = "planar"
FULL = "full"
N_COMPONENTS = {PLANAR: 2, FULL: 5}
COMPONENT_NAMES = {PLANAR: ("q_xx", "q_xy"), FULL: ("q_xx", "q_xy", "q_xz", "q_yy", "q_yz")}

# In planar mode the embedded tensor has a fixed in-plane trace of 1/3 and a
# -1/3 z-z entry, so the deviatoric radius of a state with order S along a
# planar director is 2S/3 - 1/6. States with S <= 1/4 have no such
# representation: the leading eigenvalue floor of this parameterization is 1/6.
PLANAR_MIN_ORDER = 0.25


class QFieldError(ValueError):
    """Invalid Q-tensor input."""


@dataclass(frozen=True)
class QTensor:
    mode: str
    components: np.ndarray

    def embed(self) -> np.ndarray:
        return embed_components(self.components, self.mode)


@dataclass(frozen=True)
class Director:
    order: float
    axis: np.ndarray
    degenerate: bool = False


@dataclass
class NodalQField:
    """Per-vertex Q components, index-aligned with a mesh vertex array."""

    mode: str
    values: np.ndarray

    @classmethod
    def uniform(cls, q: QTensor, n_vertices: int) -> "NodalQField":
        return cls(q.mode, np.tile(q.components, (n_vertices, 1)))

    @property
    def n_components(self) -> int:
        return N_COMPONENTS[self.mode]

    def copy(self) -> "NodalQField":
        return NodalQField(self.mode, self.values.copy())


def _check_mode(mode: str) -> None:
    if mode not in N_COMPONENTS:
        raise QFieldError(f"unknown mode {mode!r}")


def embed_components(values: np.ndarray, mode: str) -> np.ndarray:
    """Symmetric traceless 3x3 tensor(s) from stored components."""
    _check_mode(mode)
    values = np.asarray(values, dtype=float)
    out = np.zeros(values.shape[:-1] + (3, 3))
    if mode == PLANAR:
        a, b = values[..., 0], values[..., 1]
        out[..., 0, 0] = a
        out[..., 0, 1] = out[..., 1, 0] = b
        out[..., 1, 1] = 1.0 / 3.0 - a
        out[..., 2, 2] = -1.0 / 3.0
    else:
        a, b, c, d, e = (values[..., i] for i in range(5))
        out[..., 0, 0] = a
        out[..., 0, 1] = out[..., 1, 0] = b
        out[..., 0, 2] = out[..., 2, 0] = c
        out[..., 1, 1] = d
        out[..., 1, 2] = out[..., 2, 1] = e
        out[..., 2, 2] = -a - d
    return out


def from_director(order: float, axis, mode: str) -> QTensor:
    """Q-tensor with the given scalar order and director axis.

    Full mode stores the uniaxial tensor S (n x n - I/3) exactly. Planar mode
    stores the two components whose embedding has leading eigenpair
    (2S/3, n); S = 0 maps to zero components.
    """
    _check_mode(mode)
    n = np.asarray(axis, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-10:
        raise QFieldError("director axis must be a unit vector")
    if mode == FULL:
        if n.shape == (2,):
            n = np.array([n[0], n[1], 0.0])
        q = order * (np.outer(n, n) - np.eye(3) / 3.0)
        comps = np.array([q[0, 0], q[0, 1], q[0, 2], q[1, 1], q[1, 2]])
        return QTensor(FULL, comps)
    if n.shape == (3,):
        if abs(n[2]) > 1e-12:
            raise QFieldError("planar mode requires an in-plane director")
        n = n[:2]
    if order == 0.0:
        return QTensor(PLANAR, np.zeros(2))
    if order <= PLANAR_MIN_ORDER:
        raise QFieldError(
            f"planar mode cannot represent order {order} <= {PLANAR_MIN_ORDER}"
        )
    radius = 2.0 * order / 3.0 - 1.0 / 6.0
    cos2t = n[0] * n[0] - n[1] * n[1]
    sin2t = 2.0 * n[0] * n[1]
    return QTensor(PLANAR, np.array([1.0 / 6.0 + radius * cos2t, radius * sin2t]))


def eigen_decompose(q: QTensor, *, degeneracy_gap: float = 1e-12) -> Director:
    """Scalar order and director of a Q-tensor via its leading eigenpair."""
    tensor = q.embed()
    if not np.all(np.isfinite(tensor)):
        raise QFieldError("non-finite Q components")
    w, v = np.linalg.eigh(tensor)
    order = 1.5 * w[2]
    axis = _fix_sign(v[:, 2])
    return Director(float(order), axis, bool(w[2] - w[1] < degeneracy_gap))


def field_orders(field: NodalQField, *, degeneracy_gap: float = 1e-12):
    """Vectorized eigenanalysis: (orders, directors, degenerate flags) per vertex."""
    tensors = embed_components(field.values, field.mode)
    w, v = np.linalg.eigh(tensors)
    orders = 1.5 * w[:, 2]
    axes = v[:, :, 2]
    degenerate = (w[:, 2] - w[:, 1]) < degeneracy_gap
    mask = np.abs(axes) > 1e-12
    first = np.argmax(mask, axis=1)
    signs = np.sign(axes[np.arange(len(axes)), first])
    signs[signs == 0] = 1.0
    return orders, axes * signs[:, None], degenerate


def _fix_sign(axis: np.ndarray) -> np.ndarray:
    for comp in axis:
        if abs(comp) > 1e-12:
            return axis if comp > 0 else -axis
    return axis


def surface_preferred(frame_entry, s0: float, anchoring_mode: str, mode: str) -> QTensor:
    """Preferred boundary Q-tensor built from a unit tangent or normal."""
    if frame_entry is None:
        raise QFieldError("missing boundary frame entry")
    f = np.asarray(frame_entry, dtype=float)
    if anchoring_mode not in ("tangential", "normal"):
        raise QFieldError(f"unknown anchoring mode {anchoring_mode!r}")
    return from_director(s0, f, mode)


def prolong(field: NodalQField, rmap: RefinementMap) -> NodalQField:
    """Linear interpolation onto the refined mesh: midpoints average their parents."""
    if len(field.values) != rmap.n_coarse_vertices:
        raise QFieldError(
            f"field has {len(field.values)} nodes, refinement map expects "
            f"{rmap.n_coarse_vertices}"
        )
    parents = rmap.midpoint_parents
    mids = 0.5 * (field.values[parents[:, 0]] + field.values[parents[:, 1]])
    return NodalQField(field.mode, np.vstack([field.values, mids]))
