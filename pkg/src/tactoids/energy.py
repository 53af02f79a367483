"""Nondimensional Landau-de Gennes energy, analytic gradients, and the measure constraint.

The energy of a nodal Q field on a simplicial mesh is

    F = sum_elems  [vertex-lumped Landau bulk] + measure * 0.5*|grad Q|^2
      + tau * boundary measure
      + sign * (tau*omega/2) * [vertex-lumped tr((Q - Q_s)^2) over boundary facets]

with Q_s built from the boundary frame (tangent in 2D tangential anchoring,
outward normal in 3D normal anchoring; sign +1 / -1 respectively). Gradients
with respect to vertex positions include every geometric dependency: element
measures, P1 gradient operators, facet measures, and the frames behind Q_s.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .mesh import (
    DegenerateElementError,
    SimplicialMesh,
    boundary_loops,
    element_measures,
)
from .qfield import FULL, N_COMPONENTS, PLANAR, NodalQField, QFieldError

_FACTORIAL = {2: 2.0, 3: 6.0}

# 0.5*|grad Qhat|^2 = sum_{ab} W_ab grad(q_a).grad(q_b) over stored components
_W_PLANAR = np.eye(2)
_W_FULL = np.eye(5)
_W_FULL[0, 3] = _W_FULL[3, 0] = 0.5


class EnergyError(ValueError):
    """Inconsistent energy inputs."""


@dataclass(frozen=True)
class MaterialParams:
    """Nondimensional material constants and problem setup."""

    a: float
    b: float
    c: float
    tau: float
    omega: float
    s0: float
    target_measure: float
    anchoring: str  # "tangential" (sign +1) or "normal" (sign -1)
    dimension: int

    def __post_init__(self):
        if self.c <= 0:
            raise EnergyError("quartic Landau coefficient must be positive")
        if self.tau <= 0:
            raise EnergyError("surface tension must be positive")
        if self.omega < 0:
            raise EnergyError("anchoring ratio must be nonnegative")
        if self.anchoring not in ("tangential", "normal"):
            raise EnergyError(f"unknown anchoring mode {self.anchoring!r}")
        if self.dimension not in (2, 3):
            raise EnergyError("dimension must be 2 or 3")
        if self.target_measure <= 0:
            raise EnergyError("target measure must be positive")

    @property
    def anchoring_sign(self) -> float:
        return 1.0 if self.anchoring == "tangential" else -1.0


@dataclass(frozen=True)
class DimensionalParams:
    """Dimensional inputs (SI): Landau a,b,c; surface tension; anchoring; elasticity."""

    a: float
    b: float
    c: float
    sigma: float
    anchoring_w: float
    l1: float
    xi: float

    @classmethod
    def from_temperature(cls, a0: float, temperature: float, t0: float, **kwargs):
        return cls(a=a0 * (temperature - t0), **kwargs)


@dataclass(frozen=True)
class EnergyBreakdown:
    bulk: float
    elastic: float
    surface: float
    anchoring: float

    @property
    def total(self) -> float:
        return self.bulk + self.elastic + self.surface + self.anchoring


@dataclass
class GradientVector:
    x: np.ndarray  # (p, d)
    q: np.ndarray  # (p, m)


def critical_order(a: float, b: float, c: float) -> float:
    """Preferred uniaxial order: stationary point of the bulk Landau polynomial."""
    disc = b * b - 24.0 * a * c
    if disc < 0:
        raise EnergyError("negative discriminant: no real critical order")
    if c <= 0:
        raise EnergyError("quartic Landau coefficient must be positive")
    return (-b + np.sqrt(disc)) / (4.0 * c)


def nondimensionalize(
    p: DimensionalParams,
    dimension: int,
    *,
    target_measure: float = 1.0,
    anchoring: str | None = None,
) -> MaterialParams:
    """Scale dimensional constants by the length scale xi and elastic constant L1.

    In 3D the Landau coefficients carry xi^3/L1, in 2D (energy per unit
    length) xi^2/L1; the surface terms use sigma*xi/L1 and W/sigma in both.
    """
    if p.l1 <= 0 or p.xi <= 0:
        raise EnergyError("elastic constant and length scale must be positive")
    power = 3 if dimension == 3 else 2
    scale = p.xi**power / p.l1
    if anchoring is None:
        anchoring = "tangential" if dimension == 2 else "normal"
    a, b, c = p.a * scale, p.b * scale, p.c * scale
    return MaterialParams(
        a=a,
        b=b,
        c=c,
        tau=p.sigma * p.xi / p.l1,
        omega=p.anchoring_w / p.sigma,
        s0=critical_order(a, b, c),
        target_measure=target_measure,
        anchoring=anchoring,
        dimension=dimension,
    )


# ---------------------------------------------------------------------------
# bulk Landau polynomial on stored components


def _invariants(values: np.ndarray, mode: str):
    """tr(Q^2) and tr(Q^3) of the embedded tensors, with component derivatives."""
    if mode == PLANAR:
        a, b = values[..., 0], values[..., 1]
        t2 = 2.0 * a * a - (2.0 / 3.0) * a + 2.0 * b * b + 2.0 / 9.0
        t3 = a * a - a / 3.0 + b * b
        dt2 = np.stack([4.0 * a - 2.0 / 3.0, 4.0 * b], axis=-1)
        dt3 = np.stack([2.0 * a - 1.0 / 3.0, 2.0 * b], axis=-1)
    else:
        a, b, c, d, e = (values[..., i] for i in range(5))
        t2 = 2.0 * (a * a + d * d + a * d + b * b + c * c + e * e)
        det = (
            -a * a * d
            - a * d * d
            - a * e * e
            + b * b * (a + d)
            + 2.0 * b * c * e
            - c * c * d
        )
        t3 = 3.0 * det
        dt2 = 2.0 * np.stack([2 * a + d, 2 * b, 2 * c, 2 * d + a, 2 * e], axis=-1)
        dt3 = 3.0 * np.stack(
            [
                -2 * a * d - d * d - e * e + b * b,
                2 * b * (a + d) + 2 * c * e,
                2 * b * e - 2 * c * d,
                -a * a - 2 * a * d + b * b - c * c,
                -2 * a * e + 2 * b * c,
            ],
            axis=-1,
        )
    return t2, t3, dt2, dt3


def _bulk_density(values: np.ndarray, params: MaterialParams, mode: str):
    t2, t3, dt2, dt3 = _invariants(values, mode)
    rho = params.a * t2 + (2.0 * params.b / 3.0) * t3 + 0.5 * params.c * t2 * t2
    drho = (
        params.a * dt2
        + (2.0 * params.b / 3.0) * dt3
        + params.c * (t2[..., None] * dt2)
    )
    return rho, drho


def bulk_density(q, params: MaterialParams) -> float:
    """Landau polynomial a tr(Q^2) + (2b/3) tr(Q^3) + (c/2) tr(Q^2)^2 at one Q value."""
    rho, _ = _bulk_density(np.asarray(q.components, dtype=float), params, q.mode)
    return float(rho)


# ---------------------------------------------------------------------------
# element geometry


def _element_geometry(mesh: SimplicialMesh):
    d = mesh.dimension
    coords = mesh.vertices[mesh.elements]  # (N, d+1, d)
    n = len(mesh.elements)
    E = np.empty((n, d + 1, d + 1))
    E[:, :, 0] = 1.0
    E[:, :, 1:] = coords
    det = np.linalg.det(E)
    measures = det / _FACTORIAL[d]
    if np.any(measures <= 0.0) or not np.all(np.isfinite(measures)):
        raise DegenerateElementError("element with nonpositive measure")
    G = np.linalg.inv(E)
    grads = G[:, 1:, :]  # (N, d, d+1); grads[:, :, v] = grad(lambda_v)
    return measures, grads


# ---------------------------------------------------------------------------
# preferred surface tensors on frames


def _surface_components(frame: np.ndarray, s0: float, mode: str):
    """Q_s components for an array of unit frame vectors, plus d(s)/d(frame)."""
    if mode == PLANAR:
        fx, fy = frame[:, 0], frame[:, 1]
        radius = 2.0 * s0 / 3.0 - 1.0 / 6.0
        s = np.stack(
            [1.0 / 6.0 + radius * (fx * fx - fy * fy), 2.0 * radius * fx * fy], axis=-1
        )
        ds = np.zeros((len(frame), 2, 2))
        ds[:, 0, 0] = 2.0 * radius * fx
        ds[:, 0, 1] = -2.0 * radius * fy
        ds[:, 1, 0] = 2.0 * radius * fy
        ds[:, 1, 1] = 2.0 * radius * fx
        return s, ds
    dim = frame.shape[1]
    f3 = np.zeros((len(frame), 3))
    f3[:, :dim] = frame
    fx, fy, fz = f3[:, 0], f3[:, 1], f3[:, 2]
    s = s0 * np.stack(
        [fx * fx - 1.0 / 3.0, fx * fy, fx * fz, fy * fy - 1.0 / 3.0, fy * fz], axis=-1
    )
    ds = np.zeros((len(frame), 5, dim))
    ds[:, 0, 0] = 2.0 * fx
    ds[:, 1, 0] = fy
    ds[:, 1, 1] = fx
    ds[:, 3, 1] = 2.0 * fy
    if dim == 3:
        ds[:, 2, 0] = fz
        ds[:, 2, 2] = fx
        ds[:, 4, 1] = fz
        ds[:, 4, 2] = fy
    ds *= s0
    return s, ds


def _mismatch(delta: np.ndarray, mode: str):
    """tr((Q - Q_s)^2) per row and its derivative in stored components."""
    if mode == PLANAR:
        h = 2.0 * np.einsum("ij,ij->i", delta, delta)
        dh = 4.0 * delta
        return h, dh
    a, b, c, d, e = (delta[:, i] for i in range(5))
    h = 2.0 * (a * a + d * d + a * d + b * b + c * c + e * e)
    dh = 2.0 * np.stack([2 * a + d, 2 * b, 2 * c, 2 * d + a, 2 * e], axis=-1)
    return h, dh


# ---------------------------------------------------------------------------
# assembly


def _assemble(mesh: SimplicialMesh, field: NodalQField, params: MaterialParams, want_grad: bool):
    mode = field.mode
    m = N_COMPONENTS[mode]
    if len(field.values) != mesh.vertex_count:
        raise EnergyError("field length does not match mesh vertex count")
    if mode == PLANAR and mesh.dimension != 2:
        raise EnergyError("planar mode requires a 2D mesh")
    if params.anchoring == "tangential" and mesh.dimension != 2:
        raise EnergyError("tangential anchoring is defined on 2D boundaries")

    d = mesh.dimension
    ele = mesh.elements
    q = field.values
    measures, grads = _element_geometry(mesh)
    W = _W_PLANAR if mode == PLANAR else _W_FULL

    grad_x = np.zeros_like(mesh.vertices) if want_grad else None
    grad_q = np.zeros_like(q) if want_grad else None

    # bulk (vertex-lumped)
    rho, drho = _bulk_density(q, params, mode)
    rho_sum = rho[ele].sum(axis=1)
    bulk = float(np.dot(measures, rho_sum) / (d + 1))

    # elastic (P1 gradients are constant per element)
    gradq = np.einsum("ndv,nvm->ndm", grads, q[ele])
    T = np.einsum("ndm,mk,nek->nde", gradq, W, gradq)
    s_el = np.einsum("ndd->n", T)
    elastic = float(np.dot(measures, s_el))

    if want_grad:
        lump = np.zeros(mesh.vertex_count)
        np.add.at(lump, ele.ravel(), np.repeat(measures / (d + 1), d + 1))
        grad_q += lump[:, None] * drho
        contrib = np.einsum("n,ndv->nvd", measures * rho_sum / (d + 1), grads)

        WG = np.einsum("ak,ndk->nda", W, gradq)
        grad_q_el = 2.0 * np.einsum("n,ndv,nda->nva", measures, grads, WG)
        np.add.at(grad_q, ele.ravel(), grad_q_el.reshape(-1, m))

        contrib += np.einsum("n,ndv->nvd", measures * s_el, grads)
        contrib -= 2.0 * np.einsum("n,nde,nev->nvd", measures, T, grads)
        np.add.at(grad_x, ele.ravel(), contrib.reshape(-1, d))

    if d == 2:
        surface, anchoring = _boundary_2d(mesh, q, params, mode, grad_x, grad_q)
    else:
        surface, anchoring = _boundary_3d(mesh, q, params, mode, grad_x, grad_q)

    breakdown = EnergyBreakdown(bulk, elastic, surface, anchoring)
    if want_grad:
        return breakdown, GradientVector(grad_x, grad_q)
    return breakdown, None


_ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])  # tangent -> outward normal in 2D


def _boundary_2d(mesh, q, params, mode, grad_x, grad_q):
    gamma = params.anchoring_sign * 0.5 * params.tau * params.omega
    do_anchor = params.tau * params.omega != 0.0
    surface = 0.0
    anchoring = 0.0
    for loop in boundary_loops(mesh):
        P = mesh.vertices[loop]
        d_out = np.roll(P, -1, axis=0) - P
        l_out = np.linalg.norm(d_out, axis=1)
        if np.any(l_out < 1e-300):
            raise DegenerateElementError("zero-length boundary edge")
        t_out = d_out / l_out[:, None]
        t_in = np.roll(t_out, 1, axis=0)
        l_in = np.roll(l_out, 1)
        surface += params.tau * float(l_out.sum())
        if grad_x is not None:
            np.add.at(grad_x, loop, params.tau * (t_in - t_out))
        if not do_anchor:
            continue

        msum = t_in + t_out
        mn = np.linalg.norm(msum, axis=1)
        tv = msum / mn[:, None]
        frame = tv if params.anchoring == "tangential" else tv @ _ROT.T
        s, dsdf = _surface_components(frame, params.s0, mode)
        delta = q[loop] - s
        h, dhdq = _mismatch(delta, mode)
        ell = 0.5 * (l_in + l_out)
        anchoring += gamma * float(np.dot(ell, h))
        if grad_x is None:
            continue

        np.add.at(grad_q, loop, gamma * ell[:, None] * dhdq)
        # edge-length dependence
        coeff = gamma * 0.5 * (h + np.roll(h, -1))
        np.add.at(grad_x, loop, -coeff[:, None] * t_out)
        np.add.at(grad_x, np.roll(loop, -1), coeff[:, None] * t_out)
        # frame dependence: h -> frame -> averaged tangent -> positions
        g_f = -np.einsum("ia,iad->id", dhdq, dsdf)
        if params.anchoring == "normal":
            g_f = g_f @ _ROT  # chain rule through frame = ROT @ tangent
        G = (gamma * ell)[:, None] * g_f
        gm = (G - tv * np.einsum("ij,ij->i", tv, G)[:, None]) / mn[:, None]
        u_in = (gm - t_in * np.einsum("ij,ij->i", t_in, gm)[:, None]) / l_in[:, None]
        u_out = (gm - t_out * np.einsum("ij,ij->i", t_out, gm)[:, None]) / l_out[:, None]
        np.add.at(grad_x, np.roll(loop, 1), -u_in)
        np.add.at(grad_x, loop, u_in - u_out)
        np.add.at(grad_x, np.roll(loop, -1), u_out)
    return surface, anchoring


def _boundary_3d(mesh, q, params, mode, grad_x, grad_q):
    x = mesh.vertices
    bf = mesh.boundary_facets
    P0, P1, P2 = x[bf[:, 0]], x[bf[:, 1]], x[bf[:, 2]]
    C = np.cross(P1 - P0, P2 - P0)
    cn = np.linalg.norm(C, axis=1)
    if np.any(cn < 1e-300):
        raise DegenerateElementError("zero-area boundary facet")
    nhat = C / cn[:, None]
    areas = 0.5 * cn
    surface = params.tau * float(areas.sum())

    dA0 = 0.5 * np.cross(P1 - P2, nhat)
    dA1 = 0.5 * np.cross(P2 - P0, nhat)
    dA2 = 0.5 * np.cross(P0 - P1, nhat)
    if grad_x is not None:
        np.add.at(grad_x, bf[:, 0], params.tau * dA0)
        np.add.at(grad_x, bf[:, 1], params.tau * dA1)
        np.add.at(grad_x, bf[:, 2], params.tau * dA2)

    if params.tau * params.omega == 0.0:
        return surface, 0.0
    gamma = params.anchoring_sign * 0.5 * params.tau * params.omega

    bvert = np.unique(bf.ravel())
    compact = np.full(mesh.vertex_count, -1, dtype=np.int64)
    compact[bvert] = np.arange(len(bvert))
    msum = np.zeros((len(bvert), 3))
    w = np.zeros(len(bvert))
    for corner in range(3):
        np.add.at(msum, compact[bf[:, corner]], C)
        np.add.at(w, compact[bf[:, corner]], areas / 3.0)
    mn = np.linalg.norm(msum, axis=1)
    nu = msum / mn[:, None]

    s, dsdf = _surface_components(nu, params.s0, mode)
    delta = q[bvert] - s
    h, dhdq = _mismatch(delta, mode)
    anchoring = gamma * float(np.dot(w, h))
    if grad_x is None:
        return surface, anchoring

    np.add.at(grad_q, bvert, gamma * w[:, None] * dhdq)
    # facet-area dependence
    hsum = h[compact[bf]].sum(axis=1)
    np.add.at(grad_x, bf[:, 0], (gamma / 3.0) * hsum[:, None] * dA0)
    np.add.at(grad_x, bf[:, 1], (gamma / 3.0) * hsum[:, None] * dA1)
    np.add.at(grad_x, bf[:, 2], (gamma / 3.0) * hsum[:, None] * dA2)
    # normal dependence: h -> nu -> area vectors -> positions
    g_f = -np.einsum("ia,iad->id", dhdq, dsdf)
    G = (gamma * w)[:, None] * g_f
    gm = (G - nu * np.einsum("ij,ij->i", nu, G)[:, None]) / mn[:, None]
    S = gm[compact[bf]].sum(axis=1)  # (nb, 3)
    np.add.at(grad_x, bf[:, 0], np.cross(P1 - P2, S))
    np.add.at(grad_x, bf[:, 1], np.cross(P2 - P0, S))
    np.add.at(grad_x, bf[:, 2], np.cross(P0 - P1, S))
    return surface, anchoring


def energy(mesh: SimplicialMesh, field: NodalQField, params: MaterialParams) -> EnergyBreakdown:
    """Energy breakdown (bulk, elastic, isotropic surface, anchoring)."""
    breakdown, _ = _assemble(mesh, field, params, want_grad=False)
    return breakdown


def grad(mesh: SimplicialMesh, field: NodalQField, params: MaterialParams) -> GradientVector:
    """Analytic derivatives of the total energy in vertex positions and Q components."""
    _, gradient = _assemble(mesh, field, params, want_grad=True)
    return gradient


def energy_and_grad(mesh, field, params):
    return _assemble(mesh, field, params, want_grad=True)


# ---------------------------------------------------------------------------
# global measure constraint


def constraint(mesh: SimplicialMesh, params: MaterialParams) -> float:
    """C = total measure - target."""
    return float(mesh.signed_measures().sum() - params.target_measure)


def constraint_grad(mesh: SimplicialMesh) -> np.ndarray:
    """Derivative of the total measure in every vertex coordinate."""
    measures, grads = _element_geometry(mesh)
    out = np.zeros_like(mesh.vertices)
    contrib = np.einsum("n,ndv->nvd", measures, grads)
    np.add.at(out, mesh.elements.ravel(), contrib.reshape(-1, mesh.dimension))
    return out


# ---------------------------------------------------------------------------
# finite-difference oracle


def fd_gradient(mesh: SimplicialMesh, field: NodalQField, params: MaterialParams, h: float = 1e-6) -> GradientVector:
    """Central-difference gradient, one coordinate at a time."""
    if h <= 0:
        raise EnergyError("step size must be positive")

    def total(vertices, values):
        b, _ = _assemble(
            mesh.with_vertices(vertices), NodalQField(field.mode, values), params, False
        )
        return b.total

    gx = np.zeros_like(mesh.vertices)
    for i in range(mesh.vertex_count):
        for mu in range(mesh.dimension):
            vp = mesh.vertices.copy()
            vp[i, mu] += h
            vm = mesh.vertices.copy()
            vm[i, mu] -= h
            gx[i, mu] = (total(vp, field.values) - total(vm, field.values)) / (2 * h)
    gq = np.zeros_like(field.values)
    for i in range(len(field.values)):
        for k in range(field.n_components):
            qp = field.values.copy()
            qp[i, k] += h
            qm = field.values.copy()
            qm[i, k] -= h
            gq[i, k] = (total(mesh.vertices, qp) - total(mesh.vertices, qm)) / (2 * h)
    return GradientVector(gx, gq)


def fd_constraint_grad(mesh: SimplicialMesh, params: MaterialParams, h: float = 1e-6) -> np.ndarray:
    out = np.zeros_like(mesh.vertices)
    for i in range(mesh.vertex_count):
        for mu in range(mesh.dimension):
            vp = mesh.vertices.copy()
            vp[i, mu] += h
            vm = mesh.vertices.copy()
            vm[i, mu] -= h
            out[i, mu] = (
                constraint(mesh.with_vertices(vp), params)
                - constraint(mesh.with_vertices(vm), params)
            ) / (2 * h)
    return out
