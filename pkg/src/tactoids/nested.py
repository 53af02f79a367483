"""Nested iteration over a refinement hierarchy, with omega continuation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dataclass_field, replace

import numpy as np

from .mesh import SimplicialMesh, equiangulate, refine_uniform
from .optim import (
    ConvergenceSpec,
    DofMask,
    FULL_PROBLEM,
    GDConfig,
    QNConfig,
    SolveTrace,
    gd_solve,
    qn_solve,
)
from .qfield import NodalQField, prolong


class NestedIterationError(RuntimeError):
    pass


@dataclass
class NISchedule:
    """Grid hierarchy plan: level count, solver per level, tolerances, continuation.

    solver is either a single name applied to every level or a per-level list;
    "gd" on the coarsest level(s) followed by "qn" tracks the gradient flow
    where basin selection happens and switches to the fast solver above.
    """

    level_count: int = 5
    solver: str | list = "qn"  # "qn", "gd", or one of these per level
    convergence: ConvergenceSpec | list = dataclass_field(default_factory=ConvergenceSpec)
    qn: QNConfig = dataclass_field(default_factory=QNConfig)
    gd: GDConfig = dataclass_field(default_factory=GDConfig)
    omega_continuation: tuple = ()  # strictly increasing omega values, coarse level
    multilevel_continuation: bool = False
    equiangulate_between_levels: bool = True

    def __post_init__(self):
        if self.level_count < 1:
            raise NestedIterationError("level_count must be at least 1")
        for name in [self.solver] if isinstance(self.solver, str) else self.solver:
            if name not in ("qn", "gd"):
                raise NestedIterationError(f"unknown solver {name!r}")
        omegas = tuple(self.omega_continuation)
        if any(b <= a for a, b in zip(omegas, omegas[1:])):
            raise NestedIterationError("omega continuation list must be strictly increasing")

    def solver_for_level(self, level: int) -> str:
        if isinstance(self.solver, str):
            return self.solver
        return self.solver[min(level, len(self.solver)) - 1]

    def spec_for_level(self, level: int) -> ConvergenceSpec:
        if isinstance(self.convergence, ConvergenceSpec):
            return self.convergence
        return self.convergence[min(level, len(self.convergence)) - 1]


@dataclass
class LevelStats:
    level: int
    vertex_count: int
    iterations: int
    energy: float
    constraint_abs: float
    wall_seconds: float
    termination: str
    used_fallback: bool = False


@dataclass
class NIResult:
    mesh: SimplicialMesh
    field: NodalQField
    lam: float
    stats: list
    level_states: list  # converged (mesh, field, lam) per level
    traces: list


def _solve_level(mesh, field, params, schedule, mask, lam, level):
    spec = schedule.spec_for_level(level)
    start = time.perf_counter()
    if schedule.solver_for_level(level) == "qn":
        mesh, field, lam, trace = qn_solve(mesh, field, params, schedule.qn, mask, spec, lam)
    else:
        mesh, field, trace = gd_solve(mesh, field, params, schedule.gd, mask, spec)
    wall = time.perf_counter() - start
    stats = LevelStats(
        level=level,
        vertex_count=mesh.vertex_count,
        iterations=trace.iterations,
        energy=trace.energies[-1],
        constraint_abs=trace.constraint_abs[-1],
        wall_seconds=wall,
        termination=trace.termination,
    )
    return mesh, field, lam, trace, stats


def ni_solve(
    coarse_mesh: SimplicialMesh,
    coarse_field: NodalQField,
    params,
    schedule: NISchedule,
    mask: DofMask = FULL_PROBLEM,
    lam0: float = 0.0,
) -> NIResult:
    """Solve on the coarse grid, then refine / prolong / re-solve per level.

    Refinement and equiangulation happen between levels and are excluded from
    the recorded per-level wall times.
    """
    mesh, field, lam = coarse_mesh, coarse_field, float(lam0)
    stats: list[LevelStats] = []
    states = []
    traces = []
    for level in range(1, schedule.level_count + 1):
        if level > 1:
            mesh, rmap = refine_uniform(mesh)
            field = prolong(field, rmap)
            if schedule.equiangulate_between_levels:
                mesh = equiangulate(mesh)
        try:
            mesh, field, lam, trace, level_stats = _solve_level(
                mesh, field, params, schedule, mask, lam, level
            )
        except Exception as exc:
            raise NestedIterationError(f"solver failed on level {level}: {exc}") from exc
        stats.append(level_stats)
        states.append((mesh, field.copy(), lam))
        traces.append(trace)
    return NIResult(mesh, field, lam, stats, states, traces)


def continue_omega(
    coarse_mesh: SimplicialMesh,
    coarse_field: NodalQField,
    params,
    schedule: NISchedule,
    mask: DofMask = FULL_PROBLEM,
) -> list:
    """Chain coarse-level solves through the omega continuation list.

    Each omega is seeded with the previous converged coarse state; returns
    [(omega, mesh, field, lam), ...] in list order.
    """
    omegas = tuple(schedule.omega_continuation)
    if not omegas:
        raise NestedIterationError("omega continuation list is empty")
    mesh, field, lam = coarse_mesh, coarse_field, 0.0
    out = []
    for omega in omegas:
        level_params = replace(params, omega=omega)
        try:
            mesh, field, lam, _, _ = _solve_level(
                mesh, field, level_params, schedule, mask, lam, 1
            )
        except Exception as exc:
            raise NestedIterationError(f"continuation failed at omega={omega}: {exc}") from exc
        out.append((omega, mesh, field.copy(), lam))
    return out


def multilevel_continuation(
    prev_level_states: list,
    params,
    schedule: NISchedule,
    mask: DofMask = FULL_PROBLEM,
) -> NIResult:
    """Nested iteration seeded level-by-level from a previous omega's states.

    Level 1 starts from the previous omega's converged coarse state. On each
    finer level the initial guess averages the prolonged current state with
    the stored previous-omega state (positions and components both), falling
    back to the prolonged state alone if the averaged mesh is invalid or the
    connectivities differ.
    """
    if len(prev_level_states) < schedule.level_count:
        raise NestedIterationError("previous-omega states required for every level")
    mesh0, field0, lam = prev_level_states[0]
    stats: list[LevelStats] = []
    states = []
    traces = []
    mesh, field = mesh0, field0.copy()
    for level in range(1, schedule.level_count + 1):
        used_fallback = False
        if level > 1:
            mesh, rmap = refine_uniform(mesh)
            field = prolong(field, rmap)
            if schedule.equiangulate_between_levels:
                mesh = equiangulate(mesh)
            prev_mesh, prev_field, _ = prev_level_states[level - 1]
            if np.array_equal(prev_mesh.elements, mesh.elements):
                avg_vertices = 0.5 * (mesh.vertices + prev_mesh.vertices)
                trial = mesh.with_vertices(avg_vertices)
                if np.all(trial.signed_measures() > 0.0):
                    mesh = trial
                    field = NodalQField(
                        field.mode, 0.5 * (field.values + prev_field.values)
                    )
                else:
                    used_fallback = True
            else:
                used_fallback = True
        try:
            mesh, field, lam, trace, level_stats = _solve_level(
                mesh, field, params, schedule, mask, lam, level
            )
        except Exception as exc:
            raise NestedIterationError(f"solver failed on level {level}: {exc}") from exc
        level_stats.used_fallback = used_fallback
        stats.append(level_stats)
        states.append((mesh, field.copy(), lam))
        traces.append(trace)
    return NIResult(mesh, field, lam, stats, states, traces)
