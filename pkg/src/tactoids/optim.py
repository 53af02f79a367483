"""Minimization engines: alternating projected gradient descent and L-BFGS SQP.

Both act on the tactoid energy with the global measure constraint. The SQP
core is written against a small packed-vector problem interface so the same
code drives toy verification problems in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .energy import (
    constraint as eval_constraint,
    constraint_grad as eval_constraint_grad,
    energy as eval_energy,
    energy_and_grad as eval_energy_and_grad,
    grad as eval_grad,
)
from .mesh import DegenerateElementError, SimplicialMesh, equiangulate
from .qfield import NodalQField


class OptimError(RuntimeError):
    pass


class LineSearchError(OptimError):
    pass


class KKTError(OptimError):
    pass


class ReprojectionError(OptimError):
    pass


@dataclass(frozen=True)
class DofMask:
    free_shape: bool = True
    free_field: bool = True

    def __post_init__(self):
        if not (self.free_shape or self.free_field):
            raise OptimError("at least one block must be free")


FULL_PROBLEM = DofMask(True, True)
FIXED_SHAPE = DofMask(False, True)
FIXED_FIELD = DofMask(True, False)


@dataclass
class GDConfig:
    alpha0: float = 1.0  # shape step warm-start cap
    beta0: float = 1.0  # field step warm-start cap
    shrink: float = 0.5
    eta: float = 1e-4
    reproject_tol: float = 1e-12  # relative to the target measure
    reproject_max_steps: int = 50
    equiangulate_every: int = 1  # outer iterations between quality passes; 0 disables
    field_steps: int = 10
    shape_steps: int = 10
    max_outer: int = 500


@dataclass
class QNConfig:
    delta: float = 1.0  # initial inverse-Hessian scale
    memory: int = 20
    eta: float = 1e-4
    rho: float = 1.0  # merit penalty margin over |lambda|
    curvature_tol: float = 1e-10
    max_iterations: int | None = None  # defers to ConvergenceSpec when None
    feasibility_tol: float = 1e-6  # |C| <= tol * target required at convergence
    gamma_scaling: bool = False


@dataclass
class ConvergenceSpec:
    energy_tol: float = 1e-6
    max_iterations: int = 500
    window: int = 2  # consecutive iterations that must pass the energy test


@dataclass
class KKTSolution:
    d_shape: np.ndarray
    d_field: np.ndarray
    d_lambda: float


@dataclass
class SolveTrace:
    energies: list = dataclass_field(default_factory=list)
    constraint_abs: list = dataclass_field(default_factory=list)
    alpha_shape: list = dataclass_field(default_factory=list)
    alpha_field: list = dataclass_field(default_factory=list)
    grad_norm_shape: list = dataclass_field(default_factory=list)
    grad_norm_field: list = dataclass_field(default_factory=list)
    lambdas: list = dataclass_field(default_factory=list)
    mus: list = dataclass_field(default_factory=list)
    energy_after_field_step: list = dataclass_field(default_factory=list)
    merit_before: list = dataclass_field(default_factory=list)
    merit_after: list = dataclass_field(default_factory=list)
    equiangulation_events: list = dataclass_field(default_factory=list)
    termination: str = "incomplete"

    @property
    def iterations(self) -> int:
        return max(len(self.energies) - 1, 0)


def converged(trace: SolveTrace, spec: ConvergenceSpec) -> bool:
    """Relative energy change of the last two recorded energies below tolerance."""
    if len(trace.energies) < 2:
        raise OptimError("need at least two recorded energies")
    prev, last = trace.energies[-2], trace.energies[-1]
    return _energy_converged(prev, last, spec.energy_tol)


def _energy_converged(prev: float, last: float, tol: float) -> bool:
    denom = abs(prev)
    if denom == 0.0:
        return abs(last) < tol
    return abs(last - prev) / denom < tol


# ---------------------------------------------------------------------------
# limited-memory BFGS


def lbfgs_apply(history, v: np.ndarray, delta: float, *, gamma_scaling: bool = False) -> np.ndarray:
    """Two-loop recursion: apply the inverse-Hessian approximation to v.

    history is a sequence of (s, y) pairs, oldest first, each with s.y > 0.
    The initial matrix is delta*I, or the standard gamma-scaled multiple when
    gamma_scaling is set.
    """
    q = np.array(v, dtype=float)
    alphas = []
    rhos = []
    for s, y in reversed(history):
        rho = 1.0 / float(np.dot(s, y))
        alpha = rho * float(np.dot(s, q))
        q -= alpha * y
        alphas.append(alpha)
        rhos.append(rho)
    if history and gamma_scaling:
        s, y = history[-1]
        scale = float(np.dot(s, y) / np.dot(y, y))
    else:
        scale = delta
    r = scale * q
    for (s, y), alpha in zip(history, reversed(alphas)):
        beta = float(np.dot(y, r)) / float(np.dot(s, y))
        r += (alpha - beta) * s
    return r


class LbfgsHistory:
    """Bounded store of curvature pairs with a positive-definiteness guard."""

    def __init__(self, memory: int, delta: float, curvature_tol: float, gamma_scaling: bool = False):
        self.memory = memory
        self.delta = delta
        self.curvature_tol = curvature_tol
        self.gamma_scaling = gamma_scaling
        self.pairs: list[tuple[np.ndarray, np.ndarray]] = []

    def push(self, s: np.ndarray, y: np.ndarray) -> bool:
        sy = float(np.dot(s, y))
        ns, ny = np.linalg.norm(s), np.linalg.norm(y)
        if ns == 0.0 or ny == 0.0 or sy <= self.curvature_tol * ns * ny:
            return False
        self.pairs.append((s.copy(), y.copy()))
        if len(self.pairs) > self.memory:
            self.pairs.pop(0)
        return True

    def apply(self, v: np.ndarray) -> np.ndarray:
        return lbfgs_apply(self.pairs, v, self.delta, gamma_scaling=self.gamma_scaling)

    def clear(self):
        self.pairs.clear()

    def __len__(self):
        return len(self.pairs)


# ---------------------------------------------------------------------------
# KKT step


def solve_kkt(apply_h, a: np.ndarray, r: np.ndarray, c: float, n_shape: int) -> KKTSolution:
    """Quasi-Newton saddle-point step via the Schur complement of the single constraint.

    Solves  B d - A^T d_lambda = r,  -A d = c  with B^-1 = apply_h.
    """
    hr = apply_h(r)
    ha = apply_h(a)
    denom = float(np.dot(a, ha))
    if not np.isfinite(denom) or denom <= 0.0:
        raise KKTError(f"nonpositive Schur scalar {denom:.3e}")
    d_lambda = -(c + float(np.dot(a, hr))) / denom
    d = hr + d_lambda * ha
    return KKTSolution(d[:n_shape], d[n_shape:], d_lambda)


# ---------------------------------------------------------------------------
# projection / reprojection


def project_tangent(g_x: np.ndarray, c_x: np.ndarray) -> np.ndarray:
    """Remove the component of g_x along the constraint gradient."""
    denom = float(np.vdot(c_x, c_x))
    if denom < 1e-14:
        raise OptimError("constraint gradient is numerically zero")
    return g_x - (float(np.vdot(g_x, c_x)) / denom) * c_x


def reproject(
    mesh: SimplicialMesh,
    params,
    tol: float = 1e-12,
    max_steps: int = 50,
) -> SimplicialMesh:
    """Newton steps along the constraint gradient until |C| <= tol * target."""
    target = params.target_measure
    current = mesh
    for _ in range(max_steps):
        c = eval_constraint(current, params)
        if abs(c) <= tol * target:
            return current
        c_x = eval_constraint_grad(current)
        denom = float(np.vdot(c_x, c_x))
        if denom < 1e-14:
            raise ReprojectionError("constraint gradient vanished during reprojection")
        step = -(c / denom) * c_x
        trial = current.with_vertices(current.vertices + step)
        # halve on element inversion (possible for large violations)
        scale = 1.0
        while np.any(trial.signed_measures() <= 0.0):
            scale *= 0.5
            if scale < 1e-12:
                raise ReprojectionError("reprojection step inverts elements")
            trial = current.with_vertices(current.vertices + scale * step)
        current = trial
    c = eval_constraint(current, params)
    if abs(c) <= tol * target:
        return current
    raise ReprojectionError(f"|C| = {abs(c):.3e} after {max_steps} reprojection steps")


# ---------------------------------------------------------------------------
# backtracking searches


def _backtrack(phi0, slope, trial, eta, shrink, alpha0=1.0, min_alpha=1e-14):
    """Largest alpha in {alpha0, alpha0*shrink, ...} passing sufficient decrease.

    trial(alpha) returns the merit value, or None for an inadmissible state.
    """
    alpha = alpha0
    while alpha >= min_alpha:
        value = trial(alpha)
        if value is not None and value <= phi0 + eta * alpha * slope:
            return alpha, value
        alpha *= shrink
    raise LineSearchError("no admissible step above 1e-14")


def armijo_q(mesh, field, params, d_q, eta, *, shrink=0.5, alpha0=1.0):
    """Backtracking step size for a field move at fixed shape."""
    breakdown = eval_energy(mesh, field, params)
    f0 = breakdown.total
    g = eval_grad(mesh, field, params)
    slope = float(np.vdot(g.q, d_q))
    if slope >= 0:
        raise LineSearchError("field direction is not a descent direction")

    def trial(alpha):
        trial_field = NodalQField(field.mode, field.values + alpha * d_q)
        return eval_energy(mesh, trial_field, params).total

    alpha, _ = _backtrack(f0, slope, trial, eta, shrink, alpha0)
    return alpha


def merit_search_x(mesh, field, params, d_m, d_lambda, lam, eta, rho, mu_prev, *, shrink=0.5):
    """l1-merit backtracking for a shape move; returns (alpha, mu used)."""
    mu = max(mu_prev, abs(lam) + rho)
    f0 = eval_energy(mesh, field, params).total
    c0 = eval_constraint(mesh, params)
    g = eval_grad(mesh, field, params)
    slope = float(np.vdot(g.x, d_m)) - mu * abs(c0)
    if slope >= 0:
        if abs(c0) > 0:
            mu = float(np.vdot(g.x, d_m)) / abs(c0) + rho
            slope = float(np.vdot(g.x, d_m)) - mu * abs(c0)
        else:
            raise LineSearchError("shape direction is not a merit descent direction")
    phi0 = f0 + mu * abs(c0)

    def trial(alpha):
        trial_mesh = mesh.with_vertices(mesh.vertices + alpha * d_m)
        try:
            f = eval_energy(trial_mesh, field, params).total
        except DegenerateElementError:
            return None
        c = eval_constraint(trial_mesh, params)
        return f + mu * abs(c)

    alpha, _ = _backtrack(phi0, slope, trial, eta, shrink)
    return alpha, mu


# ---------------------------------------------------------------------------
# packed problem interface for the QN core


class _TactoidObjective:
    """Packed (x, Q) view of the tactoid energy under a DOF mask."""

    def __init__(self, mesh: SimplicialMesh, field: NodalQField, params, mask: DofMask):
        self.mask = mask
        self.params = params
        self.mode = field.mode
        self._mesh0 = mesh
        self._x_fixed = mesh.vertices.copy()
        self._q_fixed = field.values.copy()
        self.x_shape = mesh.vertices.shape
        self.q_shape = field.values.shape
        self.n_shape = mesh.vertices.size if mask.free_shape else 0
        self.n_field = field.values.size if mask.free_field else 0
        self.has_constraint = mask.free_shape
        self.constraint_scale = params.target_measure

    def initial_state(self) -> np.ndarray:
        parts = []
        if self.mask.free_shape:
            parts.append(self._x_fixed.ravel())
        if self.mask.free_field:
            parts.append(self._q_fixed.ravel())
        return np.concatenate(parts)

    def unpack(self, z: np.ndarray):
        if self.mask.free_shape:
            x = z[: self.n_shape].reshape(self.x_shape)
        else:
            x = self._x_fixed
        if self.mask.free_field:
            q = z[self.n_shape :].reshape(self.q_shape)
        else:
            q = self._q_fixed
        return self._mesh0.with_vertices(x), NodalQField(self.mode, q)

    def objective(self, z: np.ndarray) -> float:
        mesh, field = self.unpack(z)
        return eval_energy(mesh, field, self.params).total

    def objective_constraint(self, z: np.ndarray):
        mesh, field = self.unpack(z)
        f = eval_energy(mesh, field, self.params).total
        c = eval_constraint(mesh, self.params) if self.has_constraint else 0.0
        return f, c

    def evaluate(self, z: np.ndarray):
        """(F, packed grad, C, packed constraint grad or None)."""
        mesh, field = self.unpack(z)
        breakdown, gradient = eval_energy_and_grad(mesh, field, self.params)
        parts = []
        if self.mask.free_shape:
            parts.append(gradient.x.ravel())
        if self.mask.free_field:
            parts.append(gradient.q.ravel())
        g = np.concatenate(parts)
        if self.has_constraint:
            c = eval_constraint(mesh, self.params)
            a = np.zeros_like(g)
            a[: self.n_shape] = eval_constraint_grad(mesh).ravel()
        else:
            c, a = 0.0, None
        return breakdown.total, g, c, a


def _qn_core(obj, cfg: QNConfig, conv: ConvergenceSpec, lam0: float = 0.0):
    """SQP iteration with L-BFGS inverse-Hessian and split field/shape line searches."""
    z = obj.initial_state()
    lam = float(lam0)
    f, g, c, a = obj.evaluate(z)
    history = LbfgsHistory(cfg.memory, cfg.delta, cfg.curvature_tol, cfg.gamma_scaling)
    trace = SolveTrace()
    trace.energies.append(f)
    trace.constraint_abs.append(abs(c))
    trace.lambdas.append(lam)
    mu = 0.0
    max_iterations = conv.max_iterations if cfg.max_iterations is None else min(
        conv.max_iterations, cfg.max_iterations
    )
    trace.termination = "max_iterations"

    tiny = 1e-15
    skipped_in_a_row = 0
    settled_streak = 0

    for _ in range(max_iterations):
        grad_field = g[obj.n_shape :]

        def direction():
            grad_l = g if a is None else g - lam * a
            if obj.has_constraint:
                return solve_kkt(history.apply, a, -grad_l, c, obj.n_shape)
            d = history.apply(-grad_l)
            return KKTSolution(d[: obj.n_shape], d[obj.n_shape :], 0.0)

        try:
            sol = direction()
        except KKTError:
            if len(history):
                history.clear()
                sol = direction()
            else:
                trace.termination = "kkt_failure"
                break

        # field block: Armijo on F at fixed shape
        scale_f = max(1.0, abs(f))
        alpha_q = 0.0
        f_mid = f
        z_mid = z
        field_moved = False
        if obj.n_field and np.linalg.norm(sol.d_field) > 0:
            slope_q = float(np.dot(grad_field, sol.d_field))
            if slope_q >= -tiny * scale_f and len(history):
                history.clear()
                sol = direction()
                slope_q = float(np.dot(grad_field, sol.d_field))
            if slope_q < -tiny * scale_f:

                def trial_field(alpha):
                    zt = z.copy()
                    zt[obj.n_shape :] += alpha * sol.d_field
                    try:
                        return obj.objective(zt)
                    except DegenerateElementError:
                        return None

                try:
                    alpha_q, f_mid = _backtrack(f, slope_q, trial_field, cfg.eta, 0.5)
                    field_moved = alpha_q > 0
                except LineSearchError:
                    alpha_q = 0.0
                if field_moved:
                    z_mid = z.copy()
                    z_mid[obj.n_shape :] += alpha_q * sol.d_field
        trace.energy_after_field_step.append(f_mid)

        # shape + multiplier block: backtracking on the l1 merit, with the
        # shape gradient refreshed after the field move
        alpha_m = 0.0
        mu_used = mu
        shape_failed = False
        if obj.n_shape and (np.linalg.norm(sol.d_shape) > 0 or sol.d_lambda != 0.0):
            if field_moved:
                _, g_mid, _, _ = obj.evaluate(z_mid)
                grad_shape = g_mid[: obj.n_shape]
            else:
                grad_shape = g[: obj.n_shape]
            mu_used = max(mu, abs(lam) + cfg.rho)
            slope_m = float(np.dot(grad_shape, sol.d_shape)) - mu_used * abs(c)
            if slope_m >= 0 and abs(c) > 0:
                mu_used = float(np.dot(grad_shape, sol.d_shape)) / abs(c) + cfg.rho
                slope_m = float(np.dot(grad_shape, sol.d_shape)) - mu_used * abs(c)
            phi0 = f_mid + mu_used * abs(c)
            trace.merit_before.append(phi0)
            phi_new = phi0
            scale_x = 1.0 + float(np.max(np.abs(z[: obj.n_shape]), initial=0.0))
            if slope_m < -tiny * max(1.0, abs(phi0)):

                def trial_shape(alpha):
                    zt = z_mid.copy()
                    zt[: obj.n_shape] += alpha * sol.d_shape
                    try:
                        ft, ct = obj.objective_constraint(zt)
                    except DegenerateElementError:
                        return None
                    return ft + mu_used * abs(ct)

                try:
                    alpha_m, phi_new = _backtrack(phi0, slope_m, trial_shape, cfg.eta, 0.5)
                    lam = lam + alpha_m * sol.d_lambda
                except LineSearchError:
                    shape_failed = True
            elif np.max(np.abs(sol.d_shape), initial=0.0) <= 1e-9 * scale_x:
                # shape block is converged; the multiplier still takes its full
                # Newton update (the merit does not depend on lambda)
                alpha_m = 1.0
                lam = lam + sol.d_lambda
            else:
                shape_failed = True
            trace.merit_after.append(phi_new)
            mu = mu_used

        if shape_failed and not field_moved:
            # neither block produced progress; drop stale curvature once, give up after that
            skipped_in_a_row += 1
            if skipped_in_a_row == 1 and len(history):
                history.clear()
                continue
            trace.termination = "line_search_failure"
            break
        skipped_in_a_row = 0

        z_new = z_mid.copy()
        if obj.n_shape and alpha_m > 0:
            z_new[: obj.n_shape] += alpha_m * sol.d_shape

        f_new, g_new, c_new, a_new = obj.evaluate(z_new)

        # curvature pair from the actual step, Lagrangian gradient at the new multiplier
        s = z_new - z
        if a is None:
            y = g_new - g
        else:
            y = (g_new - lam * a_new) - (g - lam * a)
        history.push(s, y)

        trace.energies.append(f_new)
        trace.constraint_abs.append(abs(c_new))
        trace.alpha_shape.append(alpha_m)
        trace.alpha_field.append(alpha_q)
        trace.grad_norm_shape.append(float(np.linalg.norm(g_new[: obj.n_shape])))
        trace.grad_norm_field.append(float(np.linalg.norm(g_new[obj.n_shape :])))
        trace.lambdas.append(lam)
        trace.mus.append(mu)

        feasible = (not obj.has_constraint) or abs(c_new) <= cfg.feasibility_tol * obj.constraint_scale
        if _energy_converged(f, f_new, conv.energy_tol):
            settled_streak += 1
        else:
            settled_streak = 0
        z, f, g, c, a = z_new, f_new, g_new, c_new, a_new
        if settled_streak >= conv.window and feasible:
            trace.termination = "converged"
            break

    return z, lam, trace


def qn_solve(
    mesh: SimplicialMesh,
    field: NodalQField,
    params,
    cfg: QNConfig,
    mask: DofMask = FULL_PROBLEM,
    conv: ConvergenceSpec | None = None,
    lam0: float = 0.0,
):
    """Quasi-Newton SQP solve; returns (mesh, field, lambda, trace)."""
    conv = conv or ConvergenceSpec()
    obj = _TactoidObjective(mesh, field, params, mask)
    z, lam, trace = _qn_core(obj, cfg, conv, lam0)
    out_mesh, out_field = obj.unpack(z)
    return out_mesh, out_field, lam, trace


# ---------------------------------------------------------------------------
# gradient descent


def gd_solve(
    mesh: SimplicialMesh,
    field: NodalQField,
    params,
    cfg: GDConfig,
    mask: DofMask = FULL_PROBLEM,
    conv: ConvergenceSpec | None = None,
):
    """Alternating projected gradient descent; returns (mesh, field, trace)."""
    conv = conv or ConvergenceSpec()
    trace = SolveTrace()
    field = field.copy()
    f = eval_energy(mesh, field, params).total
    trace.energies.append(f)
    trace.constraint_abs.append(abs(eval_constraint(mesh, params)) if mask.free_shape else 0.0)
    trace.termination = "max_iterations"
    tiny = 1e-15
    alpha_warm = cfg.alpha0
    beta_warm = cfg.beta0
    max_outer = min(conv.max_iterations, cfg.max_outer)
    settled_streak = 0

    for outer in range(max_outer):
        stalled = False
        if mask.free_field:
            for _ in range(cfg.field_steps):
                g = eval_grad(mesh, field, params)
                d_q = -g.q
                slope = -float(np.vdot(g.q, g.q))
                if slope >= -tiny * max(1.0, abs(f)):
                    break

                def trial(beta, d_q=d_q):
                    trial_field = NodalQField(field.mode, field.values + beta * d_q)
                    return eval_energy(mesh, trial_field, params).total

                try:
                    beta, f = _backtrack(f, slope, trial, cfg.eta, cfg.shrink, beta_warm)
                except LineSearchError:
                    trace.termination = "line_search_failure"
                    stalled = True
                    break
                field = NodalQField(field.mode, field.values + beta * d_q)
                beta_warm = min(cfg.beta0, 2.0 * beta)
                trace.alpha_field.append(beta)
            if stalled:
                break

        if mask.free_shape:
            for _ in range(cfg.shape_steps):
                g = eval_grad(mesh, field, params)
                c_x = eval_constraint_grad(mesh)
                p = project_tangent(-g.x, c_x)
                slope = float(np.vdot(g.x, p))
                if slope >= -tiny * max(1.0, abs(f)):
                    break

                def trial(alpha, p=p):
                    trial_mesh = mesh.with_vertices(mesh.vertices + alpha * p)
                    try:
                        trial_mesh = reproject(
                            trial_mesh, params, cfg.reproject_tol, cfg.reproject_max_steps
                        )
                        return eval_energy(trial_mesh, field, params).total, trial_mesh
                    except (DegenerateElementError, ReprojectionError):
                        return None

                accepted = None

                def trial_value(alpha):
                    nonlocal accepted
                    result = trial(alpha)
                    if result is None:
                        return None
                    accepted = result
                    return result[0]

                try:
                    alpha, f = _backtrack(f, slope, trial_value, cfg.eta, cfg.shrink, alpha_warm)
                except LineSearchError:
                    trace.termination = "line_search_failure"
                    stalled = True
                    break
                mesh = accepted[1]
                alpha_warm = min(cfg.alpha0, 2.0 * alpha)
                trace.alpha_shape.append(alpha)
            if stalled:
                break

            if cfg.equiangulate_every and (outer + 1) % cfg.equiangulate_every == 0:
                flipped = equiangulate(mesh)
                if not np.array_equal(flipped.elements, mesh.elements):
                    mesh = flipped
                    f = eval_energy(mesh, field, params).total
                    trace.equiangulation_events.append(outer)

        trace.energies.append(f)
        trace.constraint_abs.append(
            abs(eval_constraint(mesh, params)) if mask.free_shape else 0.0
        )
        g = eval_grad(mesh, field, params)
        trace.grad_norm_shape.append(float(np.linalg.norm(g.x)))
        trace.grad_norm_field.append(float(np.linalg.norm(g.q)))
        if _energy_converged(trace.energies[-2], trace.energies[-1], conv.energy_tol):
            settled_streak += 1
        else:
            settled_streak = 0
        if settled_streak >= conv.window:
            trace.termination = "converged"
            break

    return mesh, field, trace
