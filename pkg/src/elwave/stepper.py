"""Time integration of the stochastic elastic wave system.

One trajectory advances the coupled displacement/velocity pair (u^n, v^n)
in the Dirichlet-constrained P1 space by a two-step implicit scheme.  Per
step over [t_n, t_n+1], with a(w, z) the elasticity form and hat/bar the
two noise increments of the step,

    (u^n+1 - u^n, phi) = tau (v^n+1, phi) - (G[u^n] hat_n, phi),
    (v^n+1 - v^n, psi) + tau a(u^n,1/2, psi)
        = tau (F^n,1/2, psi) + (G[u^n] bar_n, psi) + (DG[u^n] v^n hat_n, psi),

where u^n,1/2 = (u^n+1 + u^n-1)/2 couples the new state to the one two
steps back (the midpoint skips u^n; the scheme's stability hinges on that)
and F^n,1/2 = (F(t_n+1, u^n+1) + F(t_n-1, u^n-1))/2 makes the update
implicit in the drift.  Eliminating v^n+1 through the first relation leaves
one SPD solve per step with the matrix M + (tau^2/2) A, factored once and
shared across all steps and samples; the drift implicitness is resolved by
Picard iteration, which contracts at rate O(tau^2 Lip F).

The leading step has no u^n-1 and is computed from a one-step expansion:

    u^1 = u^0 + tau v^0 + (tau^2/2) L_h u^0 + (tau^2/2) F[u^0]
          - G[u^0] hat_0 + tau G[u^0] bar_0,

with L_h the discrete elasticity operator, followed by v^1 through the
scheme's own first relation at n = 0.

Nonlinearities are lifted nodally.  The hat-noise term that enters the
u-update is interpolated into the constrained space (boundary values
dropped) so the elimination identity v^n+1 = (u^n+1 - u^n + Ghat_n)/tau
holds exactly and every state satisfies the boundary condition; the terms
that only load the v-equation keep their full interpolants and are paired
against interior test functions through the mass matrix.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fem, linalg
from .model import Coefficients, InitialData
from .noise import IncrementSet

__all__ = [
    "SchemeOperators",
    "SchemeState",
    "StepReport",
    "StepFailure",
    "InitialFields",
    "TrajectoryResult",
    "prepare_scheme",
    "prepare_initial_fields",
    "first_step",
    "step",
    "run_trajectory",
    "energy_J",
    "energy_Jtilde",
    "energy_Q",
    "energy_Qtilde",
    "energy_staggered",
]


class StepFailure(RuntimeError):
    """Picard iteration failed to contract within the iteration cap."""


@dataclass(frozen=True)
class SchemeOperators:
    """Assembled matrices and factorizations shared by all steps and samples."""

    dofmap: fem.DofMap
    forms: fem.FormMatrices
    lam: float
    mu: float
    tau: float
    stiffness: sp.csr_matrix
    system: linalg.SolverHandle
    mass_c: linalg.SolverHandle
    stiff_c: linalg.SolverHandle
    picard_tol: float
    picard_cap: int


@dataclass
class SchemeState:
    """Trajectory state after step n: (u^n-1, u^n, v^n) plus the running sum
    of u^1..u^n that the summed-displacement energy tracks."""

    n: int
    u_prev: np.ndarray
    u: np.ndarray
    v: np.ndarray
    u_sum: np.ndarray


@dataclass(frozen=True)
class StepReport:
    n: int
    picard_iterations: int
    picard_increment: float


@dataclass(frozen=True)
class InitialFields:
    """Projected initial data, reusable across samples of one study."""

    u0: np.ndarray
    v0: np.ndarray
    Lu0: np.ndarray


@dataclass
class TrajectoryResult:
    checkpoint_steps: np.ndarray
    times: np.ndarray
    u: list[np.ndarray]
    v: list[np.ndarray]
    max_picard: int
    energy_J: np.ndarray | None = None
    energy_staggered: np.ndarray | None = None


def prepare_scheme(
    dofmap: fem.DofMap,
    lam: float,
    mu: float,
    tau: float,
    picard_tol: float = 1e-10,
    picard_cap: int = 50,
    forms: fem.FormMatrices | None = None,
    shared: "SchemeOperators | None" = None,
) -> SchemeOperators:
    """Assemble and factor every matrix one configuration needs.

    `shared` reuses the step-size-independent pieces (forms, stiffness and
    the mass/stiffness factorizations) of operators already prepared for the
    same mesh and material constants; only the system matrix depends on tau.
    """
    tau = float(tau)  # exact fractions are welcome, arithmetic is float
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    con = dofmap.constrained
    if shared is not None:
        if shared.dofmap is not dofmap or shared.lam != lam or shared.mu != mu:
            raise ValueError("shared operators belong to a different configuration")
        forms, a = shared.forms, shared.stiffness
        mass_c, stiff_c = shared.mass_c, shared.stiff_c
    else:
        if forms is None:
            forms = fem.FormMatrices.assemble(dofmap)
        a = fem.assemble_elasticity(dofmap, lam, mu, parts=(forms.a_div, forms.a_eps))
        mass_c = linalg.prepare_spd(fem.apply_dirichlet(forms.mass, con))
        stiff_c = linalg.prepare_spd(fem.apply_dirichlet(a, con))
    system = linalg.prepare_spd(
        fem.apply_dirichlet(forms.mass + (tau**2 / 2.0) * a, con)
    )
    return SchemeOperators(
        dofmap, forms, lam, mu, tau, a, system, mass_c, stiff_c, picard_tol, picard_cap
    )


def prepare_initial_fields(ops: SchemeOperators, data: InitialData) -> InitialFields:
    """Project the initial data: u0 by the elasticity form, v0 in L2, both
    onto the constrained space, plus the discrete elasticity image of u0."""
    dm = ops.dofmap
    u0 = fem.elasticity_project(
        data.u0, dm, ops.lam, ops.mu, ops.stiff_c, w_grad=data.u0_grad, a_full=ops.stiffness
    )
    v0 = fem.l2_project(data.v0, dm, ops.mass_c, constrained=dm.constrained)
    lu0 = fem.discrete_L(u0, ops.mass_c, ops.stiffness, constrained=dm.constrained)
    return InitialFields(u0.coeffs, v0.coeffs, lu0.coeffs)


def _nodal_drift(ops: SchemeOperators, coeffs: Coefficients, t: float, u: np.ndarray) -> np.ndarray:
    """Nodal interpolant of F(t, u) plus any position-dependent forcing, flat."""
    vals = coeffs.F(t, u.reshape(-1, 2))
    if coeffs.forcing is not None:
        vals = vals + coeffs.forcing(t, ops.dofmap.mesh.vertices)
    return np.asarray(vals, dtype=np.float64).ravel()


def _noise_lifts(ops, coeffs, u, v, bar, hat):
    """Nodal noise terms of one step: (Ghat constrained, tau-weighted rest)."""
    uv = u.reshape(-1, 2)
    g = np.asarray(coeffs.G(uv), dtype=np.float64).ravel()
    ghat = hat * g
    ghat[ops.dofmap.constrained] = 0.0
    rest = bar * g + hat * np.asarray(
        coeffs.DG_apply(uv, v.reshape(-1, 2)), dtype=np.float64
    ).ravel()
    return ghat, rest


def first_step(
    ops: SchemeOperators,
    fields: InitialFields,
    coeffs: Coefficients,
    bar0: float,
    hat0: float,
) -> SchemeState:
    """Compute (u^1, v^1) from the projected data and the step-0 increments."""
    tau = ops.tau
    con = ops.dofmap.constrained
    f0 = _nodal_drift(ops, coeffs, 0.0, fields.u0)
    g0 = np.asarray(coeffs.G(fields.u0.reshape(-1, 2)), dtype=np.float64).ravel()
    ghat = hat0 * g0
    ghat[con] = 0.0
    u1 = (
        fields.u0
        + tau * fields.v0
        + (tau**2 / 2.0) * fields.Lu0
        + (tau**2 / 2.0) * f0
        - ghat
        + tau * bar0 * g0
    )
    u1[con] = 0.0
    v1 = (u1 - fields.u0 + ghat) / tau
    return SchemeState(n=1, u_prev=fields.u0.copy(), u=u1, v=v1, u_sum=u1.copy())


def step(
    ops: SchemeOperators,
    state: SchemeState,
    coeffs: Coefficients,
    bar: float,
    hat: float,
) -> tuple[SchemeState, StepReport]:
    """Advance one step; returns the new state and the Picard statistics."""
    tau = ops.tau
    mass = ops.forms.mass
    con = ops.dofmap.constrained
    n = state.n
    t_prev, t_next = (n - 1) * tau, (n + 1) * tau

    ghat, rest = _noise_lifts(ops, coeffs, state.u, state.v, bar, hat)
    f_prev = _nodal_drift(ops, coeffs, t_prev, state.u_prev)
    carrier = (
        state.u - ghat + tau * state.v + tau * rest + (tau**2 / 2.0) * f_prev
    )
    fixed = mass @ carrier - (tau**2 / 2.0) * (ops.stiffness @ state.u_prev)

    # predictor guess; any starting point converges to the same fixed point,
    # this one lands close enough to usually save an iteration
    u_k = state.u + tau * state.v
    f_k = _nodal_drift(ops, coeffs, t_next, u_k)
    # contraction factor of the drift map in the mass norm: the solve is a
    # mass-norm contraction and the nodal drift obeys the pointwise Lipschitz
    # bound up to the lumped-vs-consistent mass factor 2, so q = tau^2 L;
    # with q < 1 the distance to the fixed point is certified from one
    # increment and the verifying extra solve can be skipped
    q = tau**2 * coeffs.F_lipschitz if coeffs.F_lipschitz is not None else None
    gain = q / (1.0 - q) if q is not None and q < 1.0 else None
    iterations = 0
    increment = np.inf
    for _ in range(ops.picard_cap):
        iterations += 1
        rhs = fixed + (tau**2 / 2.0) * (mass @ f_k)
        rhs[con] = 0.0
        u_new = linalg.solve(ops.system, rhs)
        u_new[con] = 0.0
        f_new = _nodal_drift(ops, coeffs, t_next, u_new)
        if np.array_equal(f_new, f_k):
            # drift unchanged by the update, so u_new is the exact fixed point
            u_k, increment = u_new, 0.0
            break
        diff = u_new - u_k
        scale = float(u_new @ (mass @ u_new))
        increment = np.sqrt(float(diff @ (mass @ diff)) / scale) if scale > 0 else 0.0
        if gain is not None:
            increment = min(increment, gain * increment)
        u_k, f_k = u_new, f_new
        if increment <= ops.picard_tol:
            break
    else:
        raise StepFailure(
            f"Picard stalled at step {n + 1}: increment {increment:.3e} after "
            f"{iterations} iterations (tol {ops.picard_tol:.1e})"
        )

    v_new = (u_k - state.u + ghat) / tau
    new_state = SchemeState(
        n=n + 1, u_prev=state.u, u=u_k, v=v_new, u_sum=state.u_sum + u_k
    )
    return new_state, StepReport(n + 1, iterations, increment)


def _quad(u: np.ndarray, a: sp.csr_matrix) -> float:
    return float(u @ (a @ u))


def energy_J(ops: SchemeOperators, u: np.ndarray, v: np.ndarray) -> float:
    """||v||^2 + (lam/2)||div u||^2 + (mu/2)||eps(u)||^2."""
    return (
        _quad(v, ops.forms.mass)
        + 0.5 * ops.lam * _quad(u, ops.forms.a_div)
        + 0.5 * ops.mu * _quad(u, ops.forms.a_eps)
    )


def energy_Jtilde(ops: SchemeOperators, u: np.ndarray, v: np.ndarray) -> float:
    """||L_h u||^2 + lam ||div v||^2 + mu ||eps(v)||^2."""
    lu = fem.discrete_L(
        fem.FeFunction(ops.dofmap, u), ops.mass_c, ops.stiffness, ops.dofmap.constrained
    )
    return (
        _quad(lu.coeffs, ops.forms.mass)
        + ops.lam * _quad(v, ops.forms.a_div)
        + ops.mu * _quad(v, ops.forms.a_eps)
    )


def energy_Q(ops: SchemeOperators, u: np.ndarray, u_sum: np.ndarray) -> float:
    """(1/2)||u||^2 + (tau^2/4) lam ||div ubar||^2 + (tau^2/2) mu ||eps(ubar)||^2."""
    t2 = ops.tau**2
    return (
        0.5 * _quad(u, ops.forms.mass)
        + (t2 / 4.0) * ops.lam * _quad(u_sum, ops.forms.a_div)
        + (t2 / 2.0) * ops.mu * _quad(u_sum, ops.forms.a_eps)
    )


def energy_Qtilde(ops: SchemeOperators, u: np.ndarray, u_sum: np.ndarray) -> float:
    """(lam/2)||div u||^2 + (mu/2)||eps(u)||^2 + (tau^2/4)||L_h ubar||^2."""
    lsum = fem.discrete_L(
        fem.FeFunction(ops.dofmap, u_sum), ops.mass_c, ops.stiffness, ops.dofmap.constrained
    )
    return (
        0.5 * ops.lam * _quad(u, ops.forms.a_div)
        + 0.5 * ops.mu * _quad(u, ops.forms.a_eps)
        + (ops.tau**2 / 4.0) * _quad(lsum.coeffs, ops.forms.mass)
    )


def energy_staggered(
    ops: SchemeOperators, u_prev: np.ndarray, u: np.ndarray, v: np.ndarray
) -> float:
    """||v^n||^2 + (a(u^n, u^n) + a(u^n-1, u^n-1))/2.

    The scheme conserves this combination exactly when F = G = 0; it is the
    natural stability monitor for the two-step coupling.
    """
    return _quad(v, ops.forms.mass) + 0.5 * (
        _quad(u, ops.stiffness) + _quad(u_prev, ops.stiffness)
    )


def run_trajectory(
    ops: SchemeOperators,
    fields: InitialFields,
    coeffs: Coefficients,
    inc: IncrementSet,
    checkpoint_steps,
    record_energy: bool = False,
    diagnostics: io.TextIOBase | None = None,
) -> TrajectoryResult:
    """Run one sample path and record states at the requested step indices.

    `checkpoint_steps` are step numbers in 0..N (N = inc.n_steps); the
    increments drive the path, so tau must match the operators.  With
    `record_energy`, per-step traces of the energy functional and of the
    staggered invariant come back with the result (index n = value after
    step n; the staggered trace starts at n = 1).  `diagnostics`, if given,
    receives one tab-separated line per step: step, Picard iterations,
    Picard increment, energy, summed-gradient energy.
    """
    big_n = inc.n_steps
    if abs(float(inc.tau) - ops.tau) > 1e-14 * max(1.0, ops.tau):
        raise ValueError(
            f"increment step {float(inc.tau)} does not match the scheme step {ops.tau}"
        )
    steps_wanted = np.unique(np.asarray(list(checkpoint_steps), dtype=int))
    if steps_wanted.size == 0:
        raise ValueError("at least one checkpoint step is required")
    if steps_wanted[0] < 0 or steps_wanted[-1] > big_n:
        raise ValueError(f"checkpoint steps must lie in 0..{big_n}")

    e_J = np.full(big_n + 1, np.nan) if record_energy else None
    e_S = np.full(big_n + 1, np.nan) if record_energy else None
    us: list[np.ndarray] = []
    vs: list[np.ndarray] = []

    def note(n, u, v, u_prev):
        if record_energy:
            e_J[n] = energy_J(ops, u, v)
            if u_prev is not None:
                e_S[n] = energy_staggered(ops, u_prev, u, v)
        if n in wanted:
            us.append(u.copy())
            vs.append(v.copy())

    wanted = set(int(s) for s in steps_wanted)
    note(0, fields.u0, fields.v0, None)

    state = first_step(ops, fields, coeffs, float(inc.bar[0]), float(inc.hat[0]))
    max_picard = 0
    note(1, state.u, state.v, state.u_prev)
    if diagnostics is not None:
        _diag_line(diagnostics, ops, 1, 0, 0.0, state)

    for n in range(1, big_n):
        state, report = step(ops, state, coeffs, float(inc.bar[n]), float(inc.hat[n]))
        max_picard = max(max_picard, report.picard_iterations)
        note(state.n, state.u, state.v, state.u_prev)
        if diagnostics is not None:
            _diag_line(
                diagnostics, ops, state.n, report.picard_iterations,
                report.picard_increment, state,
            )

    return TrajectoryResult(
        checkpoint_steps=steps_wanted,
        times=steps_wanted * ops.tau,
        u=us,
        v=vs,
        max_picard=max_picard,
        energy_J=e_J,
        energy_staggered=e_S,
    )


def _diag_line(stream, ops, n, iters, increment, state):
    j = energy_J(ops, state.u, state.v)
    jt = energy_Jtilde(ops, state.u, state.v)
    stream.write(f"{n}\t{iters}\t{increment:.6e}\t{j:.10e}\t{jt:.10e}\n")
