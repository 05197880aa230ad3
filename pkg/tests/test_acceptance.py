"""End-to-end acceptance checks with pinned tolerance windows.

One test per criterion, numbered 1 through 8.  Each test records a summary
line (printed by the terminal report hook in conftest) before asserting, so
a red criterion still shows its measurements.

Criterion 4 is expected red on its energy clause: the monitored functional
weighs the kinetic term twice as heavily as the quantity the two-step update
actually conserves, so it oscillates at order one even for the exact
deterministic scheme, while the staggered invariant stays at rounding level.
The drift bound is asserted against the monitored functional as pinned, not
against the conserved one, and the staggered drift is reported for context.
"""

from fractions import Fraction

import numpy as np
import pytest
from conftest import record_criterion
from oracles import dense_coupled_trajectory, dg_fd_error, rigid_motions

from elwave import fem, model, stepper
from elwave.ensemble import (
    StudyConfig,
    mms_study,
    noise_stats_study,
    single_run,
    spatial_convergence_study,
    temporal_convergence_study,
)
from elwave.mesh import build_rect_mesh

F = Fraction
DOMAIN = (-1.0, 1.0, -1.0, 1.0)


@pytest.fixture(scope="module")
def noisy_temporal_table():
    """Criterion 1's Monte Carlo study; criterion 8 reuses its energy traces."""
    cfg = StudyConfig(
        kind="temporal",
        T=F(1),
        taus=(F(1, 4), F(1, 8), F(1, 16), F(1, 32)),
        nx=64,
        lam=0.2,
        mu=0.2,
        coefficients="trig",
        samples=200,
        seed=0,
        record_energy=True,
    )
    return temporal_convergence_study(cfg)


def test_criterion_1_temporal_orders_under_noise(noisy_temporal_table):
    t = noisy_temporal_table
    u = t.orders["u_L2"][-1]
    v = t.orders["v_L2"][-1]
    g = t.orders["u_H1"][-1]
    ok = 1.2 <= u <= 1.9 and 0.75 <= v <= 1.3 and g >= 0.9
    record_criterion(
        1,
        ok,
        f"last-pair orders over 200 samples: u-L2 {u:.3f} in [1.2,1.9], "
        f"v-L2 {v:.3f} in [0.75,1.3], u-H1 {g:.3f} >= 0.9",
    )
    assert 1.2 <= u <= 1.9
    assert 0.75 <= v <= 1.3
    assert g >= 0.9


def test_criterion_2_spatial_orders_under_noise():
    cfg = StudyConfig(
        kind="spatial",
        T=F(1, 10),
        tau=F(1, 1280),
        nx_list=(8, 16, 32, 64),
        lam=1.0,
        mu=1.0,
        coefficients="linear",
        samples=100,
        seed=0,
    )
    t = spatial_convergence_study(cfg)
    u = t.orders["u_L2"][-1]
    g = t.orders["u_H1"][-1]
    v = t.orders["v_L2"][-1]
    ok = 1.85 <= u <= 2.2 and 0.95 <= g <= 1.1 and 1.85 <= v <= 2.2
    record_criterion(
        2,
        ok,
        f"last-pair orders over 100 samples: u-L2 {u:.3f} in [1.85,2.2], "
        f"u-H1 {g:.3f} in [0.95,1.1], v-L2 {v:.3f} in [1.85,2.2]",
    )
    assert 1.85 <= u <= 2.2
    assert 0.95 <= g <= 1.1
    assert 1.85 <= v <= 2.2


def test_criterion_3_noise_increment_laws():
    cfg = StudyConfig(
        kind="noise-stats",
        taus=(F(1, 4), F(1, 8), F(1, 16), F(1, 32)),
        draws=100000,
        oracle_refinement=8,
        seed=0,
    )
    r = noise_stats_study(cfg)
    tilde_dev = float(np.max(np.abs(r.moments["tilde2"] / r.targets["tilde2"] - 1.0)))
    cross_dev = float(np.max(np.abs(r.cross / r.cross_target - 1.0)))
    diff_slope = r.slopes["diff2"]
    quartic_slope = r.slopes["tilde4"]
    ok = (
        tilde_dev <= 0.05
        and cross_dev <= 0.05
        and diff_slope >= 4.5
        and abs(quartic_slope - 6.0) <= 0.4
    )
    record_criterion(
        3,
        ok,
        f"100000 draws: tilde^2 dev {tilde_dev:.3f} <= 0.05, "
        f"bar*tilde dev {cross_dev:.3f} <= 0.05, "
        f"diff^2 slope {diff_slope:.2f} >= 4.5, "
        f"tilde^4 slope {quartic_slope:.2f} in 6+-0.4",
    )
    assert tilde_dev <= 0.05
    assert cross_dev <= 0.05
    assert diff_slope >= 4.5
    assert abs(quartic_slope - 6.0) <= 0.4


def test_criterion_4_deterministic_limit():
    temporal = temporal_convergence_study(
        StudyConfig(
            kind="temporal",
            T=F(1),
            taus=(F(1, 16), F(1, 32), F(1, 64), F(1, 128)),
            nx=16,
            coefficients="zero",
            zero_noise=True,
            samples=1,
        )
    )
    t_order = temporal.orders["u_L2"][-1]

    spatial = spatial_convergence_study(
        StudyConfig(
            kind="spatial",
            T=F(1, 10),
            tau=F(1, 1280),
            nx_list=(4, 8, 16, 32),
            coefficients="zero",
            zero_noise=True,
            samples=1,
        )
    )
    s_order = spatial.orders["u_L2"][-1]

    traj, _ = single_run(
        StudyConfig(
            kind="single-run",
            T=F(1),
            tau=F(1, 128),
            nx=32,
            coefficients="zero",
            zero_noise=True,
        )
    )
    J = traj.energy_J
    S = traj.energy_staggered
    drift = float(np.max(np.abs(J[1:] / J[1] - 1.0)))
    staggered_drift = float(np.max(np.abs(S[1:] / S[1] - 1.0)))

    ok = abs(t_order - 2.0) <= 0.15 and abs(s_order - 2.0) <= 0.1 and drift < 0.05
    record_criterion(
        4,
        ok,
        f"temporal order {t_order:.3f} (2.0+-0.15), spatial L2 order {s_order:.3f} "
        f"(2.0+-0.1), energy drift {drift:.3f} (< 0.05 required; staggered "
        f"invariant drift {staggered_drift:.1e})",
    )
    assert abs(t_order - 2.0) <= 0.15
    assert abs(s_order - 2.0) <= 0.1
    # The kinetic term enters the monitor with weight 1 instead of 1/2, so
    # the exchange between kinetic and elastic energy shows up as an
    # order-one oscillation; the staggered invariant above is conserved to
    # rounding.  This bound therefore fails and is left failing on purpose.
    assert drift < 0.05, (
        f"monitor drift {drift:.3f} (staggered invariant drift {staggered_drift:.1e})"
    )


def test_criterion_5_manufactured_solution_orders():
    temporal = mms_study(
        StudyConfig(
            kind="mms",
            T=F(1),
            taus=(F(1, 8), F(1, 16), F(1, 32), F(1, 64)),
            nx=128,
            coefficients="zero",
        )
    )
    t_order = temporal.orders["u_L2"][-1]
    spatial = mms_study(
        StudyConfig(
            kind="mms",
            T=F(1, 10),
            tau=F(1, 1280),
            nx_list=(4, 8, 16, 32),
            coefficients="zero",
        )
    )
    s_order = spatial.orders["u_L2"][-1]
    ok = abs(t_order - 2.0) <= 0.15 and abs(s_order - 2.0) <= 0.1
    record_criterion(
        5,
        ok,
        f"exact-solution errors: temporal order {t_order:.3f} (2.0+-0.15), "
        f"spatial L2 order {s_order:.3f} (2.0+-0.1)",
    )
    assert abs(t_order - 2.0) <= 0.15
    assert abs(s_order - 2.0) <= 0.1


def test_criterion_6_dense_oracle_equivalence():
    nx, tau = 4, F(1, 8)
    bars = np.array([0.3, -0.2, 0.25, -0.15])
    hats = np.array([0.02, -0.01, 0.015, -0.02])
    coeffs = model.builtin_linear()
    dm = fem.make_dofmap(build_rect_mesh(DOMAIN, nx, nx))
    assert dm.free.size == 18

    ops = stepper.prepare_scheme(dm, 1.0, 1.0, tau, picard_tol=1e-13, picard_cap=100)
    fields = stepper.prepare_initial_fields(ops, model.default_initial_data())
    state = stepper.first_step(ops, fields, coeffs, bars[0], hats[0])
    us, vs = [fields.u0, state.u], [fields.v0, state.v]
    for n in range(1, 4):
        state, _ = stepper.step(ops, state, coeffs, bars[n], hats[n])
        us.append(state.u)
        vs.append(state.v)

    ref_u, ref_v = dense_coupled_trajectory(
        nx, float(tau), 4, 1.0, 1.0, coeffs, fields.u0, fields.v0, bars, hats,
        picard_tol=1e-14, picard_cap=200,
    )
    worst = 0.0
    for n in range(1, 5):
        worst = max(
            worst,
            float(np.max(np.abs(us[n] - ref_u[n]) / (1.0 + np.abs(ref_u[n])))),
            float(np.max(np.abs(vs[n] - ref_v[n]) / (1.0 + np.abs(ref_v[n])))),
        )
    ok = worst <= 1e-9
    record_criterion(
        6,
        ok,
        f"4 forced-noise steps on 18 free dofs vs dense un-eliminated solve: "
        f"worst componentwise deviation {worst:.2e} <= 1e-9",
    )
    assert worst <= 1e-9


def test_criterion_7_structural_properties():
    dm = fem.make_dofmap(build_rect_mesh(DOMAIN, 4, 4))
    forms = fem.FormMatrices.assemble(dm)
    a = fem.assemble_elasticity(dm, 1.3, 0.7, parts=(forms.a_div, forms.a_eps))
    ops = stepper.prepare_scheme(dm, 1.3, 0.7, F(1, 8), forms=forms)
    checks = {}

    checks["symmetry"] = (
        (forms.mass - forms.mass.T).nnz == 0 and (a - a.T).nnz == 0
    )

    motions = rigid_motions(dm.mesh.vertices)
    checks["rigid-kernel"] = all(
        float(np.max(np.abs(a @ r.ravel()))) <= 1e-12 for r in motions
    )

    spd = True
    for nx in (2, 3, 4):
        small = stepper.prepare_scheme(
            fem.make_dofmap(build_rect_mesh(DOMAIN, nx, nx)), 1.0, 1.0, F(1, 8)
        )
        spd = spd and float(np.linalg.eigvalsh(small.system.matrix.toarray()).min()) > 0.0
    checks["post-elimination-spd"] = spd

    rng = np.random.default_rng(5)
    coeffs = rng.standard_normal(dm.n_dofs)
    coeffs[dm.constrained] = 0.0
    w = fem.FeFunction(dm, coeffs)
    p = fem.l2_project(
        lambda pts: fem.eval_fe(w, pts), dm, ops.mass_c, constrained=dm.constrained
    )
    r = fem.elasticity_project(w, dm, 1.3, 0.7, ops.stiff_c, a_full=a)
    checks["projection-idempotence"] = (
        float(np.max(np.abs(p.coeffs - coeffs))) <= 1e-10
        and float(np.max(np.abs(r.coeffs - coeffs))) <= 1e-10
    )

    lw = fem.discrete_L(w, ops.mass_c, a, dm.constrained)
    resid = (forms.mass @ lw.coeffs + a @ coeffs)[dm.free]
    checks["discrete-operator-identity"] = float(np.max(np.abs(resid))) <= 1e-10

    u_pt = rng.standard_normal((40, 2))
    v_pt = rng.standard_normal((40, 2))
    checks["coefficient-derivative-fd"] = all(
        dg_fd_error(c, u_pt, v_pt) <= 1e-6
        for c in (model.builtin_linear(), model.builtin_trig())
    )

    fine = fem.make_dofmap(build_rect_mesh(DOMAIN, 8, 8))
    uf = fem.prolong(w, fine)
    fine_forms = fem.FormMatrices.assemble(fine)
    norms_ok = True
    for kind in ("L2", "H1-semi", "div", "eps"):
        nc = fem.fe_norm(w, kind, forms)
        nf = fem.fe_norm(uf, kind, fine_forms)
        norms_ok = norms_ok and abs(nf - nc) <= 1e-12 * max(1.0, nc)
    checks["prolongation-norms"] = norms_ok

    failed = [name for name, good in checks.items() if not good]
    record_criterion(
        7,
        not failed,
        f"{len(checks) - len(failed)}/{len(checks)} structural checks"
        + (f"; failed: {', '.join(failed)}" if failed else ""),
    )
    assert not failed, failed


def test_criterion_8_stability_monitor(noisy_temporal_table):
    t = noisy_temporal_table
    assert t.energy_mean is not None and t.max_picard is not None
    worst_ratio = 0.0
    for trace in t.energy_mean.values():
        worst_ratio = max(worst_ratio, float(np.max(trace[1:]) / trace[1]))
    picard_ok = all(v < 50 for v in t.max_picard.values())
    ok = worst_ratio <= 10.0 and t.failed_samples == 0 and picard_ok
    record_criterion(
        8,
        ok,
        f"sample-mean energy max/first ratio {worst_ratio:.3f} <= 10 across all "
        f"step sizes; failed samples {t.failed_samples}; max Picard iterations "
        f"{max(t.max_picard.values())}",
    )
    assert worst_ratio <= 10.0
    assert t.failed_samples == 0
    assert picard_ok
