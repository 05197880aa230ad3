"""Study orchestration: error norms, rate estimation, reduction, artifacts."""

from fractions import Fraction

import numpy as np
import pytest

from elwave import fem, stepper
from elwave.ensemble import (
    ERROR_FIELDS,
    RateTable,
    StudyConfig,
    StudyFailure,
    error_norms,
    estimate_rate,
    make_coefficients,
    noise_stats_study,
    resolve_workers,
    single_run,
    temporal_convergence_study,
)
from elwave.mesh import build_rect_mesh

SQUARE = (-1.0, 1.0, -1.0, 1.0)


class TestEstimateRate:
    def test_exact_halving(self):
        assert estimate_rate([4.0, 1.0])[0] == pytest.approx(2.0, abs=1e-15)
        assert np.allclose(estimate_rate([8.0, 4.0, 2.0]), [1.0, 1.0])

    def test_published_table_pair(self):
        # a dyadic error pair whose printed order is 1.892
        rate = estimate_rate([8.594e-3, 2.316e-3])[0]
        assert rate == pytest.approx(1.892, abs=5e-4)

    def test_guards(self):
        with pytest.raises(ValueError, match="positive"):
            estimate_rate([1.0, 0.0])
        with pytest.raises(ValueError, match="positive"):
            estimate_rate([1.0, -2.0])
        with pytest.raises(ValueError, match="one-dimensional"):
            estimate_rate(np.ones((2, 2)))


class TestStudyConfig:
    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown study kind"):
            StudyConfig(kind="bogus")

    def test_rejects_non_dyadic_ladders(self):
        with pytest.raises(ValueError, match="halve"):
            StudyConfig(kind="temporal", taus=(Fraction(1, 4), Fraction(1, 12)))
        with pytest.raises(ValueError, match="halve"):
            StudyConfig(kind="spatial", nx_list=(8, 24))
        with pytest.raises(ValueError, match="at least two"):
            StudyConfig(kind="temporal", taus=(Fraction(1, 4),))

    def test_rejects_bad_material_and_samples(self):
        with pytest.raises(ValueError, match="samples"):
            StudyConfig(kind="temporal", samples=0)
        with pytest.raises(ValueError, match="lam"):
            StudyConfig(kind="temporal", lam=-1.0)


class TestErrorNorms:
    def _traj(self, dm, us, vs, times):
        steps = np.arange(len(times))
        return stepper.TrajectoryResult(
            checkpoint_steps=steps,
            times=np.asarray(times),
            u=us,
            v=vs,
            max_picard=0,
        )

    def test_zero_against_itself_and_known_offset(self):
        dm = fem.make_dofmap(build_rect_mesh(SQUARE, 2, 2))
        forms = fem.FormMatrices.assemble(dm)
        rng = np.random.default_rng(0)
        u0, u1 = rng.standard_normal(dm.n_dofs), rng.standard_normal(dm.n_dofs)
        times = [0.0, 0.5]
        base = self._traj(dm, [u0, u1], [u0, u1], times)
        same = error_norms(base, base, forms)
        assert all(same[f] == 0.0 for f in ERROR_FIELDS)

        e = np.zeros(dm.n_dofs)
        e[2 * dm.mesh.vertex_index(1, 1)] = 1.0  # center vertex, component 0
        shifted = self._traj(dm, [u0, u1 + e], [u0, u1], times)
        out = error_norms(shifted, base, forms)
        mass = forms.mass.toarray()
        grad = forms.grad.toarray()
        j = 2 * dm.mesh.vertex_index(1, 1)
        assert out["u_L2"] == pytest.approx(mass[j, j], rel=1e-14)
        assert out["u_H1"] == pytest.approx(grad[j, j], rel=1e-14)
        assert out["v_L2"] == 0.0

    def test_step_zero_is_excluded(self):
        dm = fem.make_dofmap(build_rect_mesh(SQUARE, 2, 2))
        forms = fem.FormMatrices.assemble(dm)
        ones = np.ones(dm.n_dofs)
        zeros = np.zeros(dm.n_dofs)
        traj = self._traj(dm, [ones, zeros], [zeros, zeros], [0.0, 0.5])
        ref = self._traj(dm, [zeros, zeros], [zeros, zeros], [0.0, 0.5])
        out = error_norms(traj, ref, forms)
        assert out["u_L2"] == 0.0  # the difference at t = 0 never counts

    def test_misaligned_times_raise(self):
        dm = fem.make_dofmap(build_rect_mesh(SQUARE, 2, 2))
        forms = fem.FormMatrices.assemble(dm)
        z = np.zeros(dm.n_dofs)
        traj = self._traj(dm, [z, z], [z, z], [0.0, 0.3])
        ref = self._traj(dm, [z, z], [z, z], [0.0, 0.5])
        with pytest.raises(ValueError, match="not aligned"):
            error_norms(traj, ref, forms)


class TestReduction:
    def _tiny_cfg(self, **kw):
        base = dict(
            kind="temporal",
            T=Fraction(1, 2),
            taus=(Fraction(1, 4), Fraction(1, 8)),
            nx=4,
            samples=4,
            coefficients="trig",
            seed=7,
        )
        base.update(kw)
        return StudyConfig(**base)

    def test_serial_and_parallel_agree_bitwise(self):
        serial = temporal_convergence_study(self._tiny_cfg(workers=1))
        parallel = temporal_convergence_study(self._tiny_cfg(workers=2))
        for f in ERROR_FIELDS:
            assert np.array_equal(serial.errors[f], parallel.errors[f])
            assert np.array_equal(serial.stderr[f], parallel.stderr[f])

    def test_aborts_when_samples_fail(self):
        cfg = self._tiny_cfg(
            taus=(Fraction(1, 2), Fraction(1, 4)), picard_cap=1, picard_tol=1e-16, samples=3
        )
        with pytest.raises(StudyFailure, match="aborted"):
            temporal_convergence_study(cfg)

    def test_missing_ladder_is_rejected(self):
        with pytest.raises(ValueError, match="tau ladder"):
            temporal_convergence_study(StudyConfig(kind="temporal", nx=4))

    def test_deterministic_limit_reaches_second_order(self):
        cfg = StudyConfig(
            kind="temporal",
            T=Fraction(1, 2),
            taus=(Fraction(1, 8), Fraction(1, 16), Fraction(1, 32)),
            nx=8,
            samples=1,
            coefficients="zero",
            zero_noise=True,
        )
        table = temporal_convergence_study(cfg)
        assert 1.6 <= table.orders["u_L2"][-1] <= 2.4
        assert table.failed_samples == 0

    def test_energy_traces_are_returned_when_asked(self):
        table = temporal_convergence_study(self._tiny_cfg(record_energy=True, samples=2))
        assert table.energy_mean is not None
        trace = table.energy_mean["1/4"]
        assert trace.shape == (3,)  # T/tau + 1 entries at tau = 1/4
        assert np.all(np.isfinite(trace))
        assert "tau_ref" in table.energy_mean
        assert table.max_picard is not None


class TestRateTable:
    def _table(self):
        errors = {f: np.array([4e-2, 1e-2]) for f in ERROR_FIELDS}
        stderr = {f: np.array([1e-4, 5e-5]) for f in ERROR_FIELDS}
        return RateTable(
            "temporal", "tau", [Fraction(1, 4), Fraction(1, 8)], errors, stderr, samples=10
        )

    def test_csv_layout(self, tmp_path):
        path = tmp_path / "rates.csv"
        self._table().to_csv(path)
        lines = path.read_text().strip().splitlines()
        header = lines[0].split(",")
        assert header[0] == "tau"
        assert header[1:4] == ["u_L2_error", "u_L2_order", "u_L2_stderr"]
        first = lines[1].split(",")
        assert first[0] == "1/4" and first[2] == ""  # no order on the first row
        second = lines[2].split(",")
        assert float(second[2]) == pytest.approx(2.0)

    def test_gnuplot_layout(self, tmp_path):
        path = tmp_path / "rates.gp"
        self._table().to_gnuplot(path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# temporal study over 10 samples")
        data = [ln for ln in lines if not ln.startswith("#")]
        assert len(data) == 2
        assert float(data[0].split()[0]) == 0.25


class TestNoiseStats:
    def test_report_shape_and_rough_slopes(self):
        cfg = StudyConfig(
            kind="noise-stats",
            taus=(Fraction(1, 4), Fraction(1, 8)),
            draws=300,
            oracle_refinement=4,
            seed=3,
        )
        report = noise_stats_study(cfg)
        assert report.draws == 300
        for key in ("bar2", "tilde2", "hat2", "diff2", "tilde4"):
            assert report.moments[key].shape == (2,)
        assert report.slopes["bar2"] == pytest.approx(1.0, abs=0.5)
        assert report.slopes["tilde2"] == pytest.approx(3.0, abs=0.8)
        lines = report.lines()
        assert lines[0] == "draws per level: 300"
        assert any(ln.startswith("bar*tilde:") for ln in lines)


class TestHelpers:
    def test_make_coefficients(self):
        assert make_coefficients("trig").name == "trig"
        with pytest.raises(ValueError, match="unknown coefficients"):
            make_coefficients("cubic")

    def test_resolve_workers(self, monkeypatch):
        monkeypatch.delenv("ELWAVE_WORKERS", raising=False)
        assert resolve_workers() == 1
        assert resolve_workers(3) == 3
        monkeypatch.setenv("ELWAVE_WORKERS", "5")
        assert resolve_workers() == 5
        monkeypatch.setenv("ELWAVE_WORKERS", "x")
        with pytest.raises(ValueError, match="integer"):
            resolve_workers()
        with pytest.raises(ValueError, match=">= 1"):
            resolve_workers(0)

    def test_single_run_returns_traces(self):
        cfg = StudyConfig(kind="single-run", T=Fraction(1, 2), tau=Fraction(1, 8), nx=4)
        traj, ops = single_run(cfg)
        assert traj.energy_J is not None and traj.energy_J.size == 5
        assert ops.tau == pytest.approx(1 / 8)
