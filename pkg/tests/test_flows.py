"""Flow stepping: fixed points, exact modes, conservation laws, sphere model."""

import numpy as np
import pytest

from ricci_heat_lab.errors import (
    BlowupError,
    CflViolationError,
    DomainError,
    GridError,
)
from ricci_heat_lab.flows import (
    FlowTrajectory,
    RunConfig,
    SphereModel,
    area_series,
    cfl_limit,
    conjugate_heat_solve,
    coupled_step,
    heat_step,
    mass_series,
    read_trajectory,
    ricci_step,
    run_coupled_flow,
    sphere_exact,
    unit_sphere_volume,
    write_trajectory,
)
from ricci_heat_lab.grid_geometry import ConformalMetric, GridSpec, ScalarField

TWO_PI = 2.0 * np.pi


def torus(n=64):
    return GridSpec(n, n, TWO_PI, TWO_PI)


def flat(spec, t=0.0):
    return ConformalMetric(spec, np.zeros(spec.shape), t)


def auto_dt(spec, fraction=0.18):
    return fraction * min(spec.hx, spec.hy) ** 2


class TestRicciStep:
    def test_flat_fixed_point(self):
        spec = torus(16)
        out = ricci_step(flat(spec), auto_dt(spec))
        assert np.array_equal(out.f, np.zeros(spec.shape))
        assert out.t == pytest.approx(auto_dt(spec))

    def test_constant_fixed_point(self):
        spec = torus(16)
        c = 0.42
        metric = ConformalMetric(spec, c * np.ones(spec.shape))
        dt = 0.18 * min(spec.hx, spec.hy) ** 2 * np.exp(2 * c)
        out = ricci_step(metric, dt)
        assert np.array_equal(out.f, metric.f)

    def test_small_amplitude_linearization(self):
        # ∂_t f = e^{-2f} Δ₀ f ≈ Δ₀ f near f = 0: the sin x mode decays at rate 1
        spec = torus(64)
        x, _ = spec.coords()
        eps, dt = 0.01, 1e-3
        metric = ConformalMetric(spec, eps * np.sin(x))
        out = ricci_step(metric, dt)
        linear = (1.0 - dt) * metric.f
        tol = 10.0 * (eps**2 * dt + eps * dt**2 + eps * dt * spec.hx**2)
        assert np.abs(out.f - linear).max() < tol

    def test_cfl_rejection(self):
        spec = torus(16)
        with pytest.raises(CflViolationError):
            ricci_step(flat(spec), 10.0 * cfl_limit(flat(spec)))


class TestHeatStep:
    def test_constant_unchanged(self):
        spec = torus(16)
        u = ScalarField(spec, 1.7 * np.ones(spec.shape))
        out = heat_step(flat(spec), u, auto_dt(spec))
        assert np.array_equal(out.values, u.values)

    def test_flat_mode_decay(self):
        spec = torus(64)
        x, _ = spec.coords()
        dt = auto_dt(spec)
        steps = 60
        u = ScalarField(spec, np.sin(x))
        for _ in range(steps):
            u = heat_step(flat(spec), u, dt)
        t = steps * dt
        assert np.abs(u.values - np.exp(-t) * np.sin(x)).max() < 2e-4

    def test_flat_two_mode_decay(self):
        spec = torus(64)
        x, y = spec.coords()
        dt = auto_dt(spec)
        steps = 50
        u = ScalarField(spec, np.sin(x) + np.cos(2 * y))
        for _ in range(steps):
            u = heat_step(flat(spec), u, dt)
        t = steps * dt
        expected = np.exp(-t) * np.sin(x) + np.exp(-4 * t) * np.cos(2 * y)
        assert np.abs(u.values - expected).max() < 2e-3

    def test_refinement_order_of_flat_mode(self):
        # halving h and quartering dt shrinks the error by a factor in [3.4, 4.6]
        errs = []
        base_dt = auto_dt(torus(32))
        for n, dt in ((32, base_dt), (64, base_dt / 4)):
            spec = torus(n)
            x, _ = spec.coords()
            cfg = RunConfig(spec, np.zeros(spec.shape), np.sin(x), T=0.2, dt=None)
            cfg.dt = dt
            n_steps = round(0.2 / dt)
            u = ScalarField(spec, np.sin(x))
            metric = flat(spec)
            for _ in range(n_steps):
                u = heat_step(metric, u, dt)
            errs.append(np.abs(u.values - np.exp(-n_steps * dt) * np.sin(x)).max())
        assert 3.4 < errs[0] / errs[1] < 4.6


class TestCoupledFlow:
    def test_constant_u_is_preserved_exactly(self):
        spec = torus(16)
        x, y = spec.coords()
        cfg = RunConfig(
            spec, 0.1 * np.sin(x) * np.sin(y), 0.8 * np.ones(spec.shape), T=0.05
        )
        traj = run_coupled_flow(cfg)
        for snap in traj.snapshots:
            assert np.array_equal(snap.u.values, 0.8 * np.ones(spec.shape))

    def test_flat_stays_flat(self):
        spec = torus(16)
        x, _ = spec.coords()
        cfg = RunConfig(spec, np.zeros(spec.shape), np.sin(x), T=0.05)
        traj = run_coupled_flow(cfg)
        for snap in traj.snapshots:
            assert np.array_equal(snap.metric.f, np.zeros(spec.shape))

    def test_torus_area_conserved_under_ricci_flow(self):
        spec = torus(32)
        x, y = spec.coords()
        cfg = RunConfig(spec, 0.1 * np.sin(x) * np.sin(y), np.ones(spec.shape), T=0.25)
        traj = run_coupled_flow(cfg)
        areas = area_series(traj)
        assert np.abs(areas - areas[0]).max() / areas[0] < 1e-6

    def test_max_principle_advisory_logged(self):
        spec = torus(16)
        x, _ = spec.coords()
        cfg = RunConfig(spec, np.zeros(spec.shape), 1 + 0.5 * np.sin(x), T=0.05)
        traj = run_coupled_flow(cfg)
        assert traj.log["max_principle_ok"]

    def test_store_every_thins_snapshots(self):
        spec = torus(16)
        x, _ = spec.coords()
        cfg = RunConfig(spec, np.zeros(spec.shape), np.sin(x), T=0.05, store_every=4)
        traj = run_coupled_flow(cfg)
        assert traj.store_every == 4
        assert traj.snapshots[-1].t == pytest.approx(0.05)
        assert traj.dt == pytest.approx(4 * traj.step_dt)

    def test_blowup_raises(self):
        spec = GridSpec(8, 8, TWO_PI, TWO_PI)
        x, _ = spec.coords()
        huge = 8.0e307 * (1.0 + 0.9 * np.sin(x))
        cfg = RunConfig(spec, np.zeros(spec.shape), huge, T=1.0)
        with pytest.raises(BlowupError):
            run_coupled_flow(cfg)

    def test_config_rejects_cfl_violating_dt(self):
        spec = torus(16)
        with pytest.raises(CflViolationError):
            RunConfig(spec, np.zeros(spec.shape), np.ones(spec.shape), T=1.0, dt=1.0)

    def test_config_rejects_non_multiple_T(self):
        spec = torus(16)
        dt = auto_dt(spec)
        with pytest.raises(GridError):
            RunConfig(
                spec, np.zeros(spec.shape), np.ones(spec.shape), T=dt * 10.5, dt=dt
            ).resolve_steps()


class TestConjugateHeat:
    def test_flat_static_constant_solution(self):
        spec = torus(16)
        x, _ = spec.coords()
        cfg = RunConfig(spec, np.zeros(spec.shape), np.sin(x), T=0.05)
        traj = run_coupled_flow(cfg)
        out = conjugate_heat_solve(traj, ScalarField(spec, 2.0 * np.ones(spec.shape)))
        for snap in out.snapshots:
            assert np.array_equal(snap.u.values, 2.0 * np.ones(spec.shape))

    def test_mass_conservation_on_curved_run(self):
        spec = torus(32)
        x, y = spec.coords()
        cfg = RunConfig(spec, 0.1 * np.sin(x) * np.sin(y), 1 + 0.5 * np.cos(x), T=0.25)
        traj = run_coupled_flow(cfg)
        uT = 1.0 + 0.4 * np.exp((np.cos(x) + np.cos(y) - 2.0) / 0.5)
        out = conjugate_heat_solve(traj, ScalarField(spec, uT))
        masses = mass_series(out)
        assert np.abs(masses - masses[0]).max() / abs(masses[0]) < 1e-6
        assert out.log["mass_rel_drift"] < 1e-6

    def test_grid_mismatch_rejected(self):
        spec = torus(16)
        x, _ = spec.coords()
        cfg = RunConfig(spec, np.zeros(spec.shape), np.sin(x), T=0.05)
        traj = run_coupled_flow(cfg)
        other = torus(32)
        with pytest.raises(GridError):
            conjugate_heat_solve(traj, ScalarField(other, np.ones(other.shape)))


class TestSphereModel:
    def test_unit_sphere_state(self):
        state = sphere_exact(SphereModel(2), 0.0)
        assert state.scale == 1.0
        assert state.R == 2.0
        assert state.lambda1 == 2.0
        assert state.volume == pytest.approx(4 * np.pi, rel=1e-14)

    def test_heat_mode_amplitude_n2(self):
        model = SphereModel(2)
        for t in (0.0, 0.1, 0.3, 0.49):
            assert sphere_exact(model, t).heat_amplitude == pytest.approx(
                1 - 2 * t, rel=1e-14
            )

    def test_heat_mode_solves_the_ode(self):
        # a(t) = scale^{n/(2(n-1))} satisfies a' = -λ₁(t)·a for every dimension
        for n in (2, 3, 5):
            model = SphereModel(n)
            t, eps = 0.3 * model.T_star, 1e-7
            a_plus = sphere_exact(model, t + eps).heat_amplitude
            a_minus = sphere_exact(model, t - eps).heat_amplitude
            state = sphere_exact(model, t)
            deriv = (a_plus - a_minus) / (2 * eps)
            assert deriv == pytest.approx(-state.lambda1 * state.heat_amplitude, rel=1e-6)

    def test_conjugate_constant_keeps_unit_mass(self):
        for n in (2, 3, 4):
            model = SphereModel(n)
            for t in (0.0, 0.2 * model.T_star, 0.8 * model.T_star):
                state = sphere_exact(model, t)
                assert state.conjugate_constant * state.volume == pytest.approx(
                    1.0, rel=1e-12
                )

    def test_conjugate_constant_closed_form_n2(self):
        model = SphereModel(2)
        t = 0.2
        expected = 1.0 / (4 * np.pi * (1 - 2 * t))
        assert sphere_exact(model, t).conjugate_constant == pytest.approx(
            expected, rel=1e-13
        )

    def test_blowup_time_rejected(self):
        model = SphereModel(2)
        with pytest.raises(DomainError):
            sphere_exact(model, 0.5)
        with pytest.raises(DomainError):
            sphere_exact(SphereModel(3), 0.26)

    def test_unit_volumes(self):
        assert unit_sphere_volume(2) == pytest.approx(4 * np.pi, rel=1e-14)
        assert unit_sphere_volume(3) == pytest.approx(2 * np.pi**2, rel=1e-14)


class TestTrajectoryIO:
    def test_round_trip(self, tmp_path):
        spec = torus(16)
        x, y = spec.coords()
        cfg = RunConfig(
            spec, 0.05 * np.sin(x + y), 1 + 0.3 * np.cos(x), T=0.02, store_every=2
        )
        traj = run_coupled_flow(cfg)
        path = tmp_path / "run.traj"
        write_trajectory(path, traj, {"scenario": "round-trip"})
        back, echo = read_trajectory(path)
        assert echo["scenario"] == "round-trip"
        assert echo["store_every"] == 2
        assert len(back.snapshots) == len(traj.snapshots)
        for a, b in zip(traj.snapshots, back.snapshots):
            assert a.t == b.t
            assert np.array_equal(a.metric.f, b.metric.f)
            assert np.array_equal(a.u.values, b.u.values)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.traj"
        path.write_bytes(b"NOTATRAJ" + b"\x00" * 64)
        with pytest.raises(GridError):
            read_trajectory(path)


class TestFlowTrajectoryInvariants:
    def test_rejects_irregular_spacing(self):
        spec = torus(16)
        x, _ = spec.coords()
        u = ScalarField(spec, np.sin(x))
        snaps = [
            (0.0, flat(spec, 0.0), u),
            (0.1, flat(spec, 0.1), u),
            (0.35, flat(spec, 0.35), u),
        ]
        from ricci_heat_lab.flows import Snapshot

        with pytest.raises(GridError):
            FlowTrajectory([Snapshot(*s) for s in snaps], dt=0.1, T=0.35)
