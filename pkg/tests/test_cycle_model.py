import numpy as np
import pytest

from services.coasting import CoastingParams, coasting_pressure_trace
from services.cycle_model import (
    R_UNIVERSAL,
    CycleResult,
    HtcClosure,
    PressureTrace,
    amount_of_substance,
    analyze_speed_point,
    build_htc_pdf,
    burn_fraction,
    burnt_volume_fraction,
    calibrate_closure,
    crank_time,
    cycle_aggregate,
    cylinder_volume,
    load_pressure_trace,
    piston_speed,
    polytropic_exponent,
    solve_tke,
    write_pressure_trace,
)
from services.errors import (
    GridMismatchError,
    IncompleteCycleError,
    MissingColumnError,
    TooFewCyclesError,
    ZeroMeanHtcError,
)
from services.state_space import EngineState
from services.synthetic import fired_pressure, synthetic_pressure_trace, wiebe_fraction

CRANK = np.linspace(-360.0, 360.0, 1441)


def isentropic(geometry, kappa, p_ini=1.0e5):
    params = CoastingParams(kappa=kappa, p_ini=p_ini, V_max=geometry.max_volume)
    return coasting_pressure_trace(params, geometry, CRANK)


class TestKinematics:
    def test_volume_limits(self, geometry):
        volume = cylinder_volume(geometry, [0.0, 180.0, -180.0, 360.0])
        assert volume[0] == pytest.approx(geometry.clearance_volume, rel=1e-12)
        assert volume[1] == pytest.approx(geometry.max_volume, rel=1e-12)
        assert volume[2] == pytest.approx(geometry.max_volume, rel=1e-12)
        assert volume[3] == pytest.approx(geometry.clearance_volume, rel=1e-12)

    def test_compression_ratio(self, geometry):
        assert geometry.max_volume / geometry.clearance_volume == pytest.approx(12.0, rel=1e-12)

    def test_mean_piston_speed(self, geometry):
        crank = np.linspace(0.0, 360.0, 36001)
        speed = np.abs(piston_speed(geometry, crank, 6000.0))
        assert speed[:-1].mean() == pytest.approx(geometry.mean_piston_speed(6000.0), rel=1e-4)

    def test_crank_time(self):
        t = crank_time([-360.0, 360.0], 6000.0)
        assert t[1] - t[0] == pytest.approx(0.02)


class TestPressureTrace:
    def test_unit_conversion(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text(
            "# engine_speed_rpm=7000\n# p_unit=bar\nalpha_cr_deg,cycle_001,cycle_002\n0,1.0,2.0\n1,1.5,2.5\n"
        )
        trace = load_pressure_trace(path)
        assert trace.engine_speed == 7000.0
        assert trace.n_cycles == 2
        np.testing.assert_allclose(trace.pressure, [[1.0e5, 1.5e5], [2.0e5, 2.5e5]])

    def test_missing_speed_metadata(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("alpha_cr_deg,cycle_001\n0,1.0\n1,1.5\n")
        with pytest.raises(MissingColumnError):
            load_pressure_trace(path)

    def test_write_then_load(self, tmp_path, geometry):
        trace = PressureTrace(CRANK, isentropic(geometry, 1.35)[None, :], 6500.0)
        write_pressure_trace(trace, tmp_path / "out.csv")
        loaded = load_pressure_trace(tmp_path / "out.csv")
        np.testing.assert_allclose(loaded.pressure, trace.pressure, rtol=1e-15)
        assert loaded.engine_speed == 6500.0


class TestBurnAnalysis:
    def test_polytropic_exponent_of_isentrope(self, geometry):
        pressure = isentropic(geometry, 1.37)
        assert polytropic_exponent(pressure, cylinder_volume(geometry, CRANK), CRANK) == pytest.approx(1.37, rel=1e-9)

    @pytest.mark.parametrize("start,duration", [(-10.0, 60.0), (-25.0, 50.0), (0.0, 80.0)])
    def test_wiebe_fraction_recovered(self, geometry, start, duration):
        kappa = 1.35
        volume = cylinder_volume(geometry, CRANK)
        x_true = wiebe_fraction(CRANK, start, duration)
        fired = fired_pressure(CRANK, volume, x_true, 1500.0, 1.0e5, kappa)
        trace = PressureTrace(CRANK, fired[None, :], 7000.0)
        motored = PressureTrace(CRANK, isentropic(geometry, kappa)[None, :], 7000.0)

        x = burn_fraction(trace, geometry, motored, window=(-130.0, 130.0))
        inside = (CRANK >= -130.0) & (CRANK <= 130.0)
        expected = x_true - x_true[inside][0]
        expected = expected / expected[inside][-1]
        assert np.max(np.abs(x[0][inside] - expected[inside])) < 0.02
        assert x[0][0] == 0.0
        assert x[0][-1] == pytest.approx(1.0)

    def test_grids_must_match(self, geometry):
        trace = PressureTrace(CRANK, isentropic(geometry, 1.35)[None, :], 7000.0)
        motored = PressureTrace(CRANK[::2], isentropic(geometry, 1.35)[None, ::2], 7000.0)
        with pytest.raises(GridMismatchError):
            burn_fraction(trace, geometry, motored)

    def test_burnt_volume_fraction_bounds(self):
        x = np.array([0.0, 0.2, 0.6, 1.0])
        y = burnt_volume_fraction(x, T_ub=np.full(4, 800.0), T_mean=np.full(4, 1600.0))
        np.testing.assert_allclose(y, [0.0, 0.6, 0.8, 1.0])
        assert np.all(np.diff(y) >= 0)


class TestTurbulence:
    def test_compression_conserves_k_v_two_thirds(self, geometry):
        crank = np.linspace(-130.0, 130.0, 2601)
        t = crank_time(crank, 7000.0)
        volume = cylinder_volume(geometry, crank)
        state = solve_tke(t, volume, 40.0, eps_c=0.0)
        invariant = state.k * volume ** (2.0 / 3.0)
        np.testing.assert_allclose(invariant, invariant[0], rtol=1e-6)
        assert state.clamped_steps == 0

    def test_pure_dissipation_closed_form(self):
        t = np.linspace(0.0, 0.02, 2001)
        state = solve_tke(t, np.full(t.shape, 1e-4), 100.0, eps_c=1.0, length_scale=0.1)
        expected = 100.0 / (1.0 + 1.0 * np.sqrt(100.0) * t / (2.0 * 0.1)) ** 2
        np.testing.assert_allclose(state.k, expected, rtol=1e-6)
        assert state.k[-1] == pytest.approx(25.0, rel=1e-6)


class TestHeatTransfer:
    def test_closure_power_law(self):
        closure = HtcClosure(scale=0.1, exponent=0.8)
        value = closure.evaluate(2.0e6, 10.0, 1500.0)
        assert value == pytest.approx(0.1 * 2.0e6**0.8 * 10.0**0.8 * 1500.0 ** (0.75 - 1.62 * 0.8))

    def test_constant_traces_aggregate_to_themselves(self):
        alpha = np.full(CRANK.shape, 800.0)
        result = cycle_aggregate(alpha, np.full(CRANK.shape, 900.0), CRANK, 7000.0)
        assert result.alpha_mean == pytest.approx(800.0, rel=1e-12)
        assert result.T_eff == pytest.approx(900.0, rel=1e-12)

    def test_t_eff_is_flux_weighted(self):
        alpha = np.where(CRANK < 0.0, 500.0, 1500.0)
        T = np.where(CRANK < 0.0, 800.0, 1200.0)
        result = cycle_aggregate(alpha, T, CRANK, 7000.0)
        # one trapezoid straddles the step on a half-degree grid
        assert result.alpha_mean == pytest.approx(1000.0, rel=1e-3)
        assert result.T_eff == pytest.approx(1100.0, rel=1e-3)

    def test_partial_cycle_rejected(self):
        crank = np.linspace(-180.0, 180.0, 721)
        with pytest.raises(IncompleteCycleError):
            cycle_aggregate(np.ones(crank.shape), np.ones(crank.shape), crank, 7000.0)

    def test_zero_htc_rejected(self):
        with pytest.raises(ZeroMeanHtcError):
            cycle_aggregate(np.zeros(CRANK.shape), np.full(CRANK.shape, 900.0), CRANK, 7000.0)

    def test_pdf_needs_two_cycles(self):
        result = CycleResult(CRANK, np.ones(CRANK.shape), 1.0, 900.0, 7000.0)
        with pytest.raises(TooFewCyclesError):
            build_htc_pdf([result])


class TestSpeedPoint:
    @pytest.fixture
    def state(self):
        return EngineState(7000.0, 445.0, 310.0, 65.0, 30.3)

    def test_ensemble_chain(self, geometry, closure, settings, state):
        fired, motored = synthetic_pressure_trace(geometry, state, settings, n_cycles=5, seed=1)
        results = analyze_speed_point(fired, motored, state, geometry, closure, settings)
        assert len(results) == 5
        amount = amount_of_substance(state.m_air, state.m_fuel, settings.molar_mass)
        volume = cylinder_volume(geometry, fired.crank_angle)
        for cycle, result in zip(fired.pressure, results):
            T_mean = cycle * volume / (amount * R_UNIVERSAL)
            assert result.alpha_mean > 0
            assert T_mean.min() <= result.T_eff <= T_mean.max()
        pdf = build_htc_pdf(results, n_bins=4)
        assert pdf.mass() == pytest.approx(1.0, rel=1e-12)

    def test_calibration_hits_target(self, geometry, closure, settings, state):
        fired, motored = synthetic_pressure_trace(geometry, state, settings, n_cycles=2, seed=2)
        results = analyze_speed_point(fired, motored, state, geometry, closure, settings)
        calibrated = calibrate_closure(closure, 1200.0, results[0])
        again = analyze_speed_point(fired, motored, state, geometry, calibrated, settings)
        assert again[0].alpha_mean == pytest.approx(1200.0, rel=1e-9)
        assert again[0].T_eff == pytest.approx(results[0].T_eff, rel=1e-12)
