import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings
from hypothesis import strategies as st

from services.errors import NonPositiveInputError, ZeroAreaError
from services.gas_exchange import (
    EXHAUST_PORT,
    EXHAUST_VALVE,
    INTAKE_PORT,
    INTAKE_VALVE,
    ZONES,
    GasPropertyTable,
    PortGeometry,
    ValveLiftCurve,
    calibrate_intake_port_coefficient,
    cycle_mass_flow,
    gas_exchange_bc,
    htc_from_nu,
    jet_velocity,
    load_gas_properties,
    nu_exhaust_port,
    nu_exhaust_valve,
    nu_intake_port,
    nu_intake_valve,
    reynolds_number,
)
from services.state_space import EngineState


@pytest.fixture
def ports():
    intake = PortGeometry(0.034, 0.03, 0.08, ValveLiftCurve.synthetic(0.011, 0.034, -360.0, -150.0))
    exhaust = PortGeometry(0.029, 0.027, 0.07, ValveLiftCurve.synthetic(0.010, 0.029, 130.0, 360.0))
    return intake, exhaust


class TestCorrelations:
    def test_exhaust_valve_spot_value(self):
        assert float(nu_exhaust_valve(1.0e4, 10.0)) == pytest.approx(609.3, abs=0.1)

    def test_exhaust_port_spot_value(self):
        assert float(nu_exhaust_port(1.0e4, 0.7)) == pytest.approx(133.5, abs=0.1)

    def test_intake_valve_is_sixty_percent(self):
        ratio = nu_intake_valve(1.0e4, 10.0) / nu_exhaust_valve(1.0e4, 10.0)
        assert float(ratio) == pytest.approx(0.6, rel=1e-14)
        assert float(nu_intake_valve(1.0e4, 10.0)) == pytest.approx(365.6, abs=0.1)

    def test_intake_port_linear_in_re(self):
        assert float(nu_intake_port(2.0e4, 0.01)) == pytest.approx(200.0)

    def test_non_positive_inputs(self):
        with pytest.raises(NonPositiveInputError):
            nu_exhaust_valve(0.0, 10.0)
        with pytest.raises(NonPositiveInputError):
            nu_exhaust_port(1.0e4, 0.0)
        with pytest.raises(NonPositiveInputError):
            reynolds_number(10.0, 0.0, 1e-5)

    @hyp_settings(max_examples=100, deadline=None)
    @given(
        st.floats(1.0, 1.0e6, allow_nan=False),
        st.floats(1.01, 10.0, allow_nan=False),
        st.floats(0.5, 20.0, allow_nan=False),
    )
    def test_monotone_in_reynolds(self, re, factor, d_over_l):
        assert nu_exhaust_valve(re * factor, d_over_l) > nu_exhaust_valve(re, d_over_l)
        assert nu_intake_valve(re * factor, d_over_l) > nu_intake_valve(re, d_over_l)
        assert nu_exhaust_port(re * factor, 0.7) > nu_exhaust_port(re, 0.7)

    def test_calibrated_intake_coefficient_hits_target(self):
        props = GasPropertyTable.air().at(320.0)
        c = calibrate_intake_port_coefficient(450.0, 3.0e4, 0.03, props)
        alpha = htc_from_nu(nu_intake_port(3.0e4, c), 0.03, props.conductivity)
        assert float(alpha) == pytest.approx(450.0, rel=1e-12)


class TestProperties:
    def test_linear_interpolation(self):
        table = GasPropertyTable.air()
        props = table.at(350.0)
        assert props.nu == pytest.approx(0.5 * (15.89e-6 + 26.41e-6))
        assert props.diffusivity == pytest.approx(props.nu / props.prandtl)

    def test_held_at_table_ends(self):
        table = GasPropertyTable.air()
        assert table.at(100.0).conductivity == table.at(300.0).conductivity

    def test_load_csv(self, tmp_path):
        path = tmp_path / "props.csv"
        path.write_text("T_K,nu_m2s,lambda_WmK,Pr\n800,8e-5,0.057,0.71\n300,1.6e-5,0.026,0.71\n")
        table = load_gas_properties(path)
        np.testing.assert_array_equal(table.temperature, [300.0, 800.0])


class TestFlow:
    def test_cycle_mass_flow(self):
        assert cycle_mass_flow(400.0, 6000.0) == pytest.approx(400e-6 * 50.0)

    def test_jet_velocity_scales_with_open_fraction(self):
        always_open = np.full(720, 1e-3)
        half_open = np.where(np.arange(720) < 360, 1e-3, 0.0)
        v_full = jet_velocity(400.0, 6000.0, always_open, 1.2)
        v_half = jet_velocity(400.0, 6000.0, half_open, 1.2)
        assert v_full == pytest.approx(cycle_mass_flow(400.0, 6000.0) / (1.2 * 1e-3))
        assert v_half == pytest.approx(2.0 * v_full)

    def test_jet_velocity_is_area_weighted(self):
        area = 1e-3 * np.sin(np.linspace(0.0, np.pi, 181))[1:-1]
        v = jet_velocity(400.0, 6000.0, area, 1.2)
        assert v == pytest.approx(cycle_mass_flow(400.0, 6000.0) / (1.2 * area.mean()))
        nearly_closed = np.concatenate([[1e-12], area, [1e-12]])
        # two extra samples only dilute the mean area
        assert jet_velocity(400.0, 6000.0, nearly_closed, 1.2) == pytest.approx(v * nearly_closed.size / area.size)

    def test_closed_valve_has_no_flow_area(self):
        with pytest.raises(ZeroAreaError):
            jet_velocity(400.0, 6000.0, np.zeros(10), 1.2)

    def test_synthetic_lift_window(self):
        lift = ValveLiftCurve.synthetic(0.01, 0.03, 130.0, 360.0)
        opened = lift.crank_angle[lift.open_mask]
        assert opened.min() > 130.0
        assert opened.max() < 360.0
        assert 0.0 < lift.mean_open_lift() < 0.01
        with pytest.raises(ZeroAreaError):
            ValveLiftCurve(np.arange(3.0), np.zeros(3), np.zeros(3)).mean_open_lift()


class TestZoneBoundaryConditions:
    def test_fired_state(self, geometry, ports):
        state = EngineState(7000.0, 445.0, 310.0, 65.0, 30.0)
        bc = gas_exchange_bc(state, geometry, *ports, GasPropertyTable.air(), 1100.0)
        assert set(bc) == set(ZONES)
        for zone in ZONES:
            assert bc[zone][0] > 0
        assert bc[INTAKE_VALVE][1] == bc[INTAKE_PORT][1] == 310.0
        assert bc[EXHAUST_VALVE][1] == bc[EXHAUST_PORT][1] == 1100.0

    def test_coasting_exhaust_references_inlet_temperature(self, geometry, ports):
        state = EngineState(6000.0, 80.0, 305.0, 0.0, 0.0)
        bc = gas_exchange_bc(state, geometry, *ports, GasPropertyTable.air(), 1100.0)
        assert bc[EXHAUST_VALVE][1] == bc[EXHAUST_PORT][1] == 305.0
        assert bc[EXHAUST_PORT][0] > 0

    def test_no_air_no_heat_transfer(self, geometry, ports):
        state = EngineState(6000.0, 0.0, 305.0, 0.0, 0.0)
        bc = gas_exchange_bc(state, geometry, *ports, GasPropertyTable.air(), 1100.0)
        assert all(bc[zone][0] == 0.0 for zone in ZONES)

    def test_htc_grows_with_speed(self, geometry, ports):
        slow = gas_exchange_bc(EngineState(5000.0, 445.0, 310.0, 65.0, 30.0), geometry, *ports, GasPropertyTable.air(), 1100.0)
        fast = gas_exchange_bc(EngineState(9000.0, 445.0, 310.0, 65.0, 30.0), geometry, *ports, GasPropertyTable.air(), 1100.0)
        for zone in ZONES:
            assert fast[zone][0] > slow[zone][0]

    def test_stopped_engine_no_heat_transfer(self, geometry, ports):
        state = EngineState(0.0, 200.0, 305.0, 0.0, 0.0)
        bc = gas_exchange_bc(state, geometry, *ports, GasPropertyTable.air(), 1100.0)
        assert all(bc[zone] == (0.0, 305.0) for zone in ZONES)
