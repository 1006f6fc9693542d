import numpy as np
import pytest

from services.errors import (
    DanglingPatchError,
    DisconnectedNodeError,
    InputValidationError,
    NonPositiveInputError,
    SingularSystemError,
)
from services.thermal_net import (
    BoundaryConditionSeries,
    ConductiveLink,
    SurfacePatch,
    ThermalNetwork,
    ThermalNode,
    TransientSolver,
    assemble,
    energy_balance,
    run_transient,
    steady_solve,
    transient_step,
)


def slab(capacity=100.0):
    """Three nodes in series, hot gas on node 0 and coolant on node 2"""
    return ThermalNetwork(
        nodes=[ThermalNode(id=f"n{i}", capacity=capacity, initial_temperature=373.0) for i in range(3)],
        links=[
            ConductiveLink(a="n0", b="n1", conductance=30000.0),
            ConductiveLink(a="n1", b="n2", conductance=30000.0),
        ],
        patches=[
            SurfacePatch(id="gas", node="n0", area=1.0, channel="chamber"),
            SurfacePatch(id="coolant", node="n2", area=1.0, channel="water:coolant"),
        ],
    )


def single_node():
    return ThermalNetwork(
        nodes=[ThermalNode(id="n", capacity=500.0, initial_temperature=300.0)],
        patches=[SurfacePatch(id="p", node="n", area=1.0, channel="gas")],
    )


def constant_series(times, **zones):
    return {channel: BoundaryConditionSeries.constant(times, alpha, T) for channel, (alpha, T) in zones.items()}


class TestAssembly:
    def test_laplacian_rows_sum_to_zero(self):
        system = assemble(slab())
        np.testing.assert_allclose(np.asarray(system.conduction.sum(axis=1)).ravel(), 0.0)
        assert system.patch_channels == ["chamber", "water:coolant"]

    def test_disconnected_node(self):
        network = slab()
        network.links = network.links[:1]
        with pytest.raises(DisconnectedNodeError):
            assemble(network)

    def test_patch_on_missing_node(self):
        network = slab()
        network.patches.append(SurfacePatch(id="stray", node="n9", area=1.0, channel="chamber"))
        with pytest.raises(DanglingPatchError):
            assemble(network)

    def test_patch_on_missing_channel(self):
        with pytest.raises(DanglingPatchError):
            assemble(slab(), channels=["chamber"])

    def test_link_to_missing_node(self):
        network = slab()
        network.links.append(ConductiveLink(a="n0", b="n7", conductance=1.0))
        with pytest.raises(InputValidationError):
            assemble(network)

    def test_network_file_round_trip(self, tmp_path):
        slab().save(tmp_path / "network.json")
        assert ThermalNetwork.load(tmp_path / "network.json") == slab()

    def test_invalid_network_file(self, tmp_path):
        path = tmp_path / "network.json"
        path.write_text('{"nodes": [{"id": "a", "capacity": -1.0}]}')
        with pytest.raises(InputValidationError):
            ThermalNetwork.load(path)


class TestSteady:
    def test_slab_through_flux(self):
        system = assemble(slab())
        alpha, T_eff = np.array([1000.0, 5000.0]), np.array([2000.0, 373.0])
        temperatures = steady_solve(system, alpha, T_eff)
        flows = system.patch_flows(temperatures, alpha, T_eff)
        assert flows[0] == pytest.approx(1.28447e6, rel=1e-5)
        assert flows[0] + flows[1] == pytest.approx(0.0, abs=1e-6 * flows[0])
        assert np.all(np.diff(temperatures) < 0)

    def test_no_active_patch(self):
        with pytest.raises(SingularSystemError):
            steady_solve(assemble(slab()), [0.0, 0.0], [2000.0, 373.0])


class TestTransient:
    def test_single_node_response(self):
        system = assemble(single_node())
        times = np.linspace(0.0, 10.0, 667)
        history = run_transient(system, constant_series(times, gas=(50.0, 400.0)))
        # backward Euler lags the exponential by about 0.03 K at this step
        assert history.temperatures[-1, 0] == pytest.approx(363.212, abs=0.04)
        assert history.temperatures[-1, 0] < 363.212

    def test_first_order_in_time(self):
        system = assemble(single_node())
        exact = 400.0 - 100.0 * np.exp(-1.0)
        errors = []
        for n in (201, 401, 801):
            history = run_transient(system, constant_series(np.linspace(0.0, 10.0, n), gas=(50.0, 400.0)))
            errors.append(abs(history.temperatures[-1, 0] - exact))
        assert errors[0] / errors[1] == pytest.approx(2.0, rel=0.05)
        assert errors[1] / errors[2] == pytest.approx(2.0, rel=0.05)

    def test_settles_on_steady_field(self):
        system = assemble(slab())
        alpha, T_eff = np.array([1000.0, 5000.0]), np.array([2000.0, 373.0])
        times = np.arange(401) * 0.05
        history = run_transient(system, constant_series(times, chamber=(1000.0, 2000.0), **{"water:coolant": (5000.0, 373.0)}))
        np.testing.assert_allclose(history.temperatures[-1], steady_solve(system, alpha, T_eff), atol=0.01)

    def test_steady_initial_field_stays_put(self):
        system = assemble(slab())
        alpha, T_eff = np.array([1000.0, 5000.0]), np.array([2000.0, 373.0])
        steady = steady_solve(system, alpha, T_eff)
        updated = transient_step(system, steady, 0.1, alpha, T_eff)
        np.testing.assert_allclose(updated, steady, rtol=1e-10)

    def test_energy_is_conserved(self):
        system = assemble(slab())
        times = np.arange(201) * 0.01
        series = {
            "chamber": BoundaryConditionSeries(times, 1000.0 + 500.0 * np.sin(times * 20.0), np.full(times.shape, 2000.0)),
            "water:coolant": BoundaryConditionSeries.constant(times, 5000.0, 373.0),
        }
        history = run_transient(system, series)
        balance = energy_balance(system, history)
        assert abs(balance.cumulative_residual) < 1e-9 * balance.throughput
        assert balance.absolute_residual < 1e-9 * balance.throughput
        assert balance.absolute_residual >= abs(balance.cumulative_residual)
        assert balance.absolute_residual == pytest.approx(np.abs(balance.steps["residual_W"]).sum() * history.dt)
        assert balance.steps["water_heat_out_W"].iloc[-1] > 0
        assert list(balance.steps.columns) == ["t_s", "gas_heat_in_W", "water_heat_out_W", "storage_W", "residual_W"]

    def test_missing_channel_series(self):
        system = assemble(slab())
        times = np.arange(3) * 0.1
        with pytest.raises(DanglingPatchError):
            run_transient(system, constant_series(times, chamber=(1000.0, 2000.0)))

    def test_non_positive_step(self):
        with pytest.raises(NonPositiveInputError):
            TransientSolver(assemble(slab()), 0.0)

    def test_factorizations_are_reused(self):
        solver = TransientSolver(assemble(slab()), 0.1)
        temperatures = np.full(3, 373.0)
        for _ in range(5):
            temperatures = solver.step(temperatures, [1000.0, 5000.0], [2000.0, 373.0])
        assert len(solver._factors) == 1
