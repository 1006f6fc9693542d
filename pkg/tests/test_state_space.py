import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, given, settings as hyp_settings
from hypothesis import strategies as st

from services.errors import (
    EmptySeriesError,
    GridMismatchError,
    HorizonExceededError,
    MissingColumnError,
    NonFiniteValueError,
    NonMonotoneTimeError,
    NonPositiveInputError,
    StateRangeError,
)
from services.state_space import (
    STATE_COLUMNS,
    EdgesGrid,
    EngineState,
    FullLoadCriterion,
    TelemetrySeries,
    bin_representative_states,
    build_pointer_matrix,
    build_state_histogram,
    clamp_report,
    clamp_state,
    consistency_report,
    discretize_state,
    discretize_states,
    lap_statistics,
    load_telemetry,
)

FIRED_BIN = (1, 1, 0, 1, 1)
COASTING_BIN = (0, 0, 0, 0, 0)


def write_csv(path, rows, columns=("t",) + STATE_COLUMNS):
    pd.DataFrame(rows, columns=list(columns)).to_csv(path, index=False)
    return path


class TestLoadTelemetry:
    def test_round_trip(self, telemetry_csv, small_series):
        loaded = load_telemetry(telemetry_csv)
        np.testing.assert_array_equal(loaded.timestamps, small_series.timestamps)
        np.testing.assert_array_equal(loaded.states, small_series.states)

    def test_schema_maps_column_names(self, tmp_path):
        path = write_csv(
            tmp_path / "renamed.csv",
            [[0.0, 7000, 400, 310, 60, 27], [0.1, 7000, 400, 310, 60, 27]],
            columns=("time", "rpm", "m_air", "t_int", "T_i", "m_fuel"),
        )
        series = load_telemetry(path, schema={"t": "time", "n_engine": "rpm"})
        assert len(series) == 2
        assert series.state(0).n_engine == 7000

    def test_missing_column(self, tmp_path):
        path = write_csv(tmp_path / "bad.csv", [[0.0, 7000, 400, 310, 60]], columns=("t",) + STATE_COLUMNS[:4])
        with pytest.raises(MissingColumnError) as excinfo:
            load_telemetry(path)
        assert excinfo.value.column == "m_fuel"

    def test_non_monotone_time(self, tmp_path):
        rows = [[0.0, 7000, 400, 310, 60, 27], [0.2, 7000, 400, 310, 60, 27], [0.1, 7000, 400, 310, 60, 27]]
        with pytest.raises(NonMonotoneTimeError) as excinfo:
            load_telemetry(write_csv(tmp_path / "t.csv", rows))
        assert excinfo.value.row == 2

    def test_non_finite_value(self, tmp_path):
        rows = [[0.0, 7000, 400, 310, 60, 27], [0.1, 7000, np.nan, 310, 60, 27]]
        with pytest.raises(NonFiniteValueError) as excinfo:
            load_telemetry(write_csv(tmp_path / "nan.csv", rows))
        assert excinfo.value.row == 1
        assert excinfo.value.column == "m_air"

    def test_negative_air_mass(self, tmp_path):
        rows = [[0.0, 7000, -1.0, 310, 60, 27]]
        with pytest.raises(StateRangeError):
            load_telemetry(write_csv(tmp_path / "neg.csv", rows))

    def test_torque_without_fuel_is_reported_not_raised(self, tmp_path):
        rows = [[0.0, 7000, 400, 310, 60, 27], [0.1, 7000, 400, 310, 60, 0.0]]
        series = load_telemetry(write_csv(tmp_path / "inconsistent.csv", rows))
        report = consistency_report(series)
        assert report["row"].tolist() == [1]
        assert not series.state(1).is_consistent


class TestDiscretization:
    def test_bins_are_left_closed(self, grid):
        index, clamped = discretize_state(EngineState(6000.0, 200.0, 300.0, 0.5, 0.5), grid)
        assert index == (1, 1, 0, 1, 1)
        assert not clamped

    def test_top_edge_belongs_to_last_bin(self, grid):
        index, clamped = discretize_state(EngineState(10000.0, 500.0, 330.0, 100.0, 50.0), grid)
        assert index == (2, 1, 0, 1, 1)
        assert not clamped

    def test_out_of_range_is_clamped(self, grid):
        state = EngineState(12000.0, 100.0, 310.0, -5.0, 0.0)
        index, clamped = discretize_state(state, grid)
        assert index == (2, 0, 0, 0, 0)
        assert clamped
        np.testing.assert_array_equal(clamp_state(state, grid).as_array(), [10000.0, 100.0, 310.0, -1.0, 0.0])

    def test_clamp_report_lists_dimensions(self, grid):
        series = TelemetrySeries([0.0, 0.1], [[12000.0, 100.0, 310.0, 10.0, 5.0], [7000.0, 100.0, 340.0, 10.0, 5.0]])
        report = clamp_report(series, grid)
        assert list(zip(report["row"], report["dimension"])) == [(0, "n_engine"), (1, "t_int")]

    @hyp_settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(
        st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=5, max_size=5),
    )
    def test_bin_center_maps_back_to_its_bin(self, grid, fractions):
        values = grid.lower + np.array(fractions) * (grid.upper - grid.lower)
        indices, _ = discretize_states(values, grid)
        center = grid.bin_center(indices[0])
        again, clamped = discretize_states(center, grid)
        np.testing.assert_array_equal(again, indices)
        assert not clamped.any()

    def test_grid_rejects_unsorted_edges(self):
        with pytest.raises(GridMismatchError):
            EdgesGrid(([1.0, 0.0], [0, 1], [0, 1], [0, 1], [0, 1]))


class TestHistogram:
    def test_density_integrates_to_one(self, grid, small_series):
        hist = build_state_histogram(small_series, grid)
        assert hist.total == 10
        assert hist.counts[FIRED_BIN] == 5
        assert hist.counts[COASTING_BIN] == 5
        assert np.sum(hist.density * grid.bin_volumes()) == pytest.approx(1.0, rel=1e-12)
        assert hist.probability()[FIRED_BIN] == pytest.approx(0.5)

    def test_clamped_samples_are_counted(self, grid):
        series = TelemetrySeries([0.0, 0.1], [[12000.0, 100.0, 310.0, 10.0, 5.0], [7000.0, 100.0, 310.0, 10.0, 5.0]])
        hist = build_state_histogram(series, grid)
        assert hist.clamped_samples == 1
        assert hist.total == 2

    def test_empty_series(self, grid):
        with pytest.raises(EmptySeriesError):
            build_state_histogram(TelemetrySeries(np.empty(0), np.empty((0, 5))), grid)


class TestPointerMatrix:
    def test_zero_order_hold_switches_at_sample(self, grid, small_series):
        pointer = build_pointer_matrix(small_series, grid, 0.05)
        assert len(pointer) == 19
        for k in range(10):
            assert tuple(pointer.indices[k]) == FIRED_BIN
        for k in range(10, 19):
            assert tuple(pointer.indices[k]) == COASTING_BIN
        assert pointer.sample_rows[9] == 4
        assert pointer.sample_rows[10] == 5

    def test_unique_rows_reconstruct(self, grid, small_series):
        pointer = build_pointer_matrix(small_series, grid, 0.05)
        unique, inverse = pointer.unique_rows()
        assert unique.shape[0] == 2
        np.testing.assert_array_equal(unique[inverse], pointer.indices)

    def test_horizon_beyond_span(self, grid, small_series):
        with pytest.raises(HorizonExceededError):
            build_pointer_matrix(small_series, grid, 0.05, horizon=1.0)

    def test_non_positive_step(self, grid, small_series):
        with pytest.raises(NonPositiveInputError):
            build_pointer_matrix(small_series, grid, 0.0)


class TestRepresentativeStates:
    def test_bin_means_keep_exact_zeros(self, grid, small_series):
        states = bin_representative_states(small_series, grid)
        assert set(states) == {FIRED_BIN, COASTING_BIN}
        assert states[COASTING_BIN].T_i == 0.0
        assert states[COASTING_BIN].m_fuel == 0.0
        assert states[COASTING_BIN].is_coasting
        assert states[FIRED_BIN].n_engine == pytest.approx(7000.0)


class TestLapStatistics:
    def test_duty_fractions(self, small_series):
        criterion = FullLoadCriterion((5000.0, 9000.0), (60.0, 60.0), fraction=0.95)
        stats = lap_statistics(small_series, criterion, speed_edges=[4000.0, 6000.0, 8000.0])
        assert stats.full_load_fraction == pytest.approx(0.5)
        assert stats.coasting_fraction == pytest.approx(0.5)
        assert stats.part_load_fraction == pytest.approx(0.0)
        np.testing.assert_array_equal(stats.speed_histogram.counts, [5.0, 5.0])
        np.testing.assert_allclose(stats.speed_histogram.centers, [5000.0, 7000.0])

    def test_part_load_below_threshold(self):
        criterion = FullLoadCriterion((5000.0, 9000.0), (100.0, 100.0), fraction=0.95)
        assert not criterion.is_full_load(7000.0, 60.0)
        assert criterion.is_full_load(7000.0, 95.0)
