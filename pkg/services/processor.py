"""
Pipeline processor: build PDFs, generate boundary conditions, run the network
"""
import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from config import PipelineConfig, SpeedPoint
from services.coasting import (
    CoastingParams,
    coasting_cycle,
    coasting_params,
    coasting_pdf,
    coasting_pressure_trace,
)
from services.cycle_model import (
    R_UNIVERSAL,
    CycleResult,
    HtcClosure,
    PressureTrace,
    amount_of_substance,
    analyze_speed_point,
    build_htc_pdf,
    calibrate_closure,
    load_pressure_trace,
    write_pressure_trace,
)
from services.errors import (
    ConfigError,
    DanglingPatchError,
    EngineThermalError,
    GridMismatchError,
    InputValidationError,
    MissingSpeedPointError,
    StageError,
    UnreachableStateError,
    ZeroMeanHtcError,
)
from services.expectation import (
    ConditionalPdf,
    JointHistogram,
    SlaveTable,
    conditional_pdf,
    expect_transient,
    modified_reference_temperature,
    quasistationary_zone_bc,
    transient_series,
)
from services.gas_exchange import ZONES, GasPropertyTable, gas_exchange_bc, load_gas_properties
from services.network_template import (
    WATER_PREFIX,
    chamber_channel,
    measuring_point_network,
    water_channel,
    water_patch_areas,
    water_patch_ids,
)
from services.part_load import StationaryPoint, StationaryReference, beta_diagnostics
from services.pdf import ALPHA, TEMPERATURE, realization_edges
from services.state_space import (
    EngineState,
    TelemetrySeries,
    bin_representative_states,
    build_pointer_matrix,
    build_state_histogram,
    clamp_report,
    consistency_report,
    lap_statistics,
    load_telemetry,
)
from services.storage import ArtifactStore
from services.synthetic import synthetic_lap, synthetic_pressure_trace
from services.thermal_net import (
    AssembledSystem,
    BoundaryConditionSeries,
    ThermalNetwork,
    assemble,
    energy_balance,
    run_transient,
    steady_solve,
)
from services.water_jacket import (
    ReferenceHtcField,
    load_reference_field,
    load_water_channel,
    reference_speed,
    scale_htc,
    synthetic_reference_field,
    write_reference_field,
)

logger = logging.getLogger(__name__)

BinIndex = Tuple[int, ...]


def _alpha(alpha, tref):
    return alpha


def _alpha_tref(alpha, tref):
    return alpha * tref


class PipelineProcessor:
    """Runs the pipeline stages; stages hand off through files in the output directory"""

    def __init__(
        self,
        config: PipelineConfig,
        out_dir: Union[str, Path],
        threads: int = 1,
        seed: Optional[int] = None,
        dt: Optional[float] = None,
    ):
        """
        Initialize the processor

        Args:
            config: Validated pipeline configuration
            out_dir: Output directory for all artifacts
            threads: Worker threads for the per-speed cycle analysis
            seed: Seed for synthetic generation; defaults to the config seed
            dt: Simulation time step [s]; defaults to the solver setting
        """
        self.config = config
        self.store = ArtifactStore(out_dir)
        self.threads = max(1, int(threads))
        self.seed = config.seed if seed is None else int(seed)
        self.dt = float(dt) if dt is not None else config.solver.dt
        self.geometry = config.engine.geometry
        self.grid = config.grid.edges()

    @contextmanager
    def _stage(self, name: str):
        logger.info("Starting %s", name)
        try:
            yield
        except StageError:
            raise
        except EngineThermalError as exc:
            logger.error("Stage %s failed: %s", name, exc)
            raise StageError(name, exc) from exc
        logger.info("Processing completed for %s", name)

    # --- inputs -------------------------------------------------------------------

    def _telemetry(self) -> TelemetrySeries:
        path = self.config.telemetry or self.store.path("telemetry.csv")
        if not Path(path).is_file():
            raise ConfigError(f"Telemetry file not found: {path}; configure one or run synth-lap")
        return load_telemetry(path)

    def _check_speed_points(self, points: List[SpeedPoint]) -> None:
        if not points:
            raise MissingSpeedPointError("No full-load speed points configured")
        speeds = [p.speed for p in points]
        if len(set(speeds)) != len(speeds):
            raise InputValidationError("Duplicate full-load speed points")
        expected = self.config.full_load.expected_speeds or []
        missing = [s for s in expected if s not in speeds]
        if missing:
            raise MissingSpeedPointError(
                f"Missing full-load speed points at {', '.join(f'{s:.0f}' for s in missing)} rpm"
            )

    def _traces(self, point: SpeedPoint) -> Tuple[PressureTrace, PressureTrace]:
        fired_path = point.trace or self.store.trace_path("fired", point.speed)
        if not Path(fired_path).is_file():
            raise MissingSpeedPointError(f"No pressure trace for the {point.speed:.0f} rpm point ({fired_path})")
        fired = load_pressure_trace(fired_path)

        motored_path = point.motored_trace or self.store.trace_path("motored", point.speed)
        if Path(motored_path).is_file():
            return fired, load_pressure_trace(motored_path)

        state = point.state()
        cycle = self.config.engine.cycle
        amount = amount_of_substance(state.m_air, state.m_fuel, cycle.molar_mass)
        params = CoastingParams(
            kappa=self.config.engine.coasting_kappa,
            p_ini=amount * R_UNIVERSAL * state.t_int / self.geometry.max_volume,
            V_max=self.geometry.max_volume,
        )
        motored = coasting_pressure_trace(params, self.geometry, fired.crank_angle)
        logger.debug("Using the isentropic motored reference at %.0f rpm", point.speed)
        return fired, PressureTrace(fired.crank_angle, motored[None, :], fired.engine_speed)

    def _analyze(self, point: SpeedPoint, closure: HtcClosure) -> List[CycleResult]:
        fired, motored = self._traces(point)
        return analyze_speed_point(fired, motored, point.state(), self.geometry, closure, self.config.engine.cycle)

    def _calibrated_closure(self, points: List[SpeedPoint]) -> HtcClosure:
        closure = self.config.engine.closure
        calibration = self.config.engine.calibration
        if calibration is None:
            return closure
        matches = [p for p in points if p.speed == calibration.speed]
        if not matches:
            raise MissingSpeedPointError(f"No full-load point at the calibration speed {calibration.speed:.0f} rpm")
        results = self._analyze(matches[0], closure)
        ensemble_mean = dataclasses.replace(results[0], alpha_mean=float(np.mean([r.alpha_mean for r in results])))
        return calibrate_closure(closure, calibration.target_alpha_mean, ensemble_mean)

    def _stored_closure(self) -> HtcClosure:
        stored = self.store.read_json("closure.json")
        return HtcClosure(scale=stored["scale"], exponent=stored["exponent"])

    def _network(self) -> ThermalNetwork:
        if self.config.solver.network_file is not None:
            return ThermalNetwork.load(self.config.solver.network_file)
        return measuring_point_network(self.geometry.n_cylinders)

    def _gas_properties(self) -> GasPropertyTable:
        path = self.config.gas_exchange.properties_file
        return load_gas_properties(path) if path is not None else GasPropertyTable.air()

    # --- synth-lap ----------------------------------------------------------------

    def synth_lap(self, traces: bool = False) -> TelemetrySeries:
        """Write a synthetic lap, and optionally Wiebe-fired traces for every speed point"""
        with self._stage("synth-lap"):
            lap = self.config.lap
            series = synthetic_lap(
                self.config.full_load.criterion(),
                duration=lap.duration,
                sample_period=lap.sample_period,
                full_load_fraction=lap.full_load_fraction,
                coasting_fraction=lap.coasting_fraction,
                corners=lap.corners,
                speed_range=lap.speed_range,
                full_load_air=lap.full_load_air,
                inlet_temperature=lap.inlet_temperature,
                stoichiometric_ratio=self.config.part_load.stoichiometric_ratio,
                seed=self.seed,
            )
            self.store.write_frame(series.to_frame(), "telemetry.csv")

            if traces:
                for i, point in enumerate(self.config.full_load.sorted_points()):
                    fired, motored = synthetic_pressure_trace(
                        self.geometry,
                        point.state(),
                        settings=self.config.engine.cycle,
                        n_cycles=lap.cycles_per_point,
                        kappa=self.config.engine.coasting_kappa,
                        seed=self.seed + i,
                    )
                    write_pressure_trace(fired, self.store.target("traces", f"fired_{point.speed:.0f}.csv"))
                    write_pressure_trace(motored, self.store.target("traces", f"motored_{point.speed:.0f}.csv"))
                logger.info("Wrote synthetic traces for %d speed points", len(self.config.full_load.points))
        return series

    # --- build-pdf ----------------------------------------------------------------

    def build_pdf(self) -> pd.DataFrame:
        """
        Build per-speed (alpha, T_eff) PDFs, state histogram and pointer matrix

        Returns:
            Table of the stationary points as written to pdf/stationary_points.csv
        """
        with self._stage("build-pdf"):
            points = self.config.full_load.sorted_points()
            self._check_speed_points(points)
            series = self._telemetry()
            logger.info("Starting PDF build for %d speed points", len(points))

            closure = self._calibrated_closure(points)
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                ensembles = list(pool.map(lambda p: self._analyze(p, closure), points))

            # common realization edges so identical states give identical PDFs
            samples = np.array([[r.alpha_mean, r.T_eff] for ensemble in ensembles for r in ensemble])
            n_bins = self.config.engine.cycle.pdf_bins
            edges = [realization_edges(samples[:, dim], n_bins) for dim in (ALPHA, TEMPERATURE)]

            rows = []
            for point, ensemble in zip(points, ensembles):
                pdf = build_htc_pdf(ensemble, edges=edges)
                pdf_file = f"speed_{point.speed:.0f}.csv"
                cycles_file = f"cycles_{point.speed:.0f}.csv"
                self.store.write_pdf(pdf, "pdf", pdf_file)
                self.store.write_cycles(ensemble, "pdf", cycles_file)
                rows.append(
                    {
                        "speed": point.speed,
                        **dataclasses.asdict(point.state()),
                        "exhaust_temperature": point.exhaust_temperature,
                        "pdf_file": pdf_file,
                        "cycles_file": cycles_file,
                        "cycles": len(ensemble),
                        "alpha_mean": pdf.mean_alpha(),
                        "T_star": modified_reference_temperature(pdf),
                    }
                )
            self.store.write_stationary(rows)
            self.store.write_json({"scale": closure.scale, "exponent": closure.exponent}, "closure.json")

            self.store.write_grid(self.grid)
            self.store.write_state_histogram(build_state_histogram(series, self.grid))
            self.store.write_pointer(build_pointer_matrix(series, self.grid, self.dt, self.config.solver.horizon))
            self._write_lap_reports(series)
        return pd.DataFrame.from_records(rows)

    def _write_lap_reports(self, series: TelemetrySeries) -> None:
        stats = lap_statistics(series, self.config.full_load.criterion())
        self.store.write_json(
            {
                "samples": stats.samples,
                "full_load_fraction": stats.full_load_fraction,
                "coasting_fraction": stats.coasting_fraction,
                "part_load_fraction": stats.part_load_fraction,
            },
            "reports",
            "lap_statistics.json",
        )
        histogram = stats.speed_histogram
        self.store.write_frame(
            pd.DataFrame({"n_engine": histogram.centers, "count": histogram.counts}), "reports", "speed_histogram.csv"
        )
        self.store.write_frame(clamp_report(series, self.grid), "reports", "clamped_states.csv")
        self.store.write_frame(consistency_report(series), "reports", "consistency.csv")
        logger.info(
            "Lap duty: %.3f full load, %.3f coasting, %.3f part load",
            stats.full_load_fraction,
            stats.coasting_fraction,
            stats.part_load_fraction,
        )

    # --- gen-bc -------------------------------------------------------------------

    def _stationary_tables(self, grid) -> Tuple[StationaryReference, ConditionalPdf, Dict[float, float]]:
        """Stationary reference library, measured conditional PDFs and exhaust temperatures"""
        stationary = self.store.read_stationary()
        reference = StationaryReference([StationaryPoint(speed, state, pdf) for speed, state, _, pdf in stationary])
        exhaust = {speed: t_exh for speed, _, t_exh, _ in stationary}

        states, realizations = [], []
        index = self.store.read_frame("pdf", "stationary_points.csv", columns=("speed", "cycles_file"))
        for (speed, state, _, _), cycles_file in zip(stationary, index["cycles_file"]):
            cycles = self.store.read_frame("pdf", cycles_file, columns=("alpha_mean_Wm2K", "T_eff_K"))
            realizations.append(cycles[["alpha_mean_Wm2K", "T_eff_K"]].to_numpy(dtype=float))
            states.append(np.tile(state.as_array(), (len(cycles), 1)))
        joint = JointHistogram.from_samples(
            grid, np.vstack(states), np.vstack(realizations), stationary[0][3].edges
        )
        return reference, conditional_pdf(joint), exhaust

    def _reference_field(self, network: ThermalNetwork, series: TelemetrySeries) -> ReferenceHtcField:
        water = self.config.water_jacket
        patch_ids = water_patch_ids(network)
        if water.reference_file is not None:
            field = load_reference_field(water.reference_file)
            missing = sorted(set(patch_ids) - set(field.patch_ids))
            if missing:
                raise DanglingPatchError(f"Reference field lacks water patches: {', '.join(missing)}")
            order = [field.patch_ids.index(p) for p in patch_ids]
            return ReferenceHtcField(
                patch_ids, field.areas[order], field.alpha_ref[order], field.n_ref, field.exponent, field.flagged
            )

        n_ref = water.n_ref
        if n_ref is None:
            histogram = lap_statistics(series, self.config.full_load.criterion()).speed_histogram
            n_ref = reference_speed(histogram.centers, histogram.counts, water.exponent)
            logger.info("Reference speed from the lap histogram: %.1f rpm", n_ref)
        return synthetic_reference_field(
            patch_ids,
            water_patch_areas(network),
            n_ref,
            water.exponent,
            alpha_mean=water.alpha_mean,
            seed=self.seed,
        )

    def _water_inlet(self, times: np.ndarray) -> np.ndarray:
        water = self.config.water_jacket
        if water.channel_file is None:
            return np.full(times.shape, water.inlet_temperature)
        measurement = load_water_channel(water.channel_file)
        if water.sensor_tau > 0:
            measurement = measurement.corrected(water.sensor_tau)
        return np.interp(times, measurement.times, measurement.T_in)

    def gen_bc(self) -> Dict[str, BoundaryConditionSeries]:
        """
        Generate per-zone boundary-condition series along the pointer matrix

        Chamber zones come from the measured conditional PDFs, the coasting
        model or the part-load transform; gas-exchange zones from the
        valve and port correlations; water patches from the scaled reference field.

        Returns:
            Series per zone (network channel name)
        """
        with self._stage("gen-bc"):
            grid = self.store.read_grid()
            if not grid.same_as(self.grid):
                raise GridMismatchError("Configured grid differs from the one used by build-pdf")
            pointer = self.store.read_pointer(grid)
            state_hist = self.store.read_state_histogram(grid)
            series = self._telemetry()
            representatives = bin_representative_states(series, grid)
            closure = self._stored_closure()
            reference, cond, exhaust = self._stationary_tables(grid)

            evaluate, zones = self._bin_evaluator(cond, reference, closure, exhaust, representatives)
            # one row per occupied bin, shared by the transient series and the initial field
            table: Dict[BinIndex, np.ndarray] = {}
            for index in sorted(representatives):
                try:
                    table[index] = evaluate(index)
                except UnreachableStateError:
                    continue

            def lookup(index: BinIndex) -> np.ndarray:
                if index not in table:
                    raise UnreachableStateError(index)
                return table[index]

            values = transient_series(pointer, lookup)
            result = {}
            for k, zone in enumerate(zones):
                alpha, T_eff = values[:, 2 * k], values[:, 2 * k + 1]
                result[zone] = BoundaryConditionSeries(pointer.times, alpha, T_eff)

            network = self._network()
            field = self._reference_field(network, series)
            speed = series.states[pointer.sample_rows, 0]
            alpha_water = scale_htc(field, speed)
            T_in = self._water_inlet(pointer.times)
            for j, patch_id in enumerate(field.patch_ids):
                result[water_channel(patch_id)] = BoundaryConditionSeries(pointer.times, alpha_water[:, j], T_in)

            self.store.write_bc(result, self.dt, binary=self.config.solver.binary_bc)
            self._write_initial_bc(table, zones, state_hist, result)
            network.save(self.store.target("network.json"))
            write_reference_field(field, self.store.target("water_reference.csv"))
            self.store.write_frame(
                beta_diagnostics(reference, representatives, closure.exponent, self.config.part_load),
                "reports",
                "beta_diagnostics.csv",
            )
            logger.info("Generated %d boundary-condition series of %d steps", len(result), len(pointer))
        return result

    def _bin_evaluator(self, cond, reference, closure, exhaust, representatives):
        """Per-bin evaluator returning (alpha, T_eff) pairs for every gas-side zone"""
        engine = self.config.engine
        gas = self.config.gas_exchange
        offsets = engine.fuel_offsets()
        chambers = [chamber_channel(c) for c in range(1, self.geometry.n_cylinders + 1)]
        zones = chambers + list(ZONES)
        empty = ConditionalPdf(cond.grid, {})
        intake_port, exhaust_port = gas.intake.geometry(), gas.exhaust.geometry()
        properties = self._gas_properties()
        exhaust_speeds = np.array(sorted(exhaust))
        exhaust_temperatures = np.array([exhaust[s] for s in exhaust_speeds])
        coasting: Dict[BinIndex, object] = {}

        def coasting_model(index: BinIndex, state: EngineState):
            if index not in coasting:
                params = coasting_params(state, self.geometry, engine.coasting_kappa, engine.ambient_pressure)
                coasting[index] = coasting_pdf(coasting_cycle(state, self.geometry, closure, params, engine.cycle))
            return coasting[index]

        def chamber(index: BinIndex, state: EngineState, offset: float) -> Tuple[float, float]:
            if state.n_engine <= 0:
                # stopped engine: no charge motion, the chamber exchanges no heat
                return 0.0, state.t_int
            if not state.is_coasting:
                state = state.with_fuel_scale(offset)

            def fallback(bin_index, f):
                if state.is_coasting:
                    return coasting_model(bin_index, state).expect(f)
                return float(reference.expect(state, [f], closure.exponent, self.config.part_load)[0])

            source = cond if offset == 1.0 and not state.is_coasting else empty
            alpha = expect_transient(source, index, _alpha, fallback)
            if alpha <= 0:
                raise ZeroMeanHtcError(f"Mean chamber HTC is zero in state bin {index}")
            return alpha, expect_transient(source, index, _alpha_tref, fallback) / alpha

        def evaluate(index: BinIndex) -> np.ndarray:
            state = representatives[index]
            row = [value for offset in offsets for value in chamber(index, state, offset)]
            t_exh = float(np.interp(state.n_engine, exhaust_speeds, exhaust_temperatures))
            exchange = gas_exchange_bc(
                state,
                self.geometry,
                intake_port,
                exhaust_port,
                properties,
                t_exh,
                gas.intake_coefficient,
                gas.exhaust_pressure,
            )
            for zone in ZONES:
                row += list(exchange[zone])
            return np.array(row)

        return evaluate, zones

    def _write_initial_bc(self, table, zones, state_hist, result) -> None:
        """Lap-mean (alpha, T*) per zone for the initial steady field"""
        records = []
        for k, zone in enumerate(zones):
            alpha_values = np.full(state_hist.grid.shape, np.nan)
            alpha_tref_values = np.full(state_hist.grid.shape, np.nan)
            for index, row in table.items():
                alpha_values[index] = row[2 * k]
                alpha_tref_values[index] = row[2 * k] * row[2 * k + 1]
            alpha_table = SlaveTable(state_hist.grid, alpha_values)
            alpha_tref_table = SlaveTable(state_hist.grid, alpha_tref_values)
            try:
                alpha, T_star = quasistationary_zone_bc(alpha_table, alpha_tref_table, state_hist)
            except ZeroMeanHtcError:
                logger.warning("Zone %s carries no heat over the lap", zone)
                alpha, T_star = 0.0, float(result[zone].T_eff.mean())
            records.append({"zone": zone, "alpha_Wm2K": alpha, "T_eff_K": T_star})

        for zone, series in result.items():
            if not zone.startswith(WATER_PREFIX):
                continue
            alpha = float(series.alpha.mean())
            T_star = float(np.mean(series.alpha * series.T_eff) / alpha) if alpha > 0 else float(series.T_eff.mean())
            records.append({"zone": zone, "alpha_Wm2K": alpha, "T_eff_K": T_star})
        self.store.write_frame(pd.DataFrame.from_records(records), "bc", "initial.csv")

    # --- steady / simulate --------------------------------------------------------

    def _assembled(self, channels) -> Tuple[ThermalNetwork, AssembledSystem]:
        path = self.store.path("network.json")
        network = ThermalNetwork.load(path) if path.is_file() else self._network()
        return network, assemble(network, channels=list(channels))

    def _initial_bc(self, water_offset: float) -> Dict[str, Tuple[float, float]]:
        frame = self.store.read_frame("bc", "initial.csv", columns=("zone", "alpha_Wm2K", "T_eff_K"))
        initial = {}
        for record in frame.to_dict("records"):
            T_eff = record["T_eff_K"] + (water_offset if record["zone"].startswith(WATER_PREFIX) else 0.0)
            initial[record["zone"]] = (float(record["alpha_Wm2K"]), float(T_eff))
        return initial

    def _steady_field(self, system: AssembledSystem, initial: Dict[str, Tuple[float, float]]) -> np.ndarray:
        missing = sorted(set(system.patch_channels) - set(initial))
        if missing:
            raise DanglingPatchError(f"No initial boundary condition for channels: {', '.join(missing)}")
        alpha = np.array([initial[channel][0] for channel in system.patch_channels])
        T_eff = np.array([initial[channel][1] for channel in system.patch_channels])
        return steady_solve(system, alpha, T_eff)

    def _probe_frame(self, network: ThermalNetwork, system: AssembledSystem, times, temperatures) -> pd.DataFrame:
        temperatures = np.atleast_2d(temperatures)
        frame = pd.DataFrame({"t_s": np.atleast_1d(times)})
        for probe in network.probes:
            frame[probe.name] = temperatures[:, system.index(probe.node)]
        return frame

    def steady(self, water_offset: float = 0.0) -> pd.DataFrame:
        """Steady field under the lap-mean boundary conditions"""
        with self._stage("steady"):
            initial = self._initial_bc(water_offset)
            network, system = self._assembled(initial)
            temperatures = self._steady_field(system, initial)
            frame = pd.DataFrame({"node": system.node_ids, "T_K": temperatures})
            self.store.write_frame(frame, "steady", "nodes.csv")
            self.store.write_frame(self._probe_frame(network, system, [0.0], temperatures), "steady", "probes.csv")
        return frame

    def simulate(self, water_offset: float = 0.0, run_name: str = "run") -> pd.DataFrame:
        """
        Transient run from the lap-mean steady field

        Args:
            water_offset: Shift of the water reference temperature [K]
            run_name: Output subdirectory for this run

        Returns:
            Per-node summary (mean, amplitude, min, max)
        """
        with self._stage("simulate"):
            series = self.store.read_bc()
            if water_offset:
                logger.info("Shifting the water reference temperature by %+.3g K", water_offset)
                series = {
                    zone: bc.shifted(water_offset) if zone.startswith(WATER_PREFIX) else bc
                    for zone, bc in series.items()
                }
            network, system = self._assembled(series)
            initial = self._steady_field(system, self._initial_bc(water_offset))
            history = run_transient(system, series, initial)

            for node_id in system.node_ids:
                self.store.write_frame(history.node_frame(node_id), run_name, "nodes", f"{node_id}.csv")
            temperatures = history.temperatures
            summary = pd.DataFrame(
                {
                    "node": system.node_ids,
                    "mean_K": temperatures.mean(axis=0),
                    "amplitude_K": 0.5 * (temperatures.max(axis=0) - temperatures.min(axis=0)),
                    "min_K": temperatures.min(axis=0),
                    "max_K": temperatures.max(axis=0),
                }
            )
            self.store.write_frame(summary, run_name, "summary.csv")
            self.store.write_frame(
                self._probe_frame(network, system, history.times, temperatures), run_name, "probes.csv"
            )

            balance = energy_balance(system, history)
            self.store.write_frame(balance.steps, run_name, "energy_balance.csv")
            relative = balance.cumulative_residual / balance.throughput if balance.throughput > 0 else 0.0
            self.store.write_json(
                {
                    "water_offset_K": water_offset,
                    "cumulative_residual_J": balance.cumulative_residual,
                    "throughput_J": balance.throughput,
                    "absolute_residual_J": balance.absolute_residual,
                    "relative_residual": relative,
                },
                run_name,
                "run.json",
            )
            logger.info("Energy residual %.3g J of %.3g J throughput", balance.cumulative_residual, balance.throughput)
        return summary

    # --- sensor-correct / report --------------------------------------------------

    def sensor_correct(self, tau: Optional[float] = None) -> pd.DataFrame:
        """Lag-corrected water temperatures and heat flows of the configured channel"""
        with self._stage("sensor-correct"):
            water = self.config.water_jacket
            if water.channel_file is None:
                raise ConfigError("sensor-correct needs water_jacket.channel_file")
            tau = water.sensor_tau if tau is None else tau
            measured = load_water_channel(water.channel_file)
            corrected = measured.corrected(tau)
            frame = corrected.to_frame()
            frame["Q_measured_W"] = measured.heat_flow(water.c_p, water.density)
            frame["Q_corrected_W"] = corrected.heat_flow(water.c_p, water.density)
            self.store.write_frame(frame, "water_corrected.csv")
        return frame

    def report(self, run_a: Union[str, Path], run_b: Union[str, Path]) -> pd.DataFrame:
        """Per-node change of mean and amplitude from run_a to run_b"""
        with self._stage("report"):
            frames = []
            for run in (run_a, run_b):
                path = Path(run) / "summary.csv"
                if not path.is_absolute() and not path.is_file():
                    path = self.store.path(str(run), "summary.csv")
                if not path.is_file():
                    raise InputValidationError(f"No run summary at {path}")
                frames.append(pd.read_csv(path).set_index("node"))
            a, b = frames
            if set(a.index) != set(b.index):
                raise GridMismatchError("Runs were made on different networks")
            b = b.loc[a.index]
            comparison = pd.DataFrame(
                {
                    "node": a.index,
                    "mean_a_K": a["mean_K"].to_numpy(),
                    "mean_b_K": b["mean_K"].to_numpy(),
                    "mean_shift_K": (b["mean_K"] - a["mean_K"]).to_numpy(),
                    "amplitude_shift_K": (b["amplitude_K"] - a["amplitude_K"]).to_numpy(),
                }
            )
            self.store.write_frame(comparison, "reports", "comparison.csv")
            logger.info("Mean node shift %.4g K over %d nodes", comparison["mean_shift_K"].mean(), len(comparison))
        return comparison
