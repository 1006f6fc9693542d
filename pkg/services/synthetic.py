"""
Deterministic synthetic inputs: race-lap telemetry and Wiebe-fired pressure traces
"""
import logging
from typing import Optional, Tuple

import numpy as np

from services.coasting import CoastingParams, coasting_pressure_trace
from services.cycle_model import (
    R_UNIVERSAL,
    CycleSettings,
    CylinderGeometry,
    PressureTrace,
    amount_of_substance,
    cylinder_volume,
)
from services.errors import InputValidationError, NonPositiveInputError
from services.state_space import STATE_COLUMNS, EngineState, FullLoadCriterion, TelemetrySeries

logger = logging.getLogger(__name__)

WIEBE_EFFICIENCY = 6.908  # ln(1000), 99.9 % burnt at burn end
LOWER_HEATING_VALUE = 43.0e6  # J/kg


def synthetic_lap(
    criterion: FullLoadCriterion,
    duration: float = 180.0,
    sample_period: float = 0.01,
    full_load_fraction: float = 2.0 / 3.0,
    coasting_fraction: float = 0.25,
    corners: int = 6,
    speed_range: Tuple[float, float] = (5000.0, 9000.0),
    full_load_air: float = 450.0,
    inlet_temperature: float = 310.0,
    stoichiometric_ratio: float = 1.0 / 14.7,
    seed: Optional[int] = 0,
) -> TelemetrySeries:
    """
    Lap of straights (full load), braking zones (coasting) and corners (part load)

    Sample counts per phase are rounded from the duty fractions, so the lap
    reproduces them to within one sample.
    """
    if sample_period <= 0 or duration <= 0:
        raise NonPositiveInputError("Duration and sample period must be positive")
    n_samples = int(round(duration / sample_period)) + 1
    n_full = int(round(n_samples * full_load_fraction))
    n_coast = int(round(n_samples * coasting_fraction))
    n_part = n_samples - n_full - n_coast
    if n_part < 0:
        raise InputValidationError("Full-load and coasting fractions exceed one")

    rng = np.random.default_rng(seed)
    low, high = speed_range
    mid = 0.5 * (low + high)

    def split(count):
        return [len(block) for block in np.array_split(np.arange(count), corners)]

    def noise(size, scale):
        return rng.normal(0.0, scale, size)

    blocks = []
    for n_fl, n_co, n_pl in zip(split(n_full), split(n_coast), split(n_part)):
        speed = np.linspace(mid, high, n_fl)
        torque = criterion.threshold(speed) / criterion.fraction * (1.0 + 0.03 * rng.random(n_fl))
        air = full_load_air * (0.9 + 0.1 * speed / high) * (1.0 + noise(n_fl, 0.01))
        blocks.append(np.column_stack([speed, air, torque, air * stoichiometric_ratio]))

        speed = np.linspace(high, low, n_co)
        air = 0.2 * full_load_air * (1.0 + noise(n_co, 0.02))
        blocks.append(np.column_stack([speed, air, np.zeros(n_co), np.zeros(n_co)]))

        speed = np.linspace(low, mid, n_pl)
        load = rng.uniform(0.3, 0.7, n_pl)
        torque = criterion.threshold(speed) / criterion.fraction * load
        air = full_load_air * (load + 0.1)
        fuel = air * stoichiometric_ratio * (1.0 + noise(n_pl, 0.02))
        blocks.append(np.column_stack([speed, air, torque, fuel]))

    speed, air, torque, fuel = np.vstack(blocks).T
    t_int = inlet_temperature + noise(n_samples, 1.0)
    states = np.column_stack([speed, np.clip(air, 0.0, None), t_int, torque, np.clip(fuel, 0.0, None)])
    times = np.arange(n_samples) * sample_period
    logger.info(
        "Generated synthetic lap: %d samples, %d full load, %d coasting, %d part load",
        n_samples,
        n_full,
        n_coast,
        n_part,
    )
    return TelemetrySeries(times, states.reshape(-1, len(STATE_COLUMNS)), sample_period)


def wiebe_fraction(crank_angle, start: float, duration: float, shape: float = 2.0) -> np.ndarray:
    """x = 1 - exp(-a ((theta - theta_0) / dtheta)^(shape + 1)) after burn start"""
    phase = np.clip((np.asarray(crank_angle, dtype=float) - start) / duration, 0.0, None)
    return 1.0 - np.exp(-WIEBE_EFFICIENCY * phase ** (shape + 1.0))


def fired_pressure(
    crank_angle,
    volume,
    burn_fraction,
    heat_release: float,
    p_ini: float,
    kappa: float,
) -> np.ndarray:
    """
    Forward single-zone recursion p V^kappa on the closed cycle

    Gas-exchange strokes (|theta| > 180 deg) sit at the BDC pressure.
    """
    crank_angle = np.asarray(crank_angle, dtype=float)
    volume = np.asarray(volume, dtype=float)
    release = heat_release * np.diff(burn_fraction)
    pressure = np.full(crank_angle.shape, p_ini)
    closed = np.flatnonzero(np.abs(crank_angle) <= 180.0)
    for i in closed[:-1]:
        pressure[i + 1] = (
            pressure[i] * volume[i] ** kappa + (kappa - 1.0) * volume[i + 1] ** (kappa - 1.0) * release[i]
        ) / volume[i + 1] ** kappa
    return pressure


def synthetic_pressure_trace(
    geom: CylinderGeometry,
    state: EngineState,
    settings: Optional[CycleSettings] = None,
    n_cycles: int = 20,
    crank_step: float = 0.5,
    burn_start: float = -10.0,
    burn_duration: float = 60.0,
    kappa: float = 1.35,
    scatter: float = 0.05,
    seed: Optional[int] = 0,
) -> Tuple[PressureTrace, PressureTrace]:
    """
    Wiebe-fired ensemble with cyclic scatter, plus its isentropic motored twin

    Returns:
        (fired, motored) traces on the same -360..360 deg grid
    """
    settings = settings or CycleSettings()
    rng = np.random.default_rng(seed)
    crank = np.linspace(-360.0, 360.0, int(round(720.0 / crank_step)) + 1)
    volume = cylinder_volume(geom, crank)
    amount = amount_of_substance(state.m_air, state.m_fuel, settings.molar_mass)
    p_ini = amount * R_UNIVERSAL * state.t_int / geom.max_volume
    heat = state.m_fuel * 1e-6 * LOWER_HEATING_VALUE

    cycles = []
    for _ in range(n_cycles):
        start = burn_start + rng.normal(0.0, 2.0)
        x = wiebe_fraction(crank, start, burn_duration)
        cycles.append(fired_pressure(crank, volume, x, heat * (1.0 + rng.normal(0.0, scatter)), p_ini, kappa))

    motored = coasting_pressure_trace(CoastingParams(kappa=kappa, p_ini=p_ini, V_max=geom.max_volume), geom, crank)
    return (
        PressureTrace(crank, np.vstack(cycles), state.n_engine),
        PressureTrace(crank, motored[None, :], state.n_engine),
    )
