"""
Motored (coasting) pressure and HTC model for states without indicated torque
"""
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from services.cycle_model import (
    R_UNIVERSAL,
    CycleResult,
    CycleSettings,
    CylinderGeometry,
    HeatTransferClosure,
    characteristic_velocity,
    crank_time,
    cycle_aggregate,
    cycle_tke,
    cylinder_volume,
    htc_trace,
    piston_speed,
)
from services.errors import NonPositiveInputError, NotCoastingError, VolumeExceedsMaxError
from services.pdf import RealizationHistogram
from services.state_space import EngineState

logger = logging.getLogger(__name__)

R_SPECIFIC_AIR = 287.05  # J/(kg K)


class CoastingParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    kappa: float = Field(default=1.35, gt=1)
    p_ini: float = Field(gt=0)  # Pa at BDC
    V_max: float = Field(gt=0)  # m3


def motored_pressure(params: CoastingParams, volume) -> np.ndarray:
    """Isentropic motored pressure p V^kappa = p_ini V_max^kappa"""
    volume = np.asarray(volume, dtype=float)
    if np.any(volume <= 0):
        raise NonPositiveInputError("Volume must be positive")
    if np.any(volume > params.V_max * (1.0 + 1e-12)):
        raise VolumeExceedsMaxError(f"Volume {volume.max():.6g} m3 exceeds V_max {params.V_max:.6g} m3")
    return params.p_ini * (params.V_max / volume) ** params.kappa


def coasting_params(
    state: EngineState,
    geom: CylinderGeometry,
    kappa: float = 1.35,
    ambient_pressure: float = 101325.0,
    gas_constant: float = R_SPECIFIC_AIR,
) -> CoastingParams:
    """BDC pressure from the trapped air mass (ideal gas); ambient if no air is metered"""
    V_max = geom.max_volume
    if state.m_air > 0:
        p_ini = state.m_air * 1e-6 * gas_constant * state.t_int / V_max
    else:
        logger.debug("No air mass at %.0f rpm, using ambient pressure", state.n_engine)
        p_ini = ambient_pressure
    return CoastingParams(kappa=kappa, p_ini=p_ini, V_max=V_max)


def coasting_pressure_trace(params: CoastingParams, geom: CylinderGeometry, crank_angle) -> np.ndarray:
    """Two-level motored trace: isentropic between the BDCs, intake level in the gas-exchange strokes"""
    crank_angle = np.asarray(crank_angle, dtype=float)
    closed = np.abs(crank_angle) <= 180.0
    pressure = np.full(crank_angle.shape, params.p_ini)
    pressure[closed] = motored_pressure(params, cylinder_volume(geom, crank_angle[closed]))
    return pressure


def coasting_cycle(
    state: EngineState,
    geom: CylinderGeometry,
    closure: HeatTransferClosure,
    params: CoastingParams,
    settings: CycleSettings,
    crank_step: float = 0.5,
) -> CycleResult:
    """
    Cycle-mean (alpha, T_eff) under coasting

    Uses the first three state entries only: no combustion, so x = y = 0 and
    the characteristic velocity reduces to turbulence plus piston speed.
    """
    if not state.is_coasting:
        raise NotCoastingError(f"State has indicated torque {state.T_i} Nm")

    n_points = int(round(720.0 / crank_step)) + 1
    crank = np.linspace(-360.0, 360.0, n_points)
    n = state.n_engine
    t = crank_time(crank, n)

    volume = cylinder_volume(geom, crank)
    pressure = coasting_pressure_trace(params, geom, crank)
    amount = params.p_ini * params.V_max / (R_UNIVERSAL * state.t_int)
    closed = np.abs(crank) <= 180.0
    T_mean = np.where(closed, pressure * volume / (amount * R_UNIVERSAL), state.t_int)

    k = cycle_tke(geom, crank, t, volume, n, settings)
    zeros = np.zeros_like(crank)
    velocity = characteristic_velocity(k, piston_speed(geom, crank, n), zeros, zeros, zeros, T_mean, T_mean, geom.bore)
    alpha = htc_trace(pressure, velocity, T_mean, closure)
    return cycle_aggregate(alpha, T_mean, crank, n)


def coasting_pdf(result: CycleResult) -> RealizationHistogram:
    """Deterministic model: one realization per state bin"""
    return RealizationHistogram.dirac([result.alpha_mean, result.T_eff])
