"""
Nusselt correlations and HTCs for the intake/exhaust valve stems and ports
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from services.cycle_model import CylinderGeometry
from services.errors import (
    InputValidationError,
    MissingColumnError,
    NonPositiveInputError,
    ZeroAreaError,
)
from services.state_space import EngineState

logger = logging.getLogger(__name__)

EXHAUST_VALVE_COEFFICIENT = 1.84
INTAKE_VALVE_FACTOR = 0.6
VALVE_RE_EXPONENT = 0.58
VALVE_GEOMETRY_EXPONENT = 0.2

INTAKE_VALVE, EXHAUST_VALVE, INTAKE_PORT, EXHAUST_PORT = ZONES = (
    "intake_valve",
    "exhaust_valve",
    "intake_port",
    "exhaust_port",
)

GAS_PROPERTY_COLUMNS = ("T_K", "nu_m2s", "lambda_WmK", "Pr")
VALVE_LIFT_COLUMNS = ("alpha_cr_deg", "lift_m", "area_m2")


class GasProps(BaseModel):
    model_config = ConfigDict(frozen=True)

    nu: float = Field(gt=0)  # m2/s
    conductivity: float = Field(gt=0)  # W/mK
    prandtl: float = Field(gt=0)

    @property
    def diffusivity(self) -> float:
        """Temperature conductivity a = nu / Pr"""
        return self.nu / self.prandtl


@dataclass
class GasPropertyTable:
    """Gas properties over temperature, linearly interpolated and held at the ends"""

    temperature: np.ndarray
    nu: np.ndarray
    conductivity: np.ndarray
    prandtl: np.ndarray

    def __post_init__(self):
        self.temperature = np.asarray(self.temperature, dtype=float)
        if self.temperature.size == 0 or not np.all(np.diff(self.temperature) > 0):
            raise InputValidationError("Gas property table needs strictly increasing temperatures")
        for name in ("nu", "conductivity", "prandtl"):
            values = np.asarray(getattr(self, name), dtype=float)
            if values.shape != self.temperature.shape or np.any(values <= 0):
                raise NonPositiveInputError(f"Gas property '{name}' must be positive on every row")
            setattr(self, name, values)

    @classmethod
    def air(cls) -> "GasPropertyTable":
        """Dry air at 1 bar"""
        return cls(
            temperature=np.array([300.0, 400.0, 600.0, 800.0, 1000.0, 1200.0]),
            nu=np.array([15.89e-6, 26.41e-6, 52.69e-6, 84.93e-6, 121.9e-6, 163.0e-6]),
            conductivity=np.array([0.0263, 0.0338, 0.0469, 0.0573, 0.0667, 0.0763]),
            prandtl=np.array([0.707, 0.690, 0.685, 0.709, 0.726, 0.728]),
        )

    def at(self, temperature: float) -> GasProps:
        return GasProps(
            nu=float(np.interp(temperature, self.temperature, self.nu)),
            conductivity=float(np.interp(temperature, self.temperature, self.conductivity)),
            prandtl=float(np.interp(temperature, self.temperature, self.prandtl)),
        )


def load_gas_properties(path: Union[str, Path]) -> GasPropertyTable:
    frame = pd.read_csv(path, comment="#")
    for column in GAS_PROPERTY_COLUMNS:
        if column not in frame.columns:
            raise MissingColumnError(column, str(path))
    frame = frame.sort_values("T_K")
    return GasPropertyTable(
        frame["T_K"].to_numpy(dtype=float),
        frame["nu_m2s"].to_numpy(dtype=float),
        frame["lambda_WmK"].to_numpy(dtype=float),
        frame["Pr"].to_numpy(dtype=float),
    )


@dataclass
class ValveLiftCurve:
    """Valve lift and effective flow area over crank angle"""

    crank_angle: np.ndarray  # deg
    lift: np.ndarray  # m
    area: np.ndarray  # m2

    def __post_init__(self):
        self.crank_angle = np.asarray(self.crank_angle, dtype=float)
        self.lift = np.asarray(self.lift, dtype=float)
        self.area = np.asarray(self.area, dtype=float)
        if not (self.crank_angle.shape == self.lift.shape == self.area.shape):
            raise InputValidationError("Valve-lift columns differ in length")
        if np.any(self.lift < 0) or np.any(self.area < 0):
            raise NonPositiveInputError("Valve lift and flow area must be non-negative")

    @property
    def open_mask(self) -> np.ndarray:
        return self.area > 0

    @property
    def open_fraction(self) -> float:
        return float(self.open_mask.mean())

    def mean_open_lift(self) -> float:
        if not self.open_mask.any():
            raise ZeroAreaError("Valve never opens")
        return float(self.lift[self.open_mask].mean())

    @classmethod
    def synthetic(
        cls,
        max_lift: float,
        valve_diameter: float,
        opening_deg: float,
        closing_deg: float,
        step: float = 1.0,
    ) -> "ValveLiftCurve":
        """Half-sine lift over the open window, curtain area pi D l"""
        crank = np.arange(-360.0, 360.0 + step / 2, step)
        phase = (crank - opening_deg) / (closing_deg - opening_deg)
        lift = np.where((phase > 0) & (phase < 1), max_lift * np.sin(np.pi * np.clip(phase, 0, 1)), 0.0)
        return cls(crank, lift, math.pi * valve_diameter * lift)


def load_valve_lift(path: Union[str, Path]) -> ValveLiftCurve:
    frame = pd.read_csv(path, comment="#")
    for column in VALVE_LIFT_COLUMNS:
        if column not in frame.columns:
            raise MissingColumnError(column, str(path))
    return ValveLiftCurve(
        frame["alpha_cr_deg"].to_numpy(dtype=float),
        frame["lift_m"].to_numpy(dtype=float),
        frame["area_m2"].to_numpy(dtype=float),
    )


@dataclass
class PortGeometry:
    valve_diameter: float  # m
    duct_diameter: float  # m
    port_length: float  # m
    lift: ValveLiftCurve

    def __post_init__(self):
        if min(self.valve_diameter, self.duct_diameter, self.port_length) <= 0:
            raise NonPositiveInputError("Port dimensions must be positive")

    @property
    def duct_area(self) -> float:
        return math.pi * self.duct_diameter**2 / 4


# --- correlations -------------------------------------------------------------


def _valve_nu(coefficient: float, re_v, d_over_l):
    re_v = np.asarray(re_v, dtype=float)
    d_over_l = np.asarray(d_over_l, dtype=float)
    if np.any(re_v <= 0) or np.any(d_over_l <= 0):
        raise NonPositiveInputError("Valve Reynolds number and D_v/l_v must be positive")
    return coefficient * re_v**VALVE_RE_EXPONENT * d_over_l**VALVE_GEOMETRY_EXPONENT


def nu_exhaust_valve(re_v, d_over_l):
    """Nu_v = 1.84 Re_v^0.58 (D_v/l_v)^0.2, Re based on the valve lift"""
    return _valve_nu(EXHAUST_VALVE_COEFFICIENT, re_v, d_over_l)


def nu_intake_valve(re_v, d_over_l):
    """Exhaust-stem correlation with the coefficient reduced by 40 %"""
    return _valve_nu(EXHAUST_VALVE_COEFFICIENT * INTAKE_VALVE_FACTOR, re_v, d_over_l)


def nu_intake_port(re, coefficient: float):
    """Nu = c Re with the Reynolds exponent fixed to one"""
    return coefficient * np.asarray(re, dtype=float)


def nu_exhaust_port(re_j, prandtl):
    """Nu = sqrt(8 Re_j Pr / pi), Re on the duct diameter and the jet velocity"""
    re_j = np.asarray(re_j, dtype=float)
    prandtl = np.asarray(prandtl, dtype=float)
    if np.any(re_j <= 0) or np.any(prandtl <= 0):
        raise NonPositiveInputError("Jet Reynolds number and Prandtl number must be positive")
    return np.sqrt(8.0 * re_j * prandtl / math.pi)


def reynolds_number(velocity, length_scale: float, nu: float):
    if length_scale <= 0 or nu <= 0:
        raise NonPositiveInputError("Length scale and kinematic viscosity must be positive")
    return np.asarray(velocity, dtype=float) * length_scale / nu


def htc_from_nu(nusselt, length_scale: float, conductivity: float):
    if length_scale <= 0 or conductivity <= 0:
        raise NonPositiveInputError("Length scale and thermal conductivity must be positive")
    return np.asarray(nusselt, dtype=float) * conductivity / length_scale


def calibrate_intake_port_coefficient(target_alpha: float, re: float, duct_diameter: float, props: GasProps) -> float:
    """c such that the intake-port HTC hits target_alpha at one operating point"""
    if target_alpha <= 0 or re <= 0:
        raise NonPositiveInputError("Target HTC and Reynolds number must be positive")
    return target_alpha * duct_diameter / (props.conductivity * re)


# --- flow -----------------------------------------------------------------------


def cycle_mass_flow(m_per_stroke: float, engine_speed: float) -> float:
    """Cycle-mean mass flow [kg/s] of one four-stroke cylinder from mg/stroke"""
    return m_per_stroke * 1e-6 * engine_speed / 120.0


def jet_velocity(m_per_stroke: float, engine_speed: float, flow_area, density: float) -> float:
    """
    Flow-area-weighted mean gas velocity over the valve-open window

    The cycle's charge passes only while the valve is open, so the window
    mass flow is the cycle mean divided by the open fraction. Weighting by
    area keeps the nearly closed samples at the window edges from dominating.

    Args:
        m_per_stroke: Mass per cylinder and stroke [mg]
        engine_speed: Engine speed [rpm]
        flow_area: Flow area over an equidistant crank grid [m2]
        density: Gas density [kg/m3]

    Returns:
        Window-mean velocity [m/s]
    """
    area = np.atleast_1d(np.asarray(flow_area, dtype=float))
    open_ = area > 0
    if not open_.any():
        raise ZeroAreaError("Flow area is zero over the whole cycle")
    if density <= 0:
        raise NonPositiveInputError(f"Gas density must be positive, got {density}")
    window_flow = cycle_mass_flow(m_per_stroke, engine_speed) / open_.mean()
    return float(window_flow / (density * area[open_].mean()))


def intake_density(state: EngineState, geom: CylinderGeometry) -> float:
    """Charge density from the trapped air mass over the swept volume"""
    return state.m_air * 1e-6 / geom.swept_volume


def exhaust_density(pressure: float, temperature: float, gas_constant: float = 287.05) -> float:
    if pressure <= 0 or temperature <= 0:
        raise NonPositiveInputError("Exhaust pressure and temperature must be positive")
    return pressure / (gas_constant * temperature)


# --- zone HTCs --------------------------------------------------------------------


def valve_stem_htc(
    m_per_stroke: float,
    engine_speed: float,
    port: PortGeometry,
    density: float,
    props: GasProps,
    intake: bool,
) -> float:
    """Cycle-mean valve-stem HTC; Re and Nu based on the mean open lift"""
    if m_per_stroke <= 0 or engine_speed <= 0:
        return 0.0
    velocity = jet_velocity(m_per_stroke, engine_speed, port.lift.area, density)
    lift = port.lift.mean_open_lift()
    re_v = reynolds_number(velocity, lift, props.nu)
    correlation = nu_intake_valve if intake else nu_exhaust_valve
    nusselt = correlation(re_v, port.valve_diameter / lift)
    return float(htc_from_nu(nusselt, lift, props.conductivity))


def port_htc(
    m_per_stroke: float,
    engine_speed: float,
    port: PortGeometry,
    density: float,
    props: GasProps,
    intake: bool,
    coefficient: float = 0.01,
) -> float:
    """Cycle-mean port HTC; Re and Nu based on the duct diameter"""
    if m_per_stroke <= 0 or engine_speed <= 0:
        return 0.0
    duct_area = np.where(port.lift.open_mask, port.duct_area, 0.0)
    velocity = jet_velocity(m_per_stroke, engine_speed, duct_area, density)
    re = reynolds_number(velocity, port.duct_diameter, props.nu)
    nusselt = nu_intake_port(re, coefficient) if intake else nu_exhaust_port(re, props.prandtl)
    return float(htc_from_nu(nusselt, port.duct_diameter, props.conductivity))


def gas_exchange_bc(
    state: EngineState,
    geom: CylinderGeometry,
    intake_port: PortGeometry,
    exhaust_port: PortGeometry,
    properties: GasPropertyTable,
    exhaust_temperature: float,
    intake_coefficient: float = 0.01,
    exhaust_pressure: float = 1.1e5,
    gas_constant: float = 287.05,
) -> Dict[str, tuple]:
    """
    (alpha, T_ref) of the four gas-exchange zones for one engine state

    The intake side references t_int. The exhaust side references the
    per-speed exhaust temperature when fired and t_int when coasting.
    """
    t_exh = state.t_int if state.is_coasting else exhaust_temperature
    intake_props = properties.at(state.t_int)
    exhaust_props = properties.at(t_exh)
    exhaust_mass = state.m_air + state.m_fuel

    if state.m_air > 0:
        rho_in = intake_density(state, geom)
        rho_exh = exhaust_density(exhaust_pressure, t_exh, gas_constant)
    else:
        logger.debug("No air mass at %.0f rpm, gas-exchange HTCs are zero", state.n_engine)
        rho_in = rho_exh = 1.0

    n = state.n_engine
    return {
        INTAKE_VALVE: (valve_stem_htc(state.m_air, n, intake_port, rho_in, intake_props, True), state.t_int),
        EXHAUST_VALVE: (valve_stem_htc(exhaust_mass, n, exhaust_port, rho_exh, exhaust_props, False), t_exh),
        INTAKE_PORT: (
            port_htc(state.m_air, n, intake_port, rho_in, intake_props, True, intake_coefficient),
            state.t_int,
        ),
        EXHAUST_PORT: (port_htc(exhaust_mass, n, exhaust_port, rho_exh, exhaust_props, False), t_exh),
    }
