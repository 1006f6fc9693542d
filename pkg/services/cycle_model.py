"""
Crank-angle resolved in-cylinder analysis under fired conditions
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline

from services.errors import (
    GridMismatchError,
    IncompleteCycleError,
    InputValidationError,
    MissingColumnError,
    NonPositiveInputError,
    TooFewCyclesError,
    ZeroMeanHtcError,
)
from services.pdf import RealizationHistogram
from services.state_space import EngineState

logger = logging.getLogger(__name__)

R_UNIVERSAL = 8.314462  # J/(mol K)
PRESSURE_UNITS = {"Pa": 1.0, "kPa": 1e3, "bar": 1e5, "MPa": 1e6}


class CylinderGeometry(BaseModel):
    """Slider-crank geometry of one cylinder"""

    model_config = ConfigDict(frozen=True)

    bore: float = Field(gt=0)  # m
    stroke: float = Field(gt=0)  # m
    conrod_length: float = Field(gt=0)  # m
    compression_ratio: float = Field(gt=1)
    n_cylinders: int = Field(default=1, gt=0)

    @model_validator(mode="after")
    def _conrod_longer_than_crank(self):
        if self.conrod_length <= self.stroke / 2:
            raise ValueError("conrod_length must exceed stroke/2")
        return self

    @property
    def crank_radius(self) -> float:
        return self.stroke / 2

    @property
    def piston_area(self) -> float:
        return math.pi * self.bore**2 / 4

    @property
    def swept_volume(self) -> float:
        return self.piston_area * self.stroke

    @property
    def clearance_volume(self) -> float:
        return self.swept_volume / (self.compression_ratio - 1)

    @property
    def max_volume(self) -> float:
        return self.clearance_volume + self.swept_volume

    def mean_piston_speed(self, engine_speed: float) -> float:
        return 2.0 * self.stroke * engine_speed / 60.0


class CycleSettings(BaseModel):
    """Constants of the fired-cycle analysis"""

    kappa_ub: float = Field(default=1.33, ge=1)
    eps_c: float = Field(default=0.5, ge=0)
    c_ivc: float = Field(default=0.5, ge=0)
    ivc_deg: float = -130.0
    evo_deg: float = 130.0
    ignition_deg: float = -15.0
    molar_mass: float = Field(default=0.02885, gt=0)  # kg/mol at IVC
    motored_fit_window: Tuple[float, float] = (-100.0, -40.0)
    pdf_bins: int = Field(default=12, gt=0)


class HeatTransferClosure(Protocol):
    def evaluate(self, pressure, velocity, temperature) -> np.ndarray: ...


class HtcClosure(BaseModel):
    """Woschni-form power law alpha = C p^m v^m T^(0.75 - 1.62 m)"""

    model_config = ConfigDict(frozen=True)

    scale: float = Field(default=0.08, gt=0)
    exponent: float = Field(default=0.78, gt=0, lt=1)

    @property
    def temperature_exponent(self) -> float:
        return 0.75 - 1.62 * self.exponent

    def evaluate(self, pressure, velocity, temperature) -> np.ndarray:
        m = self.exponent
        return self.scale * pressure**m * velocity**m * temperature**self.temperature_exponent


@dataclass
class PressureTrace:
    """Crank-resolved cylinder pressure of an ensemble of cycles"""

    crank_angle: np.ndarray  # deg, 0 = firing TDC
    pressure: np.ndarray  # Pa, cycles x angles
    engine_speed: float  # rpm

    def __post_init__(self):
        self.crank_angle = np.asarray(self.crank_angle, dtype=float).reshape(-1)
        self.pressure = np.atleast_2d(np.asarray(self.pressure, dtype=float))
        if self.pressure.shape[1] != self.crank_angle.size:
            raise GridMismatchError(
                f"Pressure has {self.pressure.shape[1]} angles, crank grid has {self.crank_angle.size}"
            )
        if not np.all(np.diff(self.crank_angle) > 0):
            raise InputValidationError("Crank angle must be strictly increasing")
        if not np.all(self.pressure > 0):
            raise NonPositiveInputError("Cylinder pressure must be positive")

    @property
    def n_cycles(self) -> int:
        return int(self.pressure.shape[0])


@dataclass
class TurbulenceState:
    k: np.ndarray  # m2/s2
    length_scale: np.ndarray  # m
    eps_c: float
    k_ivc: float
    clamped_steps: int = 0


@dataclass
class CycleResult:
    crank_angle: np.ndarray
    alpha: np.ndarray  # W/m2K
    alpha_mean: float
    T_eff: float  # K
    engine_speed: float


def load_pressure_trace(path: Union[str, Path]) -> PressureTrace:
    """
    Read a pressure-trace CSV

    Metadata comment lines carry '# engine_speed_rpm=' and '# p_unit='.
    """
    metadata = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line.lstrip("#").strip().partition("=")
            metadata[key.strip()] = value.strip()

    if "engine_speed_rpm" not in metadata:
        raise MissingColumnError("engine_speed_rpm", str(path))
    unit = metadata.get("p_unit", "Pa")
    if unit not in PRESSURE_UNITS:
        raise InputValidationError(f"Unknown pressure unit '{unit}' in {path}")

    frame = pd.read_csv(path, comment="#")
    if "alpha_cr_deg" not in frame.columns:
        raise MissingColumnError("alpha_cr_deg", str(path))
    cycles = sorted(c for c in frame.columns if c != "alpha_cr_deg")
    pressure = frame[cycles].to_numpy(dtype=float).T * PRESSURE_UNITS[unit]
    return PressureTrace(frame["alpha_cr_deg"].to_numpy(dtype=float), pressure, float(metadata["engine_speed_rpm"]))


def write_pressure_trace(trace: PressureTrace, path: Union[str, Path]) -> None:
    frame = pd.DataFrame(trace.pressure.T, columns=[f"cycle_{i + 1:03d}" for i in range(trace.n_cycles)])
    frame.insert(0, "alpha_cr_deg", trace.crank_angle)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(f"# engine_speed_rpm={trace.engine_speed:g}\n")
        handle.write("# p_unit=Pa\n")
        frame.to_csv(handle, index=False)


# --- kinematics ---------------------------------------------------------------


def cylinder_volume(geom: CylinderGeometry, crank_angle) -> np.ndarray:
    """Cylinder volume [m3] at crank angle [deg], 0 = TDC"""
    theta = np.radians(crank_angle)
    r, L = geom.crank_radius, geom.conrod_length
    displacement = r + L - (r * np.cos(theta) + np.sqrt(L**2 - (r * np.sin(theta)) ** 2))
    return geom.clearance_volume + geom.piston_area * displacement


def piston_speed(geom: CylinderGeometry, crank_angle, engine_speed: float) -> np.ndarray:
    """Instantaneous piston speed [m/s]"""
    theta = np.radians(crank_angle)
    r, L = geom.crank_radius, geom.conrod_length
    omega = 2.0 * math.pi * engine_speed / 60.0
    ds_dtheta = r * np.sin(theta) * (1.0 + r * np.cos(theta) / np.sqrt(L**2 - (r * np.sin(theta)) ** 2))
    return ds_dtheta * omega


def crank_time(crank_angle, engine_speed: float) -> np.ndarray:
    """Seconds elapsed per crank angle at constant speed"""
    if engine_speed <= 0:
        raise NonPositiveInputError(f"Engine speed must be positive, got {engine_speed}")
    return np.asarray(crank_angle, dtype=float) / (6.0 * engine_speed)


def time_derivative(values, crank_angle, engine_speed: float) -> np.ndarray:
    """d/dt along the last axis; second order inside and at the ends"""
    return np.gradient(values, crank_time(crank_angle, engine_speed), axis=-1, edge_order=2)


# --- thermodynamics -------------------------------------------------------------


def amount_of_substance(m_air: float, m_fuel: float, molar_mass: float) -> float:
    """Moles in the cylinder from per-stroke masses [mg]"""
    return (m_air + m_fuel) * 1e-6 / molar_mass


def mean_gas_temperature(pressure, volume, amount) -> np.ndarray:
    """Cylinder-average gas temperature pV/(NR)"""
    pressure = np.asarray(pressure, dtype=float)
    volume = np.asarray(volume, dtype=float)
    if np.any(pressure <= 0) or np.any(volume <= 0) or np.any(np.asarray(amount) <= 0):
        raise NonPositiveInputError("Pressure, volume and amount of substance must be positive")
    return pressure * volume / (amount * R_UNIVERSAL)


def polytropic_exponent(pressure, volume, crank_angle, window: Tuple[float, float] = (-100.0, -40.0)) -> float:
    """Exponent of p V^n = const fitted on the compression stroke"""
    crank_angle = np.asarray(crank_angle, dtype=float)
    mask = (crank_angle >= window[0]) & (crank_angle <= window[1])
    if mask.sum() < 3:
        raise GridMismatchError(f"Fit window {window} holds fewer than 3 crank angles")
    slope, _ = np.polyfit(np.log(np.asarray(volume)[mask]), np.log(np.asarray(pressure)[mask]), 1)
    return -float(slope)


def burn_fraction(
    trace: PressureTrace,
    geom: CylinderGeometry,
    motored: PressureTrace,
    window: Optional[Tuple[float, float]] = None,
    exponent: Optional[float] = None,
    fit_window: Tuple[float, float] = (-100.0, -40.0),
) -> np.ndarray:
    """
    Mass fraction burned by the pressure-difference method

    The pressure rise not explained by polytropic volume change is taken as
    combustion, relative to the motored trace on the same grid.

    Returns:
        x of shape (cycles, angles), 0 before ignition, 1 at burn end
    """
    if not np.array_equal(trace.crank_angle, motored.crank_angle):
        raise GridMismatchError("Fired and motored traces must share the crank-angle grid")

    crank = trace.crank_angle
    volume = cylinder_volume(geom, crank)
    motored_mean = motored.pressure.mean(axis=0, keepdims=True)
    if exponent is None:
        exponent = polytropic_exponent(motored_mean[0], volume, crank, fit_window)

    ratio = (volume[:-1] / volume[1:]) ** exponent

    def combustion_rise(pressure):
        return pressure[:, 1:] - pressure[:, :-1] * ratio

    release = (combustion_rise(trace.pressure) - combustion_rise(motored_mean)) * volume[1:]
    if window is not None:
        inside = (crank[1:] > window[0]) & (crank[1:] <= window[1])
        release = np.where(inside, release, 0.0)

    noise = 1e-9 * np.max(np.abs(release), axis=1, keepdims=True)
    release = np.where(np.abs(release) <= noise, 0.0, release)
    negative = int((release < 0).sum())
    if negative:
        logger.warning("Clipped %d negative heat-release increments", negative)
    release = np.clip(release, 0.0, None)

    cumulative = np.concatenate([np.zeros((release.shape[0], 1)), np.cumsum(release, axis=1)], axis=1)
    total = cumulative[:, -1:]
    return np.divide(cumulative, total, out=np.zeros_like(cumulative), where=total > 0)


def unburnt_temperature(pressure, p_ign, T_ign, kappa_ub: float) -> np.ndarray:
    """Polytropic unburnt-zone temperature from the ignition state"""
    pressure = np.asarray(pressure, dtype=float)
    if np.any(pressure <= 0) or np.any(np.asarray(p_ign) <= 0):
        raise NonPositiveInputError("Pressure must be positive")
    if kappa_ub < 1:
        raise InputValidationError(f"kappa_ub must be at least 1, got {kappa_ub}")
    return T_ign * (pressure / p_ign) ** ((kappa_ub - 1.0) / kappa_ub)


def burnt_volume_fraction(x, T_ub, T_mean) -> np.ndarray:
    """Two-zone ideal-gas volume balance y = 1 - (1 - x) T_ub / T_mean"""
    x = np.asarray(x, dtype=float)
    y = 1.0 - (1.0 - x) * np.asarray(T_ub) / np.asarray(T_mean)
    y = np.where(x <= 0.0, 0.0, np.clip(y, 0.0, 1.0))
    return np.maximum.accumulate(y, axis=-1)


# --- turbulence -----------------------------------------------------------------


def eddy_length_scale(volume) -> np.ndarray:
    """Sphere-equivalent diameter (6 V / pi)^(1/3)"""
    return np.cbrt(6.0 * np.asarray(volume, dtype=float) / math.pi)


def initial_tke(geom: CylinderGeometry, engine_speed: float, c_ivc: float) -> float:
    return c_ivc * geom.mean_piston_speed(engine_speed) ** 2


def solve_tke(
    time,
    volume,
    k_ivc: float,
    eps_c: float,
    length_scale=None,
) -> TurbulenceState:
    """
    Integrate dk/dt = -(2/3)(k/V) dV/dt - eps_c k^(3/2)/l with fixed-step RK4

    The step is the trace resolution; stage values of V, dV/dt and l come
    from cubic splines through the trace.
    """
    if k_ivc < 0 or eps_c < 0:
        raise NonPositiveInputError("k_ivc and eps_c must be non-negative")
    t = np.asarray(time, dtype=float)
    V = np.asarray(volume, dtype=float)
    if length_scale is None:
        l = eddy_length_scale(V)
    else:
        l = np.broadcast_to(np.asarray(length_scale, dtype=float), V.shape).copy()
    if np.any(V <= 0) or np.any(l <= 0):
        raise NonPositiveInputError("Volume and length scale must be positive")

    k = np.empty_like(t)
    k[0] = k_ivc
    if t.size < 2:
        return TurbulenceState(k, l, eps_c, k_ivc)

    spline_volume = CubicSpline(t, V)
    spline_rate = spline_volume.derivative()
    t_mid = 0.5 * (t[:-1] + t[1:])
    V_node, V_mid = V.tolist(), spline_volume(t_mid).tolist()
    dV_node, dV_mid = spline_rate(t).tolist(), spline_rate(t_mid).tolist()
    l_node, l_mid = l.tolist(), CubicSpline(t, l)(t_mid).tolist()
    steps = np.diff(t).tolist()

    def rate(kk, vol, dvol, length):
        kp = kk if kk > 0.0 else 0.0
        return -2.0 / 3.0 * kk / vol * dvol - eps_c * kp * math.sqrt(kp) / length

    clamped = 0
    current = float(k_ivc)
    out = [current]
    for i, h in enumerate(steps):
        k1 = rate(current, V_node[i], dV_node[i], l_node[i])
        k2 = rate(current + 0.5 * h * k1, V_mid[i], dV_mid[i], l_mid[i])
        k3 = rate(current + 0.5 * h * k2, V_mid[i], dV_mid[i], l_mid[i])
        k4 = rate(current + h * k3, V_node[i + 1], dV_node[i + 1], l_node[i + 1])
        current = current + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if current < 0.0:
            current = 0.0
            clamped += 1
        out.append(current)

    if clamped:
        logger.warning("Turbulent kinetic energy clamped to zero on %d steps", clamped)
    return TurbulenceState(np.asarray(out), l, eps_c, k_ivc, clamped)


def characteristic_velocity(k, v_p, y, dydt, dxdt, T_ub, T_mean, bore: float) -> np.ndarray:
    """v = sqrt((8/3) k + v_p^2 + v_c^2) with the scaled combustion convection v_c"""
    y = np.asarray(y, dtype=float)
    v_c = np.power(y, 1.0 / 6.0) * bore / 4.0 * (np.asarray(dydt) - np.asarray(T_ub) / np.asarray(T_mean) * dxdt)
    return np.sqrt(8.0 / 3.0 * np.clip(k, 0.0, None) + np.asarray(v_p) ** 2 + v_c**2)


# --- heat transfer ----------------------------------------------------------------


def htc_trace(pressure, velocity, temperature, closure: HeatTransferClosure) -> np.ndarray:
    """Crank-resolved heat-transfer coefficient from the closure"""
    if not _aligned(pressure, velocity, temperature):
        raise GridMismatchError("Pressure, velocity and temperature traces are not aligned")
    pressure, velocity, temperature = np.broadcast_arrays(
        np.asarray(pressure, dtype=float), np.asarray(velocity, dtype=float), np.asarray(temperature, dtype=float)
    )
    if np.any(pressure <= 0) or np.any(temperature <= 0) or np.any(velocity < 0):
        raise NonPositiveInputError("Pressure and temperature must be positive, velocity non-negative")
    return closure.evaluate(pressure, velocity, temperature)


def _aligned(*traces) -> bool:
    shapes = [np.shape(trace) for trace in traces]
    lengths = {shape[-1] for shape in shapes if shape}
    return len(lengths) <= 1


def cycle_aggregate(alpha, T_mean, crank_angle, engine_speed: float) -> CycleResult:
    """
    Cycle-mean HTC and flux-weighted gas temperature

    alpha_mean is the time average over the cycle, T_eff = int(alpha T) / int(alpha).
    """
    crank_angle = np.asarray(crank_angle, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    T_mean = np.asarray(T_mean, dtype=float)
    span = crank_angle[-1] - crank_angle[0]
    if crank_angle.size < 2 or span < 720.0 - 1.5 * np.max(np.diff(crank_angle)):
        raise IncompleteCycleError(f"Trace covers {span:.1f} deg of a 720 deg cycle")

    t = crank_time(crank_angle, engine_speed)
    alpha_integral = trapezoid(alpha, t)
    if alpha_integral <= 0:
        raise ZeroMeanHtcError("Cycle-integrated HTC is zero")
    return CycleResult(
        crank_angle=crank_angle,
        alpha=alpha,
        alpha_mean=float(alpha_integral / (t[-1] - t[0])),
        T_eff=float(trapezoid(alpha * T_mean, t) / alpha_integral),
        engine_speed=float(engine_speed),
    )


def calibrate_closure(closure: HtcClosure, target_alpha_mean: float, result: CycleResult) -> HtcClosure:
    """Rescale C so that one stationary cycle hits the target mean HTC"""
    if target_alpha_mean <= 0:
        raise NonPositiveInputError("Target HTC must be positive")
    scale = closure.scale * target_alpha_mean / result.alpha_mean
    logger.info("Calibrated HTC scale %.6g -> %.6g", closure.scale, scale)
    return closure.model_copy(update={"scale": scale})


def build_htc_pdf(
    ensemble: Sequence[CycleResult],
    n_bins: int = 12,
    edges: Optional[Sequence[np.ndarray]] = None,
    min_cycles: int = 2,
) -> RealizationHistogram:
    """Normed histogram over (alpha_mean, T_eff) of a cycle ensemble"""
    if len(ensemble) < min_cycles:
        raise TooFewCyclesError(f"Need at least {min_cycles} cycles, got {len(ensemble)}")
    samples = np.array([[r.alpha_mean, r.T_eff] for r in ensemble])
    return RealizationHistogram.from_samples(samples, edges=edges, n_bins=n_bins)


def analyze_speed_point(
    trace: PressureTrace,
    motored: PressureTrace,
    state: EngineState,
    geom: CylinderGeometry,
    closure: HeatTransferClosure,
    settings: CycleSettings,
) -> List[CycleResult]:
    """
    Run the fired-cycle chain for every cycle of one stationary speed point

    Args:
        trace: Fired ensemble, full 720 deg cycles
        motored: Motored reference on the same grid
        state: Stationary engine state (masses fix the amount of substance)
        geom: Cylinder geometry
        closure: HTC closure
        settings: Cycle-analysis constants

    Returns:
        One CycleResult per recorded cycle
    """
    crank = trace.crank_angle
    n = trace.engine_speed
    t = crank_time(crank, n)
    volume = cylinder_volume(geom, crank)
    v_p = piston_speed(geom, crank, n)

    amount = amount_of_substance(state.m_air, state.m_fuel, settings.molar_mass)
    T_mean = mean_gas_temperature(trace.pressure, volume, amount)
    x = burn_fraction(
        trace, geom, motored, window=(settings.ivc_deg, settings.evo_deg), fit_window=settings.motored_fit_window
    )

    i_ign = int(np.clip(np.searchsorted(crank, settings.ignition_deg), 0, crank.size - 1))
    T_ub = T_mean.copy()
    T_ub[:, i_ign:] = unburnt_temperature(
        trace.pressure[:, i_ign:],
        trace.pressure[:, i_ign : i_ign + 1],
        T_mean[:, i_ign : i_ign + 1],
        settings.kappa_ub,
    )
    y = burnt_volume_fraction(x, T_ub, T_mean)
    dxdt = time_derivative(x, crank, n)
    dydt = time_derivative(y, crank, n)

    k = cycle_tke(geom, crank, t, volume, n, settings)
    velocity = characteristic_velocity(k, v_p, y, dydt, dxdt, T_ub, T_mean, geom.bore)
    alpha = htc_trace(trace.pressure, velocity, T_mean, closure)

    results = [cycle_aggregate(alpha[c], T_mean[c], crank, n) for c in range(trace.n_cycles)]
    logger.info("Analyzed %d cycles at %.0f rpm", len(results), n)
    return results


def cycle_tke(geom: CylinderGeometry, crank, t, volume, engine_speed: float, settings: CycleSettings) -> np.ndarray:
    """TKE over the cycle: held at k_ivc before inlet-valve-closed, integrated after"""
    k_ivc = initial_tke(geom, engine_speed, settings.c_ivc)
    k = np.full(np.shape(crank), k_ivc)
    i_ivc = int(np.clip(np.searchsorted(crank, settings.ivc_deg), 0, len(crank) - 1))
    k[i_ivc:] = solve_tke(t[i_ivc:], volume[i_ivc:], k_ivc, settings.eps_c).k
    return k
