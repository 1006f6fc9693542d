"""
Part-load transform of stationary full-load (alpha, T_eff) PDFs
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from services.errors import MissingReferenceError, MissingSpeedPointError, NonPositiveInputError
from services.expectation import interpolate_speed, speed_bracket
from services.pdf import ALPHA, RealizationHistogram
from services.state_space import EngineState

logger = logging.getLogger(__name__)


class PartLoadSettings(BaseModel):
    """Closure constants of the state ratios"""

    temperature_rise: float = Field(default=1800.0, ge=0)  # K at stoichiometric mixture
    stoichiometric_ratio: float = Field(default=1.0 / 14.7, gt=0)  # fuel/air by mass


@dataclass(frozen=True)
class StateRatios:
    r_p: float
    r_v: float
    r_T: float

    def __post_init__(self):
        if min(self.r_p, self.r_v, self.r_T) <= 0:
            raise NonPositiveInputError(f"State ratios must be positive, got {self}")

    def __mul__(self, other: "StateRatios") -> "StateRatios":
        return StateRatios(self.r_p * other.r_p, self.r_v * other.r_v, self.r_T * other.r_T)

    @classmethod
    def identity(cls) -> "StateRatios":
        return cls(1.0, 1.0, 1.0)


def equivalence_ratio(state: EngineState, stoichiometric_ratio: float) -> float:
    if state.m_air <= 0:
        return 0.0
    return state.m_fuel / state.m_air / stoichiometric_ratio


def state_ratios(
    current: EngineState,
    stationary: Optional[EngineState],
    settings: Optional[PartLoadSettings] = None,
) -> StateRatios:
    """
    Pressure, velocity and gas-temperature ratios of a state to its reference

    r_v is the speed ratio, r_T follows the inlet temperature plus a mixture
    temperature rise, r_p the trapped air mass times r_T.
    """
    if stationary is None:
        raise MissingReferenceError(f"No stationary reference near {current.n_engine:.0f} rpm")
    settings = settings or PartLoadSettings()
    if stationary.n_engine <= 0 or stationary.m_air <= 0:
        raise MissingReferenceError("Stationary reference needs positive speed and air mass")

    rise = settings.temperature_rise
    phi = equivalence_ratio(current, settings.stoichiometric_ratio)
    phi_stat = equivalence_ratio(stationary, settings.stoichiometric_ratio)
    r_T = (current.t_int + rise * phi) / (stationary.t_int + rise * phi_stat)
    return StateRatios(
        r_p=current.m_air / stationary.m_air * r_T,
        r_v=current.n_engine / stationary.n_engine,
        r_T=r_T,
    )


def beta(ratios: StateRatios, exponent: float) -> float:
    """beta = r_p^m r_v^m r_T^(0.75 - 1.62 m)"""
    return ratios.r_p**exponent * ratios.r_v**exponent * ratios.r_T ** (0.75 - 1.62 * exponent)


def transform_pdf(pdf: RealizationHistogram, beta_value: float, r_T: float = 1.0) -> RealizationHistogram:
    """alpha -> beta alpha, and T_eff -> r_T T_eff on a 2D histogram"""
    if beta_value <= 0 or r_T <= 0:
        raise NonPositiveInputError("Transform factors must be positive")
    factors = [1.0] * pdf.ndim
    factors[ALPHA] = beta_value
    if pdf.ndim > 1:
        factors[1] = r_T
    return pdf.scaled(factors)


@dataclass
class StationaryPoint:
    speed: float  # rpm
    state: EngineState
    pdf: RealizationHistogram


class StationaryReference:
    """Measured full-load PDFs along the speed line"""

    def __init__(self, points: Sequence[StationaryPoint]):
        if not points:
            raise MissingReferenceError("Stationary reference holds no speed points")
        self.points: List[StationaryPoint] = sorted(points, key=lambda p: p.speed)

    @property
    def speeds(self) -> np.ndarray:
        return np.array([p.speed for p in self.points])

    def point_at(self, speed: float) -> StationaryPoint:
        for point in self.points:
            if point.speed == speed:
                return point
        raise MissingSpeedPointError(f"No stationary speed point at {speed:.0f} rpm")

    def transformed(
        self, point: StationaryPoint, state: EngineState, exponent: float, settings: PartLoadSettings
    ) -> RealizationHistogram:
        ratios = state_ratios(state, point.state, settings)
        return transform_pdf(point.pdf, beta(ratios, exponent), ratios.r_T)

    def expect(
        self,
        state: EngineState,
        fs: Sequence[Callable[..., np.ndarray]],
        exponent: float,
        settings: Optional[PartLoadSettings] = None,
    ) -> np.ndarray:
        """
        Conditional means of fs at an arbitrary fired state

        Both bracketing speed points are transformed to the state, then the
        means are interpolated linearly in engine speed.
        """
        settings = settings or PartLoadSettings()

        def means(point):
            pdf = self.transformed(point, state, exponent, settings)
            return np.array([pdf.expect(f) for f in fs])

        if len(self.points) == 1:
            return means(self.points[0])
        bracket = speed_bracket(self.speeds, state.n_engine)
        left, right = self.points[bracket.left], self.points[bracket.right]
        return interpolate_speed(means(left), means(right), left.speed, right.speed, bracket.speed)


def beta_diagnostics(
    reference: StationaryReference,
    states: Dict[Tuple[int, ...], EngineState],
    exponent: float,
    settings: Optional[PartLoadSettings] = None,
) -> pd.DataFrame:
    """Per-bin beta and HTC change against the nearest full-load point"""
    settings = settings or PartLoadSettings()
    speeds = reference.speeds
    records = []
    for index in sorted(states):
        state = states[index]
        if state.is_coasting or state.m_air <= 0 or state.n_engine <= 0:
            continue
        point = reference.points[int(np.argmin(np.abs(speeds - state.n_engine)))]
        ratios = state_ratios(state, point.state, settings)
        b = beta(ratios, exponent)
        alpha_stat = point.pdf.mean_alpha()
        records.append(
            {
                "bin": "-".join(map(str, index)),
                "n_engine": state.n_engine,
                "reference_rpm": point.speed,
                "r_p": ratios.r_p,
                "r_v": ratios.r_v,
                "r_T": ratios.r_T,
                "beta": b,
                "alpha_stationary": alpha_stat,
                "alpha_transformed": b * alpha_stat,
                "delta_alpha": (b - 1.0) * alpha_stat,
            }
        )
    logger.info("Computed beta diagnostics for %d fired bins", len(records))
    return pd.DataFrame.from_records(
        records,
        columns=[
            "bin",
            "n_engine",
            "reference_rpm",
            "r_p",
            "r_v",
            "r_T",
            "beta",
            "alpha_stationary",
            "alpha_transformed",
            "delta_alpha",
        ],
    )
