"""
Water-side boundary conditions: mapped reference HTC field, speed scaling,
water heat flow and sensor-lag correction
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from services.errors import (
    DegenerateTemperatureDifferenceError,
    EmptyHistogramError,
    InputValidationError,
    MissingColumnError,
    NonMonotoneTimeError,
    NonPositiveInputError,
    TooFewSamplesError,
)

logger = logging.getLogger(__name__)

DEFAULT_EXPONENT = 0.7
REFERENCE_COLUMNS = ("patch_id", "area_m2", "alpha_ref_Wm2K")
WATER_COLUMNS = ("t_s", "T_in_K", "T_out_K", "vol_flow_m3s")


@dataclass
class ReferenceHtcField:
    """Per-patch water-side HTC at the reference speed"""

    patch_ids: List[str]
    areas: np.ndarray  # m2
    alpha_ref: np.ndarray  # W/m2K
    n_ref: float  # rpm
    exponent: float = DEFAULT_EXPONENT
    flagged: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.patch_ids = [str(p) for p in self.patch_ids]
        self.areas = np.asarray(self.areas, dtype=float)
        self.alpha_ref = np.asarray(self.alpha_ref, dtype=float)
        if not (len(self.patch_ids) == self.areas.size == self.alpha_ref.size):
            raise InputValidationError("Reference field columns differ in length")
        if np.any(self.areas <= 0):
            raise NonPositiveInputError("Patch areas must be positive")
        if np.any(self.alpha_ref < 0):
            raise NonPositiveInputError("Reference HTC must be non-negative")
        if not 0 < self.exponent < 1:
            raise InputValidationError(f"Reynolds exponent must lie in (0, 1), got {self.exponent}")
        if self.n_ref <= 0:
            raise NonPositiveInputError(f"Reference speed must be positive, got {self.n_ref}")

    @property
    def active(self) -> np.ndarray:
        return self.alpha_ref > 0

    def alpha_of(self, patch_id: str) -> float:
        return float(self.alpha_ref[self.patch_ids.index(patch_id)])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"patch_id": self.patch_ids, "area_m2": self.areas, "alpha_ref_Wm2K": self.alpha_ref})


def map_reference_htc(
    patch_ids: Sequence[str],
    areas,
    normal_flux,
    T_s,
    T_ref,
    n_ref: float,
    exponent: float = DEFAULT_EXPONENT,
    strict: bool = True,
    tolerance: float = 1e-6,
) -> ReferenceHtcField:
    """
    alpha_ref = (q . n) / (T_ref - T_s) per patch

    Heat leaving the solid (q . n < 0) towards colder water (T_ref < T_s)
    gives a positive HTC. Zero flux maps to an inactive patch.

    Args:
        patch_ids: Patch names
        areas: Patch areas [m2]
        normal_flux: Conduction flux along the patch normal [W/m2]
        T_s: Wall temperature per patch [K]
        T_ref: Water reference temperature, scalar or per patch [K]
        n_ref: Engine speed of the reference solution [rpm]
        exponent: Reynolds exponent of the speed scaling
        strict: Raise on degenerate patches instead of flagging them
        tolerance: Smallest |T_ref - T_s| [K] that is divided by

    Returns:
        Reference field; degenerate patches carry alpha 0 and are listed in flagged
    """
    flux = np.asarray(normal_flux, dtype=float)
    difference = np.broadcast_to(np.asarray(T_ref, dtype=float), flux.shape) - np.asarray(T_s, dtype=float)
    ids = [str(p) for p in patch_ids]

    degenerate = np.abs(difference) < tolerance
    flagged = [ids[i] for i in np.flatnonzero(degenerate)]
    if flagged and strict:
        raise DegenerateTemperatureDifferenceError(flagged)
    if flagged:
        logger.warning("Flagged %d water patches with degenerate temperature difference", len(flagged))

    alpha = np.divide(flux, difference, out=np.zeros_like(flux), where=~degenerate)
    wrong_sign = np.flatnonzero(alpha < 0)
    if wrong_sign.size:
        raise InputValidationError(
            f"Flux and temperature difference disagree in sign on patches: {', '.join(ids[i] for i in wrong_sign)}"
        )
    inactive = int(np.sum((flux == 0) & ~degenerate))
    if inactive:
        logger.info("%d water patches carry no flux and are inactive", inactive)
    return ReferenceHtcField(ids, areas, alpha, n_ref, exponent, flagged)


def reference_speed(speeds, weights=None, exponent: float = DEFAULT_EXPONENT) -> float:
    """Power mean (sum w n^m / sum w)^(1/m) of a speed histogram"""
    speeds = np.asarray(speeds, dtype=float)
    weights = np.ones_like(speeds) if weights is None else np.asarray(weights, dtype=float)
    if speeds.size == 0 or weights.sum() <= 0:
        raise EmptyHistogramError("Speed histogram is empty")
    if exponent <= 0:
        raise NonPositiveInputError(f"Exponent must be positive, got {exponent}")
    used = weights > 0
    if np.any(speeds[used] <= 0):
        raise NonPositiveInputError("Reference speed needs positive speeds")
    mean = np.sum(weights[used] * speeds[used] ** exponent) / weights[used].sum()
    return float(mean ** (1.0 / exponent))


def speed_scale_factor(n_engine, n_ref: float, exponent: float):
    n_engine = np.asarray(n_engine, dtype=float)
    if np.any(n_engine < 0):
        raise NonPositiveInputError("Engine speed must be non-negative")
    return (n_engine / n_ref) ** exponent


def scale_htc(reference: ReferenceHtcField, n_engine) -> np.ndarray:
    """alpha(patch, t) = alpha_ref(patch) (n(t) / n_ref)^m"""
    factor = speed_scale_factor(n_engine, reference.n_ref, reference.exponent)
    return np.multiply.outer(factor, reference.alpha_ref)


def water_heat_flow(
    c_p: float,
    T_in,
    T_out,
    mass_flow=None,
    volume_flow=None,
    density: float = 1000.0,
):
    """Q = m_dot c_p (T_out - T_in); positive when the water heats up"""
    if mass_flow is None:
        if volume_flow is None:
            raise InputValidationError("Give either a mass flow or a volume flow")
        mass_flow = np.asarray(volume_flow, dtype=float) * density
    mass_flow = np.asarray(mass_flow, dtype=float)
    if np.any(mass_flow < 0):
        raise NonPositiveInputError("Water flow must be non-negative")
    return mass_flow * c_p * (np.asarray(T_out, dtype=float) - np.asarray(T_in, dtype=float))


@dataclass
class WaterSensorChannel:
    times: np.ndarray  # s
    temperatures: np.ndarray  # K
    tau: float = 0.0  # s

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.temperatures = np.asarray(self.temperatures, dtype=float)
        if self.tau < 0:
            raise NonPositiveInputError(f"Sensor time constant must be non-negative, got {self.tau}")
        bad = np.flatnonzero(np.diff(self.times) <= 0)
        if bad.size:
            raise NonMonotoneTimeError(int(bad[0]) + 1)


def sensor_lag_correct(channel: WaterSensorChannel) -> np.ndarray:
    """T_cor = T + tau dT/dt; second-order differences inside and at the ends"""
    if channel.times.size < 3:
        raise TooFewSamplesError(f"Need at least 3 samples, got {channel.times.size}")
    if channel.tau == 0:
        return channel.temperatures.copy()
    return channel.temperatures + channel.tau * np.gradient(channel.temperatures, channel.times, edge_order=2)


@dataclass
class WaterChannelMeasurement:
    times: np.ndarray
    T_in: np.ndarray
    T_out: np.ndarray
    volume_flow: np.ndarray

    def heat_flow(self, c_p: float = 4186.0, density: float = 1000.0) -> np.ndarray:
        return water_heat_flow(c_p, self.T_in, self.T_out, volume_flow=self.volume_flow, density=density)

    def corrected(self, tau: float) -> "WaterChannelMeasurement":
        return WaterChannelMeasurement(
            self.times,
            sensor_lag_correct(WaterSensorChannel(self.times, self.T_in, tau)),
            sensor_lag_correct(WaterSensorChannel(self.times, self.T_out, tau)),
            self.volume_flow,
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"t_s": self.times, "T_in_K": self.T_in, "T_out_K": self.T_out, "vol_flow_m3s": self.volume_flow}
        )


def load_water_channel(path: Union[str, Path]) -> WaterChannelMeasurement:
    frame = pd.read_csv(path, comment="#")
    for column in WATER_COLUMNS:
        if column not in frame.columns:
            raise MissingColumnError(column, str(path))
    times = frame["t_s"].to_numpy(dtype=float)
    bad = np.flatnonzero(np.diff(times) <= 0)
    if bad.size:
        raise NonMonotoneTimeError(int(bad[0]) + 1)
    return WaterChannelMeasurement(
        times,
        frame["T_in_K"].to_numpy(dtype=float),
        frame["T_out_K"].to_numpy(dtype=float),
        frame["vol_flow_m3s"].to_numpy(dtype=float),
    )


def load_reference_field(path: Union[str, Path]) -> ReferenceHtcField:
    """Reference-field CSV with '# n_ref_rpm=' and '# m=' header comments"""
    metadata = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line.lstrip("#").strip().partition("=")
            metadata[key.strip()] = value.strip()
    if "n_ref_rpm" not in metadata:
        raise MissingColumnError("n_ref_rpm", str(path))

    frame = pd.read_csv(path, comment="#", dtype={"patch_id": str})
    for column in REFERENCE_COLUMNS:
        if column not in frame.columns:
            raise MissingColumnError(column, str(path))
    return ReferenceHtcField(
        frame["patch_id"].tolist(),
        frame["area_m2"].to_numpy(dtype=float),
        frame["alpha_ref_Wm2K"].to_numpy(dtype=float),
        float(metadata["n_ref_rpm"]),
        float(metadata.get("m", DEFAULT_EXPONENT)),
    )


def write_reference_field(reference: ReferenceHtcField, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(f"# n_ref_rpm={reference.n_ref:.17g}\n")
        handle.write(f"# m={reference.exponent:g}\n")
        reference.to_frame().to_csv(handle, index=False, float_format="%.17g")


def synthetic_reference_field(
    patch_ids: Sequence[str],
    areas,
    n_ref: float,
    exponent: float = DEFAULT_EXPONENT,
    alpha_mean: float = 8000.0,
    spread: float = 0.3,
    seed: Optional[int] = 0,
) -> ReferenceHtcField:
    """Log-normally scattered HTC pattern around alpha_mean"""
    rng = np.random.default_rng(seed)
    alpha = alpha_mean * rng.lognormal(mean=-0.5 * spread**2, sigma=spread, size=len(patch_ids))
    return ReferenceHtcField(list(patch_ids), areas, alpha, n_ref, exponent)
