"""
Engine state space: telemetry ingestion, binning grid, state histograms and
the pointer matrix that maps simulation time onto state bins
"""
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from services.errors import (
    EmptySeriesError,
    GridMismatchError,
    HorizonExceededError,
    InputValidationError,
    MissingColumnError,
    NonFiniteValueError,
    NonMonotoneTimeError,
    NonPositiveInputError,
    StateRangeError,
)

logger = logging.getLogger(__name__)

STATE_COLUMNS = ("n_engine", "m_air", "t_int", "T_i", "m_fuel")
TELEMETRY_COLUMNS = ("t",) + STATE_COLUMNS
NON_NEGATIVE_COLUMNS = ("n_engine", "m_air", "m_fuel")

SPEED, AIR, INLET_TEMPERATURE, TORQUE, FUEL = range(5)


@dataclass(frozen=True)
class EngineState:
    """Five-dimensional outer boundary condition of the engine"""

    n_engine: float  # rpm
    m_air: float  # mg/stroke
    t_int: float  # K
    T_i: float  # Nm
    m_fuel: float  # mg/stroke

    def __post_init__(self):
        values = self.as_array()
        if not np.all(np.isfinite(values)):
            raise InputValidationError(f"Engine state has non-finite entries: {values}")
        for name in NON_NEGATIVE_COLUMNS:
            if getattr(self, name) < 0:
                raise StateRangeError(-1, name, getattr(self, name))

    def as_array(self) -> np.ndarray:
        return np.array([self.n_engine, self.m_air, self.t_int, self.T_i, self.m_fuel], dtype=float)

    @classmethod
    def from_array(cls, values) -> "EngineState":
        values = np.asarray(values, dtype=float)
        return cls(*(float(v) for v in values[:5]))

    @property
    def is_coasting(self) -> bool:
        return self.T_i <= 0.0

    @property
    def is_consistent(self) -> bool:
        """No torque without fuel"""
        return not (self.m_fuel == 0.0 and self.T_i > 0.0)

    def with_fuel_scale(self, factor: float) -> "EngineState":
        return replace(self, m_fuel=self.m_fuel * factor)


@dataclass
class TelemetrySeries:
    """Engine state sampled over a lap"""

    timestamps: np.ndarray
    states: np.ndarray
    sample_period: Optional[float] = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        self.states = np.asarray(self.states, dtype=float).reshape(-1, len(STATE_COLUMNS))
        if self.states.shape[0] != self.timestamps.shape[0]:
            raise InputValidationError(
                f"{self.timestamps.shape[0]} timestamps but {self.states.shape[0]} states"
            )
        steps = np.diff(self.timestamps)
        bad = np.flatnonzero(steps <= 0)
        if bad.size:
            raise NonMonotoneTimeError(int(bad[0]) + 1)
        if self.sample_period is None:
            self.sample_period = float(np.median(steps)) if steps.size else 0.0

        if len(self) and self.sample_period > 0:
            n_max = float(self.states[:, SPEED].max())
            if n_max > 0 and self.sample_period > 2.0 * 60.0 / n_max:
                logger.warning(
                    "Sample period %.4g s is coarser than one four-stroke cycle at %.0f rpm",
                    self.sample_period,
                    n_max,
                )

    def __len__(self) -> int:
        return int(self.timestamps.shape[0])

    def state(self, i: int) -> EngineState:
        return EngineState.from_array(self.states[i])

    def column(self, name: str) -> np.ndarray:
        return self.states[:, STATE_COLUMNS.index(name)]

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0]) if len(self) else 0.0

    @property
    def inconsistent_rows(self) -> np.ndarray:
        """Rows with indicated torque but no fuel"""
        return np.flatnonzero((self.states[:, FUEL] == 0.0) & (self.states[:, TORQUE] > 0.0))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.states, columns=list(STATE_COLUMNS))
        frame.insert(0, "t", self.timestamps)
        return frame


def load_telemetry(
    path: Union[str, Path], schema: Optional[Mapping[str, str]] = None
) -> TelemetrySeries:
    """
    Load and validate a telemetry CSV

    Args:
        path: CSV file with header t,n_engine,m_air,t_int,T_i,m_fuel
        schema: Optional map from canonical column name to the file's column name

    Returns:
        Validated telemetry series
    """
    columns = {name: name for name in TELEMETRY_COLUMNS}
    columns.update(schema or {})

    frame = pd.read_csv(path, comment="#", skipinitialspace=True)
    for name in TELEMETRY_COLUMNS:
        if columns[name] not in frame.columns:
            raise MissingColumnError(name, str(path))

    data = frame[[columns[name] for name in TELEMETRY_COLUMNS]].apply(pd.to_numeric, errors="coerce")
    values = data.to_numpy(dtype=float)

    finite = np.isfinite(values)
    if not finite.all():
        row, col = np.argwhere(~finite)[0]
        raise NonFiniteValueError(int(row), TELEMETRY_COLUMNS[col])

    for name in NON_NEGATIVE_COLUMNS:
        col = TELEMETRY_COLUMNS.index(name)
        negative = np.flatnonzero(values[:, col] < 0)
        if negative.size:
            raise StateRangeError(int(negative[0]), name, float(values[negative[0], col]))

    series = TelemetrySeries(values[:, 0], values[:, 1:])
    flagged = series.inconsistent_rows
    if flagged.size:
        logger.warning("%d telemetry rows carry torque without fuel (first: row %d)", flagged.size, flagged[0])
    logger.info("Loaded %d telemetry samples from %s", len(series), path)
    return series


def consistency_report(series: TelemetrySeries) -> pd.DataFrame:
    """Rows that violate 'no torque without fuel'"""
    rows = series.inconsistent_rows
    return pd.DataFrame(
        {
            "row": rows,
            "t": series.timestamps[rows],
            "T_i": series.states[rows, TORQUE],
            "m_fuel": series.states[rows, FUEL],
        }
    )


@dataclass(frozen=True, eq=False)
class EdgesGrid:
    """Bin edges for each of the five state dimensions"""

    edges: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.edges) != len(STATE_COLUMNS):
            raise GridMismatchError(f"Expected {len(STATE_COLUMNS)} edge vectors, got {len(self.edges)}")
        converted = []
        for name, edge in zip(STATE_COLUMNS, self.edges):
            edge = np.asarray(edge, dtype=float).reshape(-1)
            if edge.size < 2 or not np.all(np.diff(edge) > 0):
                raise GridMismatchError(f"Edges for '{name}' must be strictly increasing with at least 2 entries")
            converted.append(edge)
        object.__setattr__(self, "edges", tuple(converted))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[float]]) -> "EdgesGrid":
        return cls(tuple(mapping[name] for name in STATE_COLUMNS))

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(edge.size - 1 for edge in self.edges)

    @property
    def lower(self) -> np.ndarray:
        return np.array([edge[0] for edge in self.edges])

    @property
    def upper(self) -> np.ndarray:
        return np.array([edge[-1] for edge in self.edges])

    def bin_volumes(self) -> np.ndarray:
        volume = np.ones(())
        for edge in self.edges:
            volume = np.multiply.outer(volume, np.diff(edge))
        return volume

    def bin_bounds(self, index: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        lo = np.array([edge[i] for edge, i in zip(self.edges, index)])
        hi = np.array([edge[i + 1] for edge, i in zip(self.edges, index)])
        return lo, hi

    def bin_center(self, index: Sequence[int]) -> np.ndarray:
        lo, hi = self.bin_bounds(index)
        return 0.5 * (lo + hi)

    def same_as(self, other: "EdgesGrid") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.edges, other.edges))


class Discretization(NamedTuple):
    index: Tuple[int, ...]
    clamped: bool


def discretize_states(values, grid: EdgesGrid) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorised binning; left-closed/right-open bins, last bin closed

    Returns:
        (indices, clamped) each of shape (n, 5)
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    indices = np.empty(values.shape, dtype=np.intp)
    clamped = np.zeros(values.shape, dtype=bool)
    for dim, edge in enumerate(grid.edges):
        column = values[:, dim]
        position = np.searchsorted(edge, column, side="right") - 1
        indices[:, dim] = np.clip(position, 0, edge.size - 2)
        clamped[:, dim] = (column < edge[0]) | (column > edge[-1])
    return indices, clamped


def discretize_state(state: EngineState, grid: EdgesGrid) -> Discretization:
    indices, clamped = discretize_states(state.as_array(), grid)
    return Discretization(tuple(int(i) for i in indices[0]), bool(clamped[0].any()))


def clamp_state(state: EngineState, grid: EdgesGrid) -> EngineState:
    return EngineState.from_array(np.clip(state.as_array(), grid.lower, grid.upper))


def clamp_report(series: TelemetrySeries, grid: EdgesGrid) -> pd.DataFrame:
    """One record per clamped (row, dimension)"""
    _, clamped = discretize_states(series.states, grid)
    rows, dims = np.nonzero(clamped)
    return pd.DataFrame(
        {
            "row": rows,
            "t": series.timestamps[rows],
            "dimension": [STATE_COLUMNS[d] for d in dims],
            "value": series.states[rows, dims],
            "lower": grid.lower[dims],
            "upper": grid.upper[dims],
        }
    )


@dataclass
class StateHistogram:
    """Normed 5D histogram approximating the state density"""

    grid: EdgesGrid
    counts: np.ndarray
    density: np.ndarray
    clamped_samples: int = 0

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def occupied(self) -> np.ndarray:
        return self.counts > 0

    def probability(self) -> np.ndarray:
        """Probability mass per bin (density times bin volume)"""
        return self.counts / self.total

    @classmethod
    def from_counts(cls, grid: EdgesGrid, counts: np.ndarray, clamped_samples: int = 0) -> "StateHistogram":
        counts = np.asarray(counts, dtype=float)
        if counts.shape != grid.shape:
            raise GridMismatchError(f"Counts shape {counts.shape} does not match grid {grid.shape}")
        total = counts.sum()
        if total <= 0:
            raise EmptySeriesError("State histogram has no samples")
        density = counts / (total * grid.bin_volumes())
        return cls(grid, counts, density, clamped_samples)


def build_state_histogram(series: TelemetrySeries, grid: EdgesGrid) -> StateHistogram:
    """
    Count telemetry samples per state bin and norm to a density

    Out-of-range samples are clamped into the boundary bins.
    """
    if len(series) == 0:
        raise EmptySeriesError("Cannot build a state histogram from an empty series")

    _, clamped = discretize_states(series.states, grid)
    n_clamped = int(clamped.any(axis=1).sum())
    if n_clamped:
        logger.warning("Clamped %d of %d telemetry samples into boundary bins", n_clamped, len(series))

    inside = np.clip(series.states, grid.lower, grid.upper)
    counts, _ = np.histogramdd(inside, bins=list(grid.edges))
    return StateHistogram.from_counts(grid, counts, n_clamped)


@dataclass
class PointerMatrix:
    """Per-time-step bin indices into the precomputed tables"""

    times: np.ndarray
    indices: np.ndarray
    sample_rows: np.ndarray
    clamped: np.ndarray
    dt: float

    def __len__(self) -> int:
        return int(self.times.shape[0])

    def unique_rows(self) -> Tuple[np.ndarray, np.ndarray]:
        unique, inverse = np.unique(self.indices, axis=0, return_inverse=True)
        return unique, inverse.reshape(-1)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.indices, columns=[f"i_{name}" for name in STATE_COLUMNS])
        frame.insert(0, "t_s", self.times)
        frame["sample_row"] = self.sample_rows
        frame["clamped"] = self.clamped
        return frame


def build_pointer_matrix(
    series: TelemetrySeries,
    grid: EdgesGrid,
    dt_sim: float,
    horizon: Optional[float] = None,
) -> PointerMatrix:
    """
    Build the pointer matrix with a zero-order hold between telemetry samples

    Args:
        series: Telemetry series
        grid: Binning grid
        dt_sim: Simulation time step [s]
        horizon: Simulated duration [s]; defaults to the telemetry span

    Returns:
        Pointer matrix with one row per simulation step
    """
    if dt_sim <= 0:
        raise NonPositiveInputError(f"dt_sim must be positive, got {dt_sim}")
    if len(series) == 0:
        raise EmptySeriesError("Cannot build a pointer matrix from an empty series")

    span = series.duration
    if horizon is None:
        horizon = span
    if horizon > span + 1e-9 * max(1.0, span):
        raise HorizonExceededError(f"Horizon {horizon} s exceeds telemetry span {span} s")

    n_steps = int(np.floor(horizon / dt_sim + 1e-9)) + 1
    times = series.timestamps[0] + np.arange(n_steps) * dt_sim

    # hold the last sample at or before t; tolerate round-off on aligned grids
    tolerance = 1e-9 * max(dt_sim, series.sample_period or dt_sim)
    rows = np.searchsorted(series.timestamps, times + tolerance, side="right") - 1
    rows = np.clip(rows, 0, len(series) - 1)

    indices, clamped = discretize_states(series.states[rows], grid)
    return PointerMatrix(times, indices, rows, clamped.any(axis=1), float(dt_sim))


def bin_representative_states(series: TelemetrySeries, grid: EdgesGrid) -> Dict[Tuple[int, ...], EngineState]:
    """Mean telemetry state of each occupied bin"""
    indices, _ = discretize_states(series.states, grid)
    unique, inverse = np.unique(indices, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((unique.shape[0], len(STATE_COLUMNS)))
    np.add.at(sums, inverse, series.states)
    counts = np.bincount(inverse, minlength=unique.shape[0])
    means = sums / counts[:, None]
    # exact zeros survive the mean only if every sample is zero
    for dim in (TORQUE, FUEL):
        nonzero = np.zeros(unique.shape[0], dtype=bool)
        np.logical_or.at(nonzero, inverse, series.states[:, dim] != 0.0)
        means[~nonzero, dim] = 0.0
    return {tuple(int(i) for i in row): EngineState.from_array(mean) for row, mean in zip(unique, means)}


@dataclass(frozen=True)
class FullLoadCriterion:
    """Full load: torque at or above a fraction of the full-load torque line"""

    speeds: Tuple[float, ...]
    torques: Tuple[float, ...]
    fraction: float = 0.95

    def threshold(self, n_engine) -> np.ndarray:
        return np.interp(n_engine, self.speeds, self.torques) * self.fraction

    def is_full_load(self, n_engine, torque) -> np.ndarray:
        torque = np.asarray(torque, dtype=float)
        return (torque > 0.0) & (torque >= self.threshold(n_engine))


@dataclass
class SpeedHistogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.counts.sum()


@dataclass
class LapStatistics:
    full_load_fraction: float
    coasting_fraction: float
    part_load_fraction: float
    speed_histogram: SpeedHistogram
    samples: int


def lap_statistics(
    series: TelemetrySeries,
    criterion: FullLoadCriterion,
    speed_edges: Optional[Sequence[float]] = None,
) -> LapStatistics:
    """
    Duty fractions of a lap and its engine-speed histogram

    Coasting is T_i = 0; full load follows the configured criterion.
    """
    if len(series) == 0:
        raise EmptySeriesError("Cannot compute lap statistics of an empty series")

    speed = series.states[:, SPEED]
    torque = series.states[:, TORQUE]
    coasting = torque <= 0.0
    full_load = criterion.is_full_load(speed, torque) & ~coasting

    n = len(series)
    full_load_fraction = float(full_load.sum()) / n
    coasting_fraction = float(coasting.sum()) / n

    if speed_edges is None:
        speed_edges = np.histogram_bin_edges(speed, bins="auto")
    counts, edges = np.histogram(speed, bins=np.asarray(speed_edges, dtype=float))
    return LapStatistics(
        full_load_fraction=full_load_fraction,
        coasting_fraction=coasting_fraction,
        part_load_fraction=1.0 - full_load_fraction - coasting_fraction,
        speed_histogram=SpeedHistogram(edges, counts.astype(float)),
        samples=n,
    )
