"""
Conditional PDFs over the state grid, nested and transient expectations,
the modified reference temperature and boundary-condition export
"""
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterator, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from services.errors import (
    GridMismatchError,
    InputValidationError,
    MissingColumnError,
    OutOfBracketError,
    UnreachableStateError,
    ZeroMeanHtcError,
)
from services.pdf import RealizationHistogram, grid_volumes
from services.state_space import EdgesGrid, PointerMatrix, StateHistogram, discretize_states
from services.thermal_net import BoundaryConditionSeries

logger = logging.getLogger(__name__)

BinIndex = Tuple[int, ...]
BC_COLUMNS = ("t_s", "alpha_Wm2K", "T_eff_K")
BC_MAGIC = b"EBCSER01"
BC_HEADER = np.dtype([("magic", "S8"), ("zone", "<u4"), ("rows", "<u8"), ("dt", "<f8")])


@dataclass
class JointHistogram:
    """Counts over the 5D state grid times the realization grid"""

    grid: EdgesGrid
    realization_edges: Tuple[np.ndarray, ...]
    counts: np.ndarray

    def __post_init__(self):
        self.realization_edges = tuple(np.asarray(e, dtype=float) for e in self.realization_edges)
        self.counts = np.asarray(self.counts, dtype=float)
        expected = self.grid.shape + tuple(e.size - 1 for e in self.realization_edges)
        if self.counts.shape != expected:
            raise GridMismatchError(f"Joint counts shape {self.counts.shape}, expected {expected}")
        if np.any(self.counts < 0):
            raise InputValidationError("Joint counts must be non-negative")

    @classmethod
    def from_samples(
        cls,
        grid: EdgesGrid,
        states,
        realizations,
        realization_edges: Sequence[np.ndarray],
    ) -> "JointHistogram":
        """Bin paired (state, realization) samples; both sides clamp into their grids"""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        realizations = np.asarray(realizations, dtype=float).reshape(states.shape[0], -1)
        state_index, _ = discretize_states(states, grid)
        realization_index = np.empty(realizations.shape, dtype=np.intp)
        for dim, edge in enumerate(realization_edges):
            position = np.searchsorted(edge, realizations[:, dim], side="right") - 1
            realization_index[:, dim] = np.clip(position, 0, len(edge) - 2)

        shape = grid.shape + tuple(len(e) - 1 for e in realization_edges)
        counts = np.zeros(shape)
        np.add.at(counts, tuple(np.hstack([state_index, realization_index]).T), 1.0)
        return cls(grid, tuple(realization_edges), counts)

    @property
    def state_ndim(self) -> int:
        return len(self.grid.shape)

    def state_counts(self) -> np.ndarray:
        axes = tuple(range(self.state_ndim, self.counts.ndim))
        return self.counts.sum(axis=axes)

    def state_histogram(self) -> StateHistogram:
        return StateHistogram.from_counts(self.grid, self.state_counts())

    def volumes(self) -> np.ndarray:
        return np.multiply.outer(self.grid.bin_volumes(), grid_volumes(self.realization_edges))

    def density(self) -> np.ndarray:
        return self.counts / (self.counts.sum() * self.volumes())


class ConditionalPdf(Mapping):
    """Per-state-bin realization histograms; unoccupied bins are absent"""

    def __init__(self, grid: EdgesGrid, bins: Dict[BinIndex, RealizationHistogram]):
        self.grid = grid
        self._bins = dict(bins)

    def __getitem__(self, index) -> RealizationHistogram:
        return self._bins[tuple(int(i) for i in index)]

    def __contains__(self, index) -> bool:
        return tuple(int(i) for i in index) in self._bins

    def __iter__(self) -> Iterator[BinIndex]:
        return iter(sorted(self._bins))

    def __len__(self) -> int:
        return len(self._bins)


def conditional_pdf(joint: JointHistogram) -> ConditionalPdf:
    """p(A | N) = p(A, N) / p(N) on every bin with p(N) > 0"""
    state_counts = joint.state_counts()
    bins = {}
    for index in np.argwhere(state_counts > 0):
        key = tuple(int(i) for i in index)
        bins[key] = RealizationHistogram.from_counts(joint.realization_edges, joint.counts[key])
    logger.debug("Conditional PDF over %d occupied state bins", len(bins))
    return ConditionalPdf(joint.grid, bins)


@dataclass
class SlaveTable:
    """Conditional means on the state grid; NaN marks undefined bins"""

    grid: EdgesGrid
    values: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.values)


def slave_table(cond: ConditionalPdf, f: Callable[..., np.ndarray]) -> SlaveTable:
    values = np.full(cond.grid.shape, np.nan)
    for index in cond:
        values[index] = cond[index].expect(f)
    return SlaveTable(cond.grid, values)


def expect_nested(slave: SlaveTable, state_hist: StateHistogram) -> float:
    """Outer sum over state bins of the slave value times the state probability"""
    if slave.values.shape != state_hist.counts.shape or not slave.grid.same_as(state_hist.grid):
        raise GridMismatchError("Slave table and state histogram are on different grids")
    occupied = state_hist.counts > 0
    missing = occupied & ~slave.defined
    if missing.any():
        raise UnreachableStateError(np.argwhere(missing)[0])
    weights = state_hist.density[occupied] * state_hist.grid.bin_volumes()[occupied]
    return float(np.sum(slave.values[occupied] * weights))


def expect_joint(joint: JointHistogram, f: Callable[..., np.ndarray]) -> float:
    """Flat sum of f times the joint density over all occupied joint bins"""
    mids = [0.5 * (e[:-1] + e[1:]) for e in joint.realization_edges]
    values = np.broadcast_to(f(*np.meshgrid(*mids, indexing="ij")), joint.counts.shape)
    occupied = joint.counts > 0
    return float(np.sum(values[occupied] * joint.density()[occupied] * joint.volumes()[occupied]))


def expect_transient(
    cond: ConditionalPdf,
    row: Sequence[int],
    f: Callable[..., np.ndarray],
    fallback: Optional[Callable[[BinIndex, Callable[..., np.ndarray]], Optional[float]]] = None,
    time: Optional[float] = None,
) -> float:
    """
    Conditional mean of f at the state bin addressed by one pointer row

    Bins without measured realizations go to the fallback (coasting model or
    part-load transform); a fallback returning None leaves the bin unreachable.
    """
    index = tuple(int(i) for i in row)
    if index in cond:
        return cond[index].expect(f)
    value = fallback(index, f) if fallback is not None else None
    if value is None:
        raise UnreachableStateError(index, time)
    return float(value)


def modified_reference_temperature(pdf: RealizationHistogram) -> float:
    """T* = <alpha T_ref> / <alpha>; reproduces the mean flux for any wall temperature"""
    mean_alpha = pdf.mean_alpha()
    if mean_alpha <= 0:
        raise ZeroMeanHtcError("Mean HTC of the PDF is zero")
    return pdf.mean_alpha_tref() / mean_alpha


# --- engine-speed interpolation ---------------------------------------------------


class SpeedBracket(NamedTuple):
    left: int
    right: int
    speed: float
    clamped: bool


def interpolate_speed(f_left, f_right, n_left: float, n_right: float, n_engine: float):
    """(1 - a) f_left + a f_right with a = (n - n_left) / (n_right - n_left)"""
    if not n_left < n_right:
        raise OutOfBracketError(f"Bracket [{n_left}, {n_right}] is empty")
    if n_engine < n_left or n_engine > n_right:
        raise OutOfBracketError(f"Speed {n_engine} rpm outside [{n_left}, {n_right}]")
    a = (n_engine - n_left) / (n_right - n_left)
    return (1.0 - a) * f_left + a * f_right


def speed_bracket(speeds: Sequence[float], n_engine: float) -> SpeedBracket:
    """Neighbouring speed points; speeds outside the measured range clamp to the ends"""
    speeds = np.asarray(speeds, dtype=float)
    if speeds.size < 2:
        raise OutOfBracketError("Need at least two speed points to bracket")
    clamped = False
    if n_engine < speeds[0] or n_engine > speeds[-1]:
        logger.warning(
            "Engine speed %.0f rpm outside [%.0f, %.0f] rpm, clamped to the nearest point",
            n_engine,
            speeds[0],
            speeds[-1],
        )
        n_engine = float(np.clip(n_engine, speeds[0], speeds[-1]))
        clamped = True
    left = int(np.clip(np.searchsorted(speeds, n_engine, side="right") - 1, 0, speeds.size - 2))
    return SpeedBracket(left, left + 1, float(n_engine), clamped)


# --- time series ------------------------------------------------------------------


def transient_series(
    pointer: PointerMatrix,
    evaluate: Callable[[BinIndex], Sequence[float]],
) -> np.ndarray:
    """
    Evaluate every pointer row through a per-bin cache

    Returns:
        Array (steps, k) of the k values evaluate() returns per bin
    """
    unique, inverse = pointer.unique_rows()
    table = []
    for row in unique:
        index = tuple(int(i) for i in row)
        try:
            table.append(np.asarray(evaluate(index), dtype=float))
        except UnreachableStateError as exc:
            first = int(np.flatnonzero(np.all(pointer.indices == row, axis=1))[0])
            raise UnreachableStateError(index, float(pointer.times[first])) from exc
    logger.debug("Evaluated %d distinct state bins for %d steps", len(table), len(pointer))
    return np.vstack(table)[inverse]


def quasistationary_zone_bc(
    alpha_table: SlaveTable, alpha_tref_table: SlaveTable, state_hist: StateHistogram
) -> Tuple[float, float]:
    """Lap-mean (<alpha>, T*) of a zone, used for the initial temperature field"""
    mean_alpha = expect_nested(alpha_table, state_hist)
    if mean_alpha <= 0:
        raise ZeroMeanHtcError("Lap-mean HTC of the zone is zero")
    return mean_alpha, expect_nested(alpha_tref_table, state_hist) / mean_alpha


# --- export -------------------------------------------------------------------------


def write_bc_csv(series: BoundaryConditionSeries, path: Union[str, Path]) -> None:
    frame = pd.DataFrame({"t_s": series.times, "alpha_Wm2K": series.alpha, "T_eff_K": series.T_eff})
    frame.to_csv(path, index=False, float_format="%.17g")


def read_bc_csv(path: Union[str, Path]) -> BoundaryConditionSeries:
    frame = pd.read_csv(path)
    for column in BC_COLUMNS:
        if column not in frame.columns:
            raise MissingColumnError(column, str(path))
    return BoundaryConditionSeries(
        frame["t_s"].to_numpy(dtype=float),
        frame["alpha_Wm2K"].to_numpy(dtype=float),
        frame["T_eff_K"].to_numpy(dtype=float),
    )


def write_bc_binary(series: BoundaryConditionSeries, path: Union[str, Path], zone_id: int, dt: float) -> None:
    """Header (magic, zone id, rows, dt) then t, alpha, T_eff as little-endian float64 columns"""
    header = np.array([(BC_MAGIC, zone_id, len(series), dt)], dtype=BC_HEADER)
    with open(path, "wb") as handle:
        handle.write(header.tobytes())
        for column in (series.times, series.alpha, series.T_eff):
            handle.write(np.asarray(column, dtype="<f8").tobytes())


def read_bc_binary(path: Union[str, Path]) -> Tuple[int, float, BoundaryConditionSeries]:
    raw = Path(path).read_bytes()
    header = np.frombuffer(raw, dtype=BC_HEADER, count=1)[0]
    if header["magic"] != BC_MAGIC:
        raise InputValidationError(f"{path} is not a boundary-condition series")
    rows = int(header["rows"])
    data = np.frombuffer(raw, dtype="<f8", offset=BC_HEADER.itemsize)
    if data.size != 3 * rows:
        raise InputValidationError(f"{path} holds {data.size} values, header promises {3 * rows}")
    columns = data.reshape(3, rows).astype(float)
    return int(header["zone"]), float(header["dt"]), BoundaryConditionSeries(*columns)
