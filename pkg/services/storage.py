"""
Artifact store for pipeline stages (file handoff under the output directory)
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from services.cycle_model import CycleResult
from services.errors import GridMismatchError, InputValidationError, MissingColumnError
from services.expectation import read_bc_binary, read_bc_csv, write_bc_binary, write_bc_csv
from services.pdf import RealizationHistogram
from services.state_space import STATE_COLUMNS, EdgesGrid, EngineState, PointerMatrix, StateHistogram
from services.thermal_net import BoundaryConditionSeries

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


class ArtifactStore:
    """Service for reading and writing pipeline artifacts"""

    def __init__(self, root: Union[str, Path]):
        """
        Initialize the store

        Args:
            root: Output directory; created on first write
        """
        self.root = Path(root)

    def path(self, *parts: str) -> Path:
        return self.root.joinpath(*parts)

    def target(self, *parts: str) -> Path:
        target = self.path(*parts)
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def trace_path(self, kind: str, speed: float) -> Path:
        """Pressure-trace file of a speed point, kind 'fired' or 'motored'"""
        return self.path("traces", f"{kind}_{speed:.0f}.csv")

    def _require(self, *parts: str) -> Path:
        source = self.path(*parts)
        if not source.is_file():
            raise InputValidationError(f"Missing artifact {source}; run the producing stage first")
        return source

    # --- generic -----------------------------------------------------------------

    def write_frame(self, frame: pd.DataFrame, *parts: str) -> Path:
        target = self.target(*parts)
        frame.to_csv(target, index=False, float_format=FLOAT_FORMAT)
        return target

    def read_frame(self, *parts: str, columns: Sequence[str] = ()) -> pd.DataFrame:
        source = self._require(*parts)
        frame = pd.read_csv(source)
        for column in columns:
            if column not in frame.columns:
                raise MissingColumnError(column, str(source))
        return frame

    def write_json(self, data: Dict[str, Any], *parts: str) -> Path:
        target = self.target(*parts)
        target.write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")
        return target

    def read_json(self, *parts: str) -> Dict[str, Any]:
        return json.loads(self._require(*parts).read_text(encoding="utf-8"))

    # --- realization PDFs ------------------------------------------------------------

    def write_pdf(self, pdf: RealizationHistogram, *parts: str) -> Path:
        """One row per (alpha, T_eff) bin, empty bins included"""
        alpha_edges, t_edges = pdf.edges
        i, j = np.meshgrid(np.arange(alpha_edges.size - 1), np.arange(t_edges.size - 1), indexing="ij")
        i, j = i.ravel(), j.ravel()
        frame = pd.DataFrame(
            {
                "i_alpha": i,
                "i_T": j,
                "alpha_lo": alpha_edges[i],
                "alpha_hi": alpha_edges[i + 1],
                "T_lo": t_edges[j],
                "T_hi": t_edges[j + 1],
                "count": pdf.counts.ravel(),
                "density": pdf.density.ravel(),
            }
        )
        return self.write_frame(frame, *parts)

    def read_pdf(self, *parts: str) -> RealizationHistogram:
        frame = self.read_frame(*parts, columns=("i_alpha", "i_T", "alpha_lo", "alpha_hi", "T_lo", "T_hi", "count"))
        alpha_edges = np.unique(np.concatenate([frame["alpha_lo"], frame["alpha_hi"]]))
        t_edges = np.unique(np.concatenate([frame["T_lo"], frame["T_hi"]]))
        counts = np.zeros((alpha_edges.size - 1, t_edges.size - 1))
        counts[frame["i_alpha"].to_numpy(), frame["i_T"].to_numpy()] = frame["count"].to_numpy(dtype=float)
        pdf = RealizationHistogram.from_counts((alpha_edges, t_edges), counts)
        if "density" in frame.columns:
            stored = frame["density"].to_numpy(dtype=float).reshape(counts.shape)
            if not np.allclose(stored, pdf.density, rtol=1e-12, atol=0.0):
                raise InputValidationError(f"Stored density in {self.path(*parts)} is not normed")
        return pdf

    def write_cycles(self, results: Sequence[CycleResult], *parts: str) -> Path:
        frame = pd.DataFrame(
            {
                "cycle": np.arange(1, len(results) + 1),
                "alpha_mean_Wm2K": [r.alpha_mean for r in results],
                "T_eff_K": [r.T_eff for r in results],
            }
        )
        return self.write_frame(frame, *parts)

    # --- stationary points -----------------------------------------------------------

    def write_stationary(self, rows: List[Dict[str, Any]]) -> Path:
        return self.write_frame(pd.DataFrame.from_records(rows), "pdf", "stationary_points.csv")

    def read_stationary(self) -> List[Tuple[float, EngineState, float, RealizationHistogram]]:
        frame = self.read_frame(
            "pdf", "stationary_points.csv", columns=("speed", *STATE_COLUMNS, "exhaust_temperature", "pdf_file")
        )
        points = []
        for record in frame.to_dict("records"):
            state = EngineState(*(float(record[name]) for name in STATE_COLUMNS))
            pdf = self.read_pdf("pdf", record["pdf_file"])
            points.append((float(record["speed"]), state, float(record["exhaust_temperature"]), pdf))
        return points

    # --- state space ----------------------------------------------------------------

    def write_grid(self, grid: EdgesGrid) -> Path:
        return self.write_json({name: edge.tolist() for name, edge in zip(STATE_COLUMNS, grid.edges)}, "grid.json")

    def read_grid(self) -> EdgesGrid:
        return EdgesGrid.from_mapping(self.read_json("grid.json"))

    def write_state_histogram(self, hist: StateHistogram) -> Path:
        occupied = np.argwhere(hist.counts > 0)
        frame = pd.DataFrame(occupied, columns=[f"i_{name}" for name in STATE_COLUMNS])
        frame["count"] = hist.counts[tuple(occupied.T)]
        frame["density"] = hist.density[tuple(occupied.T)]
        return self.write_frame(frame, "state_histogram.csv")

    def read_state_histogram(self, grid: EdgesGrid) -> StateHistogram:
        index_columns = [f"i_{name}" for name in STATE_COLUMNS]
        frame = self.read_frame("state_histogram.csv", columns=(*index_columns, "count"))
        index = frame[index_columns].to_numpy(dtype=np.intp)
        if np.any(index < 0) or np.any(index >= np.array(grid.shape)):
            raise GridMismatchError("State histogram indices outside the grid")
        counts = np.zeros(grid.shape)
        counts[tuple(index.T)] = frame["count"].to_numpy(dtype=float)
        return StateHistogram.from_counts(grid, counts)

    def write_pointer(self, pointer: PointerMatrix) -> Path:
        return self.write_frame(pointer.to_frame(), "pointer.csv")

    def read_pointer(self, grid: EdgesGrid) -> PointerMatrix:
        index_columns = [f"i_{name}" for name in STATE_COLUMNS]
        frame = self.read_frame("pointer.csv", columns=("t_s", *index_columns, "sample_row", "clamped"))
        indices = frame[index_columns].to_numpy(dtype=np.intp)
        if np.any(indices < 0) or np.any(indices >= np.array(grid.shape)):
            raise GridMismatchError("Pointer matrix indices outside the grid")
        times = frame["t_s"].to_numpy(dtype=float)
        dt = float(times[1] - times[0]) if times.size > 1 else 0.0
        return PointerMatrix(
            times, indices, frame["sample_row"].to_numpy(dtype=np.intp), frame["clamped"].to_numpy(dtype=bool), dt
        )

    # --- boundary conditions ------------------------------------------------------------

    def write_bc(self, series: Dict[str, BoundaryConditionSeries], dt: float, binary: bool = False) -> Path:
        """One file per zone plus an index mapping zone names to ids"""
        rows = []
        for zone_id, zone in enumerate(sorted(series)):
            name = zone.replace(":", "_")
            if binary:
                write_bc_binary(series[zone], self.target("bc", f"{name}.bin"), zone_id, dt)
                file = f"{name}.bin"
            else:
                write_bc_csv(series[zone], self.target("bc", f"{name}.csv"))
                file = f"{name}.csv"
            rows.append({"zone": zone, "zone_id": zone_id, "file": file})
        logger.info("Wrote boundary conditions for %d zones", len(rows))
        return self.write_frame(pd.DataFrame.from_records(rows), "bc", "index.csv")

    def read_bc(self) -> Dict[str, BoundaryConditionSeries]:
        index = self.read_frame("bc", "index.csv", columns=("zone", "zone_id", "file"))
        series = {}
        for record in index.to_dict("records"):
            if str(record["file"]).endswith(".bin"):
                _, _, series[record["zone"]] = read_bc_binary(self._require("bc", record["file"]))
            else:
                series[record["zone"]] = read_bc_csv(self._require("bc", record["file"]))
        return series
