"""
Reduced conduction solver: capacitive nodes, conductive links and Newton-BC
surface patches, with a steady solve and backward-Euler time stepping
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError, model_validator
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import cg, factorized, spsolve

from services.errors import (
    DanglingPatchError,
    DisconnectedNodeError,
    InputValidationError,
    NonPositiveInputError,
    SingularSystemError,
    SolverDivergenceError,
)

logger = logging.getLogger(__name__)

DIRECT_SOLVER_LIMIT = 10_000
SOLVER_RTOL = 1e-10
FACTOR_CACHE_SIZE = 32


class ThermalNode(BaseModel):
    id: str
    capacity: float = Field(gt=0)  # J/K
    initial_temperature: float = Field(default=300.0, gt=0)  # K


class ConductiveLink(BaseModel):
    a: str
    b: str
    conductance: float = Field(gt=0)  # W/K

    @model_validator(mode="after")
    def _no_self_link(self):
        if self.a == self.b:
            raise ValueError(f"Self-link on node '{self.a}'")
        return self


class SurfacePatch(BaseModel):
    id: str
    node: str
    area: float = Field(gt=0)  # m2
    channel: str


class Probe(BaseModel):
    name: str
    node: str


class ThermalNetwork(BaseModel):
    nodes: List[ThermalNode] = []
    links: List[ConductiveLink] = []
    patches: List[SurfacePatch] = []
    probes: List[Probe] = []

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ThermalNetwork":
        try:
            return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except ValidationError as exc:
            raise InputValidationError(f"Invalid network file {path}: {exc}") from exc

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.model_dump_json(indent=2), encoding="utf-8")

    @property
    def channels(self) -> List[str]:
        return sorted({patch.channel for patch in self.patches})


@dataclass
class BoundaryConditionSeries:
    """alpha(t) and T_eff(t) of one surface zone"""

    times: np.ndarray  # s
    alpha: np.ndarray  # W/m2K
    T_eff: np.ndarray  # K

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        self.T_eff = np.asarray(self.T_eff, dtype=float).reshape(-1)
        if not (self.times.shape == self.alpha.shape == self.T_eff.shape):
            raise InputValidationError("Boundary-condition columns differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise InputValidationError("Boundary-condition time grid must be strictly increasing")
        if np.any(self.alpha < 0) or not np.all(np.isfinite(self.alpha)):
            raise NonPositiveInputError("HTC must be finite and non-negative")

    def __len__(self) -> int:
        return int(self.times.shape[0])

    @classmethod
    def constant(cls, times, alpha: float, T_eff: float) -> "BoundaryConditionSeries":
        times = np.asarray(times, dtype=float)
        return cls(times, np.full(times.shape, alpha), np.full(times.shape, T_eff))

    def shifted(self, offset: float) -> "BoundaryConditionSeries":
        return BoundaryConditionSeries(self.times, self.alpha, self.T_eff + offset)


@dataclass
class AssembledSystem:
    node_ids: List[str]
    capacity: np.ndarray
    conduction: sparse.csr_matrix
    incidence: sparse.csr_matrix  # node x patch, entries are patch areas
    patch_ids: List[str]
    patch_channels: List[str]
    patch_nodes: np.ndarray
    patch_areas: np.ndarray
    initial_temperature: np.ndarray

    @property
    def size(self) -> int:
        return len(self.node_ids)

    def index(self, node_id: str) -> int:
        return self.node_ids.index(node_id)

    def coupling(self, alpha, T_eff):
        """Diagonal BC conductance per node and BC source vector"""
        alpha = np.asarray(alpha, dtype=float)
        return self.incidence @ alpha, self.incidence @ (alpha * np.asarray(T_eff, dtype=float))

    def patch_flows(self, temperatures, alpha, T_eff) -> np.ndarray:
        """Heat into the solid through each patch [W]"""
        node_temperature = np.asarray(temperatures, dtype=float)[self.patch_nodes]
        return np.asarray(alpha) * self.patch_areas * (np.asarray(T_eff) - node_temperature)


def assemble(network: ThermalNetwork, channels: Optional[Sequence[str]] = None) -> AssembledSystem:
    """
    Build the conduction Laplacian, capacitances and patch incidence

    Raises:
        DanglingPatchError: empty network, or a patch on a missing node or channel
        DisconnectedNodeError: nodes outside the main connected component
    """
    if not network.nodes or not network.patches:
        raise DanglingPatchError("Network has no nodes or no surface patches")

    node_ids = [node.id for node in network.nodes]
    if len(set(node_ids)) != len(node_ids):
        raise InputValidationError("Duplicate node ids in network")
    position = {node_id: i for i, node_id in enumerate(node_ids)}
    n = len(node_ids)

    rows, cols, values = [], [], []
    for link in network.links:
        if link.a not in position or link.b not in position:
            raise InputValidationError(f"Link {link.a}-{link.b} references a missing node")
        i, j, g = position[link.a], position[link.b], link.conductance
        rows += [i, j, i, j]
        cols += [i, j, j, i]
        values += [g, g, -g, -g]
    conduction = sparse.coo_matrix((values, (rows, cols)), shape=(n, n)).tocsr()

    patch_rows, patch_areas = [], []
    for patch in network.patches:
        if patch.node not in position:
            raise DanglingPatchError(f"Patch '{patch.id}' references missing node '{patch.node}'")
        if channels is not None and patch.channel not in channels:
            raise DanglingPatchError(f"Patch '{patch.id}' references missing channel '{patch.channel}'")
        patch_rows.append(position[patch.node])
        patch_areas.append(patch.area)
    n_patches = len(network.patches)
    incidence = sparse.csr_matrix((patch_areas, (patch_rows, np.arange(n_patches))), shape=(n, n_patches))

    n_components, labels = connected_components(conduction, directed=False)
    if n_components > 1:
        main = np.argmax(np.bincount(labels))
        raise DisconnectedNodeError(node_ids[i] for i in np.flatnonzero(labels != main))

    _check_m_matrix(conduction)
    logger.info("Assembled network with %d nodes, %d links, %d patches", n, len(network.links), n_patches)
    return AssembledSystem(
        node_ids=node_ids,
        capacity=np.array([node.capacity for node in network.nodes]),
        conduction=conduction,
        incidence=incidence,
        patch_ids=[patch.id for patch in network.patches],
        patch_channels=[patch.channel for patch in network.patches],
        patch_nodes=np.array(patch_rows, dtype=np.intp),
        patch_areas=np.array(patch_areas, dtype=float),
        initial_temperature=np.array([node.initial_temperature for node in network.nodes]),
    )


def _check_m_matrix(conduction: sparse.csr_matrix) -> None:
    if abs(conduction - conduction.T).max() > 0:
        raise SingularSystemError("Conduction matrix is not symmetric")
    off_diagonal = conduction - sparse.diags(conduction.diagonal())
    if off_diagonal.nnz and off_diagonal.max() > 0:
        raise SingularSystemError("Conduction matrix has positive off-diagonal entries")
    row_sums = np.asarray(conduction.sum(axis=1)).reshape(-1)
    if np.any(np.abs(row_sums) > 1e-9 * max(1.0, float(np.abs(conduction.diagonal()).max(initial=0.0)))):
        raise SingularSystemError("Conduction matrix is not diagonally dominant")


def _solve(matrix: sparse.csr_matrix, rhs: np.ndarray, guess: Optional[np.ndarray] = None) -> np.ndarray:
    if matrix.shape[0] < DIRECT_SOLVER_LIMIT:
        return spsolve(matrix.tocsc(), rhs)
    preconditioner = sparse.diags(1.0 / matrix.diagonal())
    solution, info = cg(matrix, rhs, x0=guess, rtol=SOLVER_RTOL, M=preconditioner)
    if info != 0:
        raise SolverDivergenceError(f"Conjugate gradients did not converge (info={info})")
    return solution


def steady_solve(system: AssembledSystem, alpha, T_eff) -> np.ndarray:
    """Node temperatures of (K + diag(B alpha)) T = B (alpha T_eff)"""
    bc_conductance, source = system.coupling(alpha, T_eff)
    if bc_conductance.sum() <= 0:
        raise SingularSystemError("No patch with positive HTC; steady problem is singular")
    matrix = system.conduction + sparse.diags(bc_conductance)
    temperatures = _solve(matrix.tocsr(), source)
    if not np.all(np.isfinite(temperatures)):
        raise SingularSystemError("Steady solve returned non-finite temperatures")
    return temperatures


class TransientSolver:
    """Backward Euler with a factorization cache keyed by the BC coupling"""

    def __init__(self, system: AssembledSystem, dt: float, check_maximum_principle: bool = True):
        if dt <= 0:
            raise NonPositiveInputError(f"Time step must be positive, got {dt}")
        self.system = system
        self.dt = dt
        self.check_maximum_principle = check_maximum_principle
        self._mass = system.capacity / dt
        self._factors: "OrderedDict[bytes, object]" = OrderedDict()

    def _operator(self, bc_conductance: np.ndarray):
        key = bc_conductance.tobytes()
        if key in self._factors:
            self._factors.move_to_end(key)
            return self._factors[key]
        matrix = (self.system.conduction + sparse.diags(self._mass + bc_conductance)).tocsc()
        if self.system.size < DIRECT_SOLVER_LIMIT:
            operator = factorized(matrix)
        else:
            operator = lambda rhs: _solve(matrix.tocsr(), rhs)  # noqa: E731
        self._factors[key] = operator
        if len(self._factors) > FACTOR_CACHE_SIZE:
            self._factors.popitem(last=False)
        return operator

    def step(self, temperatures, alpha, T_eff, step: Optional[int] = None) -> np.ndarray:
        temperatures = np.asarray(temperatures, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        T_eff = np.asarray(T_eff, dtype=float)
        bc_conductance, source = self.system.coupling(alpha, T_eff)
        updated = self._operator(bc_conductance)(self._mass * temperatures + source)

        if not np.all(np.isfinite(updated)):
            raise SolverDivergenceError("Non-finite node temperature", step)
        if self.check_maximum_principle:
            active = T_eff[alpha > 0]
            lo = min(temperatures.min(), active.min(initial=np.inf))
            hi = max(temperatures.max(), active.max(initial=-np.inf))
            tolerance = 1e-9 * max(1.0, abs(hi))
            if updated.min() < lo - tolerance or updated.max() > hi + tolerance:
                raise SolverDivergenceError("Discrete maximum principle violated", step)
        return updated


def transient_step(system: AssembledSystem, temperatures, dt: float, alpha, T_eff) -> np.ndarray:
    return TransientSolver(system, dt).step(temperatures, alpha, T_eff)


@dataclass
class RunHistory:
    times: np.ndarray
    temperatures: np.ndarray  # steps+1 x nodes
    patch_flows: np.ndarray  # steps x patches, W into the solid at the new time level
    dt: float
    node_ids: List[str] = field(default_factory=list)

    def node_frame(self, node_id: str) -> pd.DataFrame:
        return pd.DataFrame({"t_s": self.times, "T_K": self.temperatures[:, self.node_ids.index(node_id)]})


def patch_bc_arrays(system: AssembledSystem, series: Mapping[str, BoundaryConditionSeries]):
    """Stack per-patch (alpha, T_eff) over time from the channel series"""
    missing = sorted(set(system.patch_channels) - set(series))
    if missing:
        raise DanglingPatchError(f"No boundary-condition series for channels: {', '.join(missing)}")
    lengths = {len(series[channel]) for channel in system.patch_channels}
    if len(lengths) != 1:
        raise InputValidationError("Boundary-condition series differ in length")
    alpha = np.column_stack([series[channel].alpha for channel in system.patch_channels])
    T_eff = np.column_stack([series[channel].T_eff for channel in system.patch_channels])
    times = series[system.patch_channels[0]].times
    return times, alpha, T_eff


def run_transient(
    system: AssembledSystem,
    series: Mapping[str, BoundaryConditionSeries],
    initial: Optional[np.ndarray] = None,
) -> RunHistory:
    """Step through the BC series; row k of the series drives time level k"""
    times, alpha, T_eff = patch_bc_arrays(system, series)
    if times.size < 2:
        raise InputValidationError("Need at least two boundary-condition samples to step")
    dt = float(times[1] - times[0])
    solver = TransientSolver(system, dt)

    temperatures = np.empty((times.size, system.size))
    temperatures[0] = system.initial_temperature if initial is None else initial
    flows = np.empty((times.size - 1, len(system.patch_ids)))
    for k in range(1, times.size):
        temperatures[k] = solver.step(temperatures[k - 1], alpha[k], T_eff[k], step=k)
        flows[k - 1] = system.patch_flows(temperatures[k], alpha[k], T_eff[k])
    logger.info("Transient run finished: %d steps of %.4g s", times.size - 1, dt)
    return RunHistory(times, temperatures, flows, dt, list(system.node_ids))


@dataclass
class EnergyBalance:
    steps: pd.DataFrame
    cumulative_residual: float  # J, signed sum over the steps
    throughput: float  # J
    absolute_residual: float = 0.0  # J, sum of |step residual|


def energy_balance(
    system: AssembledSystem, history: RunHistory, water_channels: Optional[Sequence[str]] = None
) -> EnergyBalance:
    """
    Per-step residual: patch heat in minus stored-energy rate

    Steps of opposite sign cancel in cumulative_residual; absolute_residual
    sums their magnitudes.

    Water channels are those whose name starts with 'water' unless given.
    """
    storage = (np.diff(history.temperatures, axis=0) @ system.capacity) / history.dt
    net = history.patch_flows.sum(axis=1)
    residual = net - storage

    if water_channels is None:
        water = np.array([channel.startswith("water") for channel in system.patch_channels])
    else:
        water = np.isin(system.patch_channels, list(water_channels))
    water_flow = -history.patch_flows[:, water].sum(axis=1)
    gas_flow = history.patch_flows[:, ~water].sum(axis=1)

    steps = pd.DataFrame(
        {
            "t_s": history.times[1:],
            "gas_heat_in_W": gas_flow,
            "water_heat_out_W": water_flow,
            "storage_W": storage,
            "residual_W": residual,
        }
    )
    throughput = float(np.abs(history.patch_flows).sum() * history.dt)
    return EnergyBalance(
        steps,
        float(np.sum(residual) * history.dt),
        throughput,
        float(np.sum(np.abs(residual)) * history.dt),
    )
