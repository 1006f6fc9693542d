"""
Configuration module
"""
import logging
import os
from pathlib import Path
from typing import List, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from services.cycle_model import CycleSettings, CylinderGeometry, HtcClosure
from services.errors import ConfigError
from services.gas_exchange import PortGeometry, ValveLiftCurve, load_valve_lift
from services.part_load import PartLoadSettings
from services.state_space import STATE_COLUMNS, EdgesGrid, EngineState, FullLoadCriterion

# Load environment variables from .env file
load_dotenv()

# Runtime Configuration
LOG_LEVEL = os.getenv("ENGINE_THERMAL_LOG_LEVEL", "INFO")
DEFAULT_CONFIG = os.getenv("ENGINE_THERMAL_CONFIG")
OUT_DIR = os.getenv("ENGINE_THERMAL_OUT", "out")
THREADS = int(os.getenv("ENGINE_THERMAL_THREADS", 1))


def setup_logging(level: Optional[str] = None):
    """Configure the root logger once for the command line"""
    logging.basicConfig(
        level=(level or LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


class Calibration(BaseModel):
    speed: float = Field(gt=0)  # rpm of the calibration point
    target_alpha_mean: float = Field(gt=0)  # W/m2K


class EngineConfig(BaseModel):
    geometry: CylinderGeometry
    closure: HtcClosure = HtcClosure()
    cycle: CycleSettings = CycleSettings()
    coasting_kappa: float = Field(default=1.35, gt=1)
    ambient_pressure: float = Field(default=101325.0, gt=0)
    calibration: Optional[Calibration] = None
    cylinder_fuel_offsets: List[float] = []

    def fuel_offsets(self) -> List[float]:
        """Fuel scale per cylinder, one when not configured"""
        offsets = list(self.cylinder_fuel_offsets)
        return offsets + [1.0] * (self.geometry.n_cylinders - len(offsets))


class GridConfig(BaseModel):
    n_engine: List[float]
    m_air: List[float]
    t_int: List[float]
    T_i: List[float]
    m_fuel: List[float]

    @field_validator("*")
    @classmethod
    def _strictly_increasing(cls, edges: List[float]) -> List[float]:
        if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("edges must be strictly increasing with at least 2 entries")
        return edges

    def edges(self) -> EdgesGrid:
        return EdgesGrid.from_mapping({name: getattr(self, name) for name in STATE_COLUMNS})


class SpeedPoint(BaseModel):
    speed: float = Field(gt=0)  # rpm
    m_air: float = Field(gt=0)  # mg/stroke
    t_int: float = Field(gt=0)  # K
    T_i: float = Field(gt=0)  # Nm
    m_fuel: float = Field(gt=0)  # mg/stroke
    exhaust_temperature: float = Field(default=1100.0, gt=0)  # K
    trace: Optional[Path] = None
    motored_trace: Optional[Path] = None

    def state(self) -> EngineState:
        return EngineState(self.speed, self.m_air, self.t_int, self.T_i, self.m_fuel)


class FullLoadConfig(BaseModel):
    points: List[SpeedPoint]
    expected_speeds: Optional[List[float]] = None
    torque_speeds: List[float]
    torque_values: List[float]
    fraction: float = Field(default=0.95, gt=0, le=1)

    @model_validator(mode="after")
    def _torque_line(self):
        if len(self.torque_speeds) != len(self.torque_values) or len(self.torque_speeds) < 2:
            raise ValueError("full-load torque line needs matching speeds and torques")
        return self

    def criterion(self) -> FullLoadCriterion:
        return FullLoadCriterion(tuple(self.torque_speeds), tuple(self.torque_values), self.fraction)

    def sorted_points(self) -> List[SpeedPoint]:
        return sorted(self.points, key=lambda p: p.speed)


class PortConfig(BaseModel):
    valve_diameter: float = Field(gt=0)
    duct_diameter: float = Field(gt=0)
    port_length: float = Field(gt=0)
    max_lift: float = Field(default=0.01, gt=0)
    opening_deg: float
    closing_deg: float
    lift_file: Optional[Path] = None

    def geometry(self) -> PortGeometry:
        if self.lift_file is not None:
            lift = load_valve_lift(self.lift_file)
        else:
            lift = ValveLiftCurve.synthetic(self.max_lift, self.valve_diameter, self.opening_deg, self.closing_deg)
        return PortGeometry(self.valve_diameter, self.duct_diameter, self.port_length, lift)


class GasExchangeConfig(BaseModel):
    intake: PortConfig
    exhaust: PortConfig
    intake_coefficient: float = Field(default=0.01, gt=0)
    exhaust_pressure: float = Field(default=1.1e5, gt=0)
    properties_file: Optional[Path] = None


class WaterJacketConfig(BaseModel):
    exponent: float = Field(default=0.7, gt=0, lt=1)
    reference_file: Optional[Path] = None
    n_ref: Optional[float] = Field(default=None, gt=0)
    inlet_temperature: float = Field(default=353.0, gt=0)
    channel_file: Optional[Path] = None
    sensor_tau: float = Field(default=0.0, ge=0)
    alpha_mean: float = Field(default=8000.0, gt=0)
    c_p: float = Field(default=4186.0, gt=0)
    density: float = Field(default=1000.0, gt=0)
    strict: bool = True


class SolverConfig(BaseModel):
    dt: float = Field(default=0.015, gt=0)
    horizon: Optional[float] = Field(default=None, gt=0)
    network_file: Optional[Path] = None
    binary_bc: bool = False


class LapConfig(BaseModel):
    duration: float = Field(default=180.0, gt=0)
    sample_period: float = Field(default=0.01, gt=0)
    full_load_fraction: float = Field(default=2.0 / 3.0, ge=0, le=1)
    coasting_fraction: float = Field(default=0.25, ge=0, le=1)
    corners: int = Field(default=6, gt=0)
    speed_range: Tuple[float, float] = (5000.0, 9000.0)
    full_load_air: float = Field(default=450.0, gt=0)
    inlet_temperature: float = Field(default=310.0, gt=0)
    cycles_per_point: int = Field(default=20, gt=1)


class PipelineConfig(BaseModel):
    """Structured pipeline configuration, read from JSON"""

    model_config = ConfigDict(extra="forbid")

    engine: EngineConfig
    grid: GridConfig
    full_load: FullLoadConfig
    part_load: PartLoadSettings = PartLoadSettings()
    gas_exchange: GasExchangeConfig
    water_jacket: WaterJacketConfig = WaterJacketConfig()
    solver: SolverConfig = SolverConfig()
    lap: LapConfig = LapConfig()
    telemetry: Optional[Path] = None
    seed: int = 0

    def referenced_files(self) -> List[Path]:
        files = [self.telemetry] + [p.trace for p in self.full_load.points] + [p.motored_trace for p in self.full_load.points]
        files += [
            self.gas_exchange.properties_file,
            self.gas_exchange.intake.lift_file,
            self.gas_exchange.exhaust.lift_file,
            self.water_jacket.reference_file,
            self.water_jacket.channel_file,
            self.solver.network_file,
        ]
        return [f for f in files if f is not None]

    def resolved(self, base: Path) -> "PipelineConfig":
        """Copy with relative paths taken against base"""

        def fix(path: Optional[Path]) -> Optional[Path]:
            return path if path is None or path.is_absolute() else (base / path)

        data = self.model_copy(deep=True)
        data.telemetry = fix(data.telemetry)
        for point in data.full_load.points:
            point.trace = fix(point.trace)
            point.motored_trace = fix(point.motored_trace)
        data.gas_exchange.properties_file = fix(data.gas_exchange.properties_file)
        data.gas_exchange.intake.lift_file = fix(data.gas_exchange.intake.lift_file)
        data.gas_exchange.exhaust.lift_file = fix(data.gas_exchange.exhaust.lift_file)
        data.water_jacket.reference_file = fix(data.water_jacket.reference_file)
        data.water_jacket.channel_file = fix(data.water_jacket.channel_file)
        data.solver.network_file = fix(data.solver.network_file)
        return data


def load_config(path: Union[str, Path]) -> PipelineConfig:
    """Parse and resolve a pipeline config file"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        config = PipelineConfig.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise ConfigError(f"Invalid config {path}:\n{exc}") from exc
    return config.resolved(path.parent.resolve())


# Validate referenced files
def validate_config(config: PipelineConfig):
    """Validate that all files the config references exist"""
    missing_files = [str(f) for f in config.referenced_files() if not Path(f).is_file()]

    if missing_files:
        raise ConfigError(
            f"Missing referenced files: {', '.join(missing_files)}\n"
            "Please check the paths in your config file."
        )

    return True
