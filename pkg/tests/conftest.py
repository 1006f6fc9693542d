import json
from pathlib import Path

import numpy as np
import pytest

from services.cycle_model import CycleSettings, CylinderGeometry, HtcClosure
from services.state_space import EdgesGrid, TelemetrySeries

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def geometry():
    return CylinderGeometry(bore=0.086, stroke=0.086, conrod_length=0.145, compression_ratio=12.0, n_cylinders=3)


@pytest.fixture
def closure():
    return HtcClosure()


@pytest.fixture
def settings():
    return CycleSettings()


@pytest.fixture
def grid():
    return EdgesGrid.from_mapping(
        {
            "n_engine": [4000.0, 6000.0, 8000.0, 10000.0],
            "m_air": [0.0, 200.0, 500.0],
            "t_int": [290.0, 330.0],
            "T_i": [-1.0, 0.5, 100.0],
            "m_fuel": [0.0, 0.5, 50.0],
        }
    )


@pytest.fixture
def small_series():
    """Ten samples at 0.1 s: five fired at 7000 rpm, then five coasting at 5000 rpm"""
    times = np.arange(10) * 0.1
    fired = [7000.0, 400.0, 310.0, 60.0, 27.0]
    coasting = [5000.0, 80.0, 310.0, 0.0, 0.0]
    states = np.array([fired] * 5 + [coasting] * 5)
    return TelemetrySeries(times, states)


@pytest.fixture
def telemetry_csv(tmp_path, small_series):
    path = tmp_path / "telemetry.csv"
    small_series.to_frame().to_csv(path, index=False)
    return path


@pytest.fixture
def pipeline_config_data():
    return json.loads((CONFIG_DIR / "synthetic.json").read_text(encoding="utf-8"))
