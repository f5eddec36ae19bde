"""Time-delay reservoir computers, their linearized reservoir model and
closed-form capacities for stationary inputs."""

from .capacity_model import (
    CapacityReport,
    FilterTask,
    LinearTask,
    QuadraticTask,
    ReservoirModel,
    TruncationPolicy,
    capacity,
    task_capacity,
)
from .errors import RescapError
from .series_core import (
    AutomomentTable,
    GaussianAutomoments,
    IidAutomoments,
    TimeSeries,
    estimate_automoments,
    estimate_comoments,
)
from .tdr import IkedaKernel, TdrParams, random_mask, tdr_run, train_readout

__version__ = "0.1.0"

__all__ = [
    "AutomomentTable",
    "CapacityReport",
    "FilterTask",
    "GaussianAutomoments",
    "IidAutomoments",
    "IkedaKernel",
    "LinearTask",
    "QuadraticTask",
    "RescapError",
    "ReservoirModel",
    "TdrParams",
    "TimeSeries",
    "TruncationPolicy",
    "capacity",
    "estimate_automoments",
    "estimate_comoments",
    "random_mask",
    "task_capacity",
    "tdr_run",
    "train_readout",
]
