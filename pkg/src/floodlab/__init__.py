"""floodlab: desk-scale shallow-water flood workbench.

A reference Godunov finite-volume solver for the 2-D shallow water equations,
a terrain-conditioned latent-dynamics surrogate with a meshless decoder, and
the accompanying data generation, training, and evaluation tooling.
"""

__version__ = "0.1.0"

from .grid import RasterGrid
from .terrain import TerrainField, TerrainFeatures, compute_features, features_at, generate_dem
from .solver import FlowState, SolverConfig, Trajectory, simulate
from .forcing import ForcingStats, Hyetograph, RainField, synth_ensemble
from .surrogate import CLDNetModel, build_model, predict_at_points, predict_full_grid
from .training import TrainConfig, WetUnionMask, build_wet_union, train
from .metrics import MetricReport, compute_report

__all__ = [
    "RasterGrid", "TerrainField", "TerrainFeatures", "compute_features",
    "features_at", "generate_dem", "FlowState", "SolverConfig", "Trajectory",
    "simulate", "ForcingStats", "Hyetograph", "RainField", "synth_ensemble",
    "CLDNetModel", "build_model", "predict_at_points", "predict_full_grid",
    "TrainConfig", "WetUnionMask", "build_wet_union", "train",
    "MetricReport", "compute_report",
]
