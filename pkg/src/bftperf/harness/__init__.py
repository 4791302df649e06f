"""Sweeps, figure presets, CSV output and the command line."""

from .presets import Preset, get_preset, preset_names, run_preset
from .series import COLUMNS, ResultSeries, SeriesPoint, export_csv, read_csv, write_csv
from .sweep import (VARIABLES, evaluate_model, find_crossover, model_params, point_seed,
                    ratio_series, run_sweep, sim_argmin, tail_slope)

__all__ = [
    "Preset", "get_preset", "preset_names", "run_preset", "COLUMNS", "ResultSeries",
    "SeriesPoint", "export_csv", "read_csv", "write_csv", "VARIABLES", "evaluate_model", "find_crossover",
    "model_params", "point_seed", "ratio_series", "run_sweep", "sim_argmin", "tail_slope",
]
