"""Writers for run directories: series CSV/Parquet, JSON reports and debug dumps."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd

from . import __version__
from .config import HarnessConfig
from .equilibria import equilibrium_frame
from .evolution import Problem, reflected_traces
from .geometry import trace_frame

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12e"


def run_dir_name(cfg: HarnessConfig, kind: str) -> str:
    """Directory name derived from the configuration only, so reruns overwrite."""
    m, sim = cfg.model, cfg.sim
    walls = "torus" if m.geometry == "torus" else f"slab_a{m.alpha_left:g}-{m.alpha_right:g}"
    return f"{kind}_{m.operator_kind}_{walls}_s{m.s:g}_nx{sim.nx}_nv{sim.nv}_seed{sim.seed}"


def prepare_output_dir(out_dir, name: str) -> Path:
    path = Path(out_dir) / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _plain(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else str(value)
    return obj


def write_json(path, obj: Any) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
    logger.info("wrote %s", path)
    return path


def save_parquet_copy(csv_path, df: pd.DataFrame) -> Path:
    """Write ``df`` next to ``csv_path`` as Parquet."""
    parquet_path = Path(csv_path).with_suffix(".parquet")
    try:
        df.to_parquet(parquet_path, engine="pyarrow", index=False)
    except Exception as e:
        logger.error("failed to save Parquet file %s: %s", parquet_path, e)
        raise
    logger.info("saved Parquet file %s", parquet_path)
    return parquet_path


def save_frame(df: pd.DataFrame, path, save_parquet: bool = False) -> Path:
    path = Path(path)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    if save_parquet:
        save_parquet_copy(path, df)
    return path


def series_filename(eps: float, seed: int) -> str:
    return f"series_eps{eps:g}_seed{seed}.csv"


def run_metadata(cfg: HarnessConfig, problem: Optional[Problem] = None) -> dict:
    meta = {"version": __version__, "config": cfg.to_dict()}
    if problem is not None:
        xg, vg = problem.xgrid, problem.vgrid
        meta["grid"] = {"geometry": xg.geometry, "nx": xg.nx, "dx": xg.dx, "nv": vg.n, "vmax": vg.vmax,
                        "grading": vg.grading, "v_min_abs": float(np.min(np.abs(vg.nodes)))}
        meta["equilibrium"] = {"kind": problem.M.kind, "mass_renorm": problem.M.mass_renorm,
                               "tail_bounds": problem.M.tail_bounds}
        meta["walls"] = [{"name": w.name, "alpha": w.alpha, "c_M": w.c_M} for w in xg.walls]
        A = problem.collision.cells[0]
        meta["collision"] = {"kind": A.kind, "raw_residual": A.raw_residual, "mass_defect": A.mass_defect,
                             "dissipation_defect": A.dissipation_defect}
    return meta


def dump_problem(problem: Problem, directory, f=None) -> None:
    """Grid and equilibrium, one matrix per distinct collision operator, wall traces of ``f``."""
    directory = Path(directory)
    save_frame(equilibrium_frame(problem.M), directory / "equilibrium.csv")
    for A, cells in problem.collision.groups:
        name = "collision.csv" if len(problem.collision.groups) == 1 else f"collision_cell{cells[0]}.csv"
        A.frame().to_csv(directory / name, float_format=FLOAT_FORMAT)
    if f is not None and not problem.xgrid.periodic:
        save_frame(trace_frame(reflected_traces(f, problem.M)), directory / "traces.csv")
    logger.info("dumped grids and operators to %s", directory)
