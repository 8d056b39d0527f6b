"""Acoustic soft-robot proprioception pipeline.

Feature extraction from embedded-microphone audio, key-point regression,
physically admissible mesh reconstruction via smoothed-ARAP energy
minimization, nearest-neighbor and encoder-decoder baselines, and a
unidirectional-Chamfer evaluation harness with a synthetic
constant-curvature ground-truth generator.
"""

__version__ = "0.1.0"

from .arap import SolverConfig, SolveReport, arap_energy, smoothed_energy, solve
from .mesh import (CellStructure, HandleSet, TriMesh, build_cell_structure,
                   generate_cone_mesh, load_mesh, save_mesh)

__all__ = [
    "CellStructure", "HandleSet", "TriMesh", "SolverConfig", "SolveReport",
    "arap_energy", "smoothed_energy", "solve",
    "build_cell_structure", "generate_cone_mesh", "load_mesh", "save_mesh",
]
