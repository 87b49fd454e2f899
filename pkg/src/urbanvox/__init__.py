"""Semantic voxel city models and ray-traced urban simulations."""
import os

# prefer OpenMP; an outdated system TBB otherwise triggers a warning on first use
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

__version__ = "0.1.0"
