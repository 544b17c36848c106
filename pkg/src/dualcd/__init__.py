"""Cognitive diagnosis for open learning environments with dual-modality fusion."""
__version__ = "0.1.0"

from .data import Dataset, compute_stats, load_dataset, make_dataset
from .splits import SplitSpec, make_split

__all__ = ["Dataset", "SplitSpec", "__version__", "compute_stats", "load_dataset", "make_dataset", "make_split"]
