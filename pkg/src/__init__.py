"""
qtbp - query-trained unrolled belief propagation.

Loopy belief propagation on RBMs, DBMs, Gaussian RBMs and a clone-structured grid MRF is
unrolled into a fixed-depth network and trained directly on conditional queries.
"""

__version__ = "0.1.0"
__description__ = "Query-trained unrolled belief propagation for undirected graphical models"

from .config import get_settings

__all__ = ["get_settings"]
