"""Edge-update graph neural networks and classical solvers for radio
resource management on bipartite TX/RX graphs."""

__version__ = "0.1.0"

from . import (baselines, chansim, container, engnn, harness, hetgraph, numkernel,
               objectives)

__all__ = ["baselines", "chansim", "container", "engnn", "harness", "hetgraph",
           "numkernel", "objectives", "__version__"]
