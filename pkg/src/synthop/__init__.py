"""Data-driven output-feedback stabilization of continuous-time AR systems.

Finite data trajectories are embedded through synthesis operators on
``H^L_0[0, tau]``; their Gram matrices are computed in closed form from
repeated integrals and feed an LMI whose solution is a controller that
stabilizes every system consistent with the data and a noise bound.
"""

__version__ = "0.1.0"

from .errors import SynthopError  # noqa: E402
from .signals import Dataset, Trajectory, load_dataset, write_dataset  # noqa: E402
from .stability import ArSystem, Controller  # noqa: E402

__all__ = ["ArSystem", "Controller", "Dataset", "SynthopError", "Trajectory",
           "load_dataset", "write_dataset", "__version__"]
