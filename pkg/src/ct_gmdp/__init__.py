"""Planning toolkit for continuous-time multi-agent MDPs on graphs."""

__version__ = "0.1.0"

from .model import GmdpProblem, GraphTopology, Policy  # noqa: E402

__all__ = ["GmdpProblem", "GraphTopology", "Policy", "__version__"]
