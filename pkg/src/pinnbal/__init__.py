"""Physics-informed network training with adaptive loss balancing, on plain numpy."""
__version__ = "0.1.0"

from .errors import ConfigurationError, DomainError, NumericError
from .network import NetworkConfig, forward, init_xavier, input_jet
from .problems import make_problem
from .training import RunRecord, TrainConfig, train, validate

__all__ = [
    "ConfigurationError", "DomainError", "NumericError", "NetworkConfig", "forward",
    "init_xavier", "input_jet", "make_problem", "RunRecord", "TrainConfig", "train",
    "validate", "__version__",
]
