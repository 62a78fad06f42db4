"""Rotation-aware autoregressive pretraining with a state-space encoder."""
from roma.errors import (
    ConfigError, ContractError, FormatError, IntegrityError, NumericError, RomaError, ShapeError,
)

__version__ = "0.1.0"
