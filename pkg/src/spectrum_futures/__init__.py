"""Futures-based spectrum trading between a spectrum owner and requester."""

from .model import (
    ConfigError,
    EnvironmentParams,
    ForwardContract,
    MarketConfig,
    NegotiationParams,
    OwnerParams,
    RequesterParams,
    RiskEstimate,
    load_config,
    paper_default,
)
from .negotiation import brute_force_negotiate, negotiate
from .onsite import OnsiteParams, clear_onsite_market

__all__ = [
    "ConfigError",
    "EnvironmentParams",
    "ForwardContract",
    "MarketConfig",
    "NegotiationParams",
    "OnsiteParams",
    "OwnerParams",
    "RequesterParams",
    "RiskEstimate",
    "brute_force_negotiate",
    "clear_onsite_market",
    "load_config",
    "negotiate",
    "paper_default",
]
