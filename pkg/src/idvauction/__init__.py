"""EPIC-IR single-item auctions with private interdependent valuations."""

from .core import Instance, MechanismOutcome, QueryLedger, ValuationOracle, evaluate, make_profile, substitute

__version__ = "0.1.0"

__all__ = [
    "Instance",
    "MechanismOutcome",
    "QueryLedger",
    "ValuationOracle",
    "evaluate",
    "make_profile",
    "substitute",
]
