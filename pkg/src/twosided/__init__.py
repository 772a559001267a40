"""Pricing and matching in two-sided queues.

``markov``    birth-death chains with state-dependent ratios
``pricing``   loss-model price policies and objectives
``optimize``  static / threshold optima, universal bounds, small-chain verifiers
``queue``     static-price, two-speed matching-queue simulator
``stats``     seeded streams and batch-means confidence intervals
"""
from .errors import ModelError
from .markov import MomentCap, RhoProfile, StationaryDist, stationary_truncated
from .pricing import BangBang, PriceModel, Static, Tabular, evaluate
from .queue import QueueConfig, simulate

__all__ = [
    "ModelError",
    "MomentCap",
    "RhoProfile",
    "StationaryDist",
    "stationary_truncated",
    "BangBang",
    "PriceModel",
    "Static",
    "Tabular",
    "evaluate",
    "QueueConfig",
    "simulate",
]
