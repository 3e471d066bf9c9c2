"""Desk-scale laboratory for commitment-based key establishment protocols
verified by an out-of-band comparison of short session digests, together
with the man-in-the-middle strategies that motivate them."""

from .primitives import (
    GroupParams,
    KemMode,
    MODP2048,
    REJECT,
    TOY256,
    commit,
    entropy,
    open_commitment,
)
from .protocols import ProtocolConfig, ProtocolKind, build_machine, compile_mt
from .model import Model, World, run_honest, transcript_export, transcript_replay
from .attacks import AttackStrategy
from .harness import ExperimentConfig, TrialSummary, run_experiment, sweep

__version__ = "0.1.0"

__all__ = [
    "AttackStrategy",
    "ExperimentConfig",
    "GroupParams",
    "KemMode",
    "MODP2048",
    "Model",
    "ProtocolConfig",
    "ProtocolKind",
    "REJECT",
    "TOY256",
    "TrialSummary",
    "World",
    "build_machine",
    "commit",
    "compile_mt",
    "entropy",
    "open_commitment",
    "run_experiment",
    "run_honest",
    "sweep",
    "transcript_export",
    "transcript_replay",
]
