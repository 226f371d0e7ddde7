"""Emulation design and hybrid simulation for singularly perturbed networked control systems."""

from .certify import Certificate, DesignConstants, DesignKnobs, design_certificate, monitor_trajectory
from .errors import SpncsError
from .hybridsim import HybridState, HybridTrajectory, simulate, simulate_generic
from .ltimodel import ClosedLoop, ControllerMatrices, PlantMatrices, assemble_closed_loop
from .mati import MatiParams, mati_bound
from .protocols import NodePartition, ProtocolKind, ProtocolSpec
from .scheduler import ClockConfig, JumpPolicy, Mode, PolicyKind, TieBreak

__version__ = "0.1.0"

__all__ = [
    "Certificate", "ClockConfig", "ClosedLoop", "ControllerMatrices", "DesignConstants", "DesignKnobs",
    "HybridState", "HybridTrajectory", "JumpPolicy", "MatiParams", "Mode", "NodePartition", "PlantMatrices",
    "PolicyKind", "ProtocolKind", "ProtocolSpec", "SpncsError", "TieBreak", "assemble_closed_loop",
    "design_certificate", "mati_bound", "monitor_trajectory", "simulate", "simulate_generic",
]
