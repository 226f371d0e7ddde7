"""Scheduling protocols and their Lyapunov functions W(kappa, e).

A protocol decides which node's network-induced error is reset at a
transmission. Nodes are contiguous slices of the error vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionError, SchemaError


class ProtocolKind(str, Enum):
    TOD = "tod"
    ROUND_ROBIN = "round_robin"
    RESET_ALL = "reset_all"


@dataclass(frozen=True)
class NodePartition:
    bounds: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.bounds:
            raise SchemaError("a partition needs at least one node")
        expected = 0
        for start, stop in self.bounds:
            if start != expected or stop <= start:
                raise SchemaError(f"node ranges must be contiguous and nonempty, got {self.bounds}")
            expected = stop

    @classmethod
    def scalar_nodes(cls, n: int) -> NodePartition:
        return cls(tuple((i, i + 1) for i in range(n)))

    @classmethod
    def single(cls, n: int) -> NodePartition:
        return cls(((0, n),))

    @property
    def size(self) -> int:
        return self.bounds[-1][1]

    @property
    def nodes(self) -> int:
        return len(self.bounds)


@dataclass(frozen=True)
class ProtocolSpec:
    kind: ProtocolKind
    partition: NodePartition

    @property
    def nodes(self) -> int:
        return self.partition.nodes

    @property
    def size(self) -> int:
        return self.partition.size


def _check(p: ProtocolSpec, e) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    if e.ndim != 1 or e.shape[0] != p.size:
        raise DimensionError(f"error vector has shape {e.shape}, protocol expects ({p.size},)")
    return e


def _node_norms(p: ProtocolSpec, e: np.ndarray) -> np.ndarray:
    return np.array([np.linalg.norm(e[a:b]) for a, b in p.partition.bounds])


def scheduled_node(p: ProtocolSpec, kappa: int, e) -> int | None:
    """Index of the node granted access, or None for ResetAll."""
    if p.kind is ProtocolKind.RESET_ALL:
        return None
    if p.kind is ProtocolKind.ROUND_ROBIN:
        return kappa % p.nodes
    # argmax returns the first maximum, so ties go to the lowest index
    return int(np.argmax(_node_norms(p, _check(p, e))))


def protocol_jump(p: ProtocolSpec, kappa: int, e) -> np.ndarray:
    e = _check(p, e)
    out = e.copy()
    node = scheduled_node(p, kappa, e)
    if node is None:
        out[:] = 0.0
    else:
        a, b = p.partition.bounds[node]
        out[a:b] = 0.0
    return out


def round_robin_weights(nodes: int, kappa: int) -> np.ndarray:
    """Weight of node i is 1 + ((i - kappa) mod nodes): the number of
    transmissions until node i is served, counting the current one."""
    i = np.arange(nodes)
    return 1.0 + np.mod(i - kappa, nodes)


def protocol_lyapunov(p: ProtocolSpec, kappa: int, e) -> float:
    e = _check(p, e)
    if p.kind is ProtocolKind.ROUND_ROBIN:
        w = round_robin_weights(p.nodes, kappa)
        return math.sqrt(float(np.dot(w, _node_norms(p, e) ** 2)))
    return float(np.linalg.norm(e))


def protocol_lyapunov_batch(p: ProtocolSpec, kappa: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Vectorized W over rows of ``e`` with per-row counters ``kappa``."""
    e = np.asarray(e, dtype=float).reshape(len(kappa), -1)
    if e.shape[1] != p.size:
        raise DimensionError(f"error rows have {e.shape[1]} entries, protocol expects {p.size}")
    if p.kind is not ProtocolKind.ROUND_ROBIN:
        return np.linalg.norm(e, axis=1)
    sq = np.stack([np.sum(e[:, a:b] ** 2, axis=1) for a, b in p.partition.bounds], axis=1)
    i = np.arange(p.nodes)[None, :]
    w = 1.0 + np.mod(i - np.asarray(kappa)[:, None], p.nodes)
    return np.sqrt(np.sum(w * sq, axis=1))


@dataclass(frozen=True)
class ProtocolConstants:
    lam: float
    a_W_lower: float
    a_W_upper: float
    gradient_bound: float


def protocol_constants(p: ProtocolSpec) -> ProtocolConstants:
    """Contraction factor, sandwich constants and a bound on |dW/de|."""
    n = p.nodes
    if p.kind is ProtocolKind.RESET_ALL:
        return ProtocolConstants(0.0, 1.0, 1.0, 1.0)
    lam = math.sqrt((n - 1) / n)
    if p.kind is ProtocolKind.TOD:
        return ProtocolConstants(lam, 1.0, 1.0, 1.0)
    return ProtocolConstants(lam, 1.0, math.sqrt(n), math.sqrt(n))
