"""Executor for the two-clock hybrid model.

Flows are integrated with fixed-step classic RK4. Transmission instants are
affine in time (clock-only guards), so each flow segment is split into equal
sub-steps no longer than ``h`` that land exactly on the next jump.

The continuous part of the state is handled as one packed vector
v = (x, e_s, z, e_f); clocks are reconstructed from the last reset instants.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import numerics as nm
from .errors import ConstraintError, DimensionError, InfeasibleError, JumpSetError, SimulationError, StiffnessError
from .protocols import ProtocolSpec, protocol_jump
from .scheduler import (
    ClockConfig,
    ClockState,
    EventKind,
    JumpPolicy,
    Mode,
    PolicyKind,
    SplitMix64,
    classify,
    next_event,
    validate_sequence,
)

EVENT_FLOW = 0
EVENT_SLOW = 1
EVENT_FAST = 2
EVENT_NAMES = {EVENT_FLOW: "flow", EVENT_SLOW: "slow_jump", EVENT_FAST: "fast_jump"}
MIN_STEP = 1e-15

VectorField = Callable[[np.ndarray, float], np.ndarray]
JumpMap = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True, eq=False)
class HybridState:
    x: np.ndarray
    e_s: np.ndarray
    tau_s: float
    kappa_s: int
    z: np.ndarray
    e_f: np.ndarray
    tau_f: float  # fast time
    kappa_f: int

    def __post_init__(self):
        for name in ("x", "e_s", "z", "e_f"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).ravel())

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.x.size, self.e_s.size, self.z.size, self.e_f.size

    @property
    def clocks(self) -> ClockState:
        return ClockState(self.tau_s, self.tau_f, self.kappa_s, self.kappa_f)

    def packed(self) -> np.ndarray:
        return np.concatenate([self.x, self.e_s, self.z, self.e_f])

    @classmethod
    def from_packed(cls, v, dims, clocks: ClockState) -> HybridState:
        x, e_s, z, e_f = split_packed(np.asarray(v, dtype=float), dims)
        return cls(x, e_s, clocks.tau_s, clocks.kappa_s, z, e_f, clocks.tau_f, clocks.kappa_f)

    @classmethod
    def zeros(cls, dims) -> HybridState:
        n_x, n_es, n_z, n_ef = dims
        return cls(np.zeros(n_x), np.zeros(n_es), 0.0, 0, np.zeros(n_z), np.zeros(n_ef), 0.0, 0)


def split_packed(v: np.ndarray, dims) -> tuple[np.ndarray, ...]:
    n_x, n_es, n_z, n_ef = dims
    if v.shape[-1] != n_x + n_es + n_z + n_ef:
        raise DimensionError(f"packed state has length {v.shape[-1]}, expected {n_x + n_es + n_z + n_ef}")
    a, b, c = n_x, n_x + n_es, n_x + n_es + n_z
    return v[..., :a], v[..., a:b], v[..., b:c], v[..., c:]


def _check_dims(cl, s: HybridState) -> None:
    if s.dims != cl.dims:
        raise DimensionError(f"state dimensions {s.dims} do not match the closed loop {cl.dims}")


# ---------------------------------------------------------------- flow and jumps

def flow_map(cl, s: HybridState, epsilon: float) -> HybridState:
    """Time derivative of every component; counters have derivative 0."""
    if not epsilon > 0:
        raise ConstraintError("epsilon must be positive")
    _check_dims(cl, s)
    x, e, z, f = s.x, s.e_s, s.z, s.e_f
    dx = cl.A11 @ x + cl.A12 @ e + cl.A13 @ z + cl.A14 @ f
    de = cl.A21 @ x + cl.A22 @ e + cl.A23 @ z + cl.A24 @ f
    dz = (cl.A31 @ x + cl.A32 @ e + cl.A33 @ z + cl.A34 @ f) / epsilon
    df = ((epsilon * cl.A41eps + cl.A41) @ x + (epsilon * cl.A42eps + cl.A42) @ e
          + (epsilon * cl.A43eps + cl.A43) @ z + (epsilon * cl.A44eps + cl.A44) @ f) / epsilon
    return HybridState(dx, de, 1.0, 0, dz, df, 1.0 / epsilon, 0)


def lti_vector_field(cl, epsilon: float) -> VectorField:
    """Packed-vector form of ``flow_map``, block by block (slow; for checks)."""
    if not epsilon > 0:
        raise ConstraintError("epsilon must be positive")
    dims = cl.dims

    def field(v: np.ndarray, eps: float) -> np.ndarray:
        d = flow_map(cl, HybridState.from_packed(v, dims, ClockState()), eps)
        return np.concatenate([d.x, d.e_s, d.z, d.e_f])

    return field


def lti_matrix_field(cl, epsilon: float) -> VectorField:
    """Same vector field as one stacked matrix product (faster)."""
    M = cl.flow_matrix(epsilon)

    def field(v: np.ndarray, eps: float) -> np.ndarray:
        return M @ v

    return field


def jump_slow(s: HybridState, proto: ProtocolSpec, cfg: ClockConfig | None = None) -> HybridState:
    if cfg is not None and not classify(cfg, s.clocks).slow_jump_allowed:
        raise JumpSetError(f"slow transmission not allowed at tau_s={s.tau_s}, tau_f={s.tau_f}")
    return replace(s, e_s=protocol_jump(proto, s.kappa_s, s.e_s), tau_s=0.0, kappa_s=s.kappa_s + 1)


def jump_fast(s: HybridState, proto: ProtocolSpec, cfg: ClockConfig | None = None) -> HybridState:
    if cfg is not None and not classify(cfg, s.clocks).fast_jump_allowed:
        raise JumpSetError(f"fast transmission not allowed at tau_s={s.tau_s}, tau_f={s.tau_f}")
    return replace(s, e_f=protocol_jump(proto, s.kappa_f, s.e_f), tau_f=0.0, kappa_f=s.kappa_f + 1)


def protocol_jump_maps(dims, proto_s: ProtocolSpec, proto_f: ProtocolSpec) -> tuple[JumpMap, JumpMap]:
    """Packed-vector jump maps that apply the protocols to e_s and e_f."""
    n_x, n_es, n_z, n_ef = dims
    a, b = n_x, n_x + n_es
    c = b + n_z

    def slow(v, kappa):
        w = v.copy()
        w[a:b] = protocol_jump(proto_s, kappa, v[a:b])
        return w

    def fast(v, kappa):
        w = v.copy()
        w[c:] = protocol_jump(proto_f, kappa, v[c:])
        return w

    return slow, fast


# ---------------------------------------------------------------- coordinates

def to_y_coords(cl, s: HybridState) -> HybridState:
    """Replace z by y = z - Hx x - He e_s (the field ``z`` then carries y)."""
    _check_dims(cl, s)
    return replace(s, z=s.z - cl.Hx @ s.x - cl.He @ s.e_s)


def from_y_coords(cl, s: HybridState) -> HybridState:
    _check_dims(cl, s)
    return replace(s, z=s.z + cl.Hx @ s.x + cl.He @ s.e_s)


def slow_jump_y(cl, proto: ProtocolSpec, kappa: int, x, e_s, y) -> np.ndarray:
    """Image of y under a slow transmission: y + H(x, e_s) - H(x, h_s(kappa, e_s))."""
    x, e_s, y = (np.asarray(a, dtype=float) for a in (x, e_s, y))
    return y + cl.He @ (e_s - protocol_jump(proto, kappa, e_s))


# ---------------------------------------------------------------- trajectory

@dataclass(eq=False)
class HybridTrajectory:
    t: np.ndarray
    j: np.ndarray
    event: np.ndarray
    X: np.ndarray  # packed (x, e_s, z, e_f) per sample
    tau_s: np.ndarray
    kappa_s: np.ndarray
    tau_f: np.ndarray
    kappa_f: np.ndarray
    dims: tuple[int, int, int, int]
    cfg: ClockConfig

    def __len__(self) -> int:
        return len(self.t)

    def state(self, i: int) -> HybridState:
        clocks = ClockState(float(self.tau_s[i]), float(self.tau_f[i]), int(self.kappa_s[i]), int(self.kappa_f[i]))
        return HybridState.from_packed(self.X[i], self.dims, clocks)

    @property
    def samples(self):
        for i in range(len(self.t)):
            yield float(self.t[i]), int(self.j[i]), self.state(i), EVENT_NAMES[int(self.event[i])]

    @property
    def slow_times(self) -> np.ndarray:
        return self.t[self.event == EVENT_SLOW]

    @property
    def fast_times(self) -> np.ndarray:
        return self.t[self.event == EVENT_FAST]

    def finalize(self) -> HybridTrajectory:
        """Check hybrid-time bookkeeping and the transmission timing."""
        if len(self.t) == 0:
            return self
        jumps = self.event != EVENT_FLOW
        if jumps[0]:
            raise SimulationError("a trajectory cannot start with a jump")
        dt, dj = np.diff(self.t), np.diff(self.j)
        if np.any(dt < 0):
            raise SimulationError("time decreases along the trajectory")
        if np.any(dj != jumps[1:].astype(int)):
            raise SimulationError("jump counter must grow by exactly one at each jump and stay put while flowing")
        if np.any(dt[jumps[1:]] != 0):
            raise SimulationError("time must be constant across a jump")
        if not validate_sequence(self.cfg, list(self.slow_times), list(self.fast_times)):
            raise SimulationError("transmission times violate the MIATI/MATI bounds")
        return self

    def write_csv(self, path) -> None:
        n_x, n_es, n_z, n_ef = self.dims
        header = (["t", "j", "event"] + [f"x{i + 1}" for i in range(n_x)] + [f"e_s{i + 1}" for i in range(n_es)]
                  + ["tau_s", "kappa_s"] + [f"z{i + 1}" for i in range(n_z)] + [f"e_f{i + 1}" for i in range(n_ef)]
                  + ["tau_f", "kappa_f"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self.t)):
                x, e, z, f = split_packed(self.X[i], self.dims)
                w.writerow(
                    [repr(float(self.t[i])), int(self.j[i]), EVENT_NAMES[int(self.event[i])]]
                    + [repr(float(v)) for v in x] + [repr(float(v)) for v in e]
                    + [repr(float(self.tau_s[i])), int(self.kappa_s[i])]
                    + [repr(float(v)) for v in z] + [repr(float(v)) for v in f]
                    + [repr(float(self.tau_f[i])), int(self.kappa_f[i])]
                )


class _Recorder:
    def __init__(self):
        self.rows: list[tuple] = []
        self.X: list[np.ndarray] = []

    def add(self, t, j, event, v, tau_s, kappa_s, tau_f, kappa_f):
        self.rows.append((t, j, event, tau_s, kappa_s, tau_f, kappa_f))
        self.X.append(v)

    def build(self, dims, cfg) -> HybridTrajectory:
        n = len(self.rows)
        cols = list(zip(*self.rows)) if n else [()] * 7
        return HybridTrajectory(
            t=np.array(cols[0], dtype=float),
            j=np.array(cols[1], dtype=np.int64),
            event=np.array(cols[2], dtype=np.int8),
            X=np.array(self.X, dtype=float).reshape(n, sum(dims)),
            tau_s=np.array(cols[3], dtype=float),
            kappa_s=np.array(cols[4], dtype=np.int64),
            tau_f=np.array(cols[5], dtype=float),
            kappa_f=np.array(cols[6], dtype=np.int64),
            dims=tuple(dims),
            cfg=cfg,
        )


# ---------------------------------------------------------------- integration

def default_step(cfg: ClockConfig) -> float:
    if cfg.mode is Mode.SLOW_ONLY:
        return cfg.miati_s / 50
    if cfg.mode is Mode.FAST_ONLY:
        return cfg.mati_f / 50
    return min(cfg.mati_f, cfg.miati_s) / 50


def stiffness_limit(cl, epsilon: float) -> float:
    return epsilon / (2.0 * nm.spectral_norm(cl.A33))


def _rk4(field: VectorField, v: np.ndarray, dt: float, eps: float) -> np.ndarray:
    k1 = field(v, eps)
    k2 = field(v + 0.5 * dt * k1, eps)
    k3 = field(v + 0.5 * dt * k2, eps)
    k4 = field(v + dt * k3, eps)
    return v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate_generic(
    flow: VectorField,
    jumps: tuple[JumpMap, JumpMap],
    cfg: ClockConfig,
    x0: HybridState,
    policy: JumpPolicy,
    t_end: float,
    h: float | None = None,
    validate: bool = True,
) -> HybridTrajectory:
    """Run the hybrid executor with caller-supplied dynamics.

    ``flow(v, eps)`` returns dv/dt for the packed state v = (x, e_s, z, e_f);
    ``jumps = (slow, fast)`` map (v, kappa) to the post-jump packed state.
    """
    eps = cfg.epsilon
    h = default_step(cfg) if h is None else h
    if not h > 0 or not math.isfinite(h):
        raise ConstraintError(f"step must be positive and finite, got {h}")
    if not t_end >= 0:
        raise ConstraintError("t_end must be nonnegative")
    clocks = x0.clocks
    if not classify(cfg, clocks).in_flow:
        raise InfeasibleError("initial clocks are outside the flow set")
    dims = x0.dims
    jump_s, jump_f = jumps
    rng = SplitMix64(policy.seed) if policy.kind is PolicyKind.RANDOM else None

    v = x0.packed()
    t, j = 0.0, 0
    last_s, last_f = -x0.tau_s, -eps * x0.tau_f
    ks, kf = x0.kappa_s, x0.kappa_f
    rec = _Recorder()
    rec.add(t, j, EVENT_FLOW, v, x0.tau_s, ks, x0.tau_f, kf)

    def clock_state():
        return ClockState(t - last_s, (t - last_f) / eps, ks, kf)

    while True:
        gap, kind = next_event(cfg, clock_state(), policy, rng)
        target = t + gap
        stop = min(target, t_end)
        span = stop - t
        if span > 0:
            n = max(1, math.ceil(span / h * (1 - 1e-12)))
            dt = span / n
            if dt < MIN_STEP:
                raise SimulationError(f"step underflow ({dt}) at t={t}, j={j}")
            t0 = t
            for k in range(1, n + 1):
                v = _rk4(flow, v, dt, eps)
                t = stop if k == n else t0 + k * dt
                if not np.all(np.isfinite(v)):
                    raise SimulationError(f"non-finite state at t={t}, j={j}")
                rec.add(t, j, EVENT_FLOW, v, t - last_s, ks, (t - last_f) / eps, kf)
        if target > t_end:
            break
        t = target
        j += 1
        if kind is EventKind.SLOW:
            v = np.asarray(jump_s(v, ks), dtype=float)
            ks += 1
            last_s = t
            event = EVENT_SLOW
        else:
            v = np.asarray(jump_f(v, kf), dtype=float)
            kf += 1
            last_f = t
            event = EVENT_FAST
        if not np.all(np.isfinite(v)):
            raise SimulationError(f"non-finite state after jump at t={t}, j={j}")
        rec.add(t, j, event, v, t - last_s, ks, (t - last_f) / eps, kf)
        if t >= t_end:
            break
    traj = rec.build(dims, cfg)
    return traj.finalize() if validate else traj


def simulate(
    cl,
    cfg: ClockConfig,
    x0: HybridState,
    policy: JumpPolicy,
    proto_s: ProtocolSpec,
    proto_f: ProtocolSpec,
    t_end: float,
    h: float | None = None,
    epsilon: float | None = None,
) -> HybridTrajectory:
    """Simulate the LTI closed loop (flow evaluated as one stacked matrix product)."""
    if epsilon is not None and epsilon != cfg.epsilon:
        raise ConstraintError(f"epsilon {epsilon} differs from the clock configuration's {cfg.epsilon}")
    _check_dims(cl, x0)
    for name, proto, n in (("slow", proto_s, cl.dims[1]), ("fast", proto_f, cl.dims[3])):
        if proto.size != n:
            raise DimensionError(f"{name} protocol covers {proto.size} errors, closed loop has {n}")
    h = default_step(cfg) if h is None else h
    limit = stiffness_limit(cl, cfg.epsilon)
    if h > limit:
        raise StiffnessError(h, limit)
    return simulate_generic(lti_matrix_field(cl, cfg.epsilon), protocol_jump_maps(cl.dims, proto_s, proto_f), cfg, x0, policy, t_end, h)


def read_csv(path, dims, cfg: ClockConfig) -> HybridTrajectory:
    """Load a trajectory written by ``HybridTrajectory.write_csv``."""
    codes = {v: k for k, v in EVENT_NAMES.items()}
    n_x, n_es, n_z, n_ef = dims
    rec = _Recorder()
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        width = 3 + n_x + n_es + 2 + n_z + n_ef + 2
        if header is None:
            return rec.build(dims, cfg)
        if len(header) != width:
            raise DimensionError(f"trajectory has {len(header)} columns, the scenario needs {width}")
        for row in rows:
            vals = row[3:]
            x = vals[:n_x + n_es]
            tau_s, kappa_s = float(vals[n_x + n_es]), int(vals[n_x + n_es + 1])
            zf = vals[n_x + n_es + 2:n_x + n_es + 2 + n_z + n_ef]
            tau_f, kappa_f = float(vals[-2]), int(vals[-1])
            try:
                event = codes[row[2]]
            except KeyError as exc:
                raise SimulationError(f"unknown event label {row[2]!r}") from exc
            v = np.array([float(a) for a in x + zf])
            rec.add(float(row[0]), int(row[1]), event, v, tau_s, kappa_s, tau_f, kappa_f)
    return rec.build(dims, cfg)
