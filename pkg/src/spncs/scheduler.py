"""Dual-clock transmission scheduling.

Two clocks run at unit physical rate: tau_s (time since the last slow
transmission) and the physical fast clock s_f = epsilon * tau_f. Jump and flow
sets are unions of convex polygons in (tau_s, s_f), so along the flow direction
(1, 1) every region is an interval of elapsed time and all event windows are
obtained without root finding.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple

from .errors import ConstraintError, InfeasibleError, SchemaError

MEMBERSHIP_RTOL = 1e-12
SEQUENCE_RTOL = 1e-9


class Mode(str, Enum):
    DUAL = "dual"
    SLOW_ONLY = "slow_only"
    FAST_ONLY = "fast_only"


class EventKind(str, Enum):
    SLOW = "slow"
    FAST = "fast"


class PolicyKind(str, Enum):
    EARLIEST = "earliest"
    LATEST = "latest"
    RANDOM = "random"


class TieBreak(str, Enum):
    SLOW_FIRST = "slow_first"
    FAST_FIRST = "fast_first"


@dataclass(frozen=True)
class ClockConfig:
    """Timing bounds in physical seconds.

    In SlowOnly mode the fast fields are ignored and in FastOnly mode the slow
    fields are ignored; ignored fields still need to be positive numbers.
    """

    miati_s: float
    mati_s: float
    miati_f: float
    mati_f: float
    epsilon: float
    mode: Mode = Mode.DUAL

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        vals = (self.miati_s, self.mati_s, self.miati_f, self.mati_f, self.epsilon)
        if not all(math.isfinite(v) for v in vals):
            raise SchemaError("clock configuration must be finite")
        if self.epsilon <= 0:
            raise ConstraintError(f"epsilon must be positive, got {self.epsilon}")
        if self.mode is not Mode.FAST_ONLY and not 0 < self.miati_s <= self.mati_s:
            raise ConstraintError(f"need 0 < miati_s <= mati_s, got {self.miati_s}, {self.mati_s}")
        if self.mode is not Mode.SLOW_ONLY and not 0 < self.miati_f <= self.mati_f:
            raise ConstraintError(f"need 0 < miati_f <= mati_f, got {self.miati_f}, {self.mati_f}")
        if self.mode is Mode.DUAL and self.miati_f > 0.5 * self.mati_f * (1 + MEMBERSHIP_RTOL):
            raise ConstraintError(
                f"miati_f = {self.miati_f} exceeds mati_f / 2 = {self.mati_f / 2}; the clocks cannot co-exist"
            )
        # Without these the dual flow set has dead ends (no jump admissible
        # when flow must stop) or slow gaps shorter than miati_f.
        if self.mode is Mode.DUAL and self.miati_f > self.miati_s * (1 + MEMBERSHIP_RTOL):
            raise ConstraintError(f"miati_f = {self.miati_f} exceeds miati_s = {self.miati_s}")
        if self.mode is Mode.DUAL and self.miati_f > (self.mati_s - self.miati_s) * (1 + MEMBERSHIP_RTOL):
            raise ConstraintError(
                f"slow window mati_s - miati_s = {self.mati_s - self.miati_s} is narrower than miati_f = {self.miati_f}"
            )

    @property
    def tol(self) -> float:
        return MEMBERSHIP_RTOL * max(1.0, self.mati_s, self.mati_f)


@dataclass(frozen=True)
class ClockState:
    tau_s: float = 0.0
    tau_f: float = 0.0  # fast time; physical elapsed time is epsilon * tau_f
    kappa_s: int = 0
    kappa_f: int = 0


class Classification(NamedTuple):
    in_flow: bool
    slow_jump_allowed: bool
    fast_jump_allowed: bool


@dataclass(frozen=True)
class JumpPolicy:
    kind: PolicyKind = PolicyKind.LATEST
    tiebreak: TieBreak = TieBreak.SLOW_FIRST
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        object.__setattr__(self, "tiebreak", TieBreak(self.tiebreak))
        if (self.seed is not None) != (self.kind is PolicyKind.RANDOM):
            raise SchemaError("a seed is required for the random policy and only for it")


class SplitMix64:
    """SplitMix64 generator (Steele, Lea, Flood). Constants are the reference ones."""

    _MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self._MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & self._MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self._MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self._MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


# A constraint lo <= a*tau_s + b*s_f <= hi; a region is a conjunction of them.
_Constraint = tuple[float, float, float, float]


def _regions(cfg: ClockConfig) -> dict[str, list[list[_Constraint]]]:
    inf = math.inf
    mis, mas, mif, maf = cfg.miati_s, cfg.mati_s, cfg.miati_f, cfg.mati_f
    if cfg.mode is Mode.SLOW_ONLY:
        d_s = [[(1, 0, mis, mas)]]
        return {"slow": d_s, "fast": [], "flow": d_s + [[(1, 0, 0.0, mas)]]}
    if cfg.mode is Mode.FAST_ONLY:
        d_f = [[(0, 1, mif, maf)]]
        return {"slow": [], "fast": d_f, "flow": d_f + [[(0, 1, 0.0, maf)]]}
    d_s = [[(1, 0, mis, mas), (0, 1, mif, maf - mif)]]
    d_f = [[(1, 0, mif, mas - mif), (0, 1, mif, maf)]]
    c_a = [[(1, 0, 0.0, mif), (0, 1, 0.0, inf), (-1, 1, -inf, maf - mif)]]
    c_b = [[(1, 0, mif, inf), (1, -1, -inf, mas - mif), (0, 1, 0.0, mif)]]
    return {"slow": d_s, "fast": d_f, "flow": d_s + d_f + c_a + c_b}


def _holds(c: _Constraint, ts: float, sf: float, tol: float) -> bool:
    a, b, lo, hi = c
    v = a * ts + b * sf
    return lo - tol <= v <= hi + tol


def _member(region_list, ts, sf, tol) -> bool:
    return any(all(_holds(c, ts, sf, tol) for c in reg) for reg in region_list)


def physical_fast(cfg: ClockConfig, s: ClockState) -> float:
    return cfg.epsilon * s.tau_f


def classify(cfg: ClockConfig, s: ClockState) -> Classification:
    ts, sf, tol = s.tau_s, physical_fast(cfg, s), cfg.tol
    regs = _regions(cfg)
    return Classification(
        _member(regs["flow"], ts, sf, tol),
        _member(regs["slow"], ts, sf, tol),
        _member(regs["fast"], ts, sf, tol),
    )


def _interval(region, ts: float, sf: float, tol: float) -> tuple[float, float] | None:
    """Elapsed times dt >= 0 for which (ts + dt, sf + dt) lies in the region."""
    lo_t, hi_t = 0.0, math.inf
    for a, b, lo, hi in region:
        v = a * ts + b * sf
        rate = a + b
        if rate == 0:
            if not lo - tol <= v <= hi + tol:
                return None
            continue
        lo_t = max(lo_t, (lo - v) / rate)
        hi_t = min(hi_t, (hi - v) / rate)
    if hi_t < -tol or lo_t > hi_t + tol:
        return None
    return lo_t, max(hi_t, lo_t, 0.0)


def _flow_horizon(regs, ts, sf, tol) -> float:
    pieces = sorted(iv for iv in (_interval(r, ts, sf, tol) for r in regs) if iv is not None)
    reach = None
    for lo, hi in pieces:
        if reach is None:
            if lo > tol:
                break
            reach = hi
        elif lo <= reach + tol:
            reach = max(reach, hi)
        else:
            break
    if reach is None:
        raise InfeasibleError(f"clock state (tau_s={ts}, s_f={sf}) is outside the flow set")
    return reach


@dataclass(frozen=True)
class EventWindows:
    horizon: float
    slow: tuple[float, float] | None
    fast: tuple[float, float] | None


def event_windows(cfg: ClockConfig, s: ClockState) -> EventWindows:
    """Admissible jump windows (elapsed time) before flow must stop."""
    ts, sf, tol = s.tau_s, physical_fast(cfg, s), cfg.tol
    regs = _regions(cfg)
    horizon = _flow_horizon(regs["flow"], ts, sf, tol)

    def clip(region_list):
        best = None
        for reg in region_list:
            iv = _interval(reg, ts, sf, tol)
            if iv is None or iv[0] > horizon + tol:
                continue
            iv = (iv[0], min(iv[1], horizon))
            best = iv if best is None else (min(best[0], iv[0]), max(best[1], iv[1]))
        return best

    return EventWindows(horizon, clip(regs["slow"]), clip(regs["fast"]))


def _contains(w, dt, tol) -> bool:
    return w is not None and w[0] - tol <= dt <= w[1] + tol


def next_event(
    cfg: ClockConfig, s: ClockState, policy: JumpPolicy, rng: SplitMix64 | None = None
) -> tuple[float, EventKind]:
    """Pick the next transmission: elapsed physical time and which clock fires."""
    w = event_windows(cfg, s)
    tol = cfg.tol
    windows = [x for x in (w.slow, w.fast) if x is not None]
    if not windows:
        raise InfeasibleError(
            f"no admissible transmission from tau_s={s.tau_s}, s_f={physical_fast(cfg, s)}"
        )
    if policy.kind is PolicyKind.EARLIEST:
        dt = min(x[0] for x in windows)
    elif policy.kind is PolicyKind.LATEST:
        dt = max(x[1] for x in windows)
    else:
        if rng is None:
            rng = SplitMix64(policy.seed)
        dt = _draw(windows, rng)
    dt = max(dt, 0.0)
    slow_ok, fast_ok = _contains(w.slow, dt, tol), _contains(w.fast, dt, tol)
    if slow_ok and fast_ok:
        kind = EventKind.SLOW if policy.tiebreak is TieBreak.SLOW_FIRST else EventKind.FAST
    elif slow_ok:
        kind = EventKind.SLOW
    elif fast_ok:
        kind = EventKind.FAST
    else:  # pragma: no cover - windows are closed intervals containing their ends
        raise InfeasibleError("selected instant is outside every jump window")
    return dt, kind


def _draw(windows, rng: SplitMix64) -> float:
    """Uniform draw over the union of the windows."""
    merged = []
    for lo, hi in sorted(windows):
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    total = sum(hi - lo for lo, hi in merged)
    u = rng.uniform()
    if total <= 0.0:
        return merged[min(int(u * len(merged)), len(merged) - 1)][0]
    target = u * total
    for lo, hi in merged:
        if target <= hi - lo:
            return lo + target
        target -= hi - lo
    return merged[-1][1]


def advance(cfg: ClockConfig, s: ClockState, dt: float) -> ClockState:
    return ClockState(s.tau_s + dt, s.tau_f + dt / cfg.epsilon, s.kappa_s, s.kappa_f)


def after_jump(s: ClockState, kind: EventKind) -> ClockState:
    if kind is EventKind.SLOW:
        return ClockState(0.0, s.tau_f, s.kappa_s + 1, s.kappa_f)
    return ClockState(s.tau_s, 0.0, s.kappa_s, s.kappa_f + 1)


@dataclass(frozen=True)
class ScheduledEvent:
    time: float
    kind: EventKind
    kappa: int  # counter value after the transmission


def generate_schedule(
    cfg: ClockConfig,
    policy: JumpPolicy,
    events: int,
    start: ClockState | None = None,
) -> list[ScheduledEvent]:
    """Clock-only schedule of ``events`` transmissions from ``start``.

    Clocks are re-derived from the last reset instants rather than summed step
    by step, so boundary values do not drift.
    """
    s = start or ClockState()
    if not classify(cfg, s).in_flow:
        raise InfeasibleError("initial clocks are outside the flow set")
    rng = SplitMix64(policy.seed) if policy.kind is PolicyKind.RANDOM else None
    t = 0.0
    last_s, last_f = -s.tau_s, -cfg.epsilon * s.tau_f
    out: list[ScheduledEvent] = []
    for _ in range(events):
        dt, kind = next_event(cfg, s, policy, rng)
        t += dt
        s = ClockState(t - last_s, (t - last_f) / cfg.epsilon, s.kappa_s, s.kappa_f)
        s = after_jump(s, kind)
        if kind is EventKind.SLOW:
            last_s = t
        else:
            last_f = t
        out.append(ScheduledEvent(t, kind, s.kappa_s if kind is EventKind.SLOW else s.kappa_f))
    return out


def split_times(events: Iterable[ScheduledEvent]) -> tuple[list[float], list[float]]:
    slow = [e.time for e in events if e.kind is EventKind.SLOW]
    fast = [e.time for e in events if e.kind is EventKind.FAST]
    return slow, fast


def _gaps_within(times, lo, hi, rtol) -> bool:
    for a, b in zip(times, times[1:]):
        g = b - a
        slack = rtol * max(1.0, abs(b))
        if g < lo - slack or g > hi + slack:
            return False
    return True


def validate_sequence(cfg: ClockConfig, slow_times, fast_times, rtol: float = SEQUENCE_RTOL) -> bool:
    """Check the inter-transmission constraints on consecutive gaps.

    Slow gaps must lie in [miati_s, mati_s], fast gaps in [miati_f, mati_f],
    and neighbours in the merged sequence must be at least miati_f apart.
    """
    slow, fast = list(slow_times), list(fast_times)
    if cfg.mode is Mode.SLOW_ONLY:
        return not fast and _gaps_within(slow, cfg.miati_s, cfg.mati_s, rtol)
    if cfg.mode is Mode.FAST_ONLY:
        return not slow and _gaps_within(fast, cfg.miati_f, cfg.mati_f, rtol)
    if not _gaps_within(slow, cfg.miati_s, cfg.mati_s, rtol):
        return False
    if not _gaps_within(fast, cfg.miati_f, cfg.mati_f, rtol):
        return False
    merged = sorted(slow + fast)
    return _gaps_within(merged, cfg.miati_f, math.inf, rtol)


def write_schedule_csv(path, events: Iterable[ScheduledEvent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "kind", "kappa"])
        for e in events:
            w.writerow([repr(e.time), e.kind.value, e.kappa])
