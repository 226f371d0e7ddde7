import math

import numpy as np
import pytest

from spncs.errors import DimensionError, JumpSetError, SimulationError, StiffnessError
from spncs.hybridsim import (
    EVENT_FAST,
    EVENT_FLOW,
    EVENT_SLOW,
    HybridState,
    flow_map,
    from_y_coords,
    jump_fast,
    jump_slow,
    lti_matrix_field,
    lti_vector_field,
    protocol_jump_maps,
    read_csv,
    simulate,
    simulate_generic,
    slow_jump_y,
    stiffness_limit,
    to_y_coords,
)
from spncs.protocols import NodePartition, ProtocolKind, ProtocolSpec
from spncs.scheduler import ClockConfig, ClockState, JumpPolicy, PolicyKind, TieBreak

MIATI_S, MATI_S = 0.3241, 0.3601


def config(eps=0.01):
    return ClockConfig(MIATI_S, MATI_S, 0.275 * eps, 1.1 * eps, eps)


def random_state(rng, dims, clocks=ClockState()):
    return HybridState.from_packed(rng.normal(size=sum(dims)), dims, clocks)


def run(cl, dc, x0, eps=0.01, t_end=1.0, h=None, policy=None):
    h = 1.1 * eps / 4 if h is None else h
    return simulate(cl, config(eps), x0, policy or JumpPolicy(PolicyKind.LATEST), dc.protocol_s, dc.protocol_f, t_end, h)


# ---------------------------------------------------------------- flow

def test_flow_map_matches_stacked_matrix(cl, rng):
    for eps in (1.0, 0.1, 0.01):
        s = random_state(rng, cl.dims)
        d = flow_map(cl, s, eps)
        v = s.packed()
        ref = cl.flow_matrix(eps) @ v
        assert np.allclose(d.packed(), ref, rtol=1e-12, atol=1e-12)
        assert np.allclose(lti_vector_field(cl, eps)(v, eps), lti_matrix_field(cl, eps)(v, eps), rtol=1e-12, atol=1e-12)
        assert (d.tau_s, d.tau_f, d.kappa_s, d.kappa_f) == (1.0, 1.0 / eps, 0, 0)


def test_flow_map_origin_and_linearity(cl, rng):
    assert np.all(flow_map(cl, HybridState.zeros(cl.dims), 0.1).packed() == 0)
    a, b = random_state(rng, cl.dims), random_state(rng, cl.dims)
    comb = HybridState.from_packed(2 * a.packed() - 3 * b.packed(), cl.dims, ClockState())
    lhs = flow_map(cl, comb, 0.1).packed()
    rhs = 2 * flow_map(cl, a, 0.1).packed() - 3 * flow_map(cl, b, 0.1).packed()
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_flow_map_dimension_check(cl):
    with pytest.raises(DimensionError):
        flow_map(cl, HybridState.zeros((1, 1, 1, 1)), 0.1)


# ---------------------------------------------------------------- jumps

def test_jump_maps_touch_only_their_side(dc, rng):
    cfg = config()
    s = HybridState(rng.normal(size=2), [3.0], MIATI_S, 4, rng.normal(size=2), [-2.0], 0.5, 7)
    after = jump_slow(s, dc.protocol_s, cfg)
    assert after.e_s.tolist() == [0.0] and after.tau_s == 0.0 and after.kappa_s == 5
    for name in ("x", "z", "e_f"):
        assert getattr(after, name).tobytes() == getattr(s, name).tobytes()
    assert (after.tau_f, after.kappa_f) == (s.tau_f, s.kappa_f)

    s = HybridState(rng.normal(size=2), [3.0], 0.1, 4, rng.normal(size=2), [-2.0], 0.3, 7)
    after = jump_fast(s, dc.protocol_f, cfg)
    assert after.e_f.tolist() == [0.0] and after.tau_f == 0.0 and after.kappa_f == 8
    for name in ("x", "z", "e_s"):
        assert getattr(after, name).tobytes() == getattr(s, name).tobytes()


def test_jump_outside_jump_set(dc):
    cfg = config()
    s = HybridState([0, 0], [1.0], 0.01, 0, [0, 0], [1.0], 0.01, 0)
    with pytest.raises(JumpSetError):
        jump_slow(s, dc.protocol_s, cfg)
    with pytest.raises(JumpSetError):
        jump_fast(s, dc.protocol_f, cfg)


def test_packed_jump_maps_agree_with_state_maps(cl, rng):
    tod = ProtocolSpec(ProtocolKind.TOD, NodePartition.scalar_nodes(1))
    slow, fast = protocol_jump_maps(cl.dims, tod, tod)
    s = random_state(rng, cl.dims)
    assert np.array_equal(slow(s.packed(), 0), jump_slow(s, tod).packed())
    assert np.array_equal(fast(s.packed(), 0), jump_fast(s, tod).packed())


# ---------------------------------------------------------------- coordinates

def test_y_coordinates_round_trip(cl, rng):
    for _ in range(20):
        s = random_state(rng, cl.dims)
        back = from_y_coords(cl, to_y_coords(cl, s))
        assert np.max(np.abs(back.packed() - s.packed())) < 1e-12


def test_slow_jump_commutes_with_coordinate_change(cl, dc, rng):
    for kappa in range(3):
        s = random_state(rng, cl.dims, ClockState(0.0, 0.0, kappa, 0))
        y = to_y_coords(cl, s).z
        direct = to_y_coords(cl, jump_slow(s, dc.protocol_s)).z
        assert np.allclose(slow_jump_y(cl, dc.protocol_s, kappa, s.x, s.e_s, y), direct, atol=1e-12)


# ---------------------------------------------------------------- integration

def test_rk4_fourth_order(cl, dc, rng):
    x0 = random_state(rng, cl.dims)
    finals = [run(cl, dc, x0, eps=0.1, t_end=1.0, h=h).X[-1] for h in (0.01, 0.005, 0.0025)]
    ratio = np.linalg.norm(finals[0] - finals[1]) / np.linalg.norm(finals[1] - finals[2])
    assert 12 <= ratio <= 20


def test_latest_policy_gaps(cl, dc, rng):
    tr = run(cl, dc, random_state(rng, cl.dims), t_end=3.0)
    cfg = tr.cfg
    fast = np.diff(tr.fast_times)
    slow = np.diff(tr.slow_times)
    assert np.all(fast <= cfg.mati_f * (1 + 1e-9)) and np.all(fast >= cfg.miati_f * (1 - 1e-9))
    assert np.all(slow <= cfg.mati_s * (1 + 1e-9)) and np.all(slow >= cfg.mati_s - cfg.mati_f - 1e-9)
    assert tr.slow_times[0] == pytest.approx(cfg.mati_s, abs=1e-12)


def test_hybrid_time_bookkeeping(cl, dc, rng):
    tr = run(cl, dc, random_state(rng, cl.dims), t_end=1.0)
    jumps = tr.event != EVENT_FLOW
    assert tr.j[-1] == np.count_nonzero(jumps)
    assert np.all(np.diff(tr.t) >= 0)
    assert np.all(tr.tau_s[tr.event == EVENT_SLOW] == 0) and np.all(tr.tau_f[tr.event == EVENT_FAST] == 0)


def test_tiebreak_changes_order_only_at_ties(cl, dc, rng):
    x0 = random_state(rng, cl.dims)
    a = run(cl, dc, x0, policy=JumpPolicy(PolicyKind.EARLIEST, TieBreak.SLOW_FIRST))
    b = run(cl, dc, x0, policy=JumpPolicy(PolicyKind.EARLIEST, TieBreak.FAST_FIRST))
    assert np.all(np.diff(a.t) >= 0) and np.all(np.diff(b.t) >= 0)
    assert len(a.slow_times) > 0 and len(b.slow_times) > 0


def test_generic_executor_matches_simulate(cl, dc, rng):
    x0 = random_state(rng, cl.dims)
    cfg = config()
    h = 1.1 * 0.01 / 4
    a = run(cl, dc, x0)
    b = simulate_generic(lti_matrix_field(cl, 0.01), protocol_jump_maps(cl.dims, dc.protocol_s, dc.protocol_f),
                         cfg, x0, JumpPolicy(PolicyKind.LATEST), 1.0, h)
    assert a.X.tobytes() == b.X.tobytes() and a.t.tobytes() == b.t.tobytes()


def test_zero_dynamics_keeps_state(rng):
    dims = (2, 1, 1, 1)
    ident = (lambda v, k: v, lambda v, k: v)
    x0 = random_state(rng, dims)
    tr = simulate_generic(lambda v, e: np.zeros_like(v), ident, config(0.1), x0, JumpPolicy(PolicyKind.LATEST), 2.0)
    assert np.all(tr.X == x0.packed())


def test_nonlinear_flow_against_exact_solution():
    dims = (1, 1, 1, 1)
    x0 = 1.5
    ident = (lambda v, k: v, lambda v, k: v)

    def cubic(v, eps):
        d = np.zeros_like(v)
        d[0] = -v[0] ** 3
        return d

    tr = simulate_generic(cubic, ident, config(0.1), HybridState([x0], [0], 0, 0, [0], [0], 0, 0),
                          JumpPolicy(PolicyKind.LATEST), 2.0, h=0.005)
    exact = x0 / np.sqrt(1 + 2 * x0 ** 2 * tr.t)
    assert np.max(np.abs(tr.X[:, 0] - exact)) < 1e-8


def test_blow_up_raises(rng):
    ident = (lambda v, k: v, lambda v, k: v)
    with pytest.raises(SimulationError), np.errstate(over="ignore", invalid="ignore"):
        simulate_generic(lambda v, e: v * v * 1e3, ident, config(0.1),
                         HybridState([1.0], [0], 0, 0, [0], [0], 0, 0), JumpPolicy(PolicyKind.LATEST), 5.0)


def test_stiffness_guard(cl, dc):
    limit = stiffness_limit(cl, 0.01)
    assert limit == pytest.approx(0.00659, abs=1e-5)
    with pytest.raises(StiffnessError):
        run(cl, dc, HybridState.zeros(cl.dims), h=1.01 * limit)


def test_random_policy_is_deterministic(cl, dc, rng):
    x0 = random_state(rng, cl.dims)
    a = run(cl, dc, x0, policy=JumpPolicy(PolicyKind.RANDOM, seed=3))
    b = run(cl, dc, x0, policy=JumpPolicy(PolicyKind.RANDOM, seed=3))
    c = run(cl, dc, x0, policy=JumpPolicy(PolicyKind.RANDOM, seed=4))
    assert a.X.tobytes() == b.X.tobytes()
    assert a.t.tobytes() != c.t.tobytes()


def test_csv_round_trip(cl, dc, rng, tmp_path):
    tr = run(cl, dc, random_state(rng, cl.dims), t_end=0.5)
    path = tmp_path / "traj.csv"
    tr.write_csv(path)
    back = read_csv(path, cl.dims, tr.cfg)
    for name in ("t", "j", "event", "X", "tau_s", "kappa_s", "tau_f", "kappa_f"):
        assert np.array_equal(getattr(back, name), getattr(tr, name)), name
    with pytest.raises(DimensionError):
        read_csv(path, (1, 1, 1, 1), tr.cfg)


def test_finalize_rejects_corrupted_trajectory(cl, dc, rng):
    tr = run(cl, dc, random_state(rng, cl.dims), t_end=0.5)
    i = int(np.nonzero(tr.event == EVENT_FAST)[0][2])
    tr.t[i] += 1e-3
    with pytest.raises(SimulationError):
        tr.finalize()
    tr = run(cl, dc, random_state(rng, cl.dims), t_end=0.5)
    tr.j[5:] += 1
    with pytest.raises(SimulationError):
        tr.finalize()
