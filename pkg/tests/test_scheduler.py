import csv

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spncs.errors import ConstraintError, InfeasibleError
from spncs.scheduler import (
    ClockConfig,
    ClockState,
    EventKind,
    JumpPolicy,
    Mode,
    PolicyKind,
    SplitMix64,
    TieBreak,
    after_jump,
    classify,
    generate_schedule,
    next_event,
    split_times,
    validate_sequence,
    write_schedule_csv,
)

EPS = 0.01
CFG = ClockConfig(0.324, 0.36, 0.006, 0.018, EPS)


def at(ts, sf):
    return ClockState(ts, sf / EPS)


def test_classify_examples():
    assert tuple(classify(CFG, at(0.33, 0.008))) == (True, True, True)
    assert tuple(classify(CFG, at(0.10, 0.003))) == (True, False, False)
    assert tuple(classify(CFG, at(0.002, 0.017))) == (False, False, False)


def test_boundaries_inclusive():
    c = classify(CFG, at(0.324, 0.006))
    assert c.slow_jump_allowed
    c = classify(CFG, at(0.36, 0.012))
    assert c.slow_jump_allowed


def test_single_clock_modes():
    slow = ClockConfig(0.2, 0.4, 1.0, 1.0, EPS, Mode.SLOW_ONLY)
    assert next_event(slow, ClockState(), JumpPolicy(PolicyKind.LATEST)) == (pytest.approx(0.4), EventKind.SLOW)
    fast = ClockConfig(1.0, 1.0, 0.01, 0.05, EPS, Mode.FAST_ONLY)
    assert next_event(fast, ClockState(), JumpPolicy(PolicyKind.EARLIEST)) == (pytest.approx(0.01), EventKind.FAST)


def test_config_validation():
    with pytest.raises(ConstraintError):
        ClockConfig(0.4, 0.3, 0.006, 0.018, EPS)
    with pytest.raises(ConstraintError):
        ClockConfig(0.3, 0.4, 0.01, 0.018, EPS)  # miati_f above mati_f / 2
    with pytest.raises(ConstraintError):
        ClockConfig(0.3, 0.305, 0.006, 0.018, EPS)  # slow window narrower than miati_f
    with pytest.raises(ConstraintError):
        ClockConfig(0.3, 0.4, 0.006, 0.018, 0.0)


def test_policy_seed_rules():
    with pytest.raises(Exception):
        JumpPolicy(PolicyKind.RANDOM)
    with pytest.raises(Exception):
        JumpPolicy(PolicyKind.LATEST, seed=3)


def test_splitmix64_reference_values():
    # published SplitMix64 outputs for seed 0
    g = SplitMix64(0)
    assert [g.next_u64() for _ in range(3)] == [
        0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F,
    ]


def test_validate_sequence_examples():
    slow = [0.36, 0.72]
    fast = [0.009 + 0.018 * k for k in range(40)]
    assert validate_sequence(CFG, slow, fast)
    assert not validate_sequence(CFG, [0.1, 0.15], [])
    assert not validate_sequence(CFG, [0.36], [0.361])
    assert not validate_sequence(CFG, [], [0.0, 0.03])  # fast gap above mati_f


def test_tiebreak_selects_branch():
    s = at(0.33, 0.008)
    for tb, kind in ((TieBreak.SLOW_FIRST, EventKind.SLOW), (TieBreak.FAST_FIRST, EventKind.FAST)):
        dt, k = next_event(CFG, s, JumpPolicy(PolicyKind.EARLIEST, tb))
        assert dt == 0.0 and k is kind


def test_closure_after_jump():
    s = ClockState()
    for pol in (PolicyKind.EARLIEST, PolicyKind.LATEST):
        s = ClockState()
        for _ in range(300):
            dt, kind = next_event(CFG, s, JumpPolicy(pol))
            s = ClockState(s.tau_s + dt, s.tau_f + dt / EPS, s.kappa_s, s.kappa_f)
            s = after_jump(s, kind)
            assert classify(CFG, s).in_flow


def test_initial_outside_flow_set():
    with pytest.raises(InfeasibleError):
        generate_schedule(CFG, JumpPolicy(PolicyKind.LATEST), 5, at(0.002, 0.017))


POLICIES = [JumpPolicy(PolicyKind.EARLIEST), JumpPolicy(PolicyKind.LATEST),
            JumpPolicy(PolicyKind.RANDOM, seed=11), JumpPolicy(PolicyKind.LATEST, TieBreak.FAST_FIRST)]
MODES = {
    Mode.DUAL: CFG,
    Mode.SLOW_ONLY: ClockConfig(0.324, 0.36, 1.0, 1.0, EPS, Mode.SLOW_ONLY),
    Mode.FAST_ONLY: ClockConfig(1.0, 1.0, 0.006, 0.018, EPS, Mode.FAST_ONLY),
}


@pytest.mark.parametrize("policy", POLICIES, ids=lambda p: f"{p.kind.value}-{p.tiebreak.value}")
@pytest.mark.parametrize("mode", list(MODES), ids=lambda m: m.value)
def test_schedules_are_valid(policy, mode):
    cfg = MODES[mode]
    ev = generate_schedule(cfg, policy, 500)
    slow, fast = split_times(ev)
    assert validate_sequence(cfg, slow, fast)
    if mode is Mode.SLOW_ONLY:
        assert not fast
    if mode is Mode.FAST_ONLY:
        assert not slow


def test_degenerate_fast_window():
    cfg = ClockConfig(0.324, 0.36, 0.009, 0.018, EPS)
    for policy in POLICIES:
        ev = generate_schedule(cfg, policy, 500)
        assert validate_sequence(cfg, *split_times(ev))


def test_random_schedule_reproducible():
    p = JumpPolicy(PolicyKind.RANDOM, seed=5)
    assert generate_schedule(CFG, p, 200) == generate_schedule(CFG, p, 200)


def test_schedule_csv(tmp_path):
    ev = generate_schedule(CFG, JumpPolicy(PolicyKind.LATEST), 10)
    path = tmp_path / "s.csv"
    write_schedule_csv(path, ev)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["time", "kind", "kappa"]
    assert len(rows) == 11


@st.composite
def dual_configs(draw):
    eps = draw(st.floats(1e-3, 0.2))
    mati_f = draw(st.floats(0.2, 2.0)) * eps
    miati_f = draw(st.floats(0.01, 0.5)) * mati_f
    miati_s = draw(st.floats(1.0, 50.0)) * miati_f
    mati_s = miati_s + miati_f * draw(st.floats(1.0, 20.0))
    return ClockConfig(miati_s, mati_s, miati_f, mati_f, eps)


@settings(max_examples=60, deadline=None)
@given(dual_configs(), st.sampled_from(POLICIES))
def test_random_configs_sound(cfg, policy):
    ev = generate_schedule(cfg, policy, 200)
    assert validate_sequence(cfg, *split_times(ev))
