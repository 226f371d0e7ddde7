"""Acceptance criteria 1-9. Each test records a PASS/FAIL line that is
repeated in the terminal summary."""

import math
import time

import numpy as np
import pytest

from spncs import numerics as nm
from spncs.certify import (
    design_certificate,
    interconnection_constants,
    lmi_max_eig,
    monitor_trajectory,
    perturbation_search,
    closed_form_example_bounds,
)
from spncs.cli import cmd_design
from spncs.hybridsim import HybridState, flow_map, simulate
from spncs.ltimodel import quasi_steady_state
from spncs.mati import MatiParams, PhiClock, mati_bound, phi_crossing_time, phi_eval, phi_rk4
from spncs.protocols import (
    NodePartition,
    ProtocolKind,
    ProtocolSpec,
    protocol_constants,
    protocol_jump,
    protocol_lyapunov,
)
from spncs.scenario import build_scenario, builtin_example, random_initial_state
from spncs.scheduler import (
    ClockConfig,
    ClockState,
    JumpPolicy,
    Mode,
    PolicyKind,
    TieBreak,
    generate_schedule,
    split_times,
    validate_sequence,
)
from test_ltimodel import random_closed_loop
from test_numerics import det_bisection_extremes, power_iteration_norm


# ---------------------------------------------------------------- 1

def test_criterion_1_mati_reproduction(verdict):
    t_s = mati_bound(MatiParams(0.0, 2.58, 0.33))
    t_f = mati_bound(MatiParams(0.0, 0.64, 0.46))
    ok = 0.3547 <= t_s <= 0.3655 and 1.093 <= t_f <= 1.127
    assert verdict("criterion 1 (MATI)", ok, f"T_s={t_s:.5f} in [0.3547, 0.3655], T_f={t_f:.5f} in [1.093, 1.127]")


# ---------------------------------------------------------------- 2

def _branch_triples(rng, n=50):
    out = []
    for i in range(n):
        lam = rng.uniform(0.05, 0.95)
        g = rng.uniform(0.1, 4.0)
        kind = i % 3
        if kind == 0:
            L = g * rng.uniform(0.0, 0.9)
        elif kind == 1:
            L = g * rng.uniform(1.1, 4.0)
        else:
            L = g
        out.append(MatiParams(L, g, lam))
    return out


ROUNDOFF_FLOOR = 1e-11


def _rk4_error(clock, T, steps):
    """Largest RK4 error over eight equally spaced checkpoints (same step size)."""
    return max(abs(phi_rk4(clock, T * k / 8, steps * k // 8) - phi_eval(clock, T * k / 8)) for k in range(1, 9))


def _halving_ratio(clock, T):
    """Halve the step until two successive error ratios agree to 5%.

    Returns (ratio, errors); ratio is None when the error reaches the
    roundoff floor before the ratio settles.
    """
    errors = [_rk4_error(clock, T, 8), _rk4_error(clock, T, 16)]
    while True:
        errors.append(_rk4_error(clock, T, 8 * 2 ** len(errors)))
        if errors[-1] < ROUNDOFF_FLOOR:
            return None, errors
        r1, r2 = errors[-3] / errors[-2], errors[-2] / errors[-1]
        if abs(r1 - r2) <= 0.05 * r2 or len(errors) > 12:
            return r2, errors


def test_criterion_2_phi_consistency(verdict, rng):
    start = time.perf_counter()
    worst_rel, ratios, at_roundoff = 0.0, [], 0
    params = _branch_triples(rng)
    for p in params:
        clock = PhiClock(p)
        T = mati_bound(p)
        worst_rel = max(worst_rel, abs(phi_crossing_time(clock) - T) / T)
        ratio, _ = _halving_ratio(clock, T)
        if ratio is None:
            at_roundoff += 1
        else:
            ratios.append(ratio)
    elapsed = time.perf_counter() - start
    branches = sorted({p.branch for p in params})
    ok = worst_rel <= 1e-8 and 12 <= min(ratios) and max(ratios) <= 20 and elapsed < 1.0
    assert verdict("criterion 2 (phi/T)", ok,
                   f"branches={branches}, max rel |crossing - T|={worst_rel:.2e}, "
                   f"RK4 halving ratios in [{min(ratios):.2f}, {max(ratios):.2f}] for {len(ratios)} triples, "
                   f"{at_roundoff} reach agreement below {ROUNDOFF_FLOOR:g} before the ratio settles, {elapsed:.2f}s")


# ---------------------------------------------------------------- 3

def test_criterion_3_lmi(verdict, cl, dc):
    slow = lmi_max_eig(cl, dc, "slow")
    search = perturbation_search(cl, dc, "fast", rel=0.02)
    ok = slow <= 0.05 and search.found and search.max_eig <= 0
    assert verdict("criterion 3 (LMI)", ok,
                   f"slow lambda_max={slow:.5f} <= 0.05; fast perturbation found={search.found} "
                   f"lambda_max={search.max_eig:.5f} (gamma_f={search.gamma:.4f}, a_rho_f={search.a_rho:.4f}, "
                   f"{search.evaluations} evaluations)")


# ---------------------------------------------------------------- 4

def test_criterion_4_epsilon_star(verdict):
    rep = cmd_design(build_scenario(builtin_example()))
    c = rep["certificate"]
    eps = c["epsilon_star"]
    rel = abs(eps - 0.0162) / 0.0162
    recorded = all(k in c for k in ("d_star", "a_d", "mu", "lambda_decay", "b1", "b2", "b3", "lambda1", "lambda2",
                                    "a_s", "a_f", "a_psi_s", "a_psi_f"))
    ok = rel <= 0.15 and recorded
    assert verdict("criterion 4 (epsilon*)", ok,
                   f"epsilon*={eps:.6f} vs 0.0162 (rel {rel:.3%}), d={c['d_star']:.4g}, b1={c['b1']:.4g}, "
                   f"b2={c['b2']:.4g}, b3={c['b3']:.4g}")


# ---------------------------------------------------------------- 5

SEEDS = range(100)


@pytest.fixture(scope="module")
def property_runs(cl, dc):
    sc = build_scenario(builtin_example())
    cfg = sc.clock_config(0.01)
    cert = design_certificate(cl, dc, cfg.miati_s, cfg.mati_s)
    h = cfg.mati_f / 4
    start = time.perf_counter()
    runs = []
    for seed in SEEDS:
        x0 = HybridState.from_packed(random_initial_state(seed, sum(cl.dims), 10.0), cl.dims, ClockState())
        traj = simulate(cl, cfg, x0, JumpPolicy(PolicyKind.LATEST), sc.proto_s, sc.proto_f, 20.0, h)
        runs.append({
            "seed": seed,
            "norm0": float(np.linalg.norm(x0.packed())),
            "valid": validate_sequence(cfg, list(traj.slow_times), list(traj.fast_times)),
            "all": monitor_trajectory(traj, cl, dc, cert, "all"),
            "slow": monitor_trajectory(traj, cl, dc, cert, "slow"),
        })
    return {"runs": runs, "cert": cert, "elapsed": time.perf_counter() - start}


def test_criterion_5a_fast_jumps_decrease_U(verdict, property_runs):
    runs = property_runs["runs"]
    bad = sum(len(r["all"].fast_violations) for r in runs)
    jumps = sum(sum(c.kind == "fast" for c in r["all"].jump_checks) for r in runs)
    ok = bad == 0 and property_runs["elapsed"] < 60
    assert verdict("criterion 5a (U at fast jumps)", ok,
                   f"{bad} violations over {jumps} fast jumps, {len(runs)} runs in {property_runs['elapsed']:.1f}s")


def test_criterion_5b_slow_jumps_within_a_d(verdict, property_runs):
    runs = property_runs["runs"]
    bad = sum(len(r["all"].slow_violations) for r in runs)
    jumps = sum(sum(c.kind == "slow" for c in r["all"].jump_checks) for r in runs)
    assert verdict("criterion 5b (U at slow jumps)", bad == 0,
                   f"{bad} violations of U+ <= a_d U (a_d={property_runs['cert'].a_d:.4f}) over {jumps} slow jumps")


def test_criterion_5c_decay_envelope(verdict, property_runs):
    """Envelope c1 |xi0| exp(-c2 (t + j)) with j counting every jump.

    Expected to fail: with about 1800 fast transmissions in 20 s the factor
    exp(-c2 j) drops below exp(-60), far under any state the slow mode can
    reach. The same trajectories satisfy the envelope when j counts slow
    transmissions only; both figures are reported.
    """
    runs = property_runs["runs"]
    cert = property_runs["cert"]
    bad = sum(len(r["all"].envelope_violations) for r in runs)
    failing_runs = sum(bool(r["all"].envelope_violations) for r in runs)
    worst_all = max(r["all"].diagnostics["worst_envelope_ratio"] for r in runs)
    bad_slow = sum(len(r["slow"].envelope_violations) for r in runs)
    worst_slow = max(r["slow"].diagnostics["worst_envelope_ratio"] for r in runs)
    detail = (f"j=all jumps: {bad} sample violations in {failing_runs}/{len(runs)} runs, worst |xi|/envelope="
              f"{worst_all:.3g} (c1={cert.c1:.4g}, c2={cert.c2:.4g}); "
              f"j=slow jumps only: {bad_slow} violations, worst ratio={worst_slow:.3g}")
    assert verdict("criterion 5c (decay envelope)", bad == 0, detail)


def test_criterion_5d_schedules_valid(verdict, property_runs):
    runs = property_runs["runs"]
    bad = [r["seed"] for r in runs if not r["valid"]]
    assert verdict("criterion 5d (schedules)", not bad, f"{len(runs) - len(bad)}/{len(runs)} schedules valid")


# ---------------------------------------------------------------- 6

def test_criterion_6_protocol_contraction(verdict, rng):
    start = time.perf_counter()
    failures = 0
    kinds = list(ProtocolKind)
    for _ in range(10_000):
        kind = kinds[int(rng.integers(0, 3))]
        nodes = int(rng.integers(1, 5))
        part = NodePartition.single(nodes) if kind is ProtocolKind.RESET_ALL else NodePartition.scalar_nodes(nodes)
        p = ProtocolSpec(kind, part)
        c = protocol_constants(p)
        kappa = int(rng.integers(0, 100))
        e = rng.normal(size=nodes) * 10.0 ** rng.uniform(-3, 3)
        w = protocol_lyapunov(p, kappa, e)
        w_next = protocol_lyapunov(p, kappa + 1, protocol_jump(p, kappa, e))
        n = np.linalg.norm(e)
        tol = 1e-12 * max(w, 1e-300)
        if w_next > c.lam * w + tol or c.a_W_lower * n > w + tol or w > c.a_W_upper * n + tol:
            failures += 1
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 5
    assert verdict("criterion 6 (protocols)", ok, f"{failures} failures in 10000 draws, {elapsed:.2f}s")


# ---------------------------------------------------------------- 7

def _qss_residual(loop, rng, n=1000):
    n_x, n_es, _, _ = loop.dims
    x, e = rng.normal(size=(n, n_x)), rng.normal(size=(n, n_es))
    h = quasi_steady_state(loop, x, e)
    return float(np.max(np.abs(x @ loop.A31.T + e @ loop.A32.T + h @ loop.A33.T)))


def test_criterion_7_quasi_steady_state(verdict, cl, rng):
    worst = _qss_residual(cl, rng)
    made = 0
    while made < 10:
        loop = random_closed_loop(rng)
        if np.linalg.cond(loop.A33) > 1e3:
            continue
        worst = max(worst, _qss_residual(loop, rng))
        made += 1
    assert verdict("criterion 7 (quasi-steady state)", worst <= 1e-10,
                   f"max |g_z(x, H(x, e_s), e_s, 0)|={worst:.2e} over fixture + 10 synthetic loops")


# ---------------------------------------------------------------- 8

def test_criterion_8_oracle_equivalences(verdict, cl, dc, params, rng):
    norm_err = 0.0
    for _ in range(20):
        a = rng.normal(size=tuple(rng.integers(1, 6, size=2)))
        ref, _ = power_iteration_norm(a)
        norm_err = max(norm_err, abs(nm.spectral_norm(a) - ref) / max(ref, 1e-300))
    eig_err = 0.0
    for _ in range(10):
        b = rng.normal(size=(4, 4))
        s = b + b.T
        lo, hi = nm.sym_eig_extremes(s)
        rlo, rhi = det_bisection_extremes(s)
        eig_err = max(eig_err, abs(lo - rlo), abs(hi - rhi))
    flow_err = 0.0
    for eps in (1.0, 0.1, 0.01):
        st = HybridState.from_packed(rng.normal(size=sum(cl.dims)), cl.dims, ClockState())
        ref = cl.flow_matrix(eps) @ st.packed()
        flow_err = max(flow_err, float(np.max(np.abs(flow_map(cl, st, eps).packed() - ref) / np.maximum(1, np.abs(ref)))))
    closed = closed_form_example_bounds(params, dc).b1
    generic = interconnection_constants(cl, dc, "entrywise").b1
    b1_rel = abs(generic - closed) / closed
    ok = norm_err <= 1e-8 and eig_err <= 1e-8 and flow_err <= 1e-12 and b1_rel <= 0.05
    assert verdict("criterion 8 (oracles)", ok,
                   f"spectral norm {norm_err:.1e}, eig extremes {eig_err:.1e}, flow {flow_err:.1e}, "
                   f"Lambda_b1 norm closed-form={closed:.4f} generic={generic:.4f} (rel {b1_rel:.2%})")


# ---------------------------------------------------------------- 9

def test_criterion_9_scheduler(verdict):
    eps = 0.01
    configs = {
        Mode.DUAL: ClockConfig(0.324, 0.36, 0.006, 0.018, eps),
        Mode.SLOW_ONLY: ClockConfig(0.324, 0.36, 1.0, 1.0, eps, Mode.SLOW_ONLY),
        Mode.FAST_ONLY: ClockConfig(1.0, 1.0, 0.006, 0.018, eps, Mode.FAST_ONLY),
        "degenerate": ClockConfig(0.324, 0.36, 0.009, 0.018, eps),
    }
    policies = [JumpPolicy(PolicyKind.EARLIEST), JumpPolicy(PolicyKind.LATEST),
                JumpPolicy(PolicyKind.RANDOM, seed=7), JumpPolicy(PolicyKind.LATEST, TieBreak.FAST_FIRST)]
    start = time.perf_counter()
    failed = []
    for name, cfg in configs.items():
        for p in policies:
            ev = generate_schedule(cfg, p, 500)
            if len(ev) != 500 or not validate_sequence(cfg, *split_times(ev)):
                failed.append((getattr(name, "value", name), p.kind.value))
    elapsed = time.perf_counter() - start
    ok = not failed and elapsed < 1.0
    assert verdict("criterion 9 (scheduler)", ok,
                   f"{len(configs) * len(policies) - len(failed)}/{len(configs) * len(policies)} "
                   f"policy x mode schedules valid, {elapsed:.2f}s")
