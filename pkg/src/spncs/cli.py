"""Command-line front end.

    spncs mati | design | simulate | certify | reproduce-example | sweep

Every command prints a JSON report on stdout. With ``--out DIR`` the report
and any CSV/SVG artefacts are also written to DIR.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import jsonio
from .certify import (
    D_FORMULAS,
    NORM_MODES,
    DesignKnobs,
    design_certificate,
    interconnection_constants,
    lmi_max_eig,
    monitor_trajectory,
    perturbation_search,
    closed_form_example_bounds,
    trajectory_U,
)
from .errors import InfeasibleError, SchemaError, SpncsError
from .hybridsim import EVENT_FAST, EVENT_SLOW, HybridTrajectory, read_csv, simulate
from .ltimodel import ExampleParams
from .mati import mati_bound
from .scenario import Scenario, build_scenario, builtin_example, load_scenario
from .scheduler import Mode, PolicyKind, validate_sequence
from .svgplot import Chart, Series

REFERENCE_EXAMPLE = {
    "mati_s_bound": 0.3601,
    "mati_f_bound_fast_time": 1.11,
    "epsilon_star": 0.0162,
    "mati_f_at_epsilon_star": 0.018,
    "miati_f_at_epsilon_star": 0.009,
}


# ---------------------------------------------------------------- helpers

def _floats(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise SchemaError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _ints(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise SchemaError(f"expected a comma-separated list of integers, got {text!r}") from exc


def _scenario(args) -> Scenario:
    sc = load_scenario(args.scenario)
    overrides = {}
    if getattr(args, "epsilon", None):
        overrides["epsilon"] = _floats(args.epsilon)
    if getattr(args, "seed", None):
        overrides["seeds"] = _ints(args.seed)
    if getattr(args, "policy", None) and "," not in args.policy:
        overrides["policy"] = args.policy
    if getattr(args, "step", None) is not None:
        overrides["step"] = args.step
    if getattr(args, "t_end", None) is not None:
        overrides["t_end"] = args.t_end
    if overrides:
        raw = dict(sc.raw)
        raw["simulation"] = {**raw.get("simulation", {}), **overrides}
        sc = build_scenario(raw)
    return sc


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b) if b else math.inf


def _grid_label(eps, seed) -> str:
    return f"[epsilon={eps}, seed={seed}]"


def _tag(exc: SpncsError, label: str) -> SpncsError:
    exc.args = (f"{label} {exc}",) + exc.args[1:]
    return exc


# ---------------------------------------------------------------- commands

def cmd_mati(sc: Scenario) -> dict:
    dc = sc.require_design()
    mode = Mode(sc.clocks.get("mode", "dual"))
    report = {}
    if mode is not Mode.FAST_ONLY:
        report["mati_s_bound"] = mati_bound(dc.mati_params("s"))
    if mode is not Mode.SLOW_ONLY:
        T_f = mati_bound(dc.mati_params("f"))
        report["mati_f_bound_fast_time"] = T_f
        report["per_epsilon"] = [
            {"epsilon": e, "mati_f_physical": e * T_f, "miati_f_max": 0.5 * e * T_f}
            for e in sc.simulation["epsilon"]
        ]
    return report


def _lmi_report(sc: Scenario) -> dict:
    dc = sc.require_design()
    cl = sc.closed_loop
    out = {}
    for side in ("slow", "fast"):
        eig = lmi_max_eig(cl, dc, side)
        entry = {"max_eig": eig, "feasible": eig <= 0.0}
        if eig > 0.0:
            r = perturbation_search(cl, dc, side, seed=sc.search_seed)
            entry["perturbation"] = {
                "found": r.found, "max_eig": r.max_eig, "P": r.P, "gamma": r.gamma,
                "a_rho": r.a_rho, "evaluations": r.evaluations, "relative_box": 0.02,
            }
            if not r.found:
                raise InfeasibleError(
                    f"{side} LMI infeasible: largest eigenvalue {eig:.6g}; best within +-2% is {r.max_eig:.6g}"
                )
        out[side] = entry
    return out


def cmd_design(sc: Scenario) -> dict:
    dc = sc.require_design()
    lmi = _lmi_report(sc)
    c = sc.clocks
    cert = design_certificate(sc.closed_loop, dc, c["miati_s"], c.get("mati_s"), sc.knobs)
    T_f = cert.mati_f_bound_fast_time
    return {
        "lmi": lmi,
        "certificate": cert.to_dict(),
        "fast_timing_at_epsilon_star": {
            "mati_f": cert.epsilon_star * T_f,
            "miati_f_max": 0.5 * cert.epsilon_star * T_f,
        },
    }


def _run_one(sc: Scenario, eps: float, seed: int, x0, policy_name: str | None = None) -> HybridTrajectory:
    sim = sc.simulation
    try:
        cfg = sc.clock_config(eps)
        return simulate(
            sc.closed_loop, cfg, x0, sc.policy(seed, policy_name), sc.proto_s, sc.proto_f, sim["t_end"], sim["step"]
        )
    except SpncsError as exc:
        raise _tag(exc, _grid_label(eps, seed)) from None


def _summary(traj: HybridTrajectory, eps: float, seed: int, policy: str) -> dict:
    norms = np.linalg.norm(traj.X, axis=1)
    n0, n1 = float(norms[0]), float(norms[-1])
    return {
        "epsilon": eps,
        "seed": seed,
        "policy": policy,
        "initial_norm": n0,
        "terminal_norm": n1,
        "terminal_ratio": n1 / n0 if n0 > 0 else 0.0,
        "max_norm": float(norms.max()),
        "diverged": bool(not math.isfinite(n1) or n1 > max(1.0, n0) * 1e3),
        "samples": len(traj),
        "slow_jumps": int(np.sum(traj.event == EVENT_SLOW)),
        "fast_jumps": int(np.sum(traj.event == EVENT_FAST)),
        "schedule_valid": validate_sequence(traj.cfg, list(traj.slow_times), list(traj.fast_times)),
    }


def cmd_simulate(sc: Scenario, out: Path | None = None) -> dict:
    runs = []
    policy = sc.simulation["policy"]
    for eps in sc.simulation["epsilon"]:
        for seed, x0 in sc.initial_states():
            traj = _run_one(sc, eps, seed, x0)
            runs.append(_summary(traj, eps, seed, policy))
            if out is not None:
                traj.write_csv(out / f"trajectory_eps{eps:g}_seed{seed}.csv")
    return {"runs": runs, "all_schedules_valid": all(r["schedule_valid"] for r in runs)}


def _plots(traj, U, report, cert, out: Path, stem: str) -> list[str]:
    jumps = [(float(t), "#d62728" if e == EVENT_SLOW else "#999999")
             for t, e in zip(traj.t, traj.event) if e in (EVENT_SLOW, EVENT_FAST)]
    u = Chart(f"Composite U ({stem})", "t [s]", "U", log_y=True,
              series=[Series("U(t, j)", traj.t, U)], markers=jumps)
    norms = np.linalg.norm(traj.X, axis=1)
    counter = {"all": traj.j, "slow": traj.kappa_s - traj.kappa_s[0], "none": np.zeros_like(traj.j)}
    env = cert.c1 * norms[0] * np.exp(-cert.c2 * (traj.t + counter[report.envelope_counter]))
    e = Chart(f"State norm and envelope ({stem})", "t [s]", "|xi|", log_y=True,
              series=[Series("|xi(t, j)|", traj.t, norms),
                      Series(f"c1 |xi0| exp(-c2 (t + j)), j={report.envelope_counter}", traj.t, env, dashed=True)])
    names = [f"U_{stem}.svg", f"envelope_{stem}.svg"]
    (out / names[0]).write_text(u.render())
    (out / names[1]).write_text(e.render())
    return names


def cmd_certify(
    sc: Scenario,
    trajectory: str | None = None,
    out: Path | None = None,
    envelope_counter: str = "all",
    max_listed: int = 20,
) -> dict:
    dc = sc.require_design()
    c = sc.clocks
    cert = design_certificate(sc.closed_loop, dc, c["miati_s"], c.get("mati_s"), sc.knobs)
    if trajectory is not None:
        eps = sc.simulation["epsilon"][0]
        trajs = [(eps, None, read_csv(trajectory, sc.closed_loop.dims, sc.clock_config(eps)))]
    else:
        trajs = [(eps, seed, _run_one(sc, eps, seed, x0))
                 for eps in sc.simulation["epsilon"] for seed, x0 in sc.initial_states()]
    runs = []
    for eps, seed, traj in trajs:
        rep = monitor_trajectory(traj, sc.closed_loop, dc, cert, envelope_counter)
        entry = {"epsilon": eps, "seed": seed, **rep.summary()}
        listed = {
            "fast": rep.fast_violations[:max_listed],
            "slow": rep.slow_violations[:max_listed],
            "envelope": rep.envelope_violations[:max_listed],
        }
        entry["violations"] = {k: [{"t": v.t, "j": v.j} for v in vs] for k, vs in listed.items()}
        if len(traj) and out is not None:
            stem = f"eps{eps:g}_seed{seed}" if seed is not None else "input"
            entry["plots"] = _plots(traj, trajectory_U(traj, sc.closed_loop, dc, cert), rep, cert, out, stem)
        runs.append(entry)
    return {
        "epsilon_star": cert.epsilon_star,
        "a_d": cert.a_d,
        "c1": cert.c1,
        "c2": cert.c2,
        "envelope_counter": envelope_counter,
        "runs": runs,
        "passed": all(r["passed"] for r in runs),
    }


def cmd_reproduce_example() -> dict:
    sc = build_scenario(builtin_example())
    dc = sc.require_design()
    cl = sc.closed_loop
    c = sc.clocks
    cert = design_certificate(cl, dc, c["miati_s"], c["mati_s"], sc.knobs)
    closed = closed_form_example_bounds(ExampleParams(), dc)
    generic_b1 = interconnection_constants(cl, dc, "entrywise").b1
    eps = cert.epsilon_star
    rows = [
        ("T(L_s, gamma_s, lambda_s*) [s]", REFERENCE_EXAMPLE["mati_s_bound"], cert.mati_s_bound),
        ("T(L_f, gamma_f, lambda_f*) [fast time]", REFERENCE_EXAMPLE["mati_f_bound_fast_time"], cert.mati_f_bound_fast_time),
        ("epsilon*", REFERENCE_EXAMPLE["epsilon_star"], eps),
        ("mati_f at epsilon* [s]", REFERENCE_EXAMPLE["mati_f_at_epsilon_star"], eps * cert.mati_f_bound_fast_time),
        ("miati_f bound at epsilon* [s]", REFERENCE_EXAMPLE["miati_f_at_epsilon_star"],
         0.5 * eps * cert.mati_f_bound_fast_time),
        ("lambda1 (closed form vs generic)", closed.lambda1, cert.lambda1),
        ("lambda2 (closed form vs generic)", closed.lambda2, cert.lambda2),
        ("b1 (closed-form Lambda_b1 vs generic entrywise)", closed.b1, generic_b1),
    ]
    table = [{"quantity": q, "reference": ref, "computed": val, "relative_deviation": _rel(val, ref)}
             for q, ref, val in rows]
    lmi = {side: lmi_max_eig(cl, dc, side) for side in ("slow", "fast")}
    search = perturbation_search(cl, dc, "fast", seed=sc.search_seed)
    attribution = []
    for mode in NORM_MODES:
        for formula in D_FORMULAS:
            k = DesignKnobs(norm_mode=mode, d_formula=formula)
            alt = design_certificate(cl, dc, c["miati_s"], c["mati_s"], k)
            attribution.append({"norm_mode": mode, "d_formula": formula, "b1": alt.b1, "b2": alt.b2, "b3": alt.b3,
                                "d": alt.d_star, "epsilon_star": alt.epsilon_star,
                                "relative_deviation": _rel(alt.epsilon_star, REFERENCE_EXAMPLE["epsilon_star"])})
    return {
        "table": table,
        "lmi": {
            "slow_max_eig": lmi["slow"],
            "fast_max_eig": lmi["fast"],
            "fast_perturbation": {"found": search.found, "max_eig": search.max_eig,
                                  "gamma_f": search.gamma, "a_rho_f": search.a_rho},
        },
        "epsilon_star_attribution": attribution,
        "certificate": cert.to_dict(),
    }


def _sweep_job(job: tuple) -> dict:
    raw, eps, seed, state, policy = job
    sc = build_scenario(raw)
    from .hybridsim import HybridState
    from .scheduler import ClockState

    x0 = HybridState.from_packed(np.array(state), sc.closed_loop.dims, ClockState())
    traj = _run_one(sc, eps, seed, x0, policy)
    return _summary(traj, eps, seed, policy)


def sweep_workers(jobs: int) -> int:
    env = os.environ.get("SPNCS_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError as exc:
            raise SchemaError(f"SPNCS_THREADS must be an integer, got {env!r}") from exc
    return max(1, min(cap, jobs))


def cmd_sweep(sc: Scenario, policies: list[str] | None = None) -> dict:
    policies = policies or [sc.simulation["policy"]]
    for p in policies:
        PolicyKind(p)
    jobs = [(sc.raw, eps, seed, x0.packed().tolist(), p)
            for eps in sc.simulation["epsilon"] for p in policies for seed, x0 in sc.initial_states()]
    workers = sweep_workers(len(jobs))
    if workers == 1:
        runs = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_sweep_job, jobs))
    return {"workers": workers, "runs": runs}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spncs", description="Two-time-scale networked control: design and simulation.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sim=True):
        sp.add_argument("--scenario", default=None, help="scenario JSON (default: builtin example)")
        sp.add_argument("--out", default=None, help="directory for report and artefacts")
        if sim:
            sp.add_argument("--epsilon", default=None, help="comma-separated epsilon values")
            sp.add_argument("--seed", default=None, help="comma-separated seeds")
            sp.add_argument("--policy", default=None, help="earliest, latest or random (sweep: comma list)")
            sp.add_argument("--step", type=float, default=None, help="RK4 step [s]")
            sp.add_argument("--t-end", type=float, default=None, help="simulation horizon [s]")

    common(sub.add_parser("mati", help="MATI bounds"))
    common(sub.add_parser("design", help="stability certificate"), sim=False)
    common(sub.add_parser("simulate", help="simulate the closed loop"))
    cp = sub.add_parser("certify", help="check trajectories against the certificate")
    common(cp)
    cp.add_argument("--trajectory", default=None, help="trajectory CSV to check instead of simulating")
    cp.add_argument("--envelope-counter", choices=("all", "slow", "none"), default="all",
                    help="jump count used in the decay envelope")
    rp = sub.add_parser("reproduce-example", help="worked example: reference vs computed")
    rp.add_argument("--out", default=None)
    common(sub.add_parser("sweep", help="parallel grid of simulations"))
    return p


def run(argv: list[str] | None = None) -> dict:
    args = build_parser().parse_args(argv)
    out = Path(args.out) if getattr(args, "out", None) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if args.command == "reproduce-example":
        report = cmd_reproduce_example()
    else:
        sc = _scenario(args)
        if args.command == "mati":
            report = cmd_mati(sc)
        elif args.command == "design":
            report = cmd_design(sc)
        elif args.command == "simulate":
            report = cmd_simulate(sc, out)
        elif args.command == "certify":
            report = cmd_certify(sc, args.trajectory, out, args.envelope_counter)
        else:
            policies = args.policy.split(",") if args.policy else None
            report = cmd_sweep(sc, policies)
    if out is not None:
        jsonio.write_json(out / f"{args.command}.json", report)
    return report


def main(argv: list[str] | None = None) -> int:
    try:
        report = run(argv)
    except SpncsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    sys.stdout.write(jsonio.dumps(report))
    return 0


if __name__ == "__main__":
    sys.exit(main())
