"""Scenario files: JSON schema, validation and conversion to model objects."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .certify import DesignConstants, DesignKnobs
from .errors import SchemaError
from .hybridsim import HybridState
from .ltimodel import ClosedLoop, ControllerMatrices, PlantMatrices, assemble_closed_loop, example_fixture
from .protocols import NodePartition, ProtocolKind, ProtocolSpec
from .scheduler import ClockConfig, JumpPolicy, Mode, PolicyKind, SplitMix64, TieBreak

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_pos = {"type": "number", "exclusiveMinimum": 0}
_dim = {"type": "integer", "minimum": 0}


def _block_props(prefix: str, dims: tuple[str, ...]) -> dict:
    props = {name: _dim for name in dims + ("n_ys", "n_yf", "n_us", "n_uf")}
    for name in ("A11", "A12", "A21", "A22", "A13", "A14", "A23", "A24"):
        props[name + prefix] = _matrix
    return props


_plant = {
    "type": "object",
    "required": ["n_xp", "n_zp"],
    "properties": {**_block_props("p", ("n_xp", "n_zp")), "Ax_ps": _matrix, "Ax_pf": _matrix, "Az_pf": _matrix},
    "additionalProperties": False,
}
_controller = {
    "type": "object",
    "required": ["n_xc", "n_zc"],
    "properties": {**_block_props("c", ("n_xc", "n_zc")), "Ax_cs": _matrix, "Ax_cf": _matrix, "Az_cf": _matrix},
    "additionalProperties": False,
}
_protocol = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": [k.value for k in ProtocolKind]},
        "partition": {
            "oneOf": [
                {"enum": ["single", "scalar"]},
                {"type": "array", "items": {"type": "array", "items": _dim, "minItems": 2, "maxItems": 2}},
            ]
        },
    },
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["system"],
    "properties": {
        "system": {
            "oneOf": [
                {"const": "builtin:example"},
                {
                    "type": "object",
                    "required": ["plant", "controller"],
                    "properties": {"plant": _plant, "controller": _controller},
                    "additionalProperties": False,
                },
            ]
        },
        "clocks": {
            "type": "object",
            "properties": {
                "miati_s": _pos,
                "mati_s": _pos,
                "mati_f_fast": _pos,
                "miati_f_fast": _pos,
                "miati_f_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
                "mode": {"enum": [m.value for m in Mode]},
            },
            "additionalProperties": False,
        },
        "protocols": {
            "type": "object",
            "properties": {"slow": _protocol, "fast": _protocol},
            "additionalProperties": False,
        },
        "design": {
            "type": "object",
            "properties": {
                "P_s": _matrix, "P_f": _matrix,
                "gamma_s": _pos, "gamma_f": _pos,
                "lambda_star_s": _pos, "lambda_star_f": _pos,
                "a_rho_s": _pos, "a_rho_f": _pos,
                "L_s": {"type": "number", "minimum": 0}, "L_f": {"type": "number", "minimum": 0},
                "L1": {"type": "number", "minimum": 0}, "L1_f": {"type": "number", "minimum": 0},
                "mu_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "lambda_position": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "mu": _pos,
                "lambda_decay": _pos,
                "norm_mode": {"enum": ["block", "block_doubled", "entrywise"]},
                "d_formula": {"enum": ["root", "quadratic"]},
                "search_seed": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "simulation": {
            "type": "object",
            "properties": {
                "epsilon": {"type": "array", "items": _pos, "minItems": 1},
                "t_end": {"type": "number", "minimum": 0},
                "step": {"oneOf": [_pos, {"type": "null"}]},
                "policy": {"enum": [p.value for p in PolicyKind]},
                "tiebreak": {"enum": [t.value for t in TieBreak]},
                "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "initial_states": {
                    "oneOf": [
                        {
                            "type": "object",
                            "properties": {"max_norm": {"type": "number", "minimum": 0}},
                            "additionalProperties": False,
                        },
                        {"type": "array", "items": {"type": "array", "items": {"type": "number"}}, "minItems": 1},
                    ]
                },
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

EXAMPLE_CLOCKS = {"miati_s": 0.3241, "mati_s": 0.3601, "mati_f_fast": 1.1, "miati_f_fraction": 0.25, "mode": "dual"}
EXAMPLE_DESIGN = {
    "P_s": [[54.91, -1.76], [-1.76, 1.81]],
    "P_f": [[1.12, 0.018], [0.018, 0.65]],
    "gamma_s": 2.58, "gamma_f": 0.64,
    "lambda_star_s": 0.33, "lambda_star_f": 0.46,
    "a_rho_s": 1.16, "a_rho_f": 0.41,
    "L_s": 0.0, "L_f": 0.0,
}
EXAMPLE_SIMULATION = {
    "epsilon": [0.01],
    "t_end": 20.0,
    "step": None,
    "policy": "latest",
    "tiebreak": "slow_first",
    "seeds": list(range(10)),
    "initial_states": {"max_norm": 10.0},
}


def builtin_example() -> dict:
    return {
        "system": "builtin:example",
        "clocks": dict(EXAMPLE_CLOCKS),
        "protocols": {"slow": {"kind": "reset_all", "partition": "single"},
                      "fast": {"kind": "reset_all", "partition": "single"}},
        "design": copy.deepcopy(EXAMPLE_DESIGN),
        "simulation": copy.deepcopy(EXAMPLE_SIMULATION),
    }


def _partition(layout, n: int) -> NodePartition:
    if layout is None or layout == "single":
        return NodePartition.single(n)
    if layout == "scalar":
        return NodePartition.scalar_nodes(n)
    return NodePartition(tuple((int(a), int(b)) for a, b in layout))


@dataclass(eq=False)
class Scenario:
    raw: dict
    closed_loop: ClosedLoop
    proto_s: ProtocolSpec
    proto_f: ProtocolSpec
    design: DesignConstants | None
    knobs: DesignKnobs
    search_seed: int

    @property
    def clocks(self) -> dict:
        return self.raw.get("clocks", {})

    @property
    def simulation(self) -> dict:
        sim = dict(EXAMPLE_SIMULATION)
        sim.update(self.raw.get("simulation", {}))
        return sim

    def require_design(self) -> DesignConstants:
        if self.design is None:
            raise SchemaError("this command needs a 'design' block with the Lyapunov design constants")
        return self.design

    def clock_config(self, epsilon: float) -> ClockConfig:
        c = self.clocks
        mode = Mode(c.get("mode", "dual"))
        mati_f_fast = c.get("mati_f_fast")
        if mati_f_fast is None:
            if self.design is None:
                raise SchemaError("clocks.mati_f_fast is required when no design constants are given")
            from .mati import mati_bound

            mati_f_fast = mati_bound(self.design.mati_params("f"))
        try:
            miati_s, mati_s = c["miati_s"], c["mati_s"]
        except KeyError as exc:
            raise SchemaError(f"clocks.{exc.args[0]} is required") from exc
        if "miati_f_fast" in c:
            miati_f = epsilon * c["miati_f_fast"]
        else:
            # a fraction is a target: shrink it when a large epsilon would leave
            # the dual clocks without an admissible transmission
            miati_f = epsilon * c.get("miati_f_fraction", 0.25) * mati_f_fast
            if mode is Mode.DUAL:
                miati_f = min(miati_f, miati_s, mati_s - miati_s)
        return ClockConfig(miati_s, mati_s, miati_f, epsilon * mati_f_fast, epsilon, mode)

    def policy(self, seed: int, name: str | None = None) -> JumpPolicy:
        sim = self.simulation
        kind = PolicyKind(name or sim["policy"])
        return JumpPolicy(kind, TieBreak(sim["tiebreak"]), seed if kind is PolicyKind.RANDOM else None)

    def initial_states(self) -> list[tuple[int, HybridState]]:
        """(seed, state) pairs; explicit states are paired with the seeds cyclically."""
        sim = self.simulation
        dims = self.closed_loop.dims
        n = sum(dims)
        seeds = sim["seeds"]
        init = sim["initial_states"]
        out = []
        if isinstance(init, list):
            for i, row in enumerate(init):
                if len(row) != n:
                    raise SchemaError(f"initial state {i} has length {len(row)}, expected {n}")
                out.append((seeds[i % len(seeds)], HybridState.from_packed(np.array(row, float), dims, _zero_clock())))
            return out
        radius = init.get("max_norm", 10.0)
        for seed in seeds:
            out.append((seed, HybridState.from_packed(random_initial_state(seed, n, radius), dims, _zero_clock())))
        return out


def _zero_clock():
    from .scheduler import ClockState

    return ClockState()


def random_initial_state(seed: int, n: int, max_norm: float) -> np.ndarray:
    """Point drawn with SplitMix64: uniform direction in the cube, radius uniform in [0, max_norm]."""
    rng = SplitMix64(seed)
    v = np.array([2.0 * rng.uniform() - 1.0 for _ in range(n)])
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return v
    return v / norm * (max_norm * rng.uniform())


def build_scenario(raw: dict) -> Scenario:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"scenario invalid at {where}: {exc.message}") from exc
    raw = copy.deepcopy(raw)
    if raw["system"] == "builtin:example":
        plant, ctrl, _ = example_fixture()
        raw.setdefault("clocks", dict(EXAMPLE_CLOCKS))
        raw.setdefault("design", copy.deepcopy(EXAMPLE_DESIGN))
    else:
        plant = PlantMatrices(**raw["system"]["plant"])
        ctrl = ControllerMatrices(**raw["system"]["controller"])
    cl = assemble_closed_loop(plant, ctrl)
    n_es, n_ef = cl.dims[1], cl.dims[3]
    protos = raw.get("protocols", {})
    specs = []
    for side, n in (("slow", n_es), ("fast", n_ef)):
        p = protos.get(side, {"kind": "reset_all"})
        specs.append(ProtocolSpec(ProtocolKind(p["kind"]), _partition(p.get("partition"), n)))
        if specs[-1].size != n:
            raise SchemaError(f"{side} protocol partition covers {specs[-1].size} errors, closed loop has {n}")
    d = raw.get("design")
    dc = None
    knobs = DesignKnobs()
    seed = 0
    if d is not None:
        knob_keys = ("mu_fraction", "lambda_position", "mu", "lambda_decay", "norm_mode", "d_formula")
        knobs = DesignKnobs(**{k: d[k] for k in knob_keys if k in d})
        seed = d.get("search_seed", 0)
        const_keys = ("P_s", "P_f", "gamma_s", "gamma_f", "lambda_star_s", "lambda_star_f", "a_rho_s", "a_rho_f")
        missing = [k for k in const_keys if k not in d]
        if missing and len(missing) < len(const_keys):
            raise SchemaError(f"design block is missing {missing}")
        if not missing:
            for name, n in (("P_s", cl.dims[0]), ("P_f", cl.dims[2])):
                shape = np.array(d[name], dtype=float).shape
                if shape != (n, n):
                    raise SchemaError(f"design.{name} has shape {shape}, expected {(n, n)}")
            dc = DesignConstants(
                P_s=np.array(d["P_s"], dtype=float), P_f=np.array(d["P_f"], dtype=float),
                gamma_s=d["gamma_s"], gamma_f=d["gamma_f"],
                lambda_star_s=d["lambda_star_s"], lambda_star_f=d["lambda_star_f"],
                a_rho_s=d["a_rho_s"], a_rho_f=d["a_rho_f"],
                protocol_s=specs[0], protocol_f=specs[1],
                L_s=d.get("L_s", 0.0), L_f=d.get("L_f", 0.0), L1=d.get("L1"), L1_f=d.get("L1_f"),
            )
    return Scenario(raw, cl, specs[0], specs[1], dc, knobs, seed)


def load_scenario(path: str | Path | None) -> Scenario:
    if path is None or str(path) == "builtin:example":
        return build_scenario(builtin_example())
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise SchemaError(f"scenario file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"scenario is not valid JSON: {exc}") from exc
    return build_scenario(raw)
