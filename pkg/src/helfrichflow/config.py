"""Run-configuration loading, validation, and canonical hashing.

Configs are TOML (a self-contained subset reader: tables, arrays of tables,
scalar and array values, comments) or JSON, selected by file extension.
The documented schema stays within the supported TOML subset.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .flow import Constraints, FlowConfig, OptimizerConfig, PenaltyWeights
from .transport import TransportConfig
from .varifold import HelfrichParams, Isometry, MeshVarifold, mass
from . import meshgen
from .flow import restore_constraints
from .meshio import load_mesh


class ConfigError(DomainError):
    """Configuration file is invalid; the message carries the field path."""


# ---------------------------------------------------------------------------
# TOML subset


def _parse_toml_value(text: str, where: str):
    text = text.strip()
    if not text:
        raise ConfigError(f"{where}: empty value")
    if text.startswith("["):
        if not text.endswith("]"):
            raise ConfigError(f"{where}: unterminated array")
        return [_parse_toml_value(part, where) for part in _split_array(text[1:-1], where)]
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        if any(c in text for c in ".eE") and not text.startswith("0x"):
            return float(text)
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{where}: cannot parse value {text!r}") from None


def _split_array(body: str, where: str) -> list[str]:
    parts: list[str] = []
    depth = 0
    in_string = False
    token = ""
    for ch in body:
        if in_string:
            token += ch
            if ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
            token += ch
        elif ch == "[":
            depth += 1
            token += ch
        elif ch == "]":
            depth -= 1
            token += ch
        elif ch == "," and depth == 0:
            parts.append(token)
            token = ""
        else:
            token += ch
    if token.strip():
        parts.append(token)
    return parts


def _strip_comment(line: str) -> str:
    out = ""
    in_string = False
    for ch in line:
        if ch == '"':
            in_string = not in_string
        if ch == "#" and not in_string:
            break
        out += ch
    return out


def parse_toml(text: str) -> dict:
    """Parse the TOML subset used by run configs."""
    root: dict = {}
    current = root
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        where = f"line {lineno}"
        if line.startswith("[["):
            if not line.endswith("]]"):
                raise ConfigError(f"{where}: malformed table array header {line!r}")
            path = line[2:-2].strip().split(".")
            node = root
            for key in path[:-1]:
                node = node.setdefault(key, {})
                if not isinstance(node, dict):
                    raise ConfigError(f"{where}: {key} is not a table")
            arr = node.setdefault(path[-1], [])
            if not isinstance(arr, list):
                raise ConfigError(f"{where}: {path[-1]} is not a table array")
            current = {}
            arr.append(current)
        elif line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{where}: malformed table header {line!r}")
            path = line[1:-1].strip().split(".")
            node = root
            for key in path:
                node = node.setdefault(key, {})
                if not isinstance(node, dict):
                    raise ConfigError(f"{where}: {key} is not a table")
            current = node
        else:
            if "=" not in line:
                raise ConfigError(f"{where}: expected key = value, got {line!r}")
            key, _, value = line.partition("=")
            current[key.strip()] = _parse_toml_value(value, where)
    return root


def load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    ext = os.path.splitext(path)[1].lower()
    if ext == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from None
    elif ext == ".toml":
        data = parse_toml(text)
    else:
        raise ConfigError(f"{path}: unsupported config extension {ext!r} (use .toml or .json)")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    return data


def canonical_hash(data: dict) -> str:
    """SHA-256 of the canonicalized (sorted-keys, compact JSON) config bytes."""
    blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def file_hash(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# schema


def _get(table: dict, key: str, kind, where: str, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"{where}.{key}: required field missing")
        return default
    value = table[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(
            f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}"
        )
    return value


def _positive(value, where):
    if value is not None and not value > 0:
        raise ConfigError(f"{where}: must be > 0, got {value}")
    return value


@dataclass
class RunSetup:
    mesh: MeshVarifold
    params: HelfrichParams
    flow: FlowConfig
    output_dir: str
    config_hash: str
    mesh_hash: str
    seed: int | None
    raw: dict


_GENERATORS = {
    "icosphere": meshgen.icosphere,
    "ellipsoid": meshgen.ellipsoid,
    "torus": meshgen.torus,
    "perturbed_sphere": meshgen.perturbed_sphere,
    "smooth_perturbed_sphere": meshgen.smooth_perturbed_sphere,
    "bumpy_sphere": meshgen.bumpy_sphere,
    "capped_cylinder": meshgen.capped_cylinder,
    "box_grid": meshgen.box_grid,
}


def _build_mesh(table: dict, base_dir: str, where: str = "mesh"):
    theta_plus = _get(table, "theta_plus", int, where, default=1)
    theta_minus = _get(table, "theta_minus", int, where, default=0)
    genus = _get(table, "genus", int, where, default=None)
    path = _get(table, "path", str, where, default=None)
    gen = table.get("generate")
    if (path is None) == (gen is None):
        raise ConfigError(f"{where}: exactly one of 'path' or 'generate' is required")
    if path is not None:
        resolved = path if os.path.isabs(path) else os.path.join(base_dir, path)
        if not os.path.exists(resolved):
            raise ConfigError(f"{where}.path: mesh file not found: {resolved}")
        mesh = load_mesh(resolved, theta_plus, theta_minus, genus)
        return mesh, file_hash(resolved)
    if not isinstance(gen, dict):
        raise ConfigError(f"{where}.generate: expected a table")
    kind = _get(gen, "kind", str, f"{where}.generate", required=True)
    if kind not in _GENERATORS:
        raise ConfigError(
            f"{where}.generate.kind: unknown generator {kind!r}; "
            f"choose from {sorted(_GENERATORS)}"
        )
    kwargs = {k: v for k, v in gen.items() if k != "kind"}
    kwargs["theta_plus"] = theta_plus
    kwargs["theta_minus"] = theta_minus
    try:
        mesh = _GENERATORS[kind](**kwargs)
    except TypeError as err:
        raise ConfigError(f"{where}.generate: {err}") from None
    digest = hashlib.sha256(
        json.dumps(gen, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    return mesh, digest


def _build_symmetry(entries, where: str) -> tuple[Isometry, ...]:
    generators = []
    for i, entry in enumerate(entries):
        here = f"{where}[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{here}: expected a table")
        kind = _get(entry, "kind", str, here, required=True)
        if kind == "reflection":
            normal = _get(entry, "normal", list, here, required=True)
            generators.append(Isometry.reflection(np.asarray(normal, dtype=float)))
        elif kind == "rotation":
            axis = _get(entry, "axis", list, here, required=True)
            order = _get(entry, "order", int, here, required=True)
            if order < 2:
                raise ConfigError(f"{here}.order: must be >= 2, got {order}")
            generators.append(
                Isometry.rotation(np.asarray(axis, dtype=float), 2.0 * math.pi / order)
            )
        else:
            raise ConfigError(f"{here}.kind: unknown symmetry kind {kind!r}")
    return tuple(generators)


def build_run(config: dict, base_dir: str = ".") -> RunSetup:
    """Validate a parsed config and construct everything a flow run needs."""
    params_tab = config.get("params")
    if not isinstance(params_tab, dict):
        raise ConfigError("params: required table missing")
    mesh_tab = config.get("mesh")
    if not isinstance(mesh_tab, dict):
        raise ConfigError("mesh: required table missing")
    flow_tab = config.get("flow")
    if not isinstance(flow_tab, dict):
        raise ConfigError("flow: required table missing")

    beta = _positive(_get(params_tab, "beta", float, "params", required=True), "params.beta")
    gamma = _get(params_tab, "gamma", float, "params", default=0.0)
    h0 = _get(params_tab, "h0", float, "params", default=0.0)
    m0 = _get(params_tab, "m0", float, "params", default=None)
    v0 = _get(params_tab, "v0", float, "params", default=None)
    _positive(m0, "params.m0")

    mesh, mesh_hash = _build_mesh(mesh_tab, base_dir)
    if m0 is None:
        m0 = mass(mesh)
    if _get(mesh_tab, "rescale_to_mass", bool, "mesh", default=True):
        mesh = restore_constraints(mesh, m0)
    try:
        params = HelfrichParams(beta=beta, gamma=gamma, h0=h0, m0=m0, v0=v0)
    except DomainError as err:
        raise ConfigError(f"params: {err}") from None

    tau = _positive(_get(flow_tab, "tau", float, "flow", required=True), "flow.tau")
    steps = _get(flow_tab, "steps", int, "flow", required=True)
    if steps < 0:
        raise ConfigError(f"flow.steps: must be >= 0, got {steps}")

    transport_tab = config.get("transport", {})
    try:
        transport = TransportConfig(
            p=_get(transport_tab, "p", float, "transport", default=2.0),
            solver=_get(transport_tab, "solver", str, "transport", default="exact"),
            epsilon=_get(transport_tab, "epsilon", float, "transport", default=0.01),
            max_iter=_get(transport_tab, "max_iter", int, "transport", default=20000),
            tol=_get(transport_tab, "tol", float, "transport", default=1e-9),
        )
    except DomainError as err:
        raise ConfigError(f"transport: {err}") from None

    opt_tab = flow_tab.get("optimizer", {})
    try:
        optimizer = OptimizerConfig(
            max_inner_iter=_get(opt_tab, "max_inner_iter", int, "flow.optimizer", default=25),
            grad_tol=_get(opt_tab, "grad_tol", float, "flow.optimizer", default=1e-8),
            step_rule=_get(opt_tab, "step_rule", str, "flow.optimizer", default="backtracking"),
            initial_step=_get(opt_tab, "initial_step", float, "flow.optimizer", default=None),
            max_backtracks=_get(opt_tab, "max_backtracks", int, "flow.optimizer", default=40),
            gradient=_get(opt_tab, "gradient", str, "flow.optimizer", default="auto"),
        )
    except DomainError as err:
        raise ConfigError(f"flow.optimizer: {err}") from None

    cons_tab = flow_tab.get("constraints", {})
    volume = _get(cons_tab, "volume", float, "flow.constraints", default=None)
    symmetry = _build_symmetry(cons_tab.get("symmetry", []), "flow.constraints.symmetry")

    pen_tab = flow_tab.get("penalties", {})
    try:
        penalties = PenaltyWeights(
            mass=_get(pen_tab, "mass", float, "flow.penalties", default=None),
            volume=_get(pen_tab, "volume", float, "flow.penalties", default=None),
            symmetry=_get(pen_tab, "symmetry", float, "flow.penalties", default=None),
        )
    except DomainError as err:
        raise ConfigError(f"flow.penalties: {err}") from None

    mult_tab = flow_tab.get("multiplicity", {})
    search = tuple(_get(mult_tab, "search", list, "flow.multiplicity", default=[]))

    try:
        flow_cfg = FlowConfig(
            tau=tau,
            steps=steps,
            transport=transport,
            constraints=Constraints(volume=volume, symmetry=symmetry),
            multiplicity_search=search,
            optimizer=optimizer,
            penalty_weights=penalties,
            quadrature=_get(flow_tab, "quadrature", str, "flow", default="centroid"),
            increment_power=_get(flow_tab, "increment_power", str, "flow", default="squared"),
            snapshot_stride=_get(flow_tab, "snapshot_stride", int, "flow", default=10),
            candidate_inner_iter=_get(flow_tab, "candidate_inner_iter", int, "flow", default=None),
        )
    except DomainError as err:
        raise ConfigError(f"flow: {err}") from None

    # mesh paths resolve relative to the config file (sibling assets);
    # the output directory resolves relative to the working directory
    output_tab = config.get("output", {})
    out_dir = _get(output_tab, "directory", str, "output", default="helfrich_out")
    out_dir = os.path.abspath(out_dir)

    seed = _get(flow_tab, "seed", int, "flow", default=None)
    return RunSetup(
        mesh=mesh,
        params=params,
        flow=flow_cfg,
        output_dir=out_dir,
        config_hash=canonical_hash(config),
        mesh_hash=mesh_hash,
        seed=seed,
        raw=config,
    )
