"""Run-configuration surface: TOML files, overrides, validation.

Lengths in the file are millimeters and frequencies are hertz; conversion to
SI and angular units happens here, at the boundary. Unknown keys are
rejected by full path with a best-effort line number from the source text.
"""

from __future__ import annotations

import math

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .levelset import RegularizationTensor, UpdateParams
from .materials import (HeavisideParams, IsotropicElastic, MaterialSet,
                        PiezoCoupling)
from .mesh import DomainConfig, Resolution
from .objectives import ObjectiveConfig
from .optimize import RunConfig
from .response import ExcitationConfig
from .xi_field import XiConfig


class ConfigError(ValueError):
    pass


_RES_KEYS = ("nx_clamp", "nx_span", "nx_weight", "ny_side", "ny_weight",
             "nz_sb_lower", "nz_sb_upper", "nz_pe")

# the desk-scale resolution used by the coarse switch
COARSE_RESOLUTION = {"nx_clamp": 1, "nx_span": 10, "nx_weight": 1,
                     "ny_side": 5, "ny_weight": 1,
                     "nz_sb_lower": 3, "nz_sb_upper": 1, "nz_pe": 2}

_REQUIRED_DOMAIN = ("plate_side_length", "pe_thickness", "sb_thickness",
                    "clamp_strip_width", "weight_square_side", "weight_thickness")

# full key tree: path -> (type, required)
_SCHEMA = {
    "domain": {
        **{k: float for k in _REQUIRED_DOMAIN},
        "weight_density_factor": float,
        "resolution": {k: int for k in _RES_KEYS},
        "coarse_resolution": {k: int for k in _RES_KEYS},
    },
    "materials": {
        "pe": {"youngs_modulus": float, "poisson_ratio": float, "density": float},
        "sb": {"youngs_modulus": float, "poisson_ratio": float, "density": float},
        "coupling": {"e31": float, "e33": float, "e15": float,
                     "eps_r11": float, "eps_r33": float},
        "heaviside": {"w": float, "d": float},
    },
    "objective": {"n_modes": int, "target_frequencies_hz": list,
                  "alpha_pe": float, "alpha_sb": float},
    "excitation": {"base_acceleration": float, "eval_frequency_hz": float,
                   "damping_ratio": float},
    "update": {"k_coeff": float, "c_norm": float, "dt": float},
    "tau_pe": {"x": float, "y": float, "z": float},
    "tau_sb": {"x": float, "y": float, "z": float},
    "xi": {"enabled": bool, "kappa_x": float, "kappa_y": float, "kappa_z": float,
           "xi_source": float, "xi_sink": float, "penalty": float},
    "run": {"mode": str, "max_iterations": int, "convergence_ratio": float,
            "convergence_window": int, "snapshot_every": int,
            "sensitivity_mode": str, "initial_value": float,
            "voltage_min": float, "penalty_rate": float,
            "eigen_method": str, "coarse": bool},
}


def _line_of(text: str, key: str) -> str:
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0]
        if stripped.strip().startswith(key) or f"[{key}" in stripped:
            return f" (line {i})"
    return ""


def _check_keys(data: dict, schema: dict, path: str, text: str) -> None:
    for key, val in data.items():
        full = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown key {full!r}{_line_of(text, key)}")
        want = schema[key]
        if isinstance(want, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{full!r} must be a table{_line_of(text, key)}")
            _check_keys(val, want, full, text)
        elif want is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(
                    f"{full!r} must be a number, got {type(val).__name__}"
                    f"{_line_of(text, key)}")
        elif want is int:
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(
                    f"{full!r} must be an integer, got {type(val).__name__}"
                    f"{_line_of(text, key)}")
        elif not isinstance(val, want):
            raise ConfigError(
                f"{full!r} must be {want.__name__}, got {type(val).__name__}"
                f"{_line_of(text, key)}")


def apply_override(data: dict, assignment: str) -> None:
    """key.path=value with the value parsed as a TOML scalar."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key_path, raw = assignment.split("=", 1)
    keys = [k.strip() for k in key_path.strip().split(".")]
    if not all(keys):
        raise ConfigError(f"override {assignment!r} has an empty key component")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {assignment!r} descends into a scalar")
    node[keys[-1]] = value


def _resolution(table: dict, defaults: dict | None = None) -> Resolution:
    base = dict(defaults) if defaults else {}
    base.update(table)
    return Resolution(**base) if base else Resolution()


def build_run_config(data: dict, text: str = "", coarse: bool = False) -> RunConfig:
    _check_keys(data, _SCHEMA, "", text)

    dom = data.get("domain", {})
    missing = [k for k in _REQUIRED_DOMAIN if k not in dom]
    if missing:
        raise ConfigError("missing required domain geometry keys: "
                          + ", ".join(f"domain.{k}" for k in missing))

    run = data.get("run", {})
    coarse = coarse or bool(run.get("coarse", False))
    if coarse:
        resolution = _resolution(dom.get("coarse_resolution", {}), COARSE_RESOLUTION)
    else:
        resolution = _resolution(dom.get("resolution", {}))

    try:
        domain = DomainConfig(
            plate_side_length=float(dom["plate_side_length"]),
            pe_thickness=float(dom["pe_thickness"]),
            sb_thickness=float(dom["sb_thickness"]),
            clamp_strip_width=float(dom["clamp_strip_width"]),
            weight_square_side=float(dom["weight_square_side"]),
            weight_thickness=float(dom["weight_thickness"]),
            weight_density_factor=float(dom.get("weight_density_factor", 100.0)),
            resolution=resolution,
        )

        m = data.get("materials", {})
        pe_t = m.get("pe", {})
        sb_t = m.get("sb", {})
        cp = m.get("coupling", {})
        hv = m.get("heaviside", {})
        materials = MaterialSet(
            pe=IsotropicElastic(float(pe_t.get("youngs_modulus", 60e9)),
                                float(pe_t.get("poisson_ratio", 0.31)),
                                float(pe_t.get("density", 7750.0))),
            sb=IsotropicElastic(float(sb_t.get("youngs_modulus", 169e9)),
                                float(sb_t.get("poisson_ratio", 0.28)),
                                float(sb_t.get("density", 2329.0))),
            coupling=PiezoCoupling.from_constants(
                float(cp.get("e31", -5.4)), float(cp.get("e33", 15.8)),
                float(cp.get("e15", 12.3)), float(cp.get("eps_r11", 1730.0)),
                float(cp.get("eps_r33", 1700.0))),
            heaviside=HeavisideParams(float(hv.get("w", 0.9)),
                                      float(hv.get("d", 0.01))),
        )

        obj_t = data.get("objective", {})
        targets_hz = obj_t.get("target_frequencies_hz", [70.0, 435.0, 450.0, 500.0])
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                   for v in targets_hz):
            raise ConfigError("objective.target_frequencies_hz must be numbers")
        objective = ObjectiveConfig(
            n_modes=int(obj_t.get("n_modes", len(targets_hz))),
            target_frequencies=tuple(2.0 * math.pi * float(f) for f in targets_hz),
            alpha_pe=float(obj_t.get("alpha_pe", 0.95)),
            alpha_sb=float(obj_t.get("alpha_sb", 0.95)),
        )

        exc_t = data.get("excitation", {})
        eval_hz = float(exc_t.get("eval_frequency_hz", targets_hz[0]))
        excitation = ExcitationConfig(
            base_acceleration=float(exc_t.get("base_acceleration", 1.0)),
            eval_frequency=2.0 * math.pi * eval_hz,
            damping_ratio=float(exc_t.get("damping_ratio", 0.01)),
        )

        upd = data.get("update", {})
        update = UpdateParams(K_coeff=float(upd.get("k_coeff", 1.0)),
                              c_norm=float(upd.get("c_norm", 2.0)),
                              dt=float(upd.get("dt", 1.0)))

        def tau(table):
            return RegularizationTensor(float(table.get("x", 1e-6)),
                                        float(table.get("y", 1e-6)),
                                        float(table.get("z", 1e-2)))

        xi_t = data.get("xi", {})
        xi_cfg = XiConfig(
            kappa_x=float(xi_t.get("kappa_x", 1e-4)),
            kappa_y=float(xi_t.get("kappa_y", 1e-4)),
            kappa_z=float(xi_t.get("kappa_z", 1.0)),
            xi_source=float(xi_t.get("xi_source", 1.0)),
            xi_sink=float(xi_t.get("xi_sink", 1.0)),
            penalty=(float(xi_t["penalty"]) if "penalty" in xi_t else None),
        )

        voltage_min = run.get("voltage_min", None)
        return RunConfig(
            domain=domain,
            materials=materials,
            objective=objective,
            excitation=excitation,
            update=update,
            tau_pe=tau(data.get("tau_pe", {})),
            tau_sb=tau(data.get("tau_sb", {})),
            xi=xi_cfg,
            use_xi=bool(xi_t.get("enabled", True)),
            voltage_min=(float(voltage_min) if voltage_min is not None else None),
            penalty_rate=float(run.get("penalty_rate", 1.0)),
            max_iterations=int(run.get("max_iterations", 1000)),
            convergence_ratio=float(run.get("convergence_ratio", 1e-6)),
            convergence_window=int(run.get("convergence_window", 10)),
            snapshot_every=int(run.get("snapshot_every", 50)),
            mode=str(run.get("mode", "extended_two_fields")),
            sensitivity_mode=str(run.get("sensitivity_mode", "gateaux")),
            initial_value=float(run.get("initial_value", 1.0)),
            eigen_method=str(run.get("eigen_method", "auto")),
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path: str, overrides=(), coarse: bool = False) -> RunConfig:
    with open(path, "rb") as f:
        text = f.read().decode("utf-8")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for assignment in overrides:
        apply_override(data, assignment)
    return build_run_config(data, text, coarse=coarse)
