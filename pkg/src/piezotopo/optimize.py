"""Optimization loop: per iteration solve the etch field, both eigenproblems,
the forced response, then advance both level sets by the normalized adjoint
sensitivities.

The printed evolution law ascends the Lagrangian, so the driver negates the
assembled dL/dphi before normalization; with that sign the objectives
descend. Convergence requires the relative change of both F_pe and F_sb to
stay under the ratio for a window of consecutive iterations.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import fem, objectives, response, vtk_io, xi_field
from .levelset import (LevelSetField, RegularizationTensor, UpdateParams,
                       characteristic, make_design_field,
                       manufacturability_metrics, normalize_sensitivity,
                       update_field)
from .materials import MaterialSet
from .mesh import DomainConfig, Mesh, Tag, build_benchmark_mesh
from .objectives import ObjectiveConfig, ObjectiveReport
from .response import ExcitationConfig
from .xi_field import XiConfig, XiField


class RunError(RuntimeError):
    """Loop failure annotated with the iteration and stage."""

    def __init__(self, iteration: int, stage: str, cause: BaseException):
        super().__init__(f"iteration {iteration}, stage {stage}: {cause}")
        self.iteration = iteration
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class RunConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    materials: MaterialSet = field(default_factory=MaterialSet)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    excitation: ExcitationConfig = field(default_factory=ExcitationConfig)
    update: UpdateParams = field(default_factory=UpdateParams)
    tau_pe: RegularizationTensor = field(
        default_factory=lambda: RegularizationTensor(1e-6, 1e-6, 1e-2))
    tau_sb: RegularizationTensor = field(
        default_factory=lambda: RegularizationTensor(1e-6, 1e-6, 1e-2))
    xi: XiConfig = field(default_factory=XiConfig)
    use_xi: bool = True
    voltage_min: float | None = None
    penalty_rate: float = 1.0
    max_iterations: int = 1000
    convergence_ratio: float = 1e-6
    convergence_window: int = 10
    snapshot_every: int = 50
    mode: str = "extended_two_fields"
    sensitivity_mode: str = "gateaux"
    initial_value: float = 1.0
    eigen_method: str = "auto"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be at least 1")
        if self.convergence_ratio <= 0.0:
            raise ValueError("convergence_ratio must be positive")
        if self.mode not in ("extended_two_fields", "single_field_comparison"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.sensitivity_mode not in ("gateaux", "printed"):
            raise ValueError(f"unknown sensitivity_mode {self.sensitivity_mode!r}")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be at least 1")
        if self.penalty_rate <= 0.0:
            raise ValueError("penalty_rate must be positive")
        if not -1.0 <= self.initial_value <= 1.0:
            raise ValueError("initial_value must lie in [-1, 1]")


@dataclass
class OptimizationState:
    field_p: LevelSetField
    field_s: LevelSetField
    xi: XiField
    lam: float
    iteration: int
    history: list  # ObjectiveReport per iteration
    mesh: Mesh
    rows: list  # CSV rows mirroring history
    converged: bool = False
    modes: fem.ModeSet | None = None


def check_convergence(history: list, ratio: float = 1e-6, window: int = 10) -> bool:
    """Both F_pe and F_sb stationary over the trailing window."""
    L = len(history)
    if L < window:
        return False

    def ok(vals):
        tail = vals[-(window + 1):] if L > window else vals
        for a, b in zip(tail[:-1], tail[1:]):
            if b == 0.0:
                if a != 0.0:
                    return False
            elif abs(a / b - 1.0) >= ratio:
                return False
        return True

    return (ok([r.F_pe for r in history]) and ok([r.F_sb for r in history]))


def _snapshot(state: OptimizationState, cfg: RunConfig, path: str) -> None:
    hp = cfg.materials.heaviside
    point = {
        "phi_p": state.field_p.values,
        "phi_s": state.field_s.values,
        "chi_p_eff": xi_field.effective_pe_characteristic(state.field_p, state.xi, hp),
        "chi_s": characteristic(state.field_s, hp),
    }
    if cfg.use_xi:
        point["xi"] = state.xi.values
    vtk_io.write_vtk(state.mesh, point, {"tag": state.mesh.tags.astype(int)}, path)


def _history_row(it: int, rep: ObjectiveReport, modes: fem.ModeSet, V_E: float,
                 N1: float, N2: float, n: int) -> list:
    return ([it, rep.F_k, rep.F_omega, rep.F_pe, rep.F_sb]
            + list(modes.omega_oc[:n]) + list(modes.omega_sc[:n])
            + list(rep.k2_per_mode[:n]) + [V_E, rep.G_V, rep.lam, N1, N2])


def run(config: RunConfig, out_dir: str | None = None, progress=None,
        mesh: Mesh | None = None) -> OptimizationState:
    """Execute the six-step loop; returns the final state.

    When out_dir is given, history.csv is refreshed every iteration and
    snapshots are written on the snapshot_every schedule plus result.vtk at
    termination.
    """
    if mesh is None:
        mesh = build_benchmark_mesh(config.domain)
    single = config.mode == "single_field_comparison"
    if single:
        f_both = make_design_field(mesh, "both", initial=config.initial_value)
        field_p = field_s = f_both
    else:
        field_p = make_design_field(mesh, "pe", initial=config.initial_value)
        field_s = make_design_field(mesh, "sb", initial=config.initial_value)

    n = config.objective.n_modes
    vol_pe_region = float(mesh.elem_volumes[mesh.tags == Tag.PE_DESIGN].sum())
    lam = 0.0
    xi = xi_field.constant_xi(mesh, config.xi)
    state = OptimizationState(field_p=field_p, field_s=field_s, xi=xi, lam=lam,
                              iteration=0, history=[], mesh=mesh, rows=[])

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    for it in range(1, config.max_iterations + 1):
        def stage(name, fn):
            try:
                return fn()
            except Exception as exc:
                raise RunError(it, name, exc) from exc

        if config.use_xi:
            xi = stage("xi", lambda: xi_field.solve_xi(
                mesh, state.field_s, config.xi, config.materials.heaviside))
        else:
            xi = state.xi
        state.xi = xi

        system = stage("assemble", lambda: fem.assemble(
            mesh, state.field_p, state.field_s, xi.scaled(), config.materials))
        sc = stage("eigensolve", lambda: fem.solve_short_circuit_modes(
            system, n, method=config.eigen_method))
        oc = stage("eigensolve", lambda: fem.solve_open_circuit_modes(
            system, n, method=config.eigen_method))
        modes = stage("pairing", lambda: fem.pair_modes(sc, oc, system))
        state.modes = modes

        volt, _ = stage("response", lambda: response.evaluate_voltage(
            modes, system, config.excitation))
        if config.voltage_min is not None:
            G_V = stage("response", lambda: response.voltage_constraint(
                volt, config.voltage_min))
        else:
            G_V = 0.0

        rep = stage("objectives", lambda: objectives.evaluate_objectives(
            modes, config.objective, G_V=G_V, lam=state.lam))
        state.history.append(rep)
        N1, N2 = manufacturability_metrics(state.field_p, state.field_s, mesh)
        state.rows.append(_history_row(it, rep, modes, volt.V_E, N1, N2, n))
        state.iteration = it

        if out_dir:
            vtk_io.write_history_csv(os.path.join(out_dir, "history.csv"),
                                     state.rows, n)
            if it % config.snapshot_every == 0:
                _snapshot(state, config, os.path.join(out_dir, f"snapshot_{it}.vtk"))
        if progress is not None:
            progress(state)

        if check_convergence(state.history, config.convergence_ratio,
                             config.convergence_window):
            state.converged = True
            break
        if it == config.max_iterations:
            break

        coeffs = stage("sensitivity", lambda: objectives.adjoint_coefficients(
            modes, config.objective))
        sens = stage("sensitivity", lambda: objectives.sensitivity_fields(
            modes, coeffs, system, lam=state.lam,
            sensitivity_mode=config.sensitivity_mode))
        if config.voltage_min is not None:
            state.lam = stage("sensitivity", lambda: objectives.update_lambda(
                G_V, state.lam, config.penalty_rate, vol_pe_region))

        # the printed evolution law ascends; descend instead
        if single:
            raw = -(sens.Fprime_pe + sens.Fprime_sb)
            norm = stage("update", lambda: normalize_sensitivity(
                raw, mesh, config.update.c_norm, mask=state.field_p.design_mask))
            f_new = stage("update", lambda: update_field(
                state.field_p, norm, config.tau_pe, config.update, mesh))
            state.field_p = state.field_s = f_new
        else:
            raw_p = -sens.Fprime_pe
            raw_s = -sens.Fprime_sb
            norm_p = stage("update", lambda: normalize_sensitivity(
                raw_p, mesh, config.update.c_norm, mask=state.field_p.design_mask))
            norm_s = stage("update", lambda: normalize_sensitivity(
                raw_s, mesh, config.update.c_norm, mask=state.field_s.design_mask))
            state.field_p = stage("update", lambda: update_field(
                state.field_p, norm_p, config.tau_pe, config.update, mesh))
            state.field_s = stage("update", lambda: update_field(
                state.field_s, norm_s, config.tau_sb, config.update, mesh))

    if out_dir:
        vtk_io.write_history_csv(os.path.join(out_dir, "history.csv"), state.rows, n)
        _snapshot(state, config, os.path.join(out_dir, "result.vtk"))
    return state
