"""Optimization loop: adapt the mesh, project, solve, differentiate, take an MMA step."""
from __future__ import annotations

import json
import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..amr import adapt, analysis_density
from ..fem import ElasticitySystem, FemError
from ..geometry import N_BAR_VARS
from ..optimizer import (DesignScaling, MmaState, apply_move_limit, commit_step, converged,
                         initial_conservatism, is_conservative, mma_step, mma_subproblem,
                         raise_conservatism)
from ..responses import (compliance_sensitivity, relaxed_stress, stress_response,
                         volume_fraction)
from .config import ProblemConfig, write_design
from .export import HistoryWriter, dominant_alpha, format_timing_table, write_vtk

log = logging.getLogger(__name__)

TASKS = ("mesh_refinement", "geometry_projection", "assembly", "linear_solution",
         "responses", "sensitivities")

EXIT_CONVERGED, EXIT_ERROR, EXIT_MAX_ITERS = 0, 1, 2


class RunError(RuntimeError):
    """A failure inside the loop, tagged with the iteration it happened in."""


@dataclass
class IterationResult:
    iteration: int
    objective: float  # normalized value handed to the optimizer
    constraint: float
    compliance: float
    volume_fraction: float
    max_stress_ratio: float
    n_cells: int
    times: dict
    elements: dict
    max_dz: float = 0.0


@dataclass
class RunResult:
    design: np.ndarray
    status: str
    exit_code: int
    iterations: int
    history: list[IterationResult]
    final: IterationResult
    mesh: object
    timing: dict
    setup_hash: str
    output_dir: Path | None = None
    extras: dict = field(default_factory=dict)


class _Timer:
    def __init__(self):
        self.times = defaultdict(float)

    def __call__(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.times[name] += time.perf_counter() - self.t0

        return _Ctx()


def _evaluate(cfg: ProblemConfig, z, base_mesh, full_mesh, cache):
    """Analysis and sensitivities of design ``z`` (unscaled, (n, 6)).

    Returns (IterationResult without objective normalization, raw objective,
    objective gradient, constraint gradient, fields for export).
    """
    timer = _Timer()
    proj = cfg.projection
    rho_min = proj.rho_min
    with timer("mesh_refinement"):
        if full_mesh is not None:
            mesh, marking = full_mesh, 0
        else:
            mesh, field_ = adapt(base_mesh, z, proj, cfg.amr)
            marking = field_.marking_evaluations
    with timer("geometry_projection"):
        rho, drho = analysis_density(mesh, z, proj, return_gradient=True)
        vf, dvf = volume_fraction(mesh, z, proj, return_gradient=True)
    with timer("assembly"):
        system = cache.get("system")
        if system is None or not np.array_equal(system.mesh.levels, mesh.levels):
            system = ElasticitySystem(mesh, cfg.material, cfg.bcs)
            cache["system"] = system
        scale = rho_min + (1.0 - rho_min) * rho
        Kr = system.assemble(scale)
    with timer("linear_solution"):
        sol = system.solve(scale, Kr)
    with timer("responses"):
        sig, vm, _ = relaxed_stress(sol, system, rho, cfg.stress.relaxation if cfg.stress else 0.5)
        limit = cfg.stress.limit if cfg.stress else 1.0
        max_ratio = float(sig.max() / limit)
    with timer("sensitivities"):
        if cfg.kind == "compliance":
            f0, df0 = sol.compliance, compliance_sensitivity(sol, system, drho, rho_min)
            g = vf / cfg.volume_limit - 1.0
            dg = dvf / cfg.volume_limit
        else:
            f0, df0 = vf, dvf
            g, dg = stress_response(sol, system, rho, drho, cfg.stress, rho_min)
    n = mesh.n_cells
    elements = {"mesh_refinement": marking, "geometry_projection": n, "assembly": n,
                "linear_solution": sol.n_dofs, "responses": n, "sensitivities": n}
    res = IterationResult(0, f0, float(g), sol.compliance, vf, max_ratio, n,
                          dict(timer.times), elements)
    fields = {"density": rho, "von_mises": vm, "relaxed_stress": sig,
              "level": mesh.cell_level.astype(float)}
    return res, mesh, df0, dg, fields


def _timing_report(history):
    tasks = {}
    for t in TASKS:
        tasks[t] = {"seconds": float(np.mean([h.times.get(t, 0.0) for h in history])),
                    "elements": float(np.mean([h.elements.get(t, 0) for h in history]))}
    total = {"seconds": float(sum(r["seconds"] for r in tasks.values()))}
    return {"tasks": tasks, "total": total, "iterations": len(history)}


def run(cfg: ProblemConfig, full_resolution=False, max_iters=None, output_dir=None,
        write_files=True) -> RunResult:
    """Optimize the configured problem; returns the final design and reports.

    ``full_resolution`` refines the coarse grid uniformly ``n_levels`` times
    once and skips per-iteration adaptation. ``max_iters`` counts MMA steps.
    """
    max_iters = cfg.max_iters if max_iters is None else int(max_iters)
    out = Path(output_dir) if output_dir is not None else cfg.output_dir
    if write_files:
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {out}: {exc}") from exc

    scaling = DesignScaling(cfg.lower, cfg.upper)
    n_bars = cfg.n_bars
    saved = cfg.optimizer_state or {}
    if "x" in saved:
        x = np.asarray(saved["x"], dtype=float)
        state = MmaState.from_dict(saved["mma"])
    else:
        x = scaling.scale(cfg.design.ravel())
        state = MmaState(x.size)
    if x.size != n_bars * N_BAR_VARS:
        raise ValueError("optimizer state does not match the number of components")
    obj_scale = saved.get("objective_scale")
    iteration = state.iteration
    recent = [v for v in (state.xold2, state.xold1) if v is not None] + [x]

    base = cfg.coarse_mesh()
    full_mesh = base.refine_uniform(cfg.amr.n_levels) if full_resolution else None
    cache = {}
    history: list[IterationResult] = []
    writer = HistoryWriter(out / "history.csv", append="x" in saved) if write_files else None
    status = "max_iters"
    t_start = time.perf_counter()
    def evaluate(xs):
        zs = scaling.unscale(xs).reshape(n_bars, N_BAR_VARS)
        try:
            return _evaluate(cfg, zs, base, full_mesh, cache)
        except (FemError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise RunError(f"iteration {iteration}: {exc}") from exc

    pending = None
    damped = False  # last step was shortened by the conservative loop
    try:
        while True:
            z = scaling.unscale(x).reshape(n_bars, N_BAR_VARS)
            res, mesh, df0, dg, fields = pending if pending is not None else evaluate(x)
            pending = None
            if obj_scale is None:
                obj_scale = _objective_scale(cfg, res.objective)
            res.iteration = iteration
            raw_objective = res.objective
            res.objective = raw_objective / obj_scale
            res.max_dz = float(np.max(np.abs(recent[-1] - recent[-2]))) if len(recent) > 1 else 0.0
            history.append(res)
            log.info("it %4d  f=%.6g  g=%+.4e  dz=%.3e  cells=%d", iteration, raw_objective,
                     res.constraint, res.max_dz, res.n_cells)
            # a step cut short by added curvature says nothing about stationarity
            done = converged(recent, cfg.tol) and not damped
            last = done or iteration - (history[0].iteration) >= max_iters
            if writer is not None:
                writer.write({"iter": iteration, "objective": raw_objective,
                              "constraint": res.constraint, "max_dz": res.max_dz,
                              "n_cells": res.n_cells,
                              "t_adapt": res.times["mesh_refinement"],
                              "t_solve": res.times["assembly"] + res.times["linear_solution"],
                              "t_sens": res.times["responses"] + res.times["sensitivities"],
                              "volume_fraction": res.volume_fraction,
                              "compliance": res.compliance,
                              "max_stress_ratio": res.max_stress_ratio})
                if last or (cfg.vtk_every > 0 and iteration % cfg.vtk_every == 0):
                    _snapshot(out, iteration, cfg, mesh, z, fields, x, state, obj_scale)
            if done:
                status = "converged"
                break
            if last:
                break
            df0_hat = scaling.gradient(df0.ravel()) / obj_scale
            dg_hat = scaling.gradient(np.asarray(dg).ravel())
            box = apply_move_limit(x, cfg.move)
            fc, dfc = np.array([res.constraint]), dg_hat[None, :]
            if not cfg.conservative:
                x = mma_step(state, x, res.objective, df0_hat, fc, dfc, box, cfg.mma)
            else:
                # globally convergent variant: re-solve with more curvature until the
                # model overestimates every response at the trial point
                raa = initial_conservatism(df0_hat, dfc)
                raa0 = raa.copy()
                for inner in range(cfg.max_inner):
                    xnew, lam, model = mma_subproblem(state, x, res.objective, df0_hat, fc, dfc,
                                                      box, cfg.mma, raa)
                    pending = evaluate(xnew)
                    values = [pending[0].objective / obj_scale, pending[0].constraint]
                    if np.all(is_conservative(model, xnew, values, cfg.inner_tol)):
                        break
                    raa = raise_conservatism(raa, model, xnew, values)
                damped = bool(np.any(raa > raa0))
                log.debug("inner iterations %d", inner + 1)
                commit_step(state, model, lam)
                x = xnew
            recent = (recent + [x])[-3:]
            iteration += 1
    finally:
        if writer is not None:
            writer.close()

    timing = _timing_report(history)
    timing["wall_seconds"] = time.perf_counter() - t_start
    z = scaling.unscale(x).reshape(n_bars, N_BAR_VARS)
    result = RunResult(design=z, status=status,
                       exit_code=EXIT_CONVERGED if status == "converged" else EXIT_MAX_ITERS,
                       iterations=iteration, history=history, final=history[-1], mesh=mesh,
                       timing=timing, setup_hash=cfg.setup_hash(),
                       output_dir=out if write_files else None,
                       extras={"objective_scale": obj_scale, "state": state,
                               "x": x, "full_resolution": bool(full_resolution)})
    if write_files:
        write_design(out / "design_final.yaml", z, iteration,
                     _state_dict(x, state, obj_scale))
        (out / "timing.txt").write_text(format_timing_table(timing) + "\n")
        summary = {"status": status, "iterations": iteration, "setup_hash": result.setup_hash,
                   "full_resolution": bool(full_resolution),
                   "compliance": result.final.compliance,
                   "volume_fraction": result.final.volume_fraction,
                   "max_stress_ratio": result.final.max_stress_ratio,
                   "n_cells": result.final.n_cells, "timing": timing}
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return result


def _objective_scale(cfg, f0):
    mode = cfg.raw["optimizer"].get("objective_scale", "initial")
    if mode == "initial":
        return abs(f0) if f0 != 0 else 1.0
    if mode in (None, "none"):
        return 1.0
    return float(mode)


def _state_dict(x, state: MmaState, obj_scale):
    return {"x": [float(v) for v in x], "objective_scale": float(obj_scale),
            "mma": state.to_dict()}


def _snapshot(out, iteration, cfg, mesh, z, fields, x, state, obj_scale):
    data = dict(fields)
    data["alpha_max"] = dominant_alpha(mesh, z, cfg.projection.penalty)
    write_vtk(out / f"mesh_{iteration:04d}.vtk", mesh, data)
    write_design(out / f"design_{iteration:04d}.yaml", z, iteration,
                 _state_dict(x, state, obj_scale))
