"""Refinement ladders, exponent sweeps and the horn pipeline.

A *problem* bundles a screen, an operator, the data and the time grid of one
benchmark; the study functions solve it on a ladder of meshes and compare
against the solution on a designated reference mesh.
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np

from . import assembly as asm
from .analysis import (
    StudyReport,
    amplification_spectrum,
    energy_error,
    fit_singular_exponent,
    l2_spacetime_error,
)
from .geometry import Mesh, ScreenKind, graded_disc_mesh, graded_square_mesh, horn_surface_mesh
from .mot import DensityHistory, StepSolverConfig, march
from .potentials import evaluate_halfspace_pressure
from .quadrature import QuadratureRule
from .timegrid import TimeGrid

log = logging.getLogger(__name__)

OPERATORS = ("single_layer", "hypersingular", "dtn", "horn_adjoint_dl")


@dataclass(frozen=True)
class Problem:
    screen: str = "square"
    operator: str = "single_layer"
    dt: float = 0.005
    T: float = 1.0
    rhs: object = field(default_factory=asm.PlaneWavePacket)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.from_final_time(self.dt, self.T)


# benchmark setups of the single layer, hypersingular and DtN experiments
PROBLEMS = {
    "V-disc": Problem("disc", "single_layer", 0.005, 1.0, asm.PlaneWavePacket()),
    "V-square": Problem("square", "single_layer", 0.005, 1.0, asm.PlaneWavePacket()),
    "W-disc": Problem("disc", "hypersingular", 0.01, 4.0, asm.RingdownG()),
    "W-square": Problem("square", "hypersingular", 0.01, 4.0, asm.RingdownG()),
    "DtN-square": Problem("square", "dtn", 0.01, 0.65, asm.RingdownH()),
}


def make_mesh(screen: str, levels: int, beta: float) -> Mesh:
    kind = ScreenKind(screen)
    if kind is ScreenKind.SQUARE:
        return graded_square_mesh(levels, beta)
    if kind is ScreenKind.DISC:
        return graded_disc_mesh(levels, beta)
    raise ValueError("ladders are defined for square and disc screens")


def assemble_system(problem: Problem, mesh: Mesh, rule: QuadratureRule | None = None):
    grid = problem.grid
    op = problem.operator
    if op == "single_layer":
        system = asm.assemble_single_layer(mesh, grid, rule)
    elif op == "hypersingular":
        system = asm.assemble_hypersingular(mesh, grid, rule)
    elif op == "dtn":
        system = asm.assemble_dtn_blocks(mesh, grid, rule)
    elif op == "horn_adjoint_dl":
        system = asm.assemble_adjoint_double_layer_halfspace(mesh, grid, rule)
    else:
        raise ValueError(f"unknown operator {op!r}")
    if isinstance(problem.rhs, asm.ZeroLoad):
        rhs = asm.RhsTimeSeries(problem.rhs, np.zeros((grid.n_steps + 1, system.shape[0])))
    else:
        rhs = asm.assemble_rhs(mesh, grid, problem.rhs, rule)
    return system, rhs


def solve(problem: Problem, mesh: Mesh, rule=None, solver: StepSolverConfig | None = None):
    """Assemble and march; returns ``(system, rhs, history)``."""
    system, rhs = assemble_system(problem, mesh, rule)
    hist = march(system, rhs, solver)
    hist.mesh_digest = mesh.digest()
    return system, rhs, hist


def dof_count(hist: DensityHistory) -> int:
    if hist.blocks:
        return int(hist.blocks[0][1])
    return int(hist.coefficients.shape[1])


def convergence_study(
    problem: Problem,
    levels,
    reference_level: int,
    betas=(2.0, 1.0),
    rule: QuadratureRule | None = None,
    energy: bool = True,
    study_id: str = "convergence",
    reference_beta: float | None = None,
) -> StudyReport:
    """Errors of mesh ladders against one benchmark solution.

    The benchmark is the solution on the ``reference_level`` mesh with
    grading ``reference_beta`` (default: the largest of ``betas``); every
    ladder is compared with it.  Energy errors use the benchmark system
    (single layer and hypersingular only).
    """
    ref_beta = max(betas) if reference_beta is None else reference_beta
    rep = StudyReport(
        study_id,
        config={
            "problem": _problem_dict(problem),
            "levels": list(levels),
            "reference_level": reference_level,
            "reference_beta": ref_beta,
            "betas": list(betas),
            "rule": repr(rule or QuadratureRule()),
        },
        notes={
            "energy_error": "sqrt|E(lifted coarse) - E(benchmark)| on the benchmark system",
            "l2_error": "L2 over [0,T] x screen at benchmark-mesh quadrature points",
        },
    )
    use_energy = energy and problem.operator in ("single_layer", "hypersingular")
    t0 = _time.time()
    mref = make_mesh(problem.screen, reference_level, ref_beta)
    sref, rref, href = solve(problem, mref, rule)
    log.info("benchmark level %d beta %g: %.1fs", reference_level, ref_beta, _time.time() - t0)
    for beta in betas:
        series = f"beta={beta:g}"
        for lv in levels:
            m = make_mesh(problem.screen, lv, beta)
            _, _, h = solve(problem, m, rule)
            row = {
                "series": series,
                "beta": beta,
                "level": lv,
                "dof": dof_count(h),
                "h_max": m.h_max,
                "l2_error": l2_spacetime_error((h, m), (href, mref)),
            }
            if use_energy:
                row["energy_error"] = energy_error(sref, (h, m), (href, mref), rref)
            rep.rows.append(row)
        rep.fit("l2_error", series)
        if use_energy:
            rep.fit("energy_error", series)
    return rep


def exponent_study(
    problem: Problem, levels: int, beta: float, sections, times, rule=None, study_id="exponent"
) -> StudyReport:
    """Singular exponents of one solution along sections at several times."""
    mesh = make_mesh(problem.screen, levels, beta)
    _, _, hist = solve(problem, mesh, rule)
    rep = StudyReport(
        study_id,
        config={"problem": _problem_dict(problem), "levels": levels, "beta": beta},
        notes={"window": "drop two samples nearest the singular point; distance <= 0.3"},
    )
    for sec in sections:
        for t in times:
            fit = fit_singular_exponent(hist, mesh, sec, t)
            rep.rows.append(
                {
                    "section": sec,
                    "time": t,
                    "exponent": fit.exponent,
                    "r_squared": fit.r_squared,
                    "n_points": fit.n_points,
                    "window_lo": fit.window[0],
                    "window_hi": fit.window[1],
                }
            )
    return rep


@dataclass(frozen=True)
class HornSetup:
    radius: float = 0.3
    clearance: float = 0.0
    resolution: int = 12
    width: float | None = None
    y_src: tuple = (0.08, 0.0, 0.0)
    x_fp: tuple = (1.0, 0.0, 0.0)
    T: float = 8.0
    band_hz: tuple = (200.0, 2000.0)
    speed_of_sound: float = 343.0
    length_scale: float = 1.0


def horn_run(setup: HornSetup, dt: float, rule: QuadratureRule | None = None):
    """Solve the horn problem; returns ``(mesh, history, pressure probe, spectrum)``."""
    mesh = horn_surface_mesh(setup.radius, setup.clearance, setup.resolution, width=setup.width)
    problem = Problem("horn", "horn_adjoint_dl", dt, setup.T, asm.PointSourceDirac(setup.y_src))
    _, _, hist = solve(problem, mesh, rule)
    times = problem.grid.nodes
    probe = evaluate_halfspace_pressure(hist, mesh, [setup.x_fp], times)
    spec = amplification_spectrum(
        probe, setup.y_src, setup.x_fp, dt, setup.band_hz, setup.speed_of_sound, setup.length_scale
    )
    return mesh, hist, probe, spec


def horn_study(setup: HornSetup, dts=(0.04, 0.01, 0.005), rule=None, study_id="horn") -> StudyReport:
    """Amplification spectra for several time steps, one row per frequency bin."""
    rep = StudyReport(study_id, config={"setup": setup.__dict__, "dts": list(dts)})
    for dt in dts:
        _, hist, _, (w, f, dL) = horn_run(setup, dt, rule)
        rep.notes[f"flags dt={dt:g}"] = hist.flags
        for wi, fi, di in zip(w, f, dL):
            rep.rows.append({"dt": dt, "omega": wi, "f_hz": fi, "dL_dB": di})
    return rep


def _problem_dict(p: Problem) -> dict:
    return {
        "screen": p.screen,
        "operator": p.operator,
        "dt": p.dt,
        "T": p.T,
        "rhs": type(p.rhs).__name__,
        "rhs_params": dict(getattr(p.rhs, "__dict__", {})),
    }


def with_grid(problem: Problem, dt=None, T=None) -> Problem:
    return replace(problem, dt=dt or problem.dt, T=T or problem.T)
