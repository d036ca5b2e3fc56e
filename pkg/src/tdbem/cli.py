"""Command line front end.

Every command takes an optional JSON config (``--config``) whose keys are
the :class:`~tdbem.config.StudyConfig` fields; flags override single keys.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .analysis import interpolation_lemma_study
from .config import ConfigError, StudyConfig
from .geometry import horn_surface_mesh
from .mot import DensityHistory, SolveError
from .potentials import evaluate_halfspace_pressure, evaluate_single_layer
from .studies import (
    convergence_study,
    exponent_study,
    horn_study,
    make_mesh,
    solve,
)

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load(config, **overrides) -> StudyConfig:
    try:
        return StudyConfig.load(config, overrides)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


def _mesh_for(cfg: StudyConfig):
    if cfg.screen == "horn":
        h = cfg.horn_setup()
        return horn_surface_mesh(h.radius, h.clearance, h.resolution, width=h.width)
    return make_mesh(cfg.screen, cfg.levels, cfg.beta)


def _outdir(cfg: StudyConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _guard(fn):
    """Map numerical failures to exit code 3."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (SolveError, np.linalg.LinAlgError, FloatingPointError) as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


common = [
    click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None, help="JSON config file."),
    click.option("--screen", type=str, default=None, help="square | disc | horn (default square)."),
    click.option("--beta", type=float, default=None, help="Grading exponent >= 1 (default 2)."),
    click.option("--levels", type=int, default=None, help="Refinement level N (default 4)."),
    click.option("--dt", type=float, default=None, help="Time step (default 0.005)."),
    click.option("--T", "T", type=float, default=None, help="Final time (default 1)."),
    click.option(
        "--operator", type=str, default=None,
        help="single_layer | hypersingular | dtn | horn_adjoint_dl (default single_layer).",
    ),
    click.option("--rhs", type=str, default=None, help="PlaneWavePacket | RingdownG | RingdownH | PointSourceDirac | ZeroLoad."),
    click.option("--output-dir", type=str, default=None, help="Output directory (default ./out)."),
]


def with_common(fn):
    for opt in reversed(common):
        fn = opt(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Time-domain boundary elements on open screens."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")


@main.command("mesh")
@with_common
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Mesh JSON path.")
def cmd_mesh(config, out, **kw):
    """Write a graded screen mesh as JSON."""
    cfg = _load(config, **kw)
    try:
        mesh = _mesh_for(cfg)
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    data = mesh.to_dict()
    data["metadata"] = {**data.get("metadata", {}), "config_hash": cfg.config_hash()}
    path = Path(out) if out else _outdir(cfg) / f"mesh_{cfg.screen}_beta{cfg.beta:g}_N{cfg.levels}.json"
    path.write_text(json.dumps(data))
    click.echo(f"{path}: {len(mesh.triangles)} triangles, {len(mesh.nodes)} nodes")


@main.command("solve")
@with_common
@_guard
def cmd_solve(config, **kw):
    """Assemble and march one problem; writes density CSV + JSON header."""
    cfg = _load(config, **kw)
    mesh = _mesh_for(cfg)
    _, _, hist = solve(cfg.problem(), mesh, cfg.rule(), cfg.solver_config())
    out = _outdir(cfg)
    stem = f"density_{cfg.operator}_{cfg.screen}_beta{cfg.beta:g}_dt{cfg.dt:g}"
    path = out / f"{stem}.csv"
    hist.to_csv(path, {"config_hash": cfg.config_hash(), "config": cfg.to_dict()})
    click.echo(f"{path}: {hist.n_steps} steps, {hist.coefficients.shape[1]} dofs")
    for f in hist.flags:
        click.echo(f"warning: {f}", err=True)


@main.command("evaluate")
@with_common
@click.option("--density", type=click.Path(exists=True, dir_okay=False), required=True, help="Density CSV from solve.")
@click.option("--point", "points", type=str, multiple=True, required=True, help="x,y,z (repeatable).")
@click.option("--times", type=str, default=None, help="Comma separated times (default: all steps).")
@_guard
def cmd_evaluate(config, density, points, times, **kw):
    """Evaluate the field of a stored density at off-screen points."""
    cfg = _load(config, **kw)
    mesh = _mesh_for(cfg)
    hist = DensityHistory.from_csv(density)
    try:
        pts = np.array([[float(v) for v in p.split(",")] for p in points])
    except ValueError:
        click.echo("config error: points must be x,y,z", err=True)
        sys.exit(EXIT_CONFIG)
    tt = hist.times if times is None else np.array([float(t) for t in times.split(",")])
    if hist.operator_id == "horn_adjoint_dl":
        probe = evaluate_halfspace_pressure(hist, mesh, pts, tt)
    elif hist.operator_id == "single_layer":
        probe = evaluate_single_layer(hist, mesh, pts, tt)
    else:
        click.echo("config error: field evaluation needs a single layer or horn density", err=True)
        sys.exit(EXIT_CONFIG)
    path = _outdir(cfg) / f"probe_{hist.operator_id}_dt{hist.dt:g}.csv"
    with path.open("w", newline="") as fh:
        fh.write(f"# config_hash={cfg.config_hash()}\n")
        w = csv.writer(fh)
        w.writerow(["time"] + [f"p{i}" for i in range(len(pts))])
        for t, row in zip(tt, probe.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    click.echo(str(path))


@main.command("study")
@click.argument("kind", type=click.Choice(["convergence", "exponent", "interp", "horn"]))
@with_common
@_guard
def cmd_study(kind, config, **kw):
    """Run a study and write StudyReport JSON + CSV."""
    cfg = _load(config, **kw)
    rule = cfg.rule()
    try:
        if kind == "convergence":
            rep = convergence_study(cfg.problem(), cfg.ladder, cfg.reference_level, cfg.betas, rule)
        elif kind == "exponent":
            rep = exponent_study(cfg.problem(), cfg.levels, cfg.beta, cfg.sections, cfg.times, rule)
        elif kind == "interp":
            rep = interpolation_lemma_study(cfg.interp_a, cfg.beta, cfg.interp_levels)
        else:
            rep = horn_study(cfg.horn_setup(), cfg.dts, rule)
    except ValueError as exc:
        # e.g. a mesh too coarse for the exponent fit window
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    rep.config = {**rep.config, "config": cfg.to_dict(), "config_hash": cfg.config_hash()}
    stem = f"{kind}_{cfg.operator}_{cfg.screen}_beta{cfg.beta:g}_dt{cfg.dt:g}"
    out = _outdir(cfg)
    rep.to_json(out / f"{stem}.json")
    rep.to_csv(out / f"{stem}.csv")
    for key, val in rep.slopes.items():
        click.echo(f"{key}: {val:.4f}")
    click.echo(str(out / f"{stem}.json"))


if __name__ == "__main__":
    main()
