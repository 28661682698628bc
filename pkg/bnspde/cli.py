"""Command line entry point: one subcommand per experiment mode."""

import os
import sys

import click
import numpy as np
import pandas as pd

from bnspde import config
from bnspde.boundary import BoundaryConditionError, DirichletUnsupportedError
from bnspde.diagnostics import (DiagnosticsError, format_table, heat_oracle_study, monte_carlo, neumann_oracle_study,
                                regularity_band_check, strong_convergence_study, trace_adjoint_study,
                                variational_study)
from bnspde.elliptic import EllipticityError, SingularSystemError
from bnspde.noise import NoiseModelError, NotPositiveSemidefiniteError
from bnspde.settings import ConfigError, fingerprint, load_settings, override, save_settings
from bnspde.solver import MildSolver, PathDivergedError
from bnspde.spatial import GridError
from bnspde.utils import error, log, ndjson_line, write_ndjson, write_table
from bnspde.variational import write_residual_table

MODES = ("solve", "deterministic-oracle", "variational-check", "regularity-study", "convergence-study",
         "validate-only")

ERRORS = (ConfigError, GridError, EllipticityError, SingularSystemError, BoundaryConditionError,
          DirichletUnsupportedError, NoiseModelError, NotPositiveSemidefiniteError, PathDivergedError,
          DiagnosticsError)

FAILED_GATE = 2


def provenance(settings):
    return [f"name={settings.name}", f"seed={settings.seed}", f"fingerprint={fingerprint(settings)}"]


def write_summary(out, settings, mode, lines):
    text = "\n".join([f"mode={mode}"] + provenance(settings) + [""] + list(lines)) + "\n"
    with open(os.path.join(out, "summary.txt"), "w") as f:
        f.write(text)
    log(text)


def solve(settings, out):
    solver = MildSolver(settings)
    snapshots = os.path.join(out, "snapshots")
    if settings.outputs.snapshots:
        os.makedirs(snapshots, exist_ok=True)

    def run(solver, batch):
        lines = []
        for trajectory in solver.run_batch(batch):
            if settings.outputs.snapshots:
                solver.write_snapshots(snapshots, trajectory)
            lines.append(([ndjson_line(r) for r in trajectory.records()], trajectory.norms[-1]))
        return lines

    results = monte_carlo(solver, run)
    if settings.outputs.ndjson:
        with open(os.path.join(out, "trajectories.ndjson"), "w") as f:
            for lines, _ in results:
                f.write("\n".join(lines) + "\n")
    finals = np.array([norm for _, norm in results])
    write_summary(out, settings, "solve", [f"paths={len(finals)}",
                                           f"mean ||U(T)||_L2={finals.mean():.17g}",
                                           f"mean ||U(T)||_L2^2={np.mean(finals**2):.17g}"])
    return 0


def deterministic_oracle(settings, out):
    study = settings.study
    heat = heat_oracle_study(study.grid_sizes, study.step_counts, study.oracle_T,
                             temporal_n=2 * max(study.grid_sizes))
    neumann_rows, neumann_order = neumann_oracle_study(study.grid_sizes)
    trace_rows, trace_order, trace_ok = trace_adjoint_study(study.grid_sizes, settings.grid.dimension)
    rows = [("heat_space", h, e) for h, e in heat.spatial] + [("heat_time", dt, e) for dt, e in heat.temporal] \
        + [("neumann", h, e) for h, e in neumann_rows] + [("trace_adjoint", h, e) for h, e in trace_rows]
    write_table(os.path.join(out, "oracle.csv"), pd.DataFrame(rows, columns=["study", "step", "error"]),
                provenance(settings))
    passed = heat.passed and neumann_order >= 1.9 and trace_ok
    write_summary(out, settings, "deterministic-oracle", [
        format_table(rows, ["study", "step", "error"]), "",
        f"spatial order={heat.spatial_order:.17g} (>= 1.9)",
        f"temporal order={heat.temporal_order:.17g} (>= 0.9)",
        f"neumann order={neumann_order:.17g} (>= 1.9)",
        f"trace adjoint order={trace_order:.17g}, finest residual={trace_rows[-1][1]:.17g} (<= 1e-2)",
        f"status={'PASS' if passed else 'FAIL'}"])
    return 0 if passed else FAILED_GATE


def variational_check(settings, out):
    report = variational_study(settings)
    write_residual_table(os.path.join(out, "residuals.csv"), report.rows, provenance(settings))
    write_summary(out, settings, "variational-check", [
        format_table(report.rows, ["path", "phi", "dt", "h", "residual"]), "",
        f"order={report.order:.17g} (>= {report.threshold})",
        f"pairing gap={report.pairing_gap:.17g}",
        f"status={'PASS' if report.passed else 'FAIL'}"])
    return 0 if report.passed else FAILED_GATE


def regularity_study(settings, out):
    report = regularity_band_check(settings)
    records = ({"path": k, "exponent": e.exponent, "intercept": e.intercept, "r2": e.r2, "flagged": e.flagged,
                "norm": e.norm, "seed": settings.seed, "fingerprint": fingerprint(settings)}
               for k, e in enumerate(report.estimates))
    write_ndjson(os.path.join(out, "holder.ndjson"), records)
    write_summary(out, settings, "regularity-study", [
        f"median exponent={report.median:.17g}",
        f"cap={report.cap:.17g} (binding {report.binding}), admissible cap={report.admissible_cap:.17g}",
        f"sharp cap={report.sharp_cap:.17g}, band=[{report.lower}, {report.upper:.17g}]",
        f"max L^q norm={report.lq_max:.17g}",
        "status=" + ("CONSTANT PATH" if report.flagged else "PASS" if report.passed else "FAIL")])
    return 0 if report.passed else FAILED_GATE


def convergence_study(settings, out):
    report = strong_convergence_study(settings)
    rows = list(zip(report.dts, report.errors))
    write_table(os.path.join(out, "convergence.csv"), pd.DataFrame(rows, columns=["dt", "error"]),
                provenance(settings))
    passed = report.rate >= 0.4
    write_summary(out, settings, "convergence-study", [
        format_table(rows, ["dt", "error"]), "",
        f"rate={report.rate:.17g} (>= 0.4) over {report.paths} paths",
        f"status={'PASS' if passed else 'FAIL'}"])
    return 0 if passed else FAILED_GATE


RUNNERS = {
    "solve": solve,
    "deterministic-oracle": deterministic_oracle,
    "variational-check": variational_check,
    "regularity-study": regularity_study,
    "convergence-study": convergence_study,
}


def run_experiment(settings, mode, out):
    """Run one mode on validated settings; returns the exit status."""
    assert mode in MODES, f"unknown mode {mode}"
    if mode == "validate-only":
        log(f"Settings \"{settings.name}\" are valid (fingerprint {fingerprint(settings)}).")
        return 0
    os.makedirs(out, exist_ok=True)
    save_settings(settings, os.path.join(out, "settings.json"), silence=not config.verbose)
    return RUNNERS[mode](settings, out)


def common_options(fn):
    fn = click.option("--workers", type=int, default=None, help="Worker threads for path batches.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Master seed (overrides the settings file).")(fn)
    fn = click.option("--paths", type=int, default=None, help="Number of paths (overrides the settings file).")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), default="out", help="Output directory.")(fn)
    fn = click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False), default=None,
                      help="JSON settings file; defaults are used when omitted.")(fn)
    fn = click.option("--quiet", is_flag=True, help="Only print errors.")(fn)
    return fn


def make_command(mode):

    @click.command(name=mode, help=f"Run the {mode} mode.")
    @common_options
    def command(config_file, out, paths, seed, workers, quiet):
        if quiet:
            config.verbose = False
        try:
            settings = override(load_settings(config_file), paths=paths, seed=seed, workers=workers)
            status = run_experiment(settings, mode, out)
        except ERRORS as e:
            error(f"{type(e).__name__}: {e}")
            sys.exit(1)
        sys.exit(status)

    return command


@click.group()
def main():
    """Simulator for parabolic equations driven by interior and boundary noise."""


for _mode in MODES:
    main.add_command(make_command(_mode))
