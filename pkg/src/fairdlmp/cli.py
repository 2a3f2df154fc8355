"""Command-line interface: run, sweep, validate, decompose."""

from __future__ import annotations

import os

import click
import numpy as np

from . import plots, reporting
from .runner import run_scenario, run_sweep
from .scenarios import Scenario, generate_scenario


def _load_scenario(spec: str, seed: int, fairness: float | None,
                   eta: float | None) -> Scenario:
    if spec.upper() in ("I", "II", "III"):
        overrides = {}
        if eta is not None:
            overrides["eta"] = eta
        if fairness is not None:
            overrides["fairness_weight"] = fairness
        return generate_scenario(spec, seed, overrides)
    with open(spec, encoding="utf-8") as fh:
        sc = Scenario.from_json(fh.read())
    from dataclasses import replace
    if fairness is not None:
        sc = replace(sc, fairness_weight=fairness)
    if eta is not None:
        sc = replace(sc, eta=eta)
    return sc


@click.group()
def main():
    """Fairness-regularized DLMP market engine."""


@main.command()
@click.option("--scenario", required=True, help="I, II, III, or a scenario JSON file")
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--fairness", "-C", default=None, type=float, help="fairness weight C")
@click.option("--eta", default=None, type=float, help="ALM increment factor")
@click.option("--max-iter", default=None, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--figures/--no-figures", default=True, show_default=True)
def run(scenario, seed, fairness, eta, max_iter, out, figures):
    """One market run; emits CSVs, a summary, and figures."""
    sc = _load_scenario(scenario, seed, fairness, eta)
    from .solver import MarketConfig
    cfg = MarketConfig() if max_iter is None else MarketConfig(max_iter=max_iter)
    record = run_scenario(sc, cfg)
    written = reporting.emit_results(record, out)
    if figures:
        for p in plots.render_run_figures(record, out):
            written[os.path.basename(p)] = p
    res = record.result
    click.echo(f"converged={res.converged} iterations={res.iterations} "
               f"welfare={res.total_welfare:.6g} jain={res.jain:.6g}")
    for name, path in written.items():
        click.echo(f"  {name}: {path}")


@main.command()
@click.option("--scenario", required=True)
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--c-from", default=0.0, show_default=True, type=float)
@click.option("--c-to", default=0.5, show_default=True, type=float)
@click.option("--c-step", default=0.02, show_default=True, type=float)
@click.option("--eta", default=None, type=float)
@click.option("--out", required=True, type=click.Path())
@click.option("--figures/--no-figures", default=True, show_default=True)
def sweep(scenario, seed, c_from, c_to, c_step, eta, out, figures):
    """Fairness-weight sweep; emits the trade-off table and figure."""
    sc = _load_scenario(scenario, seed, None, eta)
    n_steps = int(round((c_to - c_from) / c_step)) + 1
    grid = [round(c_from + i * c_step, 10) for i in range(n_steps)]
    rows = run_sweep(sc, grid)
    os.makedirs(out, exist_ok=True)
    path = reporting.emit_sweep(rows, os.path.join(out, "sweep.csv"))
    click.echo(f"sweep table: {path}")
    if figures:
        click.echo(f"figure: {plots.plot_sweep(rows, os.path.join(out, 'sweep.png'))}")
    for row in rows:
        click.echo(f"  C={row.fairness_weight:g} J={row.jain:.6g} "
                   f"welfare={row.total_welfare:.6g} PoF={row.price_of_fairness:.3g}")


@main.command()
@click.option("--scenario", required=True)
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--figures/--no-figures", default=True, show_default=True)
def validate(scenario, seed, out, figures):
    """Linearization-error report against the AC oracle at the converged point."""
    sc = _load_scenario(scenario, seed, None, None)
    record = run_scenario(sc)
    os.makedirs(out, exist_ok=True)
    path = reporting.emit_linearization_report(
        record, os.path.join(out, "linearization_error.csv"))
    rep = record.linearization
    click.echo(f"max |dV| = {rep.max_voltage_error:.3e} pu, "
               f"max |dP| = {rep.max_flow_error:.3e} pu, "
               f"max |dL^P| = {rep.max_loss_error:.3e} pu")
    click.echo(f"report: {path}")
    if figures:
        click.echo(f"figure: {plots.plot_linearization(record, os.path.join(out, 'linearization.png'))}")


@main.command()
@click.option("--in", "run_dir", required=True, type=click.Path(exists=True),
              help="directory of a previous run")
@click.option("--out", required=True, type=click.Path())
def decompose(run_dir, out):
    """Re-emit the DLMP component table from a stored run."""
    src = os.path.join(run_dir, "aggregators.csv")
    if not os.path.exists(src):
        raise click.ClickException(f"no aggregators.csv under {run_dir}")
    os.makedirs(out, exist_ok=True)
    with open(src, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = {name: i for i, name in enumerate(header)}
    lines = ["label,node,c_V,c_C,c_EL,c_F,c"]
    for row in rows:
        lines.append(",".join([row[cols["label"]], row[cols["node"]],
                               row[cols["c_V"]], row[cols["c_C"]],
                               row[cols["c_EL"]], row[cols["c_F"]], row[cols["c"]]]))
    path = os.path.join(out, "dlmp_components.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    click.echo(f"component table: {path}")


if __name__ == "__main__":
    main()
