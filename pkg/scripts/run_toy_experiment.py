#!/usr/bin/env python3
"""Run the planar transfer experiment and write report + rollout strips.

Equivalent to `shadowkit toy` with the noise sweep enabled by default:
trains one policy per edit mode on source-arm demos, evaluates each on
both arms, then sweeps calibration noise on the shadow/target cell.
"""

import json
import time

import click

from shadowkit.cli import _save_strips
from shadowkit.toy_transfer import (ToyExperimentConfig, run_experiment,
                                    save_report)

DEFAULT_NOISE = ((0.0, 0.0), (0.01, 0.087), (0.02, 0.175))


@click.command()
@click.option("--demos", type=int, default=150, show_default=True)
@click.option("--episodes", type=int, default=50, show_default=True,
              help="evaluation episodes per grid cell")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--no-noise", is_flag=True, help="skip the calibration sweep")
@click.option("-o", "--out", required=True, type=click.Path())
def main(demos, episodes, seed, no_noise, out):
    config = ToyExperimentConfig(
        n_demos=demos, episodes_per_cell=episodes, seed=seed,
        noise_levels=() if no_noise else DEFAULT_NOISE)
    t0 = time.time()
    report, strips = run_experiment(config, collect_strips=True)
    save_report(report, out)
    _save_strips(strips, out)
    click.echo(report.table())
    click.echo(f"\nwrote {out}/report.json in {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
