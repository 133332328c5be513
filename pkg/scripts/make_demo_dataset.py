#!/usr/bin/env python3
"""Write a small synthetic on-disk dataset in the layout `shadowkit edit`
consumes: URDFs, calibration, rendered frames, depth, and states.

Useful as a starting point for wiring up real data and for trying the
CLI end to end:

    python scripts/make_demo_dataset.py -o /tmp/demo
    shadowkit edit -m /tmp/demo/manifest.json --direction train -o /tmp/out
"""

import click

from shadowkit.datagen import make_disk_dataset


@click.command()
@click.option("--trajectories", type=int, default=3, show_default=True)
@click.option("--frames", type=int, default=10, show_default=True,
              help="frames per trajectory")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--no-depth", is_flag=True, help="omit depth sidecars")
@click.option("-o", "--out", required=True, type=click.Path())
def main(trajectories, frames, seed, no_depth, out):
    ds = make_disk_dataset(out, n_trajectories=trajectories, n_frames=frames,
                           seed=seed, has_depth=not no_depth)
    total = sum(t.length for t in ds.trajectories())
    click.echo(f"wrote {ds.n_trajectories} trajectories, {total} frames "
               f"to {out}")


if __name__ == "__main__":
    main()
