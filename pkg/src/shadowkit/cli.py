"""Command line interface: shadowkit edit | validate | ik | render-mask | toy."""

from __future__ import annotations

import json
import math
import sys

import click
import numpy as np

from .compose import EditConfig, MODES
from .errors import ShadowkitError
from .geometry import CalibrationNoiseSpec, transform_from_dict
from .kinematics import IkParams, JointState, ik_solve, mid_range_state
from .pipeline import (load_calibration, load_dataset, run_edit, save_depth,
                       save_mask)
from .render import render_robot
from .robot_model import arm_only, parse_urdf
from .toy_transfer import (ToyExperimentConfig, run_experiment, save_report)


@click.group()
def main():
    """Cross-embodiment mask-edit toolkit."""


@main.command()
@click.option("--manifest", "-m", required=True, type=click.Path())
@click.option("--direction", type=click.Choice(["train", "eval"]), required=True)
@click.option("--mode", type=click.Choice(list(MODES)), default="shadow")
@click.option("--source", default=None, help="override manifest source robot")
@click.option("--target", default=None, help="override manifest target robot")
@click.option("--noise-sigma-t", type=float, default=0.0, help="extrinsic noise, m")
@click.option("--noise-sigma-r", type=float, default=0.0, help="extrinsic noise, deg")
@click.option("--seed", type=int, default=0)
@click.option("--jobs", "-j", type=int, default=1)
@click.option("--assets", type=click.Path(), default=None)
@click.option("-o", "--out", required=True, type=click.Path())
def edit(manifest, direction, mode, source, target, noise_sigma_t,
         noise_sigma_r, seed, jobs, assets, out):
    """Edit every frame of a dataset and write the result to OUT."""
    try:
        dataset = load_dataset(manifest, asset_root=assets)
        if source or target:
            m = dataset.manifest
            object.__setattr__(m, "source_robot", source or m.source_robot)
            object.__setattr__(m, "target_robot", target or m.target_robot)
        noise = None
        if noise_sigma_t > 0 or noise_sigma_r > 0:
            noise = CalibrationNoiseSpec(noise_sigma_t,
                                         math.radians(noise_sigma_r), seed)
        report = run_edit(dataset, direction, EditConfig(mode=mode), noise,
                          out, parallelism=jobs)
    except ShadowkitError as e:
        raise click.ClickException(str(e))
    click.echo(f"processed={report.processed} edited={report.edited} "
               f"skipped={report.skipped} ik_failures={report.ik_failures}")


@main.command()
@click.option("--manifest", "-m", required=True, type=click.Path())
@click.option("--assets", type=click.Path(), default=None)
def validate(manifest, assets):
    """Validate a dataset manifest and every file it references."""
    try:
        dataset = load_dataset(manifest, asset_root=assets)
    except ShadowkitError as e:
        raise click.ClickException(str(e))
    n_frames = sum(t.length for t in dataset.trajectories())
    click.echo(f"ok: {dataset.n_trajectories} trajectories, {n_frames} frames")


@main.command()
@click.option("--robot", required=True, type=click.Path(exists=True))
@click.option("--target", "target_json", required=True,
              help="pose JSON: {quaternion, translation} or a path to one")
@click.option("--seed", "seed_json", default=None,
              help="joint vector JSON, defaults to mid-range")
@click.option("--assets", type=click.Path(), default=None)
def ik(robot, target_json, seed_json, assets):
    """Solve IK for a URDF arm and print the solution JSON."""
    with open(robot) as f:
        model = parse_urdf(f.read(), asset_root=assets)
    emb = arm_only(model)
    target = transform_from_dict(_load_json_arg(target_json))
    if seed_json is not None:
        seed = JointState(np.asarray(_load_json_arg(seed_json), dtype=np.float64))
    else:
        seed = mid_range_state(emb)
    sol = ik_solve(emb, target, seed, IkParams())
    click.echo(json.dumps({
        "q": sol.q.values.tolist(), "converged": sol.converged,
        "iters": sol.iters, "residual_pos": sol.residual_pos,
        "residual_rot": sol.residual_rot}, indent=1))
    sys.exit(0 if sol.converged else 1)


@main.command("render-mask")
@click.option("--robot", required=True, type=click.Path(exists=True))
@click.option("--q", "q_json", required=True, help="joint vector JSON")
@click.option("--calib", required=True, type=click.Path(exists=True))
@click.option("--robot-name", required=True, help="extrinsics key in calib")
@click.option("--assets", type=click.Path(), default=None)
@click.option("--depth", "depth_out", type=click.Path(), default=None)
@click.option("-o", "--out", required=True, type=click.Path())
def render_mask(robot, q_json, calib, robot_name, assets, depth_out, out):
    """Render a robot segmentation mask to a 1-bit PNG."""
    with open(robot) as f:
        model = parse_urdf(f.read(), asset_root=assets)
    emb = arm_only(model)
    calibration = load_calibration(calib)
    if robot_name not in calibration.extrinsics:
        raise click.ClickException(f"no extrinsics for {robot_name!r}")
    q = JointState(np.asarray(_load_json_arg(q_json), dtype=np.float64))
    try:
        mask, depth = render_robot(emb, q, calibration.intrinsics,
                                   calibration.extrinsics[robot_name])
    except ShadowkitError as e:
        raise click.ClickException(str(e))
    save_mask(mask, out)
    if depth_out:
        save_depth(depth, depth_out)
    click.echo(f"mask pixels: {mask.count()}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="JSON overrides for the experiment config")
@click.option("-o", "--out", required=True, type=click.Path())
def toy(config_path, out):
    """Run the toy transfer experiment and write report + rollout strips."""
    overrides = {}
    if config_path:
        with open(config_path) as f:
            overrides = json.load(f)
    config = _toy_config(overrides)
    report, strips = run_experiment(config, collect_strips=True)
    save_report(report, out)
    _save_strips(strips, out)
    click.echo(report.table())


def _toy_config(overrides: dict) -> ToyExperimentConfig:
    from .toy_transfer import BcConfig, ToySimConfig
    kwargs = {}
    for key in ("n_demos", "episodes_per_cell", "seed"):
        if key in overrides:
            kwargs[key] = overrides[key]
    if "noise_levels" in overrides:
        kwargs["noise_levels"] = tuple(tuple(x) for x in overrides["noise_levels"])
    if "bc" in overrides:
        kwargs["bc"] = BcConfig(**overrides["bc"])
    if "sim" in overrides:
        kwargs["sim"] = ToySimConfig(**overrides["sim"])
    return ToyExperimentConfig(**kwargs)


def _save_strips(strips: dict, out_dir: str):
    import os
    from .pipeline import save_image
    from .compose import Image
    for key, images in strips.items():
        if not images:
            continue
        px = np.concatenate([im.pixels for im in images], axis=1)
        name = key.replace("/", "_")
        save_image(Image(px.shape[1], px.shape[0], px),
                   os.path.join(out_dir, f"rollout_{name}.png"))


def _load_json_arg(arg: str):
    if arg.strip().startswith(("{", "[")):
        return json.loads(arg)
    with open(arg) as f:
        return json.load(f)


if __name__ == "__main__":
    main()
