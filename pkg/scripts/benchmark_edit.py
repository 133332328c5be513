#!/usr/bin/env python3
"""Measure single-frame edit latency at a given resolution and mesh
density. Subdivides the toy arms' meshes to stress the rasterizer."""

import time
from dataclasses import replace

import click
import numpy as np

from shadowkit.compose import EditConfig, Frame, MODE_SHADOW, edit_train
from shadowkit.geometry import CameraIntrinsics
from shadowkit.render import ORTHOGRAPHIC
from shadowkit.robot_model import Link, TriangleMesh
from shadowkit.toy_transfer import (IMAGE_SIZE, PIXELS_PER_M, TOY_IK,
                                    ToyScene, default_world, home_state,
                                    render_toy)


def subdivide(mesh: TriangleMesh, rounds: int) -> TriangleMesh:
    v, t = mesh.vertices, mesh.triangles
    for _ in range(rounds):
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        v = np.concatenate([a, b, c, (a + b) / 2, (b + c) / 2, (c + a) / 2])
        n = len(t)
        i = np.arange(n)
        t = np.concatenate([
            np.stack([i, i + 3 * n, i + 5 * n], 1),
            np.stack([i + 3 * n, i + n, i + 4 * n], 1),
            np.stack([i + 5 * n, i + 4 * n, i + 2 * n], 1),
            np.stack([i + 3 * n, i + 4 * n, i + 5 * n], 1)])
    return TriangleMesh(v, t)


def densify(e, rounds):
    def dense(model):
        links = tuple(Link(l.name, tuple((subdivide(m, rounds), tr)
                                         for m, tr in l.meshes))
                      for l in model.links)
        return replace(model, links=links)
    return replace(e, arm=dense(e.arm), gripper=dense(e.gripper))


@click.command()
@click.option("--resolution", type=int, default=240, show_default=True)
@click.option("--subdivisions", type=int, default=4, show_default=True)
@click.option("--repeats", type=int, default=20, show_default=True)
def main(resolution, subdivisions, repeats):
    world = default_world()
    src = densify(world.source, subdivisions)
    tgt = densify(world.target, subdivisions)
    tris = sum(m.triangles.shape[0] for e in (src, tgt)
               for link in list(e.arm.links) + list(e.gripper.links)
               for m, _ in link.meshes)
    scale = resolution / IMAGE_SIZE
    k = CameraIntrinsics(fx=PIXELS_PER_M * scale, fy=PIXELS_PER_M * scale,
                         cx=0.0, cy=float(resolution),
                         width=resolution, height=resolution)
    scene = ToyScene(block_xy=(0.25, 0.30), goal_xy=(0.38, 0.42))
    q = home_state(src)
    img, _, depth = render_toy(scene, src, q, world.extrinsics["source"], k,
                               arm_color=world.source_spec.color)
    frame = Frame(img, q, depth)
    cfg = EditConfig(mode=MODE_SHADOW, ik_params=TOY_IK,
                     projection=ORTHOGRAPHIC)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        edit_train(frame, src, tgt, world.extrinsics["source"],
                   world.extrinsics["target"], k, cfg, home_state(tgt))
        times.append(1000 * (time.perf_counter() - t0))
    click.echo(f"{resolution}x{resolution}, {tris} triangles: "
               f"median {np.median(times):.1f}ms, p95 "
               f"{np.percentile(times, 95):.1f}ms over {repeats} runs")


if __name__ == "__main__":
    main()
