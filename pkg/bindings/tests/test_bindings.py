"""Boundary-fidelity tests: everything the bindings return must be
byte-identical to what the core CLI produces on a golden fixture of
4 trajectories x 5 frames (20 frames)."""

import json
import os
import subprocess

import numpy as np
import pytest

import shadowkit
import shadowkit_bindings as sb
from shadowkit.datagen import make_disk_dataset
from shadowkit.pipeline import load_depth, load_image, load_mask

TIMING_KEYS = ("frame_ms_mean", "frame_ms_p95")


@pytest.fixture(scope="module")
def golden(tmp_path_factory):
    """Golden fixture: synthetic dataset plus its CLI-edited counterpart."""
    root = tmp_path_factory.mktemp("golden")
    ds_dir = str(root / "ds")
    make_disk_dataset(ds_dir, n_trajectories=4, n_frames=5, seed=13)
    cli_out = str(root / "cli")
    subprocess.run(
        ["shadowkit", "edit", "-m", os.path.join(ds_dir, "manifest.json"),
         "--direction", "train", "--mode", "shadow", "-o", cli_out],
        check=True, capture_output=True)
    return ds_dir, cli_out


def scrub_report(data: bytes) -> bytes:
    d = json.loads(data)
    for key in TIMING_KEYS:
        d.pop(key, None)
    d.get("config", {}).pop("parallelism", None)
    return json.dumps(d, sort_keys=True).encode()


def tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            with open(path, "rb") as f:
                data = f.read()
            if name == "report.json":
                data = scrub_report(data)
            out[os.path.relpath(path, root)] = data
    return out


def test_version_mirrors_core():
    assert sb.__version__ == shadowkit.__version__


def test_buffer_length_validation():
    with pytest.raises(sb.BoundaryError, match="12"):
        sb.BoundFrameBuffer(2, 2, 3, b"\x00" * 7)
    buf = sb.BoundFrameBuffer(2, 2, 3, b"\x00" * 12)
    assert buf.to_array().shape == (2, 2, 3)


def test_handle_immutable(golden):
    ds_dir, _ = golden
    handle = sb.EditHandle(os.path.join(ds_dir, "manifest.json"))
    with pytest.raises(AttributeError):
        handle.direction = "eval"
    with pytest.raises(sb.BoundaryError):
        sb.EditHandle(os.path.join(ds_dir, "manifest.json"),
                      direction="sideways")


def test_edit_dataset_tree_matches_cli(golden):
    """All 20 edited frames, all masks, depth, states, and the report
    must be byte-identical to the CLI's output tree."""
    ds_dir, cli_out = golden
    bind_out = cli_out + "_bindings"
    report = sb.edit_dataset(os.path.join(ds_dir, "manifest.json"),
                             "train", "shadow", bind_out)
    assert report["processed"] == 20
    a, b = tree_bytes(cli_out), tree_bytes(bind_out)
    assert set(a) == set(b)
    for rel in a:
        assert a[rel] == b[rel], f"{rel} differs from the CLI output"


def test_edit_frame_matches_cli_first_frames(golden):
    """Per-frame boundary call reproduces the CLI's edit of the first
    frame of every trajectory (same mid-range IK seeding)."""
    ds_dir, cli_out = golden
    handle = sb.EditHandle(os.path.join(ds_dir, "manifest.json"),
                           direction="train", mode="shadow")
    for ti in range(4):
        tdir = os.path.join(ds_dir, f"traj_{ti:03d}")
        with open(os.path.join(tdir, "states.jsonl")) as f:
            rec = json.loads(f.readline())
        img = load_image(os.path.join(tdir, "frame_0000.png"))
        depth = load_depth(os.path.join(tdir, "depth_0000.png"))
        out = sb.edit_frame(img.pixels.tobytes(), rec["joints"], handle,
                            aperture=rec["aperture"],
                            scene_depth=depth.values.tobytes())
        assert out["ik_converged"]
        cdir = os.path.join(cli_out, f"traj_{ti:03d}")
        want = load_image(os.path.join(cdir, "frame_0000.png"))
        assert out["edited"].data == want.pixels.tobytes()
        for key, name in (("active_mask", "mask_active_0000.png"),
                          ("virtual_mask", "mask_virtual_0000.png")):
            mask = load_mask(os.path.join(cdir, name))
            assert out[key] == (mask.bits.astype(np.uint8) * 255).tobytes()


def test_mode_none_returns_input_unchanged(golden):
    ds_dir, _ = golden
    handle = sb.EditHandle(os.path.join(ds_dir, "manifest.json"), mode="none")
    tdir = os.path.join(ds_dir, "traj_000")
    with open(os.path.join(tdir, "states.jsonl")) as f:
        rec = json.loads(f.readline())
    raw = load_image(os.path.join(tdir, "frame_0000.png")).pixels.tobytes()
    out = sb.edit_frame(raw, rec["joints"], handle)
    assert out["edited"].data == raw


def test_edit_frame_wrong_byte_length(golden):
    ds_dir, _ = golden
    handle = sb.EditHandle(os.path.join(ds_dir, "manifest.json"))
    k = handle.intrinsics
    expected = k.width * k.height * 3
    with pytest.raises(sb.BoundaryError, match=str(expected)):
        sb.edit_frame(b"\x00" * (expected - 1), [0.0, 0.0], handle)


def test_render_mask_matches_cli(golden, tmp_path):
    ds_dir, _ = golden
    q = [1.1, 0.8]
    out_png = str(tmp_path / "mask.png")
    subprocess.run(
        ["shadowkit", "render-mask", "--robot",
         os.path.join(ds_dir, "source.urdf"), "--q", json.dumps(q),
         "--calib", os.path.join(ds_dir, "calib.json"),
         "--robot-name", "source", "-o", out_png],
        check=True, capture_output=True)
    got = sb.render_mask(os.path.join(ds_dir, "source.urdf"), q,
                         os.path.join(ds_dir, "calib.json"), "source")
    want = load_mask(out_png)
    assert got.channels == 1
    assert got.data == (want.bits.astype(np.uint8) * 255).tobytes()
