#!/usr/bin/env python3
"""Smoke test for the stam_py extension module.

Builds nothing itself: run `cargo build -p stam-py` first (or pass
--release and build in release mode). The script locates the compiled
cdylib, imports it, and drives the main types end to end.
"""

import argparse
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module(profile: str):
    lib = REPO / "target" / profile / "libstam_py.so"
    if not lib.exists():
        sys.exit(f"{lib} not found; run `cargo build -p stam-py` first")
    staging = Path(tempfile.mkdtemp(prefix="stam_py_"))
    shutil.copy2(lib, staging / "stam_py.so")
    sys.path.insert(0, str(staging))
    import stam_py

    return stam_py


CONFIG = """\
seed = 11
input_height = 4
input_width = 4
synth_classes = 3
synth_sigma = 0.02
synth_samples = 300
per_phase_count = 120
settle_iterations = 0
layer1_capacity = 8
layer1_theta_new = 0.4
layer1_theta_merge = 0.1
layer1_alpha_floor = 0.01
"""


def check(name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"{name}: {status}" + (f" ({detail})" if detail else ""))
    if not ok:
        sys.exit(1)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--release", action="store_true", help="use the release build")
    args = parser.parse_args()
    stam_py = load_module("release" if args.release else "debug")

    # unit: running mean of a scalar stream
    unit = stam_py.StamUnit(1, capacity=4, theta_new=10.0, theta_merge=0.0, alpha_floor=0.0)
    for v in (0.0, 2.0, 4.0):
        unit.observe([v])
    (center,) = (c["center"] for c in unit.centroids())
    check("unit running mean", abs(center[0] - 2.0) < 1e-12 and len(unit) == 1)

    idx, dist = unit.nearest_centroid([5.0])
    check("unit nearest", idx == 0 and abs(dist - 3.0) < 1e-12)
    check("unit recall", unit.recall([1.9]) == [2.0])

    # reject malformed input
    try:
        unit.observe([float("nan")])
        check("unit rejects NaN", False)
    except ValueError:
        check("unit rejects NaN", True)

    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = Path(tmp) / "run.cfg"
        cfg_path.write_text(CONFIG)

        # engine: train, evaluate, checkpoint round trip
        engine = stam_py.Engine(str(cfg_path))
        consumed = engine.train()
        check("engine train", consumed == 120, f"{consumed} items")
        metrics = engine.evaluate()
        check("engine purity", metrics["purity"] >= 0.99, f"purity {metrics['purity']}")

        ckpt = Path(tmp) / "run.ckpt"
        engine.save(str(ckpt))
        reloaded = stam_py.Engine.load(str(ckpt))
        check("checkpoint round trip", reloaded.cursor == 120)
        check(
            "reload preserves metrics",
            reloaded.evaluate()["purity"] == metrics["purity"],
        )

        # settle: reconstruction matches the frame dimension and recalls a
        # stored prototype for a noiseless input
        protos = engine.prototypes()
        trace = engine.settle(protos[0])
        check(
            "settle reconstruction",
            len(trace["reconstruction"]) == 16 and trace["top_selected"] is not None,
        )

        # hierarchy built directly from config text
        h = stam_py.Hierarchy.from_config(CONFIG)
        h.settle(protos[0], learn=True)
        check("hierarchy learn settle", h.centroid_counts() == [[1]])

        # data plumbing: IDX export and parse, brightness shift
        images, labels = stam_py.gen_data(str(cfg_path), str(Path(tmp) / "data"))
        frames, height, width = stam_py.parse_idx_images(images)
        parsed_labels = stam_py.parse_idx_labels(labels)
        check(
            "idx round trip",
            (height, width) == (4, 4)
            and len(frames) == 300
            and len(parsed_labels) == 300,
        )
        shifted = stam_py.brightness_shift([0.8, 0.1], -0.5)
        check(
            "brightness shift",
            abs(shifted[0] - 0.3) < 1e-12 and shifted[1] == 0.0,
        )

        # scenario curves are deterministic
        resume_a = stam_py.Engine.load(str(ckpt))
        resume_b = stam_py.Engine.load(str(ckpt))
        rows_a = resume_a.brightness_shift_scenario(protos, -0.3, passes=2, probe_every=2)
        rows_b = resume_b.brightness_shift_scenario(protos, -0.3, passes=2, probe_every=2)
        check("scenario determinism", rows_a == rows_b and len(rows_a) > 0)

    print("all smoke tests passed")


if __name__ == "__main__":
    main()
