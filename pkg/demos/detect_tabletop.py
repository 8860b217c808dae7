"""Capture a seeded clutter scene and print the best-ranked grasps.

Without --model a randomly initialized network is used, so the ranking only
shows the plumbing.  Train one first with `multigrasp train`.

    python demos/detect_tabletop.py --scene-seed 2 --types 2type
"""
import argparse

from multigrasp.cloud_io import SceneDescription
from multigrasp.network import EvaluatorModel, desk_config, load_model
from multigrasp.pipeline import clutter_scene, detect
from multigrasp.sim import capture_scene, default_catalog, instantiate, remove_table


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--model")
    ap.add_argument("--scene-seed", type=int, default=0)
    ap.add_argument("--types", default="5type")
    ap.add_argument("--k", type=int, default=100)
    ap.add_argument("--top", type=int, default=8)
    args = ap.parse_args()

    model = load_model(args.model) if args.model else EvaluatorModel.initialize(desk_config(), seed=0)
    scene = clutter_scene(seed=args.scene_seed)
    objs = instantiate(scene, default_catalog())
    cap = capture_scene(SceneDescription((), scene.cameras, 0.0), objs, 40000, args.scene_seed)
    cloud = remove_table(cap.cloud, 0.0)
    print(f"{len(scene.objects)} objects, {len(cloud)} points after table removal")
    decisions = detect(cloud, model, args.k, None, args.types, seed=args.scene_seed, table_height=0.0)
    for d in decisions[:args.top]:
        x, y, z = d.centroid
        print(f"  {d.probability:.3f}  {d.gtype.label:16s} at ({x:+.3f}, {y:+.3f}, {z:+.3f})")


if __name__ == "__main__":
    main()
