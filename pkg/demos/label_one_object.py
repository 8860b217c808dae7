"""Sample grasps on one captured object and show what the oracle says per type.

    python demos/label_one_object.py --object mustard --views 3
"""
import argparse
from collections import Counter

from multigrasp.candidates import generate, prune
from multigrasp.gripper import ALL_TYPES, GripperConfig
from multigrasp.sim import capture_scene, default_catalog, instantiate, label_candidate, object_views, remove_table


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--object", default="mustard")
    ap.add_argument("--views", type=int, default=3)
    ap.add_argument("--k", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = GripperConfig()
    catalog = default_catalog()
    tally = {t: Counter() for t in ALL_TYPES}
    for v, scene in enumerate(object_views(catalog[args.object], args.views, args.seed)):
        objs = instantiate(scene, catalog)
        cloud = remove_table(capture_scene(scene, objs, 2500, args.seed + v).cloud, 0.0)
        cands = prune(generate(cloud, args.k, cfg, seed=args.seed + v, strict=False), cloud, cfg)
        for c in cands:
            for t, out in zip(ALL_TYPES, label_candidate(c, objs, 0.0, cfg).outcomes):
                tally[t][out.failure] += 1
    print(f"{args.object}: {sum(tally[ALL_TYPES[0]].values())} candidates over {args.views} views")
    for t in ALL_TYPES:
        row = ", ".join(f"{k} {n}" for k, n in tally[t].most_common())
        print(f"  {t.label:16s} {row}")


if __name__ == "__main__":
    main()
