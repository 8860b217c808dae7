"""Command line entry point: ``multigrasp <subcommand> [options]``.

Exit status is 0 on success, 1 on usage or config errors and 2 on runtime
failures.  Every subcommand writes a JSON report into ``--out``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .cloud_io import read_ply_file, write_ply
from .config import SCHEMA_HELP, ExperimentConfig
from .encoding import crop_mask
from .errors import GraspError, ParseError, SchemaViolation
from .gripper import ABLATIONS, ALL_TYPES
from .candidates import GraspCandidate
from .network import EvaluatorModel, load_model, save_model, train
from .pipeline import (GraspDecision, clutter_benchmark, detect, evaluate_split, make_split,
                       summarize_benchmark)
from .sim import Dataset, build_dataset, default_catalog


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_json(out, name, doc):
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return path


def _say(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr)


def cmd_gen_dataset(args, cfg: ExperimentConfig):
    d = cfg.dataset
    reports = []
    t0 = time.time()
    ds = build_dataset(default_catalog(), d.views_per_object, d.candidates_per_view, args.seed,
                       cfg.gripper, cfg.oracle, d.points, d.samples_per_view,
                       d.min_region_points, list(d.objects), reports)
    ds.save(os.path.join(args.out, "dataset"))
    rep = reports[0]
    doc = {"exemplars": rep.exemplars, "candidates_generated": rep.candidates_generated,
           "candidates_pruned": rep.candidates_pruned, "dropped_all_collide": rep.dropped_all_collide,
           "positive_rates": {t.label: float(v) for t, v in zip(ALL_TYPES, rep.positive_rates)},
           "objects": list(d.objects), "seed": args.seed, "seconds": time.time() - t0}
    _write_json(args.out, "dataset_report.json", doc)
    _say(args, f"wrote {rep.exemplars} exemplars to {os.path.join(args.out, 'dataset')}")
    return 0


def cmd_train(args, cfg: ExperimentConfig):
    os.makedirs(args.out, exist_ok=True)
    ds = Dataset.load(args.dataset)
    tags = make_split(ds, args.split, args.seed, cfg.eval.test_fraction)
    ds = ds.with_split(tags)
    net = cfg.network
    types = range(ds.n_types) if args.mode == "separate" else [None]
    written = []
    logs = {}
    for t in types:
        model = EvaluatorModel.initialize(net, seed=args.seed if t is None else args.seed + t + 1)
        mask = None
        if t is not None:
            mask = np.zeros(ds.n_types)
            mask[t] = 1.0
        res = train(model, ds, cfg.train, type_mask=mask, plan=ds.plan(net))
        name = "model.ckpt" if t is None else f"model_{ALL_TYPES[t].label}.ckpt"
        save_model(res.best_model, os.path.join(args.out, name))
        csv_name = name.replace(".ckpt", "_log.csv")
        with open(os.path.join(args.out, csv_name), "w", encoding="utf-8") as fh:
            fh.write(res.csv())
        written.append(name)
        logs[name] = {"best_epoch": int(res.best_epoch),
                      "final_loss": float(res.log[-1].loss) if res.log else None}
    _write_json(args.out, "train_report.json",
                {"mode": args.mode, "split": args.split, "seed": args.seed,
                 "checkpoints": written, "runs": logs})
    _say(args, f"wrote {', '.join(written)} to {args.out}")
    return 0


def cmd_eval_split(args, cfg: ExperimentConfig):
    ds = Dataset.load(args.dataset)
    rep = evaluate_split(ds, args.split, args.mode, cfg.network, cfg.train, cfg.eval.seeds)
    path = _write_json(args.out, f"eval_{args.mode}_{args.split}.json", rep.to_dict())
    print(json.dumps({"avg_accuracy": rep.avg_accuracy, "avg_precision": rep.avg_precision,
                      "avg_f1": rep.avg_f1, "report": path}))
    return 0


def _parse_types(text):
    if text is None:
        return "5type"
    if text.lower() in ABLATIONS:
        return text.lower()
    return [s.strip() for s in text.split(",") if s.strip()]


def cmd_detect(args, cfg: ExperimentConfig):
    cloud = read_ply_file(args.cloud)
    model = load_model(args.model)
    ranked = detect(cloud, model, args.k, cfg.gripper, _parse_types(args.types), args.seed,
                    table_height=args.table_height)
    doc = {"k": args.k, "count": len(ranked),
           "decisions": [d.to_dict() for d in ranked[: args.top]]}
    _write_json(args.out, "decisions.json", doc)
    print(json.dumps(doc["decisions"][:1]))
    return 0


def cmd_clutter_bench(args, cfg: ExperimentConfig):
    model = load_model(args.model)
    trials = args.trials or cfg.benchmark.trials
    res = clutter_benchmark(model, trials, cfg.benchmark.ablations, args.seed, cfg.gripper,
                            default_catalog(), cfg.oracle, cfg.trial)
    doc = {"summary": summarize_benchmark(res),
           "trials": {ab: [r.to_dict() for r in reps] for ab, reps in res.items()}}
    _write_json(args.out, "clutter_bench.json", doc)
    print(json.dumps(doc["summary"]))
    return 0


def cmd_viz(args, cfg: ExperimentConfig):
    cloud = read_ply_file(args.cloud)
    with open(args.decisions, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    decisions = doc["decisions"] if isinstance(doc, dict) else doc
    if not decisions:
        raise GraspError("decision file holds no decisions")
    top = GraspCandidate.from_dict(decisions[0])
    inside = crop_mask(top.to_local(cloud.points), cfg.gripper)
    colors = np.tile(np.array([[150, 150, 150]], dtype=np.uint8), (len(cloud), 1))
    colors[inside] = (220, 40, 40)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "top_grasp.ply")
    with open(path, "wb") as fh:
        fh.write(write_ply(cloud, colors))
    print(json.dumps({"ply": path, "highlighted": int(inside.sum())}))
    return 0


def build_parser():
    p = _Parser(prog="multigrasp", description="Multi-type grasp evaluation toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    sub.add_parser("gen-dataset", parents=[common], help="build a labeled dataset")

    s = sub.add_parser("train", parents=[common], help="train on one split")
    s.add_argument("--dataset", required=True)
    s.add_argument("--mode", choices=("combined", "separate"), default="combined")
    s.add_argument("--split", choices=("random", "object"), default="random")

    s = sub.add_parser("eval-split", parents=[common], help="3-seed split evaluation")
    s.add_argument("--dataset", required=True)
    s.add_argument("--mode", choices=("combined", "separate"), default="combined")
    s.add_argument("--split", choices=("random", "object"), default="random")

    s = sub.add_parser("detect", parents=[common], help="rank grasps on a cloud")
    s.add_argument("--cloud", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--k", type=int, default=400)
    s.add_argument("--types", help="5type, 2type, 1type or a comma list of type names")
    s.add_argument("--top", type=int, default=25, help="decisions written to the report")
    s.add_argument("--table-height", type=float, default=None)

    s = sub.add_parser("clutter-bench", parents=[common], help="simulated table clearing")
    s.add_argument("--model", required=True)
    s.add_argument("--trials", type=int, default=None)

    s = sub.add_parser("viz", parents=[common], help="color the top grasp region")
    s.add_argument("--cloud", required=True)
    s.add_argument("--decisions", required=True)
    return p


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "eval-split": cmd_eval_split,
    "detect": cmd_detect,
    "clutter-bench": cmd_clutter_bench,
    "viz": cmd_viz,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required")
    except UsageError as e:
        print(f"usage error: {e}\n", file=sys.stderr)
        parser.print_help(sys.stderr)
        return 1
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    except SchemaViolation as e:
        print(f"config error: {e}\n\n{SCHEMA_HELP}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args, cfg)
    except (GraspError, ParseError, OSError, ValueError, KeyError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
