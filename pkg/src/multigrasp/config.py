"""Experiment configuration: one JSON document with optional sections.

Every section is optional and every key inside a section overrides the
library default.  Unknown sections or keys are rejected with the JSON path of
the offending entry.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .errors import SchemaViolation
from .gripper import ABLATIONS, GripperConfig
from .network import NetConfig, TrainConfig, desk_config
from .pipeline import TrialConfig
from .sim import OracleConfig


@dataclass(frozen=True)
class DatasetSettings:
    objects: tuple = ("banana", "cereal_box", "coffee_can", "cracker_box", "dice", "drill",
                      "golf_ball", "jello_box", "mug", "mustard", "shampoo", "soup_can")
    views_per_object: int = 20
    candidates_per_view: int = 15
    points: int = 512
    samples_per_view: int = 2500
    min_region_points: int = 20


@dataclass(frozen=True)
class EvalSettings:
    seeds: tuple = (0, 1, 2)
    test_fraction: float = 0.15


@dataclass(frozen=True)
class BenchSettings:
    trials: int = 10
    ablations: tuple = ("5type", "2type", "1type")


SCHEMA_HELP = """\
Experiment config (JSON object, every section optional):
  "gripper":   GripperConfig fields, e.g. {"d_encompassing": 0.019, "d_fingertip": 0.0822}
  "network":   {"n_types": 5, "input_points": 512,
                "sa_layers": [{"sample_count": 128, "radius": 0.015, "mlp": [32, 32],
                               "max_neighbors": 64}, ...],
                "fc_widths": [256, 128, 64, 32], "density_weighting": false}
  "train":     {"learning_rate": 1e-5, "batch_size": 16, "epochs": 10}
  "oracle":    {"antipodal_deg": 150, "retention_margin": 0.015,
                "capacity": {"pincher": 0.4, ...}, "multi_object_fails": true}
  "dataset":   {"objects": [...], "views_per_object": 20, "candidates_per_view": 15,
                "points": 512, "samples_per_view": 2500, "min_region_points": 20}
  "eval":      {"seeds": [0, 1, 2], "test_fraction": 0.15}
  "trial":     {"k": 400, "top_n": 25, "regenerations": 2, "repeat_failures": 3,
                "max_unreachable": 3, "workspace_lo": [x, y, z], "workspace_hi": [x, y, z],
                "min_elevation_deg": 15, "samples_per_view": 6400}
  "benchmark": {"trials": 10, "ablations": ["5type", "2type", "1type"]}
"""

_SECTIONS = ("gripper", "network", "train", "oracle", "dataset", "eval", "trial", "benchmark")


def _check_keys(doc, path, allowed):
    if not isinstance(doc, dict):
        raise SchemaViolation(path, "expected an object")
    for k in doc:
        if k not in allowed:
            raise SchemaViolation(f"{path}.{k}", "unknown key")


def _build(cls, doc, path, tuples=()):
    names = [f.name for f in fields(cls)]
    _check_keys(doc, path, names)
    kw = {}
    for k, v in doc.items():
        kw[k] = tuple(v) if k in tuples and isinstance(v, list) else v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise SchemaViolation(path, str(e)) from e


@dataclass(frozen=True)
class ExperimentConfig:
    gripper: GripperConfig = field(default_factory=GripperConfig)
    network: NetConfig = field(default_factory=desk_config)
    train: TrainConfig = field(default_factory=TrainConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    dataset: DatasetSettings = field(default_factory=DatasetSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    trial: TrialConfig = field(default_factory=TrialConfig)
    benchmark: BenchSettings = field(default_factory=BenchSettings)

    @classmethod
    def from_dict(cls, doc):
        _check_keys(doc, "$", _SECTIONS)
        kw = {}
        if "gripper" in doc:
            g = doc["gripper"]
            _check_keys(g, "$.gripper", GripperConfig.__dataclass_fields__)
            try:
                kw["gripper"] = GripperConfig.from_dict(g)
            except (TypeError, ValueError, KeyError) as e:
                raise SchemaViolation("$.gripper", str(e)) from e
        if "network" in doc:
            n = doc["network"]
            _check_keys(n, "$.network", NetConfig.__dataclass_fields__)
            try:
                kw["network"] = NetConfig.from_dict({**desk_config().to_dict(), **n})
            except (TypeError, ValueError, KeyError) as e:
                raise SchemaViolation("$.network", str(e)) from e
        if "train" in doc:
            kw["train"] = _build(TrainConfig, doc["train"], "$.train")
        if "oracle" in doc:
            o = dict(doc["oracle"]) if isinstance(doc["oracle"], dict) else doc["oracle"]
            if isinstance(o, dict) and "capacity" in o:
                if not isinstance(o["capacity"], dict):
                    raise SchemaViolation("$.oracle.capacity", "expected an object")
                o["capacity"] = {**OracleConfig().capacity, **o["capacity"]}
            kw["oracle"] = _build(OracleConfig, o, "$.oracle")
        if "dataset" in doc:
            kw["dataset"] = _build(DatasetSettings, doc["dataset"], "$.dataset", ("objects",))
        if "eval" in doc:
            kw["eval"] = _build(EvalSettings, doc["eval"], "$.eval", ("seeds",))
        if "trial" in doc:
            kw["trial"] = _build(TrialConfig, doc["trial"], "$.trial",
                                 ("workspace_lo", "workspace_hi"))
        if "benchmark" in doc:
            b = _build(BenchSettings, doc["benchmark"], "$.benchmark", ("ablations",))
            for i, a in enumerate(b.ablations):
                if a not in ABLATIONS:
                    raise SchemaViolation(f"$.benchmark.ablations[{i}]",
                                          f"expected one of {sorted(ABLATIONS)}")
            kw["benchmark"] = b
        return cls(**kw)

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise SchemaViolation("$", f"invalid JSON: {e}") from e
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def to_dict(self):
        def plain(obj):
            return {f.name: (list(v) if isinstance(v, tuple) else v)
                    for f in fields(obj) for v in [getattr(obj, f.name)]}
        return {
            "gripper": self.gripper.to_dict(),
            "network": self.network.to_dict(),
            "train": plain(self.train),
            "oracle": plain(self.oracle),
            "dataset": plain(self.dataset),
            "eval": plain(self.eval),
            "trial": plain(self.trial),
            "benchmark": plain(self.benchmark),
        }
