"""Point-cloud grasp evaluator with joint per-type binary heads.

The encoder is a stack of simplified point-convolution set-abstraction layers:
farthest-point sampling picks centroids, every centroid groups all valid points
within a radius, a shared MLP runs on the (radius-normalized) relative
coordinates concatenated with the previous layer's features, and the results
are mean pooled.  A global mean over the last layer's centroids feeds five
fully connected layers; the last one emits a logit pair per grasp type.

Sampling and grouping depend only on the input coordinates, so they are
computed once per encoding (:func:`build_plan`) and reused across epochs.
All gradients are derived by hand.
"""
from __future__ import annotations

import base64
import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BufferLengthMismatch, EmptySplit, ManifestMismatch, ShapeMismatch

CHECKPOINT_FORMAT = "multigrasp-checkpoint/1"


# --------------------------------------------------------------------------- #
# configuration
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SALayerConfig:
    sample_count: int
    radius: float
    mlp: tuple
    max_neighbors: int | None = None


@dataclass(frozen=True)
class NetConfig:
    n_types: int = 5
    input_points: int = 512
    sa_layers: tuple = (
        SALayerConfig(128, 0.015, (32, 32), 32),
        SALayerConfig(32, 0.03, (64, 64), 32),
    )
    fc_widths: tuple = (256, 128, 64, 32)
    density_weighting: bool = False
    # first-layer points also carry their grasp-frame position divided by this
    # length, so the network knows where surfaces sit relative to the fingers
    position_scale: float = 0.05

    def __post_init__(self):
        if len(self.fc_widths) != 4:
            raise ValueError("the head has five fully connected layers: give four hidden widths")
        if self.n_types < 1 or not self.sa_layers:
            raise ValueError("need at least one grasp type and one set-abstraction layer")
        if not self.position_scale >= 0:
            raise ValueError("position_scale must be non-negative (0 disables position input)")

    @property
    def output_width(self):
        return 2 * self.n_types

    def to_dict(self):
        d = asdict(self)
        d["sa_layers"] = [dict(asdict(s), mlp=list(s.mlp)) for s in self.sa_layers]
        d["fc_widths"] = list(self.fc_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["sa_layers"] = tuple(SALayerConfig(s["sample_count"], s["radius"], tuple(s["mlp"]),
                                             s.get("max_neighbors")) for s in d["sa_layers"])
        d["fc_widths"] = tuple(d["fc_widths"])
        return cls(**d)


def desk_config(n_types=5, input_points=512):
    return NetConfig(n_types=n_types, input_points=input_points)


def full_config(n_types=5):
    """Larger trunk with four set-abstraction layers.

    The first layer's 512 centers and the third layer's final width of 64 are
    fixed; the other sizes are placeholders.
    """
    return NetConfig(
        n_types=n_types,
        input_points=1024,
        sa_layers=(
            SALayerConfig(512, 0.01, (32, 32, 64)),
            SALayerConfig(256, 0.02, (64, 64, 128)),
            SALayerConfig(128, 0.03, (64, 64, 64)),
            SALayerConfig(32, 0.05, (128, 128, 256)),
        ),
        fc_widths=(512, 256, 128, 64),
    )


# --------------------------------------------------------------------------- #
# model
# --------------------------------------------------------------------------- #

def _layer_names(cfg: NetConfig):
    names = []
    for l, sa in enumerate(cfg.sa_layers):
        for j in range(len(sa.mlp)):
            names += [f"sa{l}.mlp{j}.weight", f"sa{l}.mlp{j}.bias"]
    for j in range(5):
        names += [f"fc{j}.weight", f"fc{j}.bias"]
    return names


def _layer_shapes(cfg: NetConfig):
    shapes = {}
    cin = 3 if cfg.position_scale > 0 else 0
    for l, sa in enumerate(cfg.sa_layers):
        width = 3 + cin
        for j, cout in enumerate(sa.mlp):
            shapes[f"sa{l}.mlp{j}.weight"] = (width, cout)
            shapes[f"sa{l}.mlp{j}.bias"] = (cout,)
            width = cout
        cin = width
    widths = [cin, *cfg.fc_widths, cfg.output_width]
    for j in range(5):
        shapes[f"fc{j}.weight"] = (widths[j], widths[j + 1])
        shapes[f"fc{j}.bias"] = (widths[j + 1],)
    return shapes


class EvaluatorModel:
    """Weights plus configuration.  ``params`` maps layer names to arrays."""

    def __init__(self, cfg: NetConfig, params=None, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        shapes = _layer_shapes(cfg)
        if params is None:
            params = {k: np.zeros(s, dtype=self.dtype) for k, s in shapes.items()}
        self.params = {k: np.asarray(params[k], dtype=self.dtype).reshape(shapes[k])
                       for k in _layer_names(cfg)}

    @classmethod
    def initialize(cls, cfg: NetConfig, seed=0, dtype=np.float32):
        rng = np.random.Generator(np.random.Philox(int(seed)))
        params = {}
        shapes = _layer_shapes(cfg)
        for name in _layer_names(cfg):
            shape = shapes[name]
            if name.endswith("bias"):
                params[name] = np.zeros(shape)
            elif name == "fc4.weight":
                params[name] = rng.normal(0.0, np.sqrt(1.0 / shape[0]), size=shape)
            else:
                params[name] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
        return cls(cfg, params, dtype)

    def copy(self):
        return EvaluatorModel(self.cfg, {k: v.copy() for k, v in self.params.items()}, self.dtype)

    def astype(self, dtype):
        return EvaluatorModel(self.cfg, self.params, dtype)

    @property
    def layer_names(self):
        return _layer_names(self.cfg)

    def parameter_count(self):
        return int(sum(v.size for v in self.params.values()))


def parameter_count(model_or_models):
    if isinstance(model_or_models, EvaluatorModel):
        return model_or_models.parameter_count()
    return int(sum(m.parameter_count() for m in model_or_models))


# --------------------------------------------------------------------------- #
# sampling / grouping plans
# --------------------------------------------------------------------------- #

def _sq_dist(a, b):
    """Squared distance over the last axis, summed component by component.

    Same rounding as ``np.sum(.., axis=-1)`` on length-3 vectors but without
    the slow short-axis reduction.
    """
    d = a - b
    return d[..., 0] ** 2 + d[..., 1] ** 2 + d[..., 2] ** 2


def farthest_point_sample(xyz, mask, count):
    """Batched farthest-point sampling over valid points.

    Starts from the valid point farthest from the valid centroid, so the
    result does not depend on point order.  Returns ``(idx, valid)`` of shape
    ``(B, count)``; entries past a cloud's valid-point count are invalid.
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    B, N, _ = xyz.shape
    n_valid = mask.sum(axis=1)
    denom = np.maximum(n_valid, 1)[:, None]
    mean = (xyz * mask[..., None]).sum(axis=1) / denom
    d0 = _sq_dist(xyz, mean[:, None])
    d0 = np.where(mask, d0, -np.inf)
    far = np.argmax(d0, axis=1)
    dmin = np.where(mask, np.inf, -np.inf)
    idx = np.zeros((B, count), dtype=np.int64)
    rows = np.arange(B)
    X, Y, Z = (np.ascontiguousarray(xyz[..., i]) for i in range(3))
    for s in range(count):
        idx[:, s] = far
        p = xyz[rows, far]
        d = (X - p[:, 0:1]) ** 2 + (Y - p[:, 1:2]) ** 2 + (Z - p[:, 2:3]) ** 2
        dmin = np.minimum(dmin, d)
        far = np.argmax(dmin, axis=1)
    valid = np.arange(count)[None, :] < n_valid[:, None]
    return idx, valid


def ball_group(xyz, mask, centers, center_valid, radius, max_neighbors=None, density_weighting=False):
    """Group every valid point within ``radius`` of each valid center.

    Returns neighbor indices ``(B, S, K)`` and pooling weights ``(B, S, K)``
    that sum to one over each valid center's neighborhood.  With
    ``max_neighbors`` set, crowded neighborhoods keep their nearest points.
    """
    d2 = _sq_dist(centers[:, :, None, :], xyz[:, None, :, :])
    within = (d2 <= radius * radius) & mask[:, None, :] & center_valid[:, :, None]
    counts = within.sum(axis=-1)
    K = max(int(counts.max()) if counts.size else 1, 1)
    if max_neighbors is not None:
        K = min(K, int(max_neighbors))
    if max_neighbors is not None and counts.size and int(counts.max()) > K:
        # keep the K nearest so the choice does not depend on point order
        order = np.argsort(np.where(within, d2, np.inf), axis=-1, kind="stable")[..., :K]
    else:
        order = np.argsort(~within, axis=-1, kind="stable")[..., :K]
    sel = np.take_along_axis(within, order, axis=-1)
    w = sel.astype(np.float64)
    if density_weighting:
        pd2 = _sq_dist(xyz[:, :, None, :], xyz[:, None, :, :])
        dens = ((pd2 <= radius * radius) & mask[:, None, :]).sum(axis=-1).astype(np.float64)
        inv = 1.0 / np.maximum(np.take_along_axis(dens[:, None, :].repeat(order.shape[1], 1),
                                                  order, axis=-1), 1.0)
        w = w * inv
    tot = w.sum(axis=-1, keepdims=True)
    w = np.where(tot > 0, w / np.where(tot > 0, tot, 1.0), 0.0)
    return order, w


@dataclass
class LayerPlan:
    nbr: np.ndarray      # (B, S, K) indices into the previous level
    weight: np.ndarray   # (B, S, K)
    rel: np.ndarray      # (B, S, K, 3) radius-normalized offsets (+3 position channels first layer)
    centers: np.ndarray  # (B, S, 3)
    valid: np.ndarray    # (B, S)


@dataclass
class Plan:
    layers: list
    pool: np.ndarray     # (B, S_last) global pooling weights

    @property
    def batch(self):
        return self.pool.shape[0]


def build_plan(points, mask, cfg: NetConfig, chunk=64) -> Plan:
    """Sampling and grouping for a batch of encodings ``(B, M, 3)``."""
    points = np.asarray(points, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if points.ndim != 3 or points.shape[1] != cfg.input_points or points.shape[2] != 3:
        raise ShapeMismatch(f"expected (B, {cfg.input_points}, 3) points, got {points.shape}")
    if points.shape[0] > chunk:
        parts = [build_plan(points[i:i + chunk], mask[i:i + chunk], cfg, chunk)
                 for i in range(0, points.shape[0], chunk)]
        return concat_plans(parts)
    layers = []
    xyz, valid = points, mask
    for sa in cfg.sa_layers:
        idx, cvalid = farthest_point_sample(xyz, valid, sa.sample_count)
        centers = np.take_along_axis(xyz, idx[..., None], axis=1)
        nbr, w = ball_group(xyz, valid, centers, cvalid, sa.radius, sa.max_neighbors,
                            cfg.density_weighting)
        B, S, K = nbr.shape
        gathered = xyz[np.arange(B)[:, None, None], nbr]
        rel = (gathered - centers[:, :, None, :]) / sa.radius
        if not layers and cfg.position_scale > 0:
            rel = np.concatenate([rel, gathered / cfg.position_scale], axis=-1)
        rel = rel * (w > 0)[..., None]
        # compact storage; forward casts to the model dtype
        layers.append(LayerPlan(nbr.astype(np.int32), w.astype(np.float32),
                                rel.astype(np.float32), centers, cvalid))
        xyz, valid = centers, cvalid
    cnt = valid.sum(axis=1, keepdims=True)
    pool = np.where(cnt > 0, valid / np.maximum(cnt, 1), 0.0)
    return Plan(layers, pool)


def _pad_k(a, K, fill=0):
    if a.shape[2] == K:
        return a
    pad = [(0, 0)] * a.ndim
    pad[2] = (0, K - a.shape[2])
    return np.pad(a, pad, constant_values=fill)


def concat_plans(plans) -> Plan:
    layers = []
    for l in range(len(plans[0].layers)):
        ls = [p.layers[l] for p in plans]
        K = max(x.nbr.shape[2] for x in ls)
        layers.append(LayerPlan(
            np.concatenate([_pad_k(x.nbr, K) for x in ls]),
            np.concatenate([_pad_k(x.weight, K) for x in ls]),
            np.concatenate([_pad_k(x.rel, K) for x in ls]),
            np.concatenate([x.centers for x in ls]),
            np.concatenate([x.valid for x in ls]),
        ))
    return Plan(layers, np.concatenate([p.pool for p in plans]))


def slice_plan(plan: Plan, index) -> Plan:
    index = np.asarray(index)
    layers = []
    for lp in plan.layers:
        w = lp.weight[index]
        K = max(int((w > 0).sum(axis=-1).max()) if w.size else 1, 1)
        layers.append(LayerPlan(lp.nbr[index][:, :, :K], w[:, :, :K], lp.rel[index][:, :, :K],
                                lp.centers[index], lp.valid[index]))
    return Plan(layers, plan.pool[index])


def plan_for(encodings, cfg: NetConfig) -> Plan:
    pts = np.stack([e.points for e in encodings])
    mask = np.stack([e.mask for e in encodings])
    return build_plan(pts, mask, cfg)


# --------------------------------------------------------------------------- #
# forward / backward
# --------------------------------------------------------------------------- #

def _relu(x):
    return np.maximum(x, 0)


def forward_plan(model: EvaluatorModel, plan: Plan, keep_cache=False, gates=None):
    """Logits ``(B, n, 2)`` for a precomputed plan.

    ``gates`` (from :func:`relu_gates`) replaces every ReLU by a fixed 0/1
    mask, which turns the network into the linear piece active at the point
    where the gates were recorded; finite-difference checks use it so that
    steps do not cross kinks.
    """
    P = model.params
    dt = model.dtype
    cache = {"sa": [], "fc": []}

    def act(z, key):
        if gates is None:
            return _relu(z)
        return z * gates[key]
    F = None
    B = plan.batch
    bidx = np.arange(B)[:, None, None]
    for l, (sa, lp) in enumerate(zip(model.cfg.sa_layers, plan.layers)):
        rel = lp.rel.astype(dt, copy=False)
        X = rel if F is None else np.concatenate([rel, F[bidx, lp.nbr]], axis=-1)
        ins, pre = [], []
        h = X
        for j in range(len(sa.mlp)):
            ins.append(h)
            z = h @ P[f"sa{l}.mlp{j}.weight"] + P[f"sa{l}.mlp{j}.bias"]
            pre.append(z)
            h = act(z, (l, j))
        w = lp.weight.astype(dt, copy=False)
        F = np.einsum("bsk,bskc->bsc", w, h)
        if keep_cache:
            cache["sa"].append((ins, pre))
    pool = plan.pool.astype(dt, copy=False)
    g = np.einsum("bs,bsc->bc", pool, F)
    h = g
    for j in range(5):
        x_in = h
        z = h @ P[f"fc{j}.weight"] + P[f"fc{j}.bias"]
        h = act(z, ("fc", j)) if j < 4 else z
        if keep_cache:
            cache["fc"].append((x_in, z))
    logits = h.reshape(B, model.cfg.n_types, 2)
    return (logits, cache) if keep_cache else logits


def relu_gates(model: EvaluatorModel, plan: Plan):
    """0/1 masks of every ReLU at the current parameters, keyed like ``forward_plan``."""
    _, cache = forward_plan(model, plan, keep_cache=True)
    gates = {}
    for l, (_, pre) in enumerate(cache["sa"]):
        for j, z in enumerate(pre):
            gates[(l, j)] = (z > 0).astype(model.dtype)
    for j, (_, z) in enumerate(cache["fc"][:4]):
        gates[("fc", j)] = (z > 0).astype(model.dtype)
    return gates


def backward_plan(model: EvaluatorModel, plan: Plan, cache, dlogits):
    """Gradients of a scalar w.r.t. every parameter, given ``dL/dlogits``."""
    P = model.params
    dt = model.dtype
    grads = {}
    B = plan.batch
    dh = dlogits.reshape(B, -1).astype(dt, copy=False)
    for j in reversed(range(5)):
        x_in, z = cache["fc"][j]
        dz = dh if j == 4 else dh * (z > 0)
        grads[f"fc{j}.weight"] = x_in.T @ dz
        grads[f"fc{j}.bias"] = dz.sum(axis=0)
        dh = dz @ P[f"fc{j}.weight"].T
    pool = plan.pool.astype(dt, copy=False)
    dF = pool[:, :, None] * dh[:, None, :]
    for l in reversed(range(len(model.cfg.sa_layers))):
        sa, lp = model.cfg.sa_layers[l], plan.layers[l]
        ins, pre = cache["sa"][l]
        w = lp.weight.astype(dt, copy=False)
        dA = w[..., None] * dF[:, :, None, :]
        for j in reversed(range(len(sa.mlp))):
            dZ = dA * (pre[j] > 0)
            x = ins[j]
            cin, cout = x.shape[-1], dZ.shape[-1]
            grads[f"sa{l}.mlp{j}.weight"] = x.reshape(-1, cin).T @ dZ.reshape(-1, cout)
            grads[f"sa{l}.mlp{j}.bias"] = dZ.reshape(-1, cout).sum(axis=0)
            if j > 0 or l > 0:
                dA = dZ @ P[f"sa{l}.mlp{j}.weight"].T
        if l > 0:
            dfeat = dA[..., 3:]
            S_prev = plan.layers[l - 1].nbr.shape[1]
            C = dfeat.shape[-1]
            flat = (np.arange(B)[:, None, None] * S_prev + lp.nbr).ravel()
            dF = np.zeros((B * S_prev, C), dtype=dt)
            np.add.at(dF, flat, dfeat.reshape(-1, C))
            dF = dF.reshape(B, S_prev, C)
    return {k: grads[k].astype(dt, copy=False) for k in model.layer_names}


def forward(model: EvaluatorModel, encoding):
    """Logit matrix ``(n, 2)`` for one encoding."""
    if encoding.size != model.cfg.input_points:
        raise ShapeMismatch(f"encoding has {encoding.size} points, model expects "
                            f"{model.cfg.input_points}")
    return forward_plan(model, plan_for([encoding], model.cfg))[0]


def softmax_rows(logits):
    z = np.asarray(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def probabilities(logits):
    """Success probabilities: column 1 of the row-wise softmax."""
    return softmax_rows(logits)[..., 1]


def predict_probs(model: EvaluatorModel, encoding):
    return probabilities(forward(model, encoding))


def predict_batch(model: EvaluatorModel, encodings=None, plan=None, batch_size=256):
    plan = plan if plan is not None else plan_for(encodings, model.cfg)
    out = []
    for i in range(0, plan.batch, batch_size):
        idx = np.arange(i, min(i + batch_size, plan.batch))
        out.append(probabilities(forward_plan(model, slice_plan(plan, idx)).astype(np.float64)))
    return np.concatenate(out) if out else np.zeros((0, model.cfg.n_types))


# --------------------------------------------------------------------------- #
# loss
# --------------------------------------------------------------------------- #

def log_softmax_rows(logits):
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.sum(np.exp(z - m), axis=-1, keepdims=True))


def loss_summed_ce(logits, labels, type_mask=None):
    """Summed per-type cross entropy and its gradient w.r.t. the logits.

    ``logits`` is ``(n, 2)`` or ``(B, n, 2)``; ``labels`` the matching 0/1
    array.  Batched input returns the batch mean.  ``type_mask`` zeroes the
    contribution of excluded types.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    single = z.ndim == 2
    if single:
        z, y = z[None], y[None]
    B, n, _ = z.shape
    if y.shape != (B, n):
        raise ShapeMismatch(f"labels shape {y.shape} does not match logits {z.shape}")
    logp = log_softmax_rows(z)
    onehot = np.stack([1 - y, y], axis=-1).astype(np.float64)
    mask = np.ones(n) if type_mask is None else np.asarray(type_mask, dtype=np.float64)
    per = -(onehot * logp).sum(axis=-1) * mask
    loss = per.sum() / B
    grad = (np.exp(logp) - onehot) * mask[None, :, None] / B
    return (float(loss), grad[0] * 1.0) if single else (float(loss), grad)


def backward(model: EvaluatorModel, encodings, labels, type_mask=None):
    """Loss and parameter gradients for one exemplar or a batch (mean reduction)."""
    if hasattr(encodings, "points"):
        encodings = [encodings]
        labels = np.asarray(labels)[None]
    plan = plan_for(encodings, model.cfg)
    logits, cache = forward_plan(model, plan, keep_cache=True)
    loss, dlog = loss_summed_ce(logits, labels, type_mask)
    return loss, backward_plan(model, plan, cache, dlog)


# --------------------------------------------------------------------------- #
# optimizer and training
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


class Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        b1t = 1 - c.beta1 ** self.t
        b2t = 1 - c.beta2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            mhat = self.m[k] / b1t
            vhat = self.v[k] / b2t
            params[k] = (params[k] - c.learning_rate * mhat / (np.sqrt(vhat) + c.eps)).astype(
                params[k].dtype, copy=False)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: np.ndarray
    test_accuracy: np.ndarray
    test_predictions: np.ndarray = field(repr=False, default=None)


@dataclass
class TrainResult:
    model: EvaluatorModel
    log: list
    best_epoch: int
    best_model: EvaluatorModel
    best_predictions: np.ndarray = None

    def csv(self):
        n = len(self.log[0].train_accuracy) if self.log else 0
        head = ["epoch", "loss"] + [f"train_acc_{i}" for i in range(n)] + \
            [f"test_acc_{i}" for i in range(n)]
        rows = [",".join(head)]
        for r in self.log:
            vals = [str(r.epoch), repr(r.loss)] + [repr(float(a)) for a in r.train_accuracy] + \
                [repr(float(a)) for a in r.test_accuracy]
            rows.append(",".join(vals))
        return "\n".join(rows) + "\n"


def _accuracy(probs, labels):
    return ((probs >= 0.5) == labels.astype(bool)).mean(axis=0)


def train(model: EvaluatorModel, dataset, cfg: TrainConfig, type_mask=None, select="mean",
          plan=None, progress=None) -> TrainResult:
    """Train ``model`` in place with Adam on the summed cross entropy.

    ``dataset`` needs ``labels`` ``(N, n)``, ``split`` (array of "train"/"test")
    and either ``plan`` (precomputed) or ``encodings``.  After every epoch the
    test split is scored; the returned snapshot is the epoch with the highest
    mean test accuracy over the types in ``type_mask`` (``select="mean"``).
    """
    labels = np.asarray(dataset.labels)
    split = np.asarray(dataset.split)
    tr = np.nonzero(split == "train")[0]
    te = np.nonzero(split == "test")[0]
    if len(tr) == 0 or len(te) == 0:
        raise EmptySplit("training needs non-empty train and test splits")
    if plan is None:
        plan = dataset.plan(model.cfg) if hasattr(dataset, "plan") else plan_for(dataset.encodings, model.cfg)
    test_plan = slice_plan(plan, te)
    rng = np.random.Generator(np.random.Philox(int(cfg.seed)))
    opt = Adam(model.params, cfg)
    mask = np.ones(model.cfg.n_types) if type_mask is None else np.asarray(type_mask, dtype=np.float64)
    sel = mask > 0
    log = []
    best_score, best_epoch, best_model, best_pred = -np.inf, -1, model.copy(), None
    for epoch in range(1, cfg.epochs + 1):
        order = tr[rng.permutation(len(tr))]
        total, seen = 0.0, 0
        running = np.zeros((len(order), model.cfg.n_types))
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            bp = slice_plan(plan, idx)
            logits, cache = forward_plan(model, bp, keep_cache=True)
            running[i:i + len(idx)] = probabilities(logits)
            loss, dlog = loss_summed_ce(logits, labels[idx], mask)
            grads = backward_plan(model, bp, cache, dlog)
            opt.step(model.params, grads)
            total += loss * len(idx)
            seen += len(idx)
        test_pred = predict_batch(model, plan=test_plan)
        # train accuracy is the running score of the minibatches seen this epoch
        rec = EpochRecord(epoch, total / max(seen, 1), _accuracy(running, labels[order]),
                          _accuracy(test_pred, labels[te]), test_pred)
        log.append(rec)
        score = rec.test_accuracy[sel].mean()
        if score > best_score:
            best_score, best_epoch, best_model, best_pred = score, epoch, model.copy(), test_pred
        if progress:
            progress(rec)
    if best_epoch < 0:
        best_pred = predict_batch(model, plan=test_plan)
        best_epoch = 0
    return TrainResult(model, log, best_epoch, best_model, best_pred)


# --------------------------------------------------------------------------- #
# checkpoints
# --------------------------------------------------------------------------- #

def dumps_model(model: EvaluatorModel) -> str:
    """JSON manifest with base64 little-endian float32 buffers."""
    layers = []
    for name in model.layer_names:
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        layers.append({"name": name, "shape": list(arr.shape),
                       "data": base64.b64encode(arr.tobytes()).decode("ascii")})
    return json.dumps({"format": CHECKPOINT_FORMAT, "config": model.cfg.to_dict(),
                       "layers": layers}, indent=1)


def loads_model(text) -> EvaluatorModel:
    try:
        doc = json.loads(text)
        cfg = NetConfig.from_dict(doc["config"])
        layers = doc["layers"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ManifestMismatch(f"unreadable checkpoint manifest: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ManifestMismatch(f"unknown checkpoint format {doc.get('format')!r}")
    shapes = _layer_shapes(cfg)
    names = [l.get("name") for l in layers]
    if names != _layer_names(cfg):
        raise ManifestMismatch("layer names do not match the configuration")
    params = {}
    for l in layers:
        shape = tuple(l["shape"])
        if shape != shapes[l["name"]]:
            raise ManifestMismatch(f"{l['name']}: shape {shape} != expected {shapes[l['name']]}")
        try:
            raw = base64.b64decode(l["data"], validate=True)
        except (ValueError, TypeError):
            raise BufferLengthMismatch(f"{l['name']}: buffer is not valid base64") from None
        if len(raw) != 4 * int(np.prod(shape)):
            raise BufferLengthMismatch(f"{l['name']}: {len(raw)} bytes for shape {shape}")
        params[l["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    return EvaluatorModel(cfg, params, np.float32)


def save_model(model: EvaluatorModel, path):
    with open(path, "w") as fh:
        fh.write(dumps_model(model))


def load_model(path) -> EvaluatorModel:
    with open(path) as fh:
        return loads_model(fh.read())
