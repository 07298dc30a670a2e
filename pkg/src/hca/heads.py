"""Classifier heads over fixed features, their losses, gradients and training.

Heads work on batches: features ``F`` have shape ``(n, d)`` and logits
``(n, C)``. Every loss here is a callable ``loss_fn(Z, *args) -> (loss,
dZ)`` taking the logits, so any loss can be pushed through any head by
:func:`loss_and_grad` and checked against finite differences.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels

EPS = 1e-12
LOG_EPS = math.log(EPS)
OPTIMIZERS = ("sgd", "sgd-momentum", "adam")


class TrainingDiverged(RuntimeError):
    pass


def softmax(Z):
    Z = np.asarray(Z, dtype=np.float64)
    if not np.all(np.isfinite(Z)):
        raise FloatingPointError("non-finite logits")
    e = np.exp(Z - Z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(Z):
    Z = np.asarray(Z, dtype=np.float64)
    s = Z - Z.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LinearHead:
    kind = "linear"

    def __init__(self, d, n_classes, level=None, rng=None):
        rng = np.random.default_rng(rng)
        self.level = level
        self.params = {
            "W": _uniform(rng, (n_classes, d), d),
            "b": _uniform(rng, (n_classes,), d),
        }

    @property
    def n_classes(self):
        return self.params["W"].shape[0]

    @property
    def dim(self):
        return self.params["W"].shape[1]

    def logits(self, F):
        return self.forward_cache(F)[0]

    def forward_cache(self, F):
        F = _check_features(F, self.dim)
        return F @ self.params["W"].T + self.params["b"], F

    def backward(self, cache, dZ):
        F = cache
        return {"W": dZ.T @ F, "b": dZ.sum(axis=0)}


class TwoLayerHead:
    """Two fully connected layers with a softplus hidden layer of width d // 4."""

    kind = "two-layer"

    def __init__(self, d, n_classes, level=None, rng=None, hidden=None):
        rng = np.random.default_rng(rng)
        k = d // 4 if hidden is None else hidden
        if k < 1:
            raise ValueError("hidden width d // 4 must be at least 1")
        self.level = level
        self.params = {
            "W1": _uniform(rng, (k, d), d),
            "b1": _uniform(rng, (k,), d),
            "W2": _uniform(rng, (n_classes, k), k),
            "b2": _uniform(rng, (n_classes,), k),
        }

    @property
    def n_classes(self):
        return self.params["W2"].shape[0]

    @property
    def dim(self):
        return self.params["W1"].shape[1]

    def logits(self, F):
        return self.forward_cache(F)[0]

    def forward_cache(self, F):
        F = _check_features(F, self.dim)
        A = F @ self.params["W1"].T + self.params["b1"]
        Hd = softplus(A)
        return Hd @ self.params["W2"].T + self.params["b2"], (F, A, Hd)

    def backward(self, cache, dZ):
        F, A, Hd = cache
        dH = dZ @ self.params["W2"]
        dA = dH * sigmoid(A)
        return {"W2": dZ.T @ Hd, "b2": dZ.sum(axis=0), "W1": dA.T @ F, "b1": dA.sum(axis=0)}


HEAD_TYPES = {"linear": LinearHead, "two-layer": TwoLayerHead}


def _check_features(F, d):
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 1:
        F = F[None, :]
    if F.shape[1] != d:
        raise ValueError(f"feature dimension {F.shape[1]} does not match head dimension {d}")
    return F


def forward(head, f):
    """Softmax probabilities for one feature vector or a batch."""
    p = softmax(head.logits(f))
    return p[0] if np.ndim(f) == 1 else p


def _as_weights(weight, n):
    if weight is None:
        return np.ones(n)
    w = np.broadcast_to(np.asarray(weight, dtype=np.float64), (n,))
    return w


def ce_loss(pred, target, weight=1.0):
    """Weighted cross-entropy of probability vector(s) against target(s)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    per = -(target * np.log(np.maximum(pred, EPS))).sum(axis=-1)
    out = per * weight
    return float(out) if np.ndim(out) == 0 else out


def ce_from_logits(Z, target, weight=None):
    """Mean weighted cross-entropy over a batch and its logit gradient.

    With ``log p`` clamped at ``log(EPS)``, clamped entries contribute no
    gradient; otherwise the per-sample gradient is ``w * (p_hat - p)`` for a
    normalized target.
    """
    n = Z.shape[0]
    if target.shape != Z.shape:
        raise ValueError(f"target shape {target.shape} does not match logits {Z.shape}")
    w = _as_weights(weight, n)
    ls = log_softmax(Z)
    mask = ls > LOG_EPS
    lc = np.where(mask, ls, LOG_EPS)
    loss = -(w * (target * lc).sum(axis=1)).sum() / n
    p = np.exp(ls)
    tm = target * mask
    dZ = (w[:, None] * (p * tm.sum(axis=1, keepdims=True) - tm)) / n
    return float(loss), dZ


def total_stage1_loss(heads, f, labels, weight=None):
    """Unweighted sum of per-level cross-entropies."""
    if len(heads) != len(labels):
        raise ValueError(f"{len(heads)} heads but {len(labels)} label sets")
    F = np.atleast_2d(np.asarray(f, dtype=np.float64))
    total = 0.0
    for head, y in zip(heads, labels):
        total += ce_from_logits(head.logits(F), np.atleast_2d(y), weight)[0]
    return total


def loss_and_grad(head, F, loss_fn, *args):
    Z, cache = head.forward_cache(F)
    loss, dZ = loss_fn(Z, *args)
    if not np.all(np.isfinite(dZ)):
        raise FloatingPointError("non-finite gradient")
    return loss, head.backward(cache, dZ)


def grad(loss_fn, head, f, *args):
    """Analytic parameter gradients of ``loss_fn`` through ``head``."""
    return loss_and_grad(head, f, loss_fn, *args)[1]


def numerical_grad(head, F, loss_fn, *args, step=1e-5):
    out = {}
    for name, P in head.params.items():
        g = np.zeros_like(P)
        flat, gf = P.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = loss_fn(head.logits(F), *args)[0]
            flat[i] = orig - step
            lm = loss_fn(head.logits(F), *args)[0]
            flat[i] = orig
            gf[i] = (lp - lm) / (2 * step)
        out[name] = g
    return out


def relative_error(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_grad(head, F, loss_fn, *args, step=1e-5, floor=1e-6):
    """Max relative error between analytic and central-difference gradients."""
    analytic = grad(loss_fn, head, F, *args)
    numeric = numerical_grad(head, F, loss_fn, *args, step=step)
    return max(float(relative_error(analytic[k], numeric[k], floor).max()) for k in analytic)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("epochs, batch_size and lr must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


class Optimizer:
    def __init__(self, params, cfg):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        cfg = self.cfg
        self.t += 1
        for k, g in grads.items():
            if cfg.weight_decay and params[k].ndim > 1:
                g = g + cfg.weight_decay * params[k]
            if cfg.optimizer == "sgd":
                params[k] -= cfg.lr * g
            elif cfg.optimizer == "sgd-momentum":
                self.m[k] = 0.9 * self.m[k] + g
                params[k] -= cfg.lr * self.m[k]
            else:
                b1, b2 = 0.9, 0.999
                self.m[k] = b1 * self.m[k] + (1 - b1) * g
                self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
                mh = self.m[k] / (1 - b1 ** self.t)
                vh = self.v[k] / (1 - b2 ** self.t)
                params[k] -= cfg.lr * mh / (np.sqrt(vh) + 1e-8)


def minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def fit(heads, F, loss_fns, cfg, rng, epochs=None, monitor=None, early_stop=None):
    """Train ``heads`` jointly; ``loss_fns[i](Z, idx)`` returns ``(loss, dZ)``.

    ``idx`` is the minibatch index array so losses can look up their
    per-sample targets. Returns the per-epoch mean summed loss.
    ``early_stop=(window, rel_tol)`` stops once the best loss over the last
    ``window`` epochs fails to improve on the earlier best by ``rel_tol``.
    """
    F = np.asarray(F, dtype=np.float64)
    n = F.shape[0]
    opts = [Optimizer(h.params, cfg) for h in heads]
    curve = []
    for epoch in range(cfg.epochs if epochs is None else epochs):
        total, seen = 0.0, 0
        for idx in minibatches(n, cfg.batch_size, rng):
            Fb = F[idx]
            for head, opt, lf in zip(heads, opts, loss_fns):
                try:
                    loss, g = loss_and_grad(head, Fb, lf, idx)
                except FloatingPointError as exc:
                    raise TrainingDiverged(
                        f"{exc} at epoch {epoch} (level {head.level}, lr {cfg.lr})") from None
                if not math.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} (level {head.level}, lr {cfg.lr})")
                opt.step(head.params, g)
                total += loss * idx.size
            seen += idx.size
        curve.append(total / seen)
        if monitor is not None:
            monitor(epoch, heads)
        if early_stop is not None:
            window, tol = early_stop
            if len(curve) > window:
                before = min(curve[:-window])
                recent = min(curve[-window:])
                if recent > before * (1 - tol):
                    break
    return curve


def accuracy(head, F, classes):
    return float(np.mean(head.logits(F).argmax(axis=1) == classes))


def train_stage1(train, hierarchy, label_mode="soft", lds=False, config=None, val=None,
                 sigma=None, lds_params=(2, 1.0)):
    """Train one linear head per hierarchy level on the summed cross-entropy.

    ``train`` and ``val`` are ``(features, targets)`` pairs. Returns the
    heads (coarsest first) and a log with the loss curve and per-level
    validation accuracy per epoch.
    """
    from .labels import lds_weights, level_targets
    from .quantize import value_to_class

    cfg = config or TrainConfig()
    F, y = (np.asarray(a, dtype=np.float64) for a in train)
    rng = np.random.default_rng(cfg.seed)
    targets = level_targets(y, hierarchy, label_mode, sigma)
    w = lds_weights(y, hierarchy, *lds_params) if lds else np.ones(y.size)
    sizes = [hierarchy.level(h).n_classes for h in range(1, hierarchy.H + 1)]
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    # heads share no parameters, so one stacked layer trains them exactly as
    # separate heads would (Adam and SGD act elementwise)
    stacked = LinearHead(F.shape[1], int(offsets[-1]), rng=rng)

    stacked_targets = np.ascontiguousarray(np.concatenate(targets, axis=1))

    def loss_fn(Z, idx):
        return kernels.segment_softmax_ce(Z, offsets, stacked_targets[idx], w[idx], LOG_EPS)

    def split(head):
        out = []
        for k in range(len(sizes)):
            a, b = offsets[k], offsets[k + 1]
            hd = LinearHead.__new__(LinearHead)
            hd.level = k + 1
            hd.params = {"W": head.params["W"][a:b].copy(), "b": head.params["b"][a:b].copy()}
            out.append(hd)
        return out

    log = {"loss": [], "val_accuracy": []}
    monitor = None
    if val is not None:
        Fv, yv = (np.asarray(a, dtype=np.float64) for a in val)
        val_cls = [value_to_class(yv, hierarchy.level(h).edges) for h in range(1, hierarchy.H + 1)]

        def monitor(epoch, hs):
            log["val_accuracy"].append([accuracy(hd, Fv, c) for hd, c in zip(split(hs[0]), val_cls)])

    log["loss"] = fit([stacked], F, [loss_fn], cfg, rng, monitor=monitor)
    heads = split(stacked)
    return heads, log


def head_to_dict(head, stage=1):
    return {
        "kind": head.kind,
        "level": head.level,
        "stage": stage,
        "tag": getattr(head, "tag", None),
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in head.params.items()},
    }


def head_from_dict(d):
    cls = HEAD_TYPES[d["kind"]]
    head = cls.__new__(cls)
    head.level = d["level"]
    if d.get("tag"):
        head.tag = d["tag"]
    head.params = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
                   for k, v in d["params"].items()}
    return head


def save_checkpoint(path, hierarchy, heads, stage2=None, config=None):
    """Write heads (and an optional stage-2 head) with their hierarchy as JSON."""
    doc = {
        "format": "hca-checkpoint",
        "version": 1,
        "config": asdict(config) if config is not None else None,
        "hierarchy": hierarchy.to_dict(),
        "heads": [head_to_dict(h, 1) for h in heads],
        "distilled": [head_to_dict(h, 2) for h in (stage2 or [])],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    from .quantize import Hierarchy

    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "hca-checkpoint":
        raise ValueError(f"{path} is not an hca checkpoint")
    return (Hierarchy.from_dict(doc["hierarchy"]),
            [head_from_dict(d) for d in doc["heads"]],
            [head_from_dict(d) for d in doc.get("distilled", [])])
