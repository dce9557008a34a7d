"""Hard-parameter-sharing feed-forward network in plain numpy.

A shared trunk of two ReLU layers (with inverted dropout after each) feeds
one softmax head per task; an optional per-head layer normalisation is
applied to the trunk output before each head. Gradients are analytic and
all parameters live in one flat float64 buffer so the optimiser is a
handful of vector operations.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .ingest import N_CLASSES, TASKS

MT_HIDDEN = (256, 128)
ST_HIDDEN = (64, 32)
LN_EPS = 1e-5
GRID = {
    "learning_rate": (1e-3, 1e-4, 5e-5, 1e-5),
    "batch_size": (16, 32, 64, 128),
    "weight_decay": (1e-3, 1e-4, 1e-5),
}
FRACTIONS = (1.0, 0.1, 0.01, 0.001)


class EmptyBatchError(ValueError):
    def __init__(self):
        super().__init__("empty_batch")


def substream(seed, name):
    """Independent generator for a named stage, derived from one seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 64
    weight_decay: float = 1e-4
    max_epochs: int = 200
    patience: int = 20
    dropout: float = 0.3
    task_weights: dict | None = None
    seed: int = 0
    layer_norm: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("learning_rate, batch_size and max_epochs must be positive")
        if self.weight_decay < 0 or self.patience < 0:
            raise ValueError("weight_decay and patience must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")

    def weight(self, task):
        if not self.task_weights:
            return 1.0
        return float(self.task_weights.get(task, 1.0))

    def in_grid(self):
        return all(getattr(self, k) in v for k, v in GRID.items())

    def digest(self):
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


class ParamStore:
    """Named array views onto one flat buffer."""

    def __init__(self, shapes):
        self.shapes = dict(shapes)
        self.size = sum(int(np.prod(s)) for s in self.shapes.values())
        self.flat = np.zeros(self.size)
        self.views = self._views(self.flat)

    def _views(self, buf):
        out, off = {}, 0
        for name, shape in self.shapes.items():
            n = int(np.prod(shape))
            out[name] = buf[off: off + n].reshape(shape)
            off += n
        return out

    def zeros_like(self):
        buf = np.zeros(self.size)
        return buf, self._views(buf)

    def __getitem__(self, name):
        return self.views[name]

    def names(self):
        return list(self.shapes)


class MultiTaskNet:
    """Shared trunk + one softmax head per task.

    ``heads`` maps task name to number of classes; a single-entry mapping
    gives a single-task network.
    """

    def __init__(self, n_inputs, hidden=MT_HIDDEN, heads=None, dropout=0.3,
                 layer_norm=False, seed=0):
        self.n_inputs = int(n_inputs)
        self.hidden = tuple(int(h) for h in hidden)
        self.heads = dict(heads if heads is not None else N_CLASSES)
        self.tasks = tuple(self.heads)
        self.dropout = float(dropout)
        self.layer_norm = bool(layer_norm)
        self.seed = seed

        shapes = {}
        fan = self.n_inputs
        for i, h in enumerate(self.hidden):
            shapes[f"trunk{i}.W"] = (fan, h)
            shapes[f"trunk{i}.b"] = (h,)
            fan = h
        for t, k in self.heads.items():
            if self.layer_norm:
                shapes[f"{t}.ln_gain"] = (fan,)
                shapes[f"{t}.ln_bias"] = (fan,)
            shapes[f"{t}.W"] = (fan, k)
            shapes[f"{t}.b"] = (k,)
        self.params = ParamStore(shapes)
        self.init_params(seed)

    @property
    def width(self):
        return self.hidden[-1]

    def init_params(self, seed):
        rng = substream(seed, "init")
        for name, shape in self.params.shapes.items():
            view = self.params[name]
            if name.endswith(".W"):
                fan_in = shape[0]
                bound = np.sqrt(6.0 / fan_in) if name.startswith("trunk") else 1.0 / np.sqrt(fan_in)
                view[...] = rng.uniform(-bound, bound, size=shape)
            elif name.endswith("ln_gain"):
                view[...] = 1.0
            else:
                view[...] = 0.0

    # -- forward -------------------------------------------------------------

    def forward(self, X, train=False, rng=None, masks=None):
        """Per-task probabilities and the activation cache.

        In train mode a dropout mask per hidden layer is drawn from ``rng``
        (or taken from ``masks``) and stored in the cache.
        """
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise ValueError(f"expected input width {self.n_inputs}, got shape {X.shape}")
        P = self.params
        cache = {"X": X, "z": [], "mask": [], "a": []}
        a = X
        for i in range(len(self.hidden)):
            z = a @ P[f"trunk{i}.W"] + P[f"trunk{i}.b"]
            r = np.maximum(z, 0.0)
            if train and self.dropout > 0:
                if masks is not None:
                    m = masks[i]
                else:
                    keep = 1.0 - self.dropout
                    m = (rng.random(z.shape) < keep) / keep
                r = r * m
            else:
                m = None
            cache["z"].append(z)
            cache["mask"].append(m)
            cache["a"].append(r)
            a = r
        h = a
        probs, head_cache = {}, {}
        for t in self.tasks:
            hc = {}
            inp = h
            if self.layer_norm:
                mu = h.mean(axis=1, keepdims=True)
                var = h.var(axis=1, keepdims=True)
                inv = 1.0 / np.sqrt(var + LN_EPS)
                xhat = (h - mu) * inv
                inp = xhat * P[f"{t}.ln_gain"] + P[f"{t}.ln_bias"]
                hc["xhat"], hc["inv"] = xhat, inv
            hc["in"] = inp
            logits = inp @ P[f"{t}.W"] + P[f"{t}.b"]
            logits = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            probs[t] = e / e.sum(axis=1, keepdims=True)
            head_cache[t] = hc
        cache["h"] = h
        cache["heads"] = head_cache
        cache["probs"] = probs
        return probs, cache

    def predict(self, X):
        return self.forward(X, train=False)[0]

    def n_params(self):
        return self.params.size


def multitask_net(n_inputs, layer_norm=False, dropout=0.3, seed=0, tasks=TASKS):
    return MultiTaskNet(n_inputs, MT_HIDDEN, {t: N_CLASSES[t] for t in tasks},
                        dropout, layer_norm, seed)


def single_task_net(n_inputs, task, layer_norm=False, dropout=0.3, seed=0):
    return MultiTaskNet(n_inputs, ST_HIDDEN, {task: N_CLASSES[task]}, dropout, layer_norm, seed)


# -- loss ----------------------------------------------------------------------

@dataclass
class LossValue:
    per_task: dict
    weighted: float
    reg: float

    @property
    def total(self):
        return self.weighted + self.reg


def _labels_for(net, Y):
    """Accept a dict task->labels or a matrix aligned with ``net.tasks``."""
    if isinstance(Y, dict):
        return {t: np.asarray(Y[t], dtype=int) for t in net.tasks}
    Y = np.asarray(Y, dtype=int)
    if Y.ndim == 1:
        Y = Y[:, None]
    return {t: Y[:, i] for i, t in enumerate(net.tasks)}


def task_losses(net, probs, Y):
    """Masked mean cross-entropy per task (label < 0 means missing)."""
    labels = _labels_for(net, Y)
    out = {}
    for t in net.tasks:
        y = labels[t]
        valid = y >= 0
        if not valid.any():
            out[t] = 0.0
            continue
        p = probs[t][valid, y[valid]]
        out[t] = float(-np.mean(np.log(np.maximum(p, 1e-300))))
    return out


def loss_and_gradients(net, cache, Y, config):
    """Loss value and flat gradient of sum_t w_t l_t + (wd/2)||params||^2."""
    labels = _labels_for(net, Y)
    if not any((labels[t] >= 0).any() for t in net.tasks):
        raise EmptyBatchError()
    P = net.params
    gbuf, G = net.params.zeros_like()
    probs = cache["probs"]
    h = cache["h"]
    per_task = task_losses(net, probs, labels)
    weighted = 0.0
    dh = np.zeros_like(h)
    for t in net.tasks:
        y = labels[t]
        valid = y >= 0
        n_t = int(valid.sum())
        w = config.weight(t)
        weighted += w * per_task[t]
        if n_t == 0:
            continue
        d = probs[t].copy()
        d[np.arange(len(y))[valid], y[valid]] -= 1.0
        d[~valid] = 0.0
        d *= w / n_t
        hc = cache["heads"][t]
        G[f"{t}.W"][...] = hc["in"].T @ d
        G[f"{t}.b"][...] = d.sum(axis=0)
        dn = d @ P[f"{t}.W"].T
        if net.layer_norm:
            xhat, inv = hc["xhat"], hc["inv"]
            G[f"{t}.ln_gain"][...] = np.sum(dn * xhat, axis=0)
            G[f"{t}.ln_bias"][...] = dn.sum(axis=0)
            dx = dn * P[f"{t}.ln_gain"]
            D = dx.shape[1]
            dh += inv / D * (D * dx - dx.sum(axis=1, keepdims=True)
                             - xhat * np.sum(dx * xhat, axis=1, keepdims=True))
        else:
            dh += dn

    da = dh
    for i in reversed(range(len(net.hidden))):
        m = cache["mask"][i]
        if m is not None:
            da = da * m
        dz = da * (cache["z"][i] > 0)
        inp = cache["a"][i - 1] if i > 0 else cache["X"]
        G[f"trunk{i}.W"][...] = inp.T @ dz
        G[f"trunk{i}.b"][...] = dz.sum(axis=0)
        if i > 0:
            da = dz @ P[f"trunk{i}.W"].T

    reg = 0.0
    if config.weight_decay:
        reg = 0.5 * config.weight_decay * float(P.flat @ P.flat)
        gbuf += config.weight_decay * P.flat
    return LossValue(per_task, weighted, reg), gbuf


# -- training ------------------------------------------------------------------

class Adam:
    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self._buf = np.empty(size)
        self.t = 0

    def step(self, params, grad):
        """In-place update; same arithmetic as bias-corrected Adam."""
        self.t += 1
        buf = self._buf
        self.m *= self.b1
        np.multiply(grad, 1 - self.b1, out=buf)
        self.m += buf
        self.v *= self.b2
        np.multiply(grad, grad, out=buf)
        buf *= 1 - self.b2
        self.v += buf
        # lr * mhat / (sqrt(vhat) + eps)
        np.sqrt(self.v, out=buf)
        buf /= np.sqrt(1 - self.b2 ** self.t)
        buf += self.eps
        np.divide(self.m, buf, out=buf)
        buf *= self.lr / (1 - self.b1 ** self.t)
        params -= buf


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_per_task: dict
    wall_ms: float


@dataclass
class TrainResult:
    best_epoch: int
    best_val_loss: float
    epochs_run: int
    log: list = field(default_factory=list)
    wall_s: float = 0.0

    def log_csv(self):
        buf = io.StringIO()
        if not self.log:
            return ""
        tasks = list(self.log[0].val_per_task)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"] + [f"val_{t}" for t in tasks] + ["wall_ms"])
        for e in self.log:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss)]
                       + [repr(e.val_per_task[t]) for t in tasks] + [f"{e.wall_ms:.3f}"])
        return buf.getvalue()


def validation_loss(net, X, Y, config):
    probs = net.predict(X)
    per = task_losses(net, probs, Y)
    return sum(config.weight(t) * v for t, v in per.items()), per


def train(net, X_train, Y_train, X_val, Y_val, config):
    """Mini-batch Adam with early stopping on summed validation loss.

    The network is left holding the parameters of its best validation
    epoch. Stops after ``max(patience, 1)`` consecutive epochs without a
    strict improvement, or at ``max_epochs``.
    """
    X_train = np.asarray(X_train, dtype=float)
    X_val = np.asarray(X_val, dtype=float)
    if len(X_train) == 0 or len(X_val) == 0:
        raise ValueError("empty split")
    Y_train = _labels_for(net, Y_train)
    Y_val = _labels_for(net, Y_val)
    shuffle_rng = substream(config.seed, "shuffle")
    dropout_rng = substream(config.seed, "dropout")
    opt = Adam(net.params.size, config.learning_rate, config.beta1, config.beta2, config.adam_eps)

    n = len(X_train)
    best = np.inf
    best_params = net.params.flat.copy()
    best_epoch = 0
    stale = 0
    result = TrainResult(0, np.inf, 0)
    t_start = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        losses = []
        for s in range(0, n, config.batch_size):
            idx = order[s: s + config.batch_size]
            yb = {t: Y_train[t][idx] for t in net.tasks}
            if not any((yb[t] >= 0).any() for t in net.tasks):
                continue
            _, cache = net.forward(X_train[idx], train=True, rng=dropout_rng)
            lv, grad = loss_and_gradients(net, cache, yb, config)
            opt.step(net.params.flat, grad)
            losses.append(lv.total)
        val, per = validation_loss(net, X_val, Y_val, config)
        result.log.append(EpochLog(epoch, float(np.mean(losses)) if losses else float("nan"),
                                   float(val), per, (time.perf_counter() - t0) * 1e3))
        result.epochs_run = epoch
        if val < best:
            best, best_epoch, stale = val, epoch, 0
            best_params[...] = net.params.flat
        else:
            stale += 1
            if stale >= max(config.patience, 1):
                break
    net.params.flat[...] = best_params
    result.best_epoch = best_epoch
    result.best_val_loss = float(best)
    result.wall_s = time.perf_counter() - t_start
    return result


def subsample_training(indices, fraction, seed):
    """Uniform subset without replacement; smaller fractions are prefixes of larger ones."""
    indices = np.sort(np.asarray(indices))
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    k = int(round(fraction * len(indices)))
    if k < 1:
        raise ValueError(f"fraction {fraction} of {len(indices)} rows leaves no training data")
    if k == len(indices):
        return indices
    perm = substream(seed, "subsample").permutation(len(indices))
    return np.sort(indices[perm[:k]])


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(net, path, config=None, extra=None):
    meta = {
        "version": CHECKPOINT_VERSION,
        "n_inputs": net.n_inputs,
        "hidden": list(net.hidden),
        "heads": [[t, k] for t, k in net.heads.items()],
        "dropout": net.dropout,
        "layer_norm": net.layer_norm,
        "seed": net.seed,
        "shapes": {k: list(v) for k, v in net.params.shapes.items()},
        "config_hash": config.digest() if config is not None else None,
    }
    if extra:
        meta.update(extra)
    with open(path, "wb") as fh:
        np.savez(fh, params=net.params.flat, meta=np.array(json.dumps(meta, sort_keys=True)))
    return path


def load_checkpoint(path):
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        flat = z["params"].copy()
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    net = MultiTaskNet(meta["n_inputs"], meta["hidden"], dict(meta["heads"]), meta["dropout"],
                       meta["layer_norm"], meta["seed"])
    if flat.shape != net.params.flat.shape:
        raise ValueError("checkpoint parameter count does not match its declared shapes")
    net.params.flat[...] = flat
    return net, meta
