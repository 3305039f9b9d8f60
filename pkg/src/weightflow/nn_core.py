"""Minimal MLP / BN-MLP substrate plus a toy multi-head attention forward.

Networks are stored as explicit numpy arrays (float32 parameters, float64
batch-norm running statistics). The flat parameter vector follows a fixed
canonical order: layers in forward order, each layer contributing W
(row-major) then b, followed by gamma then beta for batch-normalized hidden
layers. BN running statistics are sidecar state and never enter the flat
vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .activations import ACTIVATIONS
from .errors import ArgumentError, ConfigError, ShapeError, TrainingDivergedError
from .rng import make_rng

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class AttentionSpec:
    embed_dim: int
    num_heads: int
    head_dim: int

    def __post_init__(self):
        if self.embed_dim != self.num_heads * self.head_dim:
            raise ConfigError(
                f"embed_dim {self.embed_dim} != num_heads {self.num_heads} "
                f"x head_dim {self.head_dim}"
            )


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer widths, activation, and per-hidden-layer BN flags for an MLP."""

    layer_dims: tuple
    activation: str = "relu"
    bn_layers: tuple = None  # per hidden layer; defaults to all-False
    attention: AttentionSpec | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ConfigError(f"layer_dims must have >=2 entries >=1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        n_hidden = len(dims) - 2
        bn = self.bn_layers
        if bn is None:
            bn = (False,) * n_hidden
        bn = tuple(bool(b) for b in bn)
        if len(bn) != n_hidden:
            raise ConfigError(
                f"bn_layers needs {n_hidden} entries, got {len(bn)}"
            )
        object.__setattr__(self, "bn_layers", bn)

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def num_hidden(self) -> int:
        return len(self.layer_dims) - 2

    def has_bn(self, layer: int) -> bool:
        return layer < self.num_hidden and self.bn_layers[layer]

    def param_count(self) -> int:
        """Flat-vector length: weights, biases, and BN gamma/beta."""
        total = 0
        for l in range(self.num_layers):
            d_in, d_out = self.layer_dims[l], self.layer_dims[l + 1]
            total += d_out * d_in + d_out
            if self.has_bn(l):
                total += 2 * d_out
        return total


@dataclass
class BatchNormState:
    gamma: np.ndarray        # float32, learned scale
    beta: np.ndarray         # float32, learned shift
    running_mean: np.ndarray  # float64 sidecar
    running_var: np.ndarray   # float64 sidecar, population variance
    count: int = 0

    def copy(self) -> "BatchNormState":
        return BatchNormState(
            self.gamma.copy(), self.beta.copy(),
            self.running_mean.copy(), self.running_var.copy(), self.count,
        )


@dataclass
class WeightCheckpoint:
    arch: ArchitectureSpec
    weights: list            # weights[l]: (d_{l+1}, d_l) float32
    biases: list             # biases[l]: (d_{l+1},) float32
    bn: dict = field(default_factory=dict)  # hidden layer index -> BatchNormState
    seed: int = 0
    metric: float = float("nan")

    def copy(self) -> "WeightCheckpoint":
        return WeightCheckpoint(
            arch=self.arch,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            bn={k: v.copy() for k, v in self.bn.items()},
            seed=self.seed,
            metric=self.metric,
        )

    def validate(self) -> None:
        arch = self.arch
        if len(self.weights) != arch.num_layers or len(self.biases) != arch.num_layers:
            raise ShapeError("layer count mismatch")
        for l in range(arch.num_layers):
            d_in, d_out = arch.layer_dims[l], arch.layer_dims[l + 1]
            if self.weights[l].shape != (d_out, d_in):
                raise ShapeError(f"W_{l} shape {self.weights[l].shape} != {(d_out, d_in)}")
            if self.biases[l].shape != (d_out,):
                raise ShapeError(f"b_{l} shape {self.biases[l].shape} != {(d_out,)}")
        for l, st in self.bn.items():
            if not arch.has_bn(l):
                raise ShapeError(f"unexpected BN state at layer {l}")
            d = arch.layer_dims[l + 1]
            for name in ("gamma", "beta", "running_mean", "running_var"):
                if getattr(st, name).shape != (d,):
                    raise ShapeError(f"BN {name} at layer {l} has wrong shape")
            if np.any(st.running_var < 0) or st.count < 0:
                raise ShapeError(f"BN layer {l} has negative variance or count")
        for l in range(arch.num_hidden):
            if arch.has_bn(l) and l not in self.bn:
                raise ShapeError(f"missing BN state at layer {l}")


INIT_SCHEMES = ("kaiming", "xavier", "normal", "uniform", "kaiming_zero_bias")


def init_weights(arch: ArchitectureSpec, scheme: str = "kaiming", seed: int = 0,
                 scale: float | None = None) -> WeightCheckpoint:
    """Deterministically initialize a checkpoint for (arch, scheme, seed).

    `scale` is the sigma of the normal scheme (default 0.01) or the
    half-width of the uniform scheme (default 0.1); ignored otherwise.
    """
    if scheme not in INIT_SCHEMES:
        raise ConfigError(f"unknown init scheme {scheme!r}")
    rng = make_rng(seed, "init")
    weights, biases = [], []
    for l in range(arch.num_layers):
        d_in, d_out = arch.layer_dims[l], arch.layer_dims[l + 1]
        if scheme in ("kaiming", "kaiming_zero_bias"):
            w = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_out, d_in))
            if scheme == "kaiming":
                bound = 1.0 / np.sqrt(d_in)
                b = rng.uniform(-bound, bound, size=d_out)
            else:
                b = np.zeros(d_out)
        elif scheme == "xavier":
            bound = np.sqrt(6.0 / (d_in + d_out))
            w = rng.uniform(-bound, bound, size=(d_out, d_in))
            b = np.zeros(d_out)
        elif scheme == "normal":
            sigma = 0.01 if scale is None else scale
            w = rng.normal(0.0, sigma, size=(d_out, d_in))
            b = np.zeros(d_out)
        else:  # uniform
            a = 0.1 if scale is None else scale
            w = rng.uniform(-a, a, size=(d_out, d_in))
            b = np.zeros(d_out)
        weights.append(w.astype(np.float32))
        biases.append(b.astype(np.float32))
    bn = {}
    for l in range(arch.num_hidden):
        if arch.has_bn(l):
            d = arch.layer_dims[l + 1]
            bn[l] = BatchNormState(
                gamma=np.ones(d, dtype=np.float32),
                beta=np.zeros(d, dtype=np.float32),
                running_mean=np.zeros(d, dtype=np.float64),
                running_var=np.ones(d, dtype=np.float64),
                count=0,
            )
    return WeightCheckpoint(arch=arch, weights=weights, biases=biases, bn=bn, seed=seed)


def _forward_cached(ckpt: WeightCheckpoint, batch: np.ndarray, mode: str):
    """Forward pass keeping per-layer intermediates for backprop.

    Returns (logits, caches). Train mode uses batch statistics in BN layers
    and updates running stats by EMA with momentum 0.1.
    """
    arch = ckpt.arch
    if batch.ndim != 2 or batch.shape[1] != arch.layer_dims[0]:
        raise ShapeError(
            f"batch has shape {batch.shape}, expected (n, {arch.layer_dims[0]})"
        )
    if mode not in ("train", "eval"):
        raise ArgumentError(f"unknown mode {mode!r}")
    act, _ = ACTIVATIONS[arch.activation]
    z = batch.astype(np.float32)
    caches = []
    for l in range(arch.num_layers):
        a = z @ ckpt.weights[l].T + ckpt.biases[l]
        cache = {"z_in": z, "pre_bn": a}
        if l < arch.num_hidden:
            if arch.has_bn(l):
                st = ckpt.bn[l]
                if mode == "train":
                    mu = a.mean(axis=0, dtype=np.float64)
                    var = a.astype(np.float64).var(axis=0)
                    n = a.shape[0]
                    st.running_mean[:] = (1 - BN_MOMENTUM) * st.running_mean + BN_MOMENTUM * mu
                    st.running_var[:] = (1 - BN_MOMENTUM) * st.running_var + BN_MOMENTUM * var
                    st.count += n
                else:
                    mu = st.running_mean
                    var = st.running_var
                inv_std = 1.0 / np.sqrt(var + BN_EPS)
                xhat = ((a - mu) * inv_std).astype(np.float32)
                a = st.gamma * xhat + st.beta
                cache.update(xhat=xhat, inv_std=inv_std.astype(np.float32))
            cache["pre_act"] = a
            z = act(a)
        else:
            z = a
        caches.append(cache)
    return z, caches


def forward(ckpt: WeightCheckpoint, batch: np.ndarray, mode: str = "eval") -> np.ndarray:
    """Logits for a batch; eval mode is pure, train mode updates BN stats."""
    logits, _ = _forward_cached(ckpt, batch, mode)
    return logits


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    shifted = logits.astype(np.float64) - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1))
    return float(np.mean(log_z - shifted[np.arange(len(labels)), labels]))


def _backward(ckpt: WeightCheckpoint, caches, logits, labels, mode: str):
    """Gradients of mean cross-entropy w.r.t. all trainable tensors."""
    arch = ckpt.arch
    _, act_grad = ACTIVATIONS[arch.activation]
    n = logits.shape[0]
    probs = _softmax(logits).astype(np.float32)
    delta = probs
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grads_w = [None] * arch.num_layers
    grads_b = [None] * arch.num_layers
    grads_bn = {}
    for l in reversed(range(arch.num_layers)):
        cache = caches[l]
        if l < arch.num_hidden:
            delta = delta * act_grad(cache["pre_act"])
            if arch.has_bn(l):
                st = ckpt.bn[l]
                xhat = cache["xhat"]
                grads_bn[l] = (
                    (delta * xhat).sum(axis=0),
                    delta.sum(axis=0),
                )
                if mode == "train":
                    dxhat = delta * st.gamma
                    delta = cache["inv_std"] * (
                        dxhat
                        - dxhat.mean(axis=0)
                        - xhat * (dxhat * xhat).mean(axis=0)
                    )
                else:
                    delta = delta * st.gamma * cache["inv_std"]
        grads_w[l] = delta.T @ cache["z_in"]
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ ckpt.weights[l]
    return grads_w, grads_b, grads_bn


@dataclass(frozen=True)
class TrainHyper:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "adamw", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size >= 1 and epochs >= 0 required")


class _Adam:
    def __init__(self, params, lr, weight_decay, decoupled):
        self.params = params
        self.lr = lr
        self.wd = weight_decay
        self.decoupled = decoupled
        self.b1, self.b2, self.eps = 0.9, 0.999, 1e-8
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1t = 1 - self.b1 ** self.t
        b2t = 1 - self.b2 ** self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            g = g.astype(p.dtype)
            if self.wd and not self.decoupled:
                g = g + self.wd * p
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            update = (self.m[i] / b1t) / (np.sqrt(self.v[i] / b2t) + self.eps)
            if self.wd and self.decoupled:
                update = update + self.wd * p
            p -= (self.lr * update).astype(p.dtype)


class _SGD:
    def __init__(self, params, lr, weight_decay):
        self.params = params
        self.lr = lr
        self.wd = weight_decay

    def step(self, grads):
        for p, g in zip(self.params, grads):
            if self.wd:
                g = g + self.wd * p
            p -= (self.lr * g).astype(p.dtype)


def _trainable_tensors(ckpt: WeightCheckpoint):
    params = list(ckpt.weights) + list(ckpt.biases)
    for l in sorted(ckpt.bn):
        params.extend([ckpt.bn[l].gamma, ckpt.bn[l].beta])
    return params


def _gather_grads(ckpt, gw, gb, gbn):
    grads = list(gw) + list(gb)
    for l in sorted(ckpt.bn):
        grads.extend(gbn[l])
    return grads


def train_network(arch: ArchitectureSpec, data, hyper: TrainHyper,
                  holdout=None, init_scheme: str = "kaiming") -> WeightCheckpoint:
    """Train a freshly initialized network with mini-batch cross-entropy.

    Deterministic given hyper.seed (seeded init and per-epoch shuffles).
    metric is set to held-out accuracy when `holdout` is given, else to
    training accuracy.
    """
    if data.features.shape[0] == 0:
        raise ArgumentError("empty training dataset")
    n_classes = arch.layer_dims[-1]
    if data.labels.min() < 0 or data.labels.max() >= n_classes:
        raise ArgumentError("labels out of range for output dimension")

    ckpt = init_weights(arch, init_scheme, seed=hyper.seed)
    params = _trainable_tensors(ckpt)
    if hyper.optimizer == "sgd":
        opt = _SGD(params, hyper.learning_rate, hyper.weight_decay)
    else:
        opt = _Adam(params, hyper.learning_rate, hyper.weight_decay,
                    decoupled=(hyper.optimizer == "adamw"))

    rng = make_rng(hyper.seed, "shuffle")
    x, y = data.features, data.labels
    n = x.shape[0]
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            logits, caches = _forward_cached(ckpt, x[idx], "train")
            loss = cross_entropy(logits, y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch offset {start}"
                )
            gw, gb, gbn = _backward(ckpt, caches, logits, y[idx], "train")
            opt.step(_gather_grads(ckpt, gw, gb, gbn))

    eval_data = holdout if holdout is not None else data
    ckpt.metric = evaluate(ckpt, eval_data).accuracy
    return ckpt


@dataclass
class EvalResult:
    accuracy: float
    predictions: np.ndarray


def evaluate(ckpt: WeightCheckpoint, data) -> EvalResult:
    """Eval-mode accuracy and argmax predictions."""
    if data.features.shape[0] == 0:
        raise ArgumentError("empty dataset")
    logits = forward(ckpt, data.features, "eval")
    preds = logits.argmax(axis=1)
    return EvalResult(accuracy=float(np.mean(preds == data.labels)), predictions=preds)


def flatten(ckpt: WeightCheckpoint) -> np.ndarray:
    """Canonical flat vector: per layer W row-major, b, then BN gamma, beta."""
    parts = []
    for l in range(ckpt.arch.num_layers):
        parts.append(ckpt.weights[l].ravel())
        parts.append(ckpt.biases[l])
        if ckpt.arch.has_bn(l):
            parts.append(ckpt.bn[l].gamma)
            parts.append(ckpt.bn[l].beta)
    return np.concatenate(parts).astype(np.float32)


def unflatten(vec: np.ndarray, arch: ArchitectureSpec,
              bn_sidecar: dict | None = None) -> WeightCheckpoint:
    """Rebuild a checkpoint from a flat vector.

    BN running statistics are restored from `bn_sidecar` (hidden layer index
    -> (running_mean, running_var, count)) when given, else reset to the
    0-mean / unit-variance initialization.
    """
    vec = np.asarray(vec, dtype=np.float32).ravel()
    if vec.size != arch.param_count():
        raise ShapeError(
            f"flat vector has {vec.size} entries, arch needs {arch.param_count()}"
        )
    weights, biases, bn = [], [], {}
    pos = 0

    def take(k):
        nonlocal pos
        out = vec[pos:pos + k]
        pos += k
        return out

    for l in range(arch.num_layers):
        d_in, d_out = arch.layer_dims[l], arch.layer_dims[l + 1]
        weights.append(take(d_out * d_in).reshape(d_out, d_in).copy())
        biases.append(take(d_out).copy())
        if arch.has_bn(l):
            gamma = take(d_out).copy()
            beta = take(d_out).copy()
            if bn_sidecar is not None and l in bn_sidecar:
                mean, var, count = bn_sidecar[l]
                bn[l] = BatchNormState(gamma, beta,
                                       np.asarray(mean, dtype=np.float64).copy(),
                                       np.asarray(var, dtype=np.float64).copy(),
                                       int(count))
            else:
                bn[l] = BatchNormState(gamma, beta,
                                       np.zeros(d_out), np.ones(d_out), 0)
    return WeightCheckpoint(arch=arch, weights=weights, biases=biases, bn=bn)


@dataclass
class AttentionWeights:
    """Toy multi-head attention block: per-head q/k/v projections + output."""

    w_q: np.ndarray  # (H, head_dim, embed_dim)
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray  # (embed_dim, embed_dim); input columns grouped by head

    @property
    def num_heads(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.w_q.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.w_q.shape[2]

    def copy(self) -> "AttentionWeights":
        return AttentionWeights(self.w_q.copy(), self.w_k.copy(),
                                self.w_v.copy(), self.w_o.copy())

    def validate(self) -> None:
        h, hd, e = self.w_q.shape
        for name in ("w_k", "w_v"):
            if getattr(self, name).shape != (h, hd, e):
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != {(h, hd, e)}")
        if self.w_o.shape != (e, e):
            raise ShapeError(f"w_o shape {self.w_o.shape} != {(e, e)}")
        if h * hd != e:
            raise ShapeError(f"num_heads {h} x head_dim {hd} != embed_dim {e}")


def random_attention(spec: AttentionSpec, seed: int = 0, scale: float = 1.0) -> AttentionWeights:
    rng = make_rng(seed, "init")
    h, hd, e = spec.num_heads, spec.head_dim, spec.embed_dim
    return AttentionWeights(
        w_q=rng.normal(0, scale, (h, hd, e)),
        w_k=rng.normal(0, scale, (h, hd, e)),
        w_v=rng.normal(0, scale, (h, hd, e)),
        w_o=rng.normal(0, scale, (e, e)),
    )


def mha_forward(attn: AttentionWeights, tokens: np.ndarray) -> np.ndarray:
    """Scaled-dot-product multi-head attention on a (tokens x embed) matrix."""
    attn.validate()
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[1] != attn.embed_dim:
        raise ShapeError(
            f"tokens shape {tokens.shape} incompatible with embed_dim {attn.embed_dim}"
        )
    outs = []
    scale = 1.0 / np.sqrt(attn.head_dim)
    for i in range(attn.num_heads):
        q = tokens @ attn.w_q[i].T
        k = tokens @ attn.w_k[i].T
        v = tokens @ attn.w_v[i].T
        logits = q @ k.T * scale
        weights = _softmax(logits)
        outs.append(weights @ v)
    concat = np.concatenate(outs, axis=1)
    return concat @ attn.w_o.T
