"""Flow matching over flat weight vectors (or PCA latents).

The vector field is a time-conditioned MLP: a scalar time is embedded by a
two-layer GELU MLP, concatenated with the state (and an optional class
embedding), and passed through a trunk of [d_h, d_h/2, d_h] hidden layers
with LayerNorm, GELU, and dropout, ending in an affine map back to the
state dimension. Training regresses the field onto straight-line
displacements between Gaussian source draws and population vectors;
sampling integrates the learned field with fixed-step RK4.

All parameters and arithmetic are float64 internally so analytic gradients
can be checked against central finite differences; serialization stores
float32.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .activations import gelu, gelu_grad
from .errors import ArgumentError, ConfigError, IntegrationError, TrainingDivergedError
from .rng import make_rng

LN_EPS = 1e-5
FLOW_MAGIC = b"DWFF"
FLOW_VERSION = 1


@dataclass(frozen=True)
class FlowConfig:
    input_dim: int
    hidden_dim: int = 256
    time_embed_dim: int = 4
    dropout: float = 0.1
    noise_scale: float = 0.001       # sigma: jitter added to the interpolant
    source_std: float = 0.01         # sigma_s: scale of the Gaussian source
    time_distribution: str = "uniform"
    time_beta: tuple = (2.0, 5.0)
    iterations: int = 30000
    batch_size: int = 8
    learning_rate: float = 5e-4
    weight_decay: float = 1e-5
    betas: tuple = (0.9, 0.95)
    lr_min: float = 1e-6
    integration_steps: int = 100
    num_classes: int = 0             # 0 = unconditional

    def __post_init__(self):
        if self.noise_scale <= 0 or self.source_std <= 0:
            raise ConfigError("noise_scale and source_std must be > 0")
        if self.iterations < 1 or self.integration_steps < 1:
            raise ConfigError("iterations and integration_steps must be >= 1")
        if self.time_distribution not in ("uniform", "beta"):
            raise ConfigError(f"unknown time distribution {self.time_distribution!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def trunk_dims(self) -> tuple:
        return (self.hidden_dim, self.hidden_dim // 2, self.hidden_dim)

    @property
    def conditional(self) -> bool:
        return self.num_classes > 0

    @property
    def trunk_input_dim(self) -> int:
        extra = self.time_embed_dim * (2 if self.conditional else 1)
        return self.input_dim + extra


def _param_layout(cfg: FlowConfig):
    """Ordered (name, shape) pairs; also the serialization order."""
    dt = cfg.time_embed_dim
    layout = [
        ("time.w1", (dt, 1)), ("time.b1", (dt,)),
        ("time.w2", (dt, dt)), ("time.b2", (dt,)),
    ]
    if cfg.conditional:
        layout += [
            ("cls.table", (cfg.num_classes, dt)),
            ("cls.w1", (dt, dt)), ("cls.b1", (dt,)),
            ("cls.w2", (dt, dt)), ("cls.b2", (dt,)),
        ]
    d_in = cfg.trunk_input_dim
    for i, d_out in enumerate(cfg.trunk_dims):
        layout += [
            (f"trunk.w{i}", (d_out, d_in)), (f"trunk.b{i}", (d_out,)),
            (f"trunk.ln_g{i}", (d_out,)), (f"trunk.ln_b{i}", (d_out,)),
        ]
        d_in = d_out
    layout += [("out.w", (cfg.input_dim, d_in)), ("out.b", (cfg.input_dim,))]
    return layout


@dataclass
class FlowModel:
    config: FlowConfig
    params: dict                      # name -> float64 array
    loss_history: list = field(default_factory=list, repr=False)

    def copy(self) -> "FlowModel":
        return FlowModel(self.config, {k: v.copy() for k, v in self.params.items()},
                         list(self.loss_history))


def init_flow_model(cfg: FlowConfig, seed: int = 0) -> FlowModel:
    rng = make_rng(seed, "flow-init")
    params = {}
    for name, shape in _param_layout(cfg):
        if name == "cls.table":
            params[name] = 0.02 * rng.standard_normal(shape)
        elif name.startswith(("trunk.ln_g",)):
            params[name] = np.ones(shape)
        elif name.startswith(("trunk.ln_b",)):
            params[name] = np.zeros(shape)
        elif name.endswith((".b1", ".b2")) or name.split(".")[-1].startswith("b"):
            params[name] = np.zeros(shape)
        else:  # weight matrices: He-style fan-in scaling
            fan_in = shape[1]
            params[name] = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    return FlowModel(cfg, params)


def _embed_mlp_forward(p, prefix, x):
    h1 = x @ p[f"{prefix}.w1"].T + p[f"{prefix}.b1"]
    a1 = gelu(h1)
    out = a1 @ p[f"{prefix}.w2"].T + p[f"{prefix}.b2"]
    return out, (x, h1, a1)


def _embed_mlp_backward(p, prefix, cache, d_out, grads):
    x, h1, a1 = cache
    grads[f"{prefix}.w2"] += d_out.T @ a1
    grads[f"{prefix}.b2"] += d_out.sum(axis=0)
    da1 = d_out @ p[f"{prefix}.w2"]
    dh1 = da1 * gelu_grad(h1)
    grads[f"{prefix}.w1"] += dh1.T @ x
    grads[f"{prefix}.b1"] += dh1.sum(axis=0)
    return dh1 @ p[f"{prefix}.w1"]


def flow_forward(model: FlowModel, x: np.ndarray, t: np.ndarray,
                 class_ids: np.ndarray | None = None,
                 dropout_masks: list | None = None,
                 want_cache: bool = False):
    """Evaluate the vector field v(x, t[, class]).

    `dropout_masks` (one pre-scaled mask per hidden trunk layer) enables
    training mode; None means deterministic evaluation.
    """
    cfg = model.config
    p = model.params
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    if x.shape[1] != cfg.input_dim:
        raise ArgumentError(f"x has dim {x.shape[1]}, expected {cfg.input_dim}")
    if t.shape[0] != x.shape[0]:
        raise ArgumentError("t and x batch sizes differ")
    if cfg.conditional != (class_ids is not None):
        raise ArgumentError("class_ids required iff the model is conditional")

    t_emb, t_cache = _embed_mlp_forward(p, "time", t)
    parts = [x, t_emb]
    c_cache = None
    if cfg.conditional:
        table_rows = p["cls.table"][class_ids]
        c_emb, c_cache = _embed_mlp_forward(p, "cls", table_rows)
        parts.append(c_emb)
    h = np.concatenate(parts, axis=1)

    trunk_caches = []
    for i in range(len(cfg.trunk_dims)):
        pre = h @ p[f"trunk.w{i}"].T + p[f"trunk.b{i}"]
        mu = pre.mean(axis=1, keepdims=True)
        var = pre.var(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + LN_EPS)
        xhat = (pre - mu) * inv_std
        ln = p[f"trunk.ln_g{i}"] * xhat + p[f"trunk.ln_b{i}"]
        act = gelu(ln)
        if dropout_masks is not None:
            dropped = act * dropout_masks[i]
        else:
            dropped = act
        trunk_caches.append((h, xhat, inv_std, ln, act))
        h = dropped
    v = h @ p["out.w"].T + p["out.b"]
    if not want_cache:
        return v
    return v, (x, t, t_cache, c_cache, class_ids, trunk_caches, h)


def flow_backward(model: FlowModel, cache, dv: np.ndarray,
                  dropout_masks: list | None = None) -> dict:
    """Parameter gradients given upstream dL/dv."""
    cfg = model.config
    p = model.params
    x, t, t_cache, c_cache, class_ids, trunk_caches, last_h = cache
    grads = {name: np.zeros_like(arr) for name, arr in p.items()}

    grads["out.w"] += dv.T @ last_h
    grads["out.b"] += dv.sum(axis=0)
    dh = dv @ p["out.w"]
    for i in reversed(range(len(cfg.trunk_dims))):
        h_in, xhat, inv_std, ln, act = trunk_caches[i]
        if dropout_masks is not None:
            dact = dh * dropout_masks[i]
        else:
            dact = dh
        dln = dact * gelu_grad(ln)
        grads[f"trunk.ln_g{i}"] += (dln * xhat).sum(axis=0)
        grads[f"trunk.ln_b{i}"] += dln.sum(axis=0)
        dxhat = dln * p[f"trunk.ln_g{i}"]
        dpre = inv_std * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        grads[f"trunk.w{i}"] += dpre.T @ h_in
        grads[f"trunk.b{i}"] += dpre.sum(axis=0)
        dh = dpre @ p[f"trunk.w{i}"]

    d = cfg.input_dim
    dt_emb = dh[:, d:d + cfg.time_embed_dim]
    _embed_mlp_backward(p, "time", t_cache, dt_emb, grads)
    if cfg.conditional:
        dc_emb = dh[:, d + cfg.time_embed_dim:]
        d_table_rows = _embed_mlp_backward(p, "cls", c_cache, dc_emb, grads)
        np.add.at(grads["cls.table"], class_ids, d_table_rows)
    return grads


def fm_loss_and_grads(model: FlowModel, x1: np.ndarray, x0: np.ndarray,
                      t: np.ndarray, eps: np.ndarray,
                      class_ids: np.ndarray | None = None,
                      dropout_masks: list | None = None):
    """Flow-matching MSE for explicit draws (x0, t, eps) and its gradients.

    x_t = (1-t) x0 + t x1 + eps, target velocity u = x1 - x0.
    """
    t_col = t.reshape(-1, 1)
    x_t = (1.0 - t_col) * x0 + t_col * x1 + eps
    u = x1 - x0
    v, cache = flow_forward(model, x_t, t, class_ids, dropout_masks, want_cache=True)
    diff = v - u
    loss = float(np.mean(diff * diff))
    dv = 2.0 * diff / diff.size
    grads = flow_backward(model, cache, dv, dropout_masks)
    return loss, grads


class _AdamW:
    def __init__(self, cfg: FlowConfig):
        self.cfg = cfg
        self.m = {}
        self.v = {}
        self.t = 0

    def lr_at(self, step: int) -> float:
        cfg = self.cfg
        frac = step / max(1, cfg.iterations)
        return cfg.lr_min + 0.5 * (cfg.learning_rate - cfg.lr_min) * (
            1.0 + np.cos(np.pi * min(1.0, frac)))

    def step(self, params: dict, grads: dict):
        cfg = self.cfg
        b1, b2 = cfg.betas
        self.t += 1
        lr = self.lr_at(self.t - 1)
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / (1 - b1 ** self.t)
            vhat = self.v[name] / (1 - b2 ** self.t)
            p -= lr * (mhat / (np.sqrt(vhat) + 1e-8) + cfg.weight_decay * p)


def _sample_time(cfg: FlowConfig, rng, size: int) -> np.ndarray:
    if cfg.time_distribution == "uniform":
        return rng.uniform(0.0, 1.0, size)
    a, b = cfg.time_beta
    return rng.beta(a, b, size)


def _dropout_masks(cfg: FlowConfig, rng, batch: int):
    if cfg.dropout == 0.0:
        return None
    keep = 1.0 - cfg.dropout
    return [rng.binomial(1, keep, size=(batch, d)) / keep for d in cfg.trunk_dims]


def fm_training_step(model: FlowModel, optimizer: _AdamW, x1: np.ndarray,
                     rngs: dict, class_ids: np.ndarray | None = None) -> float:
    """One optimizer step on a batch of target vectors; returns the loss."""
    cfg = model.config
    if x1.ndim != 2 or x1.shape[0] == 0:
        raise ArgumentError("x1 must be a nonempty (batch, d) matrix")
    b, d = x1.shape
    t = _sample_time(cfg, rngs["time"], b)
    x0 = rngs["source"].normal(0.0, cfg.source_std, size=(b, d))
    eps = rngs["noise"].normal(0.0, cfg.noise_scale, size=(b, d))
    masks = _dropout_masks(cfg, rngs["dropout"], b)
    loss, grads = fm_loss_and_grads(model, x1, x0, t, eps, class_ids, masks)
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite flow-matching loss at step {optimizer.t}")
    optimizer.step(model.params, grads)
    return loss


def train_flow(population: np.ndarray, cfg: FlowConfig, seed: int = 0,
               labels: np.ndarray | None = None) -> FlowModel:
    """Train the vector field on a population of flat vectors.

    Deterministic given seed. The returned model is in evaluation mode
    (dropout only applies during training).
    """
    population = np.asarray(population, dtype=np.float64)
    if population.ndim != 2 or population.shape[0] < 1:
        raise ArgumentError("population must be a nonempty (n, d) matrix")
    if population.shape[1] != cfg.input_dim:
        raise ArgumentError(
            f"population dim {population.shape[1]} != config input_dim {cfg.input_dim}")
    if cfg.conditional:
        if labels is None:
            raise ArgumentError("conditional config requires labels")
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (population.shape[0],):
            raise ArgumentError("labels must align with population rows")
        if labels.min() < 0 or labels.max() >= cfg.num_classes:
            raise ArgumentError("label out of range")

    model = init_flow_model(cfg, seed)
    optimizer = _AdamW(cfg)
    rngs = {
        "batch": make_rng(seed, "flow-batch"),
        "time": make_rng(seed, "flow-time"),
        "source": make_rng(seed, "flow-source"),
        "noise": make_rng(seed, "flow-noise"),
        "dropout": make_rng(seed, "flow-dropout"),
    }
    n = population.shape[0]
    for _ in range(cfg.iterations):
        idx = rngs["batch"].integers(0, n, size=min(cfg.batch_size, n))
        cls = labels[idx] if cfg.conditional else None
        loss = fm_training_step(model, optimizer, population[idx], rngs, cls)
        model.loss_history.append(loss)
    return model


def rk4_integrate(fn, x0: np.ndarray, steps: int) -> np.ndarray:
    """Fixed-step RK4 from t=0 to t=1 for dx/dt = fn(x, t)."""
    if steps < 1:
        raise ArgumentError("steps must be >= 1")
    x = np.asarray(x0, dtype=np.float64).copy()
    h = 1.0 / steps
    for step in range(steps):
        t = step * h
        k1 = fn(x, t)
        k2 = fn(x + 0.5 * h * k1, t + 0.5 * h)
        k3 = fn(x + 0.5 * h * k2, t + 0.5 * h)
        k4 = fn(x + h * k3, t + h)
        incr = (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if not np.all(np.isfinite(incr)):
            raise IntegrationError(f"non-finite vector field at step {step}")
        x = x + h * incr
    return x


def sample(model: FlowModel, count: int, seed: int = 0,
           class_id: int | None = None) -> np.ndarray:
    """Draw `count` vectors by integrating the field from Gaussian noise."""
    cfg = model.config
    if count < 0:
        raise ArgumentError("count must be >= 0")
    if cfg.conditional and class_id is None:
        raise ArgumentError("class_id required for a conditional model")
    if count == 0:
        return np.zeros((0, cfg.input_dim))
    rng = make_rng(seed, "sample")
    x0 = rng.normal(0.0, cfg.source_std, size=(count, cfg.input_dim))
    cls = None
    if cfg.conditional:
        cls = np.full(count, class_id, dtype=np.int64)

    def field(x, t):
        return flow_forward(model, x, np.full(x.shape[0], t), cls)

    return rk4_integrate(field, x0, cfg.integration_steps)


# ---------------------------------------------------------------------------
# Serialization: magic DWFF, version, config text block, float32 tensors in
# layout order.


def _config_block(cfg: FlowConfig) -> str:
    lines = []
    for key in ("input_dim", "hidden_dim", "time_embed_dim", "dropout",
                "noise_scale", "source_std", "time_distribution", "iterations",
                "batch_size", "learning_rate", "weight_decay", "lr_min",
                "integration_steps", "num_classes"):
        lines.append(f"{key}={getattr(cfg, key)!r}")
    lines.append(f"time_beta={cfg.time_beta[0]!r},{cfg.time_beta[1]!r}")
    lines.append(f"betas={cfg.betas[0]!r},{cfg.betas[1]!r}")
    return "\n".join(lines) + "\n"


def _parse_config_block(text: str) -> FlowConfig:
    kv = {}
    for line in text.strip().splitlines():
        key, _, val = line.partition("=")
        kv[key] = val
    ints = ("input_dim", "hidden_dim", "time_embed_dim", "iterations",
            "batch_size", "integration_steps", "num_classes")
    floats = ("dropout", "noise_scale", "source_std", "learning_rate",
              "weight_decay", "lr_min")
    kwargs = {k: int(kv[k]) for k in ints}
    kwargs.update({k: float(kv[k]) for k in floats})
    kwargs["time_distribution"] = kv["time_distribution"].strip("'\"")
    kwargs["time_beta"] = tuple(float(v) for v in kv["time_beta"].split(","))
    kwargs["betas"] = tuple(float(v) for v in kv["betas"].split(","))
    return FlowConfig(**kwargs)


def save_flow(model: FlowModel, path) -> None:
    blob = _config_block(model.config).encode("utf-8")
    with open(path, "wb") as f:
        f.write(FLOW_MAGIC)
        f.write(struct.pack("<I", FLOW_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name, _ in _param_layout(model.config):
            f.write(model.params[name].astype("<f4").tobytes())


def load_flow(path) -> FlowModel:
    with open(path, "rb") as f:
        if f.read(4) != FLOW_MAGIC:
            raise ArgumentError(f"{path}: not a DWFF file")
        version, = struct.unpack("<I", f.read(4))
        if version != FLOW_VERSION:
            raise ArgumentError(f"{path}: unsupported version {version}")
        blob_len, = struct.unpack("<I", f.read(4))
        cfg = _parse_config_block(f.read(blob_len).decode("utf-8"))
        params = {}
        for name, shape in _param_layout(cfg):
            count = int(np.prod(shape))
            raw = f.read(4 * count)
            if len(raw) != 4 * count:
                raise ArgumentError(f"{path}: truncated tensor {name}")
            params[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
    return FlowModel(cfg, params)
