"""Exact pooled recalibration of batch-norm running statistics.

Running mean/variance are recomputed over a calibration set with the
incremental pooled (parallel-variance) update: momentum is disabled, each
mini-batch contributes its per-feature mean and population variance, and a
cross term corrects for the shift between the pooled and batch means. The
result equals single-pass full-dataset statistics regardless of how the
stream is partitioned.

BN layers are recalibrated in forward order, each one seeing activations
computed with the already-finalized statistics of earlier layers, which
keeps the per-layer result exactly partition-independent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .activations import ACTIVATIONS
from .errors import ArgumentError
from .nn_core import BN_EPS, BN_MOMENTUM, WeightCheckpoint


@dataclass
class PooledStats:
    """Per-feature pooled mean / population variance accumulator (float64)."""

    mean: np.ndarray
    var: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "PooledStats":
        return cls(np.zeros(dim), np.ones(dim), 0)

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray, n_k: int) -> None:
        """Fold one batch's statistics into the pooled accumulator."""
        if n_k <= 0:
            raise ArgumentError("batch count must be positive")
        if self.count == 0:
            self.mean = np.asarray(batch_mean, dtype=np.float64).copy()
            self.var = np.asarray(batch_var, dtype=np.float64).copy()
            self.count = n_k
            return
        n_prev = self.count
        n_new = n_prev + n_k
        cross = (n_prev * n_k / n_new) * (self.mean - batch_mean) ** 2
        self.var = (n_prev * self.var + n_k * batch_var + cross) / n_new
        self.mean = (n_prev * self.mean + n_k * batch_mean) / n_new
        self.count = n_new

    def update_from_batch(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=np.float64)
        self.update(batch.mean(axis=0), batch.var(axis=0), batch.shape[0])


def _pre_bn_activation(ckpt: WeightCheckpoint, batch: np.ndarray, layer: int) -> np.ndarray:
    """Eval-mode forward up to (and including) the affine map of `layer`."""
    arch = ckpt.arch
    act, _ = ACTIVATIONS[arch.activation]
    z = np.asarray(batch, dtype=np.float64)
    for l in range(layer + 1):
        a = z @ ckpt.weights[l].T.astype(np.float64) + ckpt.biases[l].astype(np.float64)
        if l == layer:
            return a
        if arch.has_bn(l):
            st = ckpt.bn[l]
            a = st.gamma * (a - st.running_mean) / np.sqrt(st.running_var + BN_EPS) + st.beta
        z = act(a)
    raise AssertionError("unreachable")


def recalibrate(ckpt: WeightCheckpoint, data, batch_size: int = 64,
                calib_fraction: float = 1.0) -> WeightCheckpoint:
    """Return a copy of `ckpt` with BN running statistics recomputed.

    Weights, gamma, and beta are untouched; only running mean/var/count
    change. Momentum-based EMA behavior (0.1) resumes on the returned
    checkpoint's future train-mode passes.
    """
    if data.features.shape[0] == 0:
        raise ArgumentError("empty calibration dataset")
    if batch_size < 1:
        raise ArgumentError("batch_size must be >= 1")
    if not 0.0 < calib_fraction <= 1.0:
        raise ArgumentError("calib_fraction must be in (0, 1]")
    out = ckpt.copy()
    if not out.bn:
        warnings.warn("checkpoint has no BN layers; recalibration is a no-op")
        return out
    n_use = max(1, int(round(calib_fraction * data.features.shape[0])))
    features = data.features[:n_use]
    for layer in sorted(out.bn):
        stats = PooledStats.zeros(out.arch.layer_dims[layer + 1])
        for start in range(0, n_use, batch_size):
            acts = _pre_bn_activation(out, features[start:start + batch_size], layer)
            stats.update_from_batch(acts)
        st = out.bn[layer]
        st.running_mean = stats.mean
        st.running_var = stats.var
        st.count = stats.count
    assert BN_MOMENTUM == 0.1  # EMA resumes at the documented momentum
    return out
